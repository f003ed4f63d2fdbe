"""Histogram tables, their CSV and sidecar files, and L1 comparison."""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING

import pandas as pd

from cmemh.core.errors import HistogramSchemaError

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path

    from cmemh.models.report import RunReport

logger = logging.getLogger(__name__)

HISTOGRAM_COLUMNS = ["species", "state", "count", "frequency"]


def histogram_table(
    counts: Mapping[str, Sequence[int]], species: Sequence[str] | None = None
) -> pd.DataFrame:
    """Long table with one row per (species, state); frequencies sum to 1."""
    order = list(species) if species is not None else list(counts)
    frames = []
    for name in order:
        column = [int(c) for c in counts[name]]
        total = sum(column)
        frames.append(
            pd.DataFrame(
                {
                    "species": name,
                    "state": range(len(column)),
                    "count": column,
                    "frequency": [c / total if total else 0.0 for c in column],
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=HISTOGRAM_COLUMNS)
    table = pd.concat(frames, ignore_index=True)
    return table[HISTOGRAM_COLUMNS]


def report_table(report: RunReport) -> pd.DataFrame:
    """Histogram table of a run report."""
    return histogram_table(report.counts, report.species)


def write_histogram_csv(table: pd.DataFrame, path: Path) -> None:
    """Write ``species,state,count,frequency`` rows, ASCII, newline-delimited."""
    path.parent.mkdir(parents=True, exist_ok=True)
    table[HISTOGRAM_COLUMNS].to_csv(
        path, index=False, lineterminator="\n", encoding="ascii"
    )


def read_histogram_csv(path: Path) -> pd.DataFrame:
    """Read a histogram CSV and check its columns."""
    try:
        table = pd.read_csv(path, dtype={"species": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        msg = f"{path}: not a histogram CSV ({e})"
        raise HistogramSchemaError(msg) from e
    if list(table.columns) != HISTOGRAM_COLUMNS:
        msg = f"{path}: columns {list(table.columns)}, expected {HISTOGRAM_COLUMNS}"
        raise HistogramSchemaError(msg)
    return table


def _coarsen(table: pd.DataFrame, bin_width: int) -> pd.DataFrame:
    binned = table.assign(state=table["state"] // bin_width)
    return binned.groupby(["species", "state"], sort=True)["frequency"].sum()


def histogram_distance(
    table_a: pd.DataFrame, table_b: pd.DataFrame, bin_width: int = 1
) -> dict[str, float]:
    """Per-species L1 distance sum_states |f_a - f_b|, in [0, 2].

    With ``bin_width`` > 1 consecutive states are pooled first.
    """
    if bin_width < 1:
        msg = f"bin_width must be >= 1, got {bin_width}"
        raise HistogramSchemaError(msg)
    species_a = list(dict.fromkeys(table_a["species"]))
    species_b = list(dict.fromkeys(table_b["species"]))
    if sorted(species_a) != sorted(species_b):
        msg = f"species differ: {species_a} vs {species_b}"
        raise HistogramSchemaError(msg)

    freq_a = _coarsen(table_a, bin_width)
    freq_b = _coarsen(table_b, bin_width)
    distances: dict[str, float] = {}
    for name in species_a:
        bins_a, bins_b = freq_a.loc[name], freq_b.loc[name]
        if not bins_a.index.equals(bins_b.index):
            msg = f"species {name}: state bins differ"
            raise HistogramSchemaError(msg)
        distances[name] = float((bins_a - bins_b).abs().sum())
    return distances


def compare_histograms(
    path_a: Path, path_b: Path, bin_width: int = 1
) -> dict[str, float]:
    """L1 distance per species between two histogram CSV files."""
    distances = histogram_distance(
        read_histogram_csv(path_a), read_histogram_csv(path_b), bin_width
    )
    logger.info("L1 distances %s vs %s: %s", path_a, path_b, distances)
    return distances


def diagnostics_path(csv_path: Path) -> Path:
    """Sidecar location next to a histogram CSV."""
    return csv_path.with_suffix(".diag")


def write_diagnostics(values: Mapping[str, str], path: Path) -> None:
    """Write ``key=value`` lines."""
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(f"{key}={value}\n" for key, value in values.items())
    path.write_text(text, encoding="ascii")


def read_diagnostics(path: Path) -> dict[str, str]:
    """Parse a ``key=value`` sidecar."""
    values: dict[str, str] = {}
    for line in path.read_text(encoding="ascii").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            values[key.strip()] = value.strip()
    return values
