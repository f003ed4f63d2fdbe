"""Reading and writing reaction systems in the ``.cme`` text format.

A file declares a ``system`` name, optional ``params``, the ``species`` with
their initial counts and caps, and one ``reaction`` block per reaction::

    system schlogl

    params
      N1 = 1e5

    species
      X initial=250 cap=900

    reaction r1
      reactants = 2*X
      products = 3*X
      rate = 3e-7
      factors = N1

``#`` starts a comment. Reactant and product lists are ``+``-separated
``k*Name`` terms, with ``0`` for none. Propensities are mass action with
falling factorials, multiplied by the listed parameters.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from cmemh.core.errors import SystemFileError, SystemValidationError
from cmemh.models.reaction_system import PropensitySpec, ReactionSystem, Species
from cmemh.services.reaction_system import validate_system

logger = logging.getLogger(__name__)

BUNDLED_SYSTEMS = ("schlogl", "isomer", "lotka", "lotka_reduced")
SYSTEM_SUFFIX = ".cme"

_SECTIONS = frozenset({"system", "params", "species", "reaction"})
_SPECIES_KEYS = frozenset({"initial", "cap"})
_REACTION_KEYS = frozenset({"reactants", "products", "rate", "factors"})
_EMPTY_SIDES = frozenset({"", "0", "none"})
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TERM = re.compile(r"^(?:(\d+)\s*\*\s*)?([A-Za-z_][A-Za-z0-9_]*)$")


@dataclass
class _ReactionBlock:
    name: str
    line: int
    values: dict[str, tuple[str, int]] = field(default_factory=dict)


def _parse_int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        msg = f"{what} must be an integer, got {text!r}"
        raise SystemFileError(msg, line) from None


def _parse_real(text: str, what: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        msg = f"{what} must be a real number, got {text!r}"
        raise SystemFileError(msg, line) from None
    if not math.isfinite(value):
        msg = f"{what} must be finite, got {text!r}"
        raise SystemFileError(msg, line)
    return value


def _key_value(text: str, line: int) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep:
        msg = f"expected 'key = value', got {text!r}"
        raise SystemFileError(msg, line)
    return key.strip(), value.strip()


def _parse_terms(text: str, species: dict[str, int], line: int) -> dict[int, int]:
    """``k*Name + ...`` as {species position: coefficient}."""
    terms: dict[int, int] = {}
    if text.strip().lower() in _EMPTY_SIDES:
        return terms
    for raw in text.split("+"):
        match = _TERM.match(raw.strip())
        if match is None:
            msg = f"malformed term {raw.strip()!r}; expected 'k*Name'"
            raise SystemFileError(msg, line)
        count = int(match.group(1) or 1)
        name = match.group(2)
        if name not in species:
            msg = f"unknown species {name!r}"
            raise SystemFileError(msg, line)
        position = species[name]
        terms[position] = terms.get(position, 0) + count
    return terms


def _parse_species_line(text: str, line: int) -> Species:
    parts = text.split()
    name = parts[0]
    if not _NAME.match(name):
        msg = f"invalid species name {name!r}"
        raise SystemFileError(msg, line)
    values: dict[str, int] = {}
    for token in parts[1:]:
        key, sep, value = token.partition("=")
        key = key.lower()
        if not sep:
            msg = f"expected key=value after species {name}, got {token!r}"
            raise SystemFileError(msg, line)
        if key not in _SPECIES_KEYS:
            msg = f"unknown species key {key!r}"
            raise SystemFileError(msg, line)
        if key in values:
            msg = f"duplicate species key {key!r}"
            raise SystemFileError(msg, line)
        values[key] = _parse_int(value, f"species {name} {key}", line)
    if "cap" not in values:
        msg = f"species {name} has no cap"
        raise SystemFileError(msg, line)
    return Species(name=name, initial=values.get("initial", 0), cap=values["cap"])


def _build_reaction(
    block: _ReactionBlock,
    species: dict[str, int],
    params: dict[str, float],
) -> tuple[PropensitySpec, tuple[int, ...]]:
    if "rate" not in block.values:
        msg = f"reaction {block.name or '(unnamed)'} has no rate"
        raise SystemFileError(msg, block.line)

    def side(key: str) -> dict[int, int]:
        text, line = block.values.get(key, ("0", block.line))
        return _parse_terms(text, species, line)

    reactants, products = side("reactants"), side("products")
    rate_text, rate_line = block.values["rate"]
    rate = _parse_real(rate_text, "rate", rate_line)

    factors: tuple[str, ...] = ()
    if "factors" in block.values:
        text, line = block.values["factors"]
        factors = tuple(f for f in re.split(r"[\s,*]+", text) if f)
        for f in factors:
            if f not in params:
                msg = f"unknown parameter {f!r}"
                raise SystemFileError(msg, line)

    n_species = len(species)
    orders = tuple(reactants.get(i, 0) for i in range(n_species))
    change = tuple(products.get(i, 0) - reactants.get(i, 0) for i in range(n_species))
    spec = PropensitySpec(
        name=block.name, rate=rate, reactant_orders=orders, param_factors=factors
    )
    return spec, change


def parse_system_file(  # noqa: C901, PLR0912
    text: str, default_name: str = "system"
) -> ReactionSystem:
    """Parse system-file text into a validated ``ReactionSystem``.

    Raises SystemFileError (with the line number) on syntax errors and
    SystemValidationError when the parsed system violates its invariants.
    """
    name = default_name
    params: dict[str, float] = {}
    species_list: list[Species] = []
    blocks: list[_ReactionBlock] = []
    section: str | None = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        parts = content.split()
        head = parts[0].lower()

        is_header = "=" not in content and len(parts) <= 2  # noqa: PLR2004
        if head in _SECTIONS and is_header:
            section = head
            if head == "system":
                if len(parts) != 2:  # noqa: PLR2004
                    msg = "'system' needs a name"
                    raise SystemFileError(msg, line_no)
                name = parts[1]
            elif head == "reaction":
                label = parts[1] if len(parts) > 1 else ""
                blocks.append(_ReactionBlock(name=label, line=line_no))
            elif len(parts) != 1:
                msg = f"'{head}' takes no arguments"
                raise SystemFileError(msg, line_no)
            continue

        match section:
            case "params":
                key, value = _key_value(content, line_no)
                if not _NAME.match(key):
                    msg = f"invalid parameter name {key!r}"
                    raise SystemFileError(msg, line_no)
                if key in params:
                    msg = f"duplicate parameter {key!r}"
                    raise SystemFileError(msg, line_no)
                params[key] = _parse_real(value, f"parameter {key}", line_no)
            case "species":
                species_list.append(_parse_species_line(content, line_no))
            case "reaction":
                key, value = _key_value(content, line_no)
                key = key.lower()
                block = blocks[-1]
                if key not in _REACTION_KEYS:
                    msg = f"unknown reaction key {key!r}"
                    raise SystemFileError(msg, line_no)
                if key in block.values:
                    msg = f"duplicate reaction key {key!r}"
                    raise SystemFileError(msg, line_no)
                block.values[key] = (value, line_no)
            case _:
                msg = f"unexpected line outside any section: {content!r}"
                raise SystemFileError(msg, line_no)

    if not species_list:
        msg = "no species declared"
        raise SystemFileError(msg)
    if not blocks:
        msg = "no reactions declared"
        raise SystemFileError(msg)

    positions: dict[str, int] = {}
    for i, s in enumerate(species_list):
        if s.name in positions:
            msg = f"duplicate species {s.name!r}"
            raise SystemFileError(msg)
        positions[s.name] = i

    built = [_build_reaction(block, positions, params) for block in blocks]
    system = ReactionSystem(
        name=name,
        species=tuple(species_list),
        reactions=tuple(spec for spec, _ in built),
        stoich=tuple(change for _, change in built),
        params=params,
    )
    diagnostics = validate_system(system)
    if diagnostics:
        raise SystemValidationError(diagnostics)
    logger.debug(
        "Parsed system %s: %d species, %d reactions, Q=%d",
        system.name,
        system.n_species,
        system.n_reactions,
        system.n_states,
    )
    return system


def _format_side(coefficients: tuple[int, ...], names: list[str]) -> str:
    terms = [
        name if k == 1 else f"{k}*{name}"
        for k, name in zip(coefficients, names, strict=True)
        if k > 0
    ]
    return " + ".join(terms) if terms else "0"


def serialize_system(sys: ReactionSystem) -> str:
    """Write ``sys`` back in system-file syntax."""
    names = [s.name for s in sys.species]
    lines = [f"system {sys.name}", ""]
    if sys.params:
        lines.append("params")
        lines.extend(f"  {k} = {v!r}" for k, v in sys.params.items())
        lines.append("")
    lines.append("species")
    lines.extend(f"  {s.name} initial={s.initial} cap={s.cap}" for s in sys.species)

    for spec, change in zip(sys.reactions, sys.stoich, strict=True):
        products = tuple(
            m + v for m, v in zip(spec.reactant_orders, change, strict=True)
        )
        lines.append("")
        lines.append(f"reaction {spec.name}".rstrip())
        lines.append(f"  reactants = {_format_side(spec.reactant_orders, names)}")
        lines.append(f"  products = {_format_side(products, names)}")
        lines.append(f"  rate = {spec.rate!r}")
        if spec.param_factors:
            lines.append(f"  factors = {' '.join(spec.param_factors)}")
    return "\n".join(lines) + "\n"


def read_system_file(path: Path) -> ReactionSystem:
    """Parse a system file; the file stem is the default system name."""
    try:
        text = path.read_text(encoding="ascii")
    except IsADirectoryError as e:
        msg = f"{path} is a directory, not a system file"
        raise SystemFileError(msg) from e
    except UnicodeDecodeError as e:
        msg = f"{path} is not an ASCII system file"
        raise SystemFileError(msg) from e
    return parse_system_file(text, default_name=path.stem)


def load_bundled_system(name: str) -> ReactionSystem:
    """One of the systems shipped with the package."""
    if name not in BUNDLED_SYSTEMS:
        choices = ", ".join(BUNDLED_SYSTEMS)
        msg = f"unknown bundled system {name!r}; choose from {choices}"
        raise SystemFileError(msg)
    resource = resources.files("cmemh.systems").joinpath(name + SYSTEM_SUFFIX)
    return parse_system_file(resource.read_text(encoding="ascii"), default_name=name)


def resolve_system(spec: str) -> ReactionSystem:
    """Load a system from a file path or a bundled system name."""
    path = Path(spec)
    if path.suffix == SYSTEM_SUFFIX or path.exists():
        return read_system_file(path)
    return load_bundled_system(spec)
