"""Matrix exponential engines for CME generators.

Four backends compute exp(tA) or its action on a vector:

* ``expm_pade``: dense diagonal (13, 13) Padé approximant with scaling and
  squaring.
* ``expm_contour_apply``: quadrature of the Cauchy integral on a parabolic
  contour, evaluated as a sum of shifted solves.
* ``expm_cram_apply``: Chebyshev rational approximation in partial-fraction
  form.
* ``expm_krylov_apply`` / ``expm_element``: Arnoldi projection onto a
  Krylov space, stepped in time when one space cannot resolve exp(tA)b.

``ExpmEngine`` selects one of them from an ``ExpmMethod``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, TypeAlias

import numpy as np
import numpy.typing as npt
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import gmres, splu

from cmemh.core.config import get_settings
from cmemh.core.errors import ExpmNumericError, GeneratorBudgetError, StateDomainError
from cmemh.models.expm import ExpmMethod, ExpmTag
from cmemh.services.cram_coefficients import CRAM_TABLES

if TYPE_CHECKING:
    from cmemh.core.config import Settings

logger = logging.getLogger(__name__)

FloatArray: TypeAlias = npt.NDArray[np.float64]
ComplexArray: TypeAlias = npt.NDArray[np.complex128]
Matrix: TypeAlias = FloatArray | sp.sparray | sp.spmatrix

PADE_DEGREE = 13
# Scale A by 2^-s until its 1-norm is at most this value
PADE_NORM_TARGET = 0.5

# Parabolic contour z(u) = n (a - b u^2 + i c u) for an n-node rule
CONTOUR_SHIFT = 0.1309
CONTOUR_CURVATURE = 0.1194
CONTOUR_SLOPE = 0.25

ARNOLDI_BREAKDOWN_TOL = 1e-12
KRYLOV_MAX_STEPS = 100_000
KRYLOV_MIN_STEP_FRACTION = 1e-14
KRYLOV_SAFETY = 0.9
KRYLOV_MAX_GROWTH = 5.0
KRYLOV_MIN_SHRINK = 0.1

GMRES_RTOL = 1e-13
GMRES_RESTART = 60
GMRES_MAXITER = 500

# Probability-mode results further than this outside [0, 1] are logged
PROBABILITY_SLACK = 1e-10


def _pade_coefficients(p: int, q: int) -> tuple[float, ...]:
    """Numerator coefficients (p+q-j)! p! / ((p+q)! j! (p-j)!), j = 0..p."""
    return tuple(
        math.factorial(p + q - j)
        * math.factorial(p)
        / (math.factorial(p + q) * math.factorial(j) * math.factorial(p - j))
        for j in range(p + 1)
    )


PADE_COEFFICIENTS = _pade_coefficients(PADE_DEGREE, PADE_DEGREE)


def _dimension(a: Matrix) -> int:
    shape = a.shape
    if len(shape) != 2 or shape[0] != shape[1]:  # noqa: PLR2004
        msg = f"Expected a square matrix, got shape {shape}"
        raise StateDomainError(msg)
    return int(shape[0])


def _as_vector(b: npt.ArrayLike, n: int) -> FloatArray:
    vector = np.asarray(b, dtype=np.float64).ravel()
    if vector.size != n:
        msg = f"Vector of length {vector.size} does not match dimension {n}"
        raise StateDomainError(msg)
    if not np.all(np.isfinite(vector)):
        msg = "Vector has non-finite entries"
        raise StateDomainError(msg)
    return vector


def expm_pade(mat: Matrix) -> FloatArray:
    """exp(mat) by the diagonal (13, 13) Padé approximant.

    The matrix is scaled by 2^-s so that its 1-norm is at most 0.5, the
    quotient D^-1 N is formed with N = E + O and D = E - O (even and odd
    parts of the numerator polynomial), and the result is squared s times.
    """
    a = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    a = np.asarray(a, dtype=np.float64)
    n = _dimension(a)
    if not np.all(np.isfinite(a)):
        msg = "Matrix has non-finite entries"
        raise StateDomainError(msg)
    if n == 0:
        return a.copy()

    norm = float(np.linalg.norm(a, 1))
    squarings = 0
    if norm > PADE_NORM_TARGET:
        squarings = max(0, math.ceil(math.log2(norm / PADE_NORM_TARGET)))
    x = a / 2.0**squarings
    x2 = x @ x
    identity = np.eye(n)
    c = PADE_COEFFICIENTS

    even = c[12] * identity
    for k in range(10, -1, -2):
        even = even @ x2 + c[k] * identity
    odd = c[13] * identity
    for k in range(11, 0, -2):
        odd = odd @ x2 + c[k] * identity
    odd = x @ odd

    try:
        result = scipy.linalg.solve(even - odd, even + odd)
    except scipy.linalg.LinAlgError as e:
        msg = f"Padé denominator is singular: {e}"
        raise ExpmNumericError(msg) from e
    for _ in range(squarings):
        result = result @ result
    return np.asarray(result, dtype=np.float64)


def _shifted_solve(
    a: Matrix, shift: complex, rhs: ComplexArray, direct_solve_limit: int
) -> ComplexArray:
    """Solve (A - shift I) y = rhs."""
    n = rhs.shape[0]
    if not sp.issparse(a):
        dense = np.asarray(a, dtype=np.complex128) - shift * np.eye(n)
        try:
            return np.asarray(scipy.linalg.solve(dense, rhs), dtype=np.complex128)
        except scipy.linalg.LinAlgError as e:
            msg = f"Shifted system at {shift} is singular"
            raise ExpmNumericError(msg) from e

    shifted = sp.csc_array(a, dtype=np.complex128) - shift * sp.eye_array(
        n, dtype=np.complex128, format="csc"
    )
    shifted = sp.csc_array(shifted)
    if n <= direct_solve_limit:
        try:
            return np.asarray(splu(shifted).solve(rhs), dtype=np.complex128)
        except RuntimeError as e:
            msg = f"Shifted system at {shift} is singular: {e}"
            raise ExpmNumericError(msg) from e

    solution, info = gmres(
        shifted,
        rhs,
        rtol=GMRES_RTOL,
        atol=0.0,
        restart=GMRES_RESTART,
        maxiter=GMRES_MAXITER,
    )
    if info != 0:
        msg = f"GMRES did not converge for shift {shift} (info={info})"
        raise ExpmNumericError(msg)
    return np.asarray(solution, dtype=np.complex128)


def _rational_apply(  # noqa: PLR0913
    a: Matrix,
    b: npt.ArrayLike,
    t: float,
    constant: float,
    residues: ComplexArray,
    poles: ComplexArray,
    direct_solve_limit: int,
) -> FloatArray:
    """constant * b + 2 Re sum_j residues_j (tA - poles_j I)^-1 b."""
    n = _dimension(a)
    vector = _as_vector(b, n)
    if not np.any(vector):
        return np.zeros(n)
    scaled = a * t
    rhs = vector.astype(np.complex128)
    total = np.zeros(n, dtype=np.complex128)
    for residue, pole in zip(residues, poles, strict=True):
        solved = _shifted_solve(scaled, complex(pole), rhs, direct_solve_limit)
        total += residue * solved
    return constant * vector + 2.0 * total.real


def contour_nodes(order: int) -> tuple[ComplexArray, ComplexArray]:
    """Residues and poles of the parabolic contour rule with ``order`` solves.

    The rule has 2 * order nodes symmetric about the real axis; only the
    upper half is returned, the conjugate half enters through the real part.
    Residues are signed so that exp(x) ~ 2 Re sum_j w_j / (x - z_j).
    """
    if order < 1:
        msg = f"Contour order must be >= 1, got {order}"
        raise StateDomainError(msg)
    n_nodes = 2 * order
    u = np.pi * (2.0 * np.arange(1, order + 1) - 1.0) / n_nodes
    z = n_nodes * (CONTOUR_SHIFT - CONTOUR_CURVATURE * u**2 + 1j * CONTOUR_SLOPE * u)
    dz = n_nodes * (-2.0 * CONTOUR_CURVATURE * u + 1j * CONTOUR_SLOPE)
    weights = np.exp(z) * dz / (1j * n_nodes)
    return -weights, z


def expm_contour_apply(
    a: Matrix,
    b: npt.ArrayLike,
    k: int = 16,
    t: float = 1.0,
    direct_solve_limit: int | None = None,
) -> FloatArray:
    """exp(tA) b by parabolic contour quadrature with ``k`` shifted solves."""
    residues, poles = contour_nodes(k)
    limit = direct_solve_limit or get_settings().direct_solve_limit
    return _rational_apply(a, b, t, 0.0, residues, poles, limit)


def expm_cram_apply(
    a: Matrix,
    b: npt.ArrayLike,
    k: int = 16,
    t: float = 1.0,
    direct_solve_limit: int | None = None,
) -> FloatArray:
    """exp(tA) b by the degree-``k`` Chebyshev rational approximation."""
    table = CRAM_TABLES.get(k)
    if table is None:
        msg = f"CRAM order must be one of {sorted(CRAM_TABLES)}, got {k}"
        raise StateDomainError(msg)
    limit = direct_solve_limit or get_settings().direct_solve_limit
    return _rational_apply(a, b, t, table.alpha0, table.alpha, table.theta, limit)


@dataclass(frozen=True)
class ArnoldiFactorization:
    """A V = V H + h_next v_next e_m^T for an orthonormal basis V."""

    V: FloatArray
    H: FloatArray
    beta: float
    breakdown_at: int | None = None
    h_next: float = 0.0

    @property
    def dim(self) -> int:
        """Dimension of the Krylov space actually built."""
        return int(self.H.shape[0])


def arnoldi(a: Matrix, b: npt.ArrayLike, m: int) -> ArnoldiFactorization:
    """Arnoldi factorization of the Krylov space of (A, b) of dimension m.

    Each new direction is orthogonalised by modified Gram-Schmidt and then
    once more against the whole basis. A step whose new direction vanishes
    relative to ||A v_j|| is an invariant subspace: the factorization stops
    there and reports the step in ``breakdown_at``. ``m`` is capped at the
    dimension of A.
    """
    n = _dimension(a)
    start = _as_vector(b, n)
    if m < 1:
        msg = f"Krylov dimension must be >= 1, got {m}"
        raise StateDomainError(msg)
    beta = float(np.linalg.norm(start))
    if beta == 0.0:
        msg = "Krylov start vector must be nonzero"
        raise StateDomainError(msg)
    m = min(m, n)

    basis = np.zeros((n, m + 1))
    hess = np.zeros((m + 1, m))
    basis[:, 0] = start / beta
    for j in range(m):
        w = np.asarray(a @ basis[:, j], dtype=np.float64).ravel()
        scale = float(np.linalg.norm(w))
        for i in range(j + 1):
            coeff = float(basis[:, i] @ w)
            hess[i, j] += coeff
            w -= coeff * basis[:, i]
        correction = basis[:, : j + 1].T @ w
        hess[: j + 1, j] += correction
        w -= basis[:, : j + 1] @ correction

        h = float(np.linalg.norm(w))
        if j + 1 < m and h <= ARNOLDI_BREAKDOWN_TOL * scale:
            logger.debug("Arnoldi breakdown at step %d of %d", j + 1, m)
            return ArnoldiFactorization(
                V=basis[:, : j + 1].copy(),
                H=hess[: j + 1, : j + 1].copy(),
                beta=beta,
                breakdown_at=j + 1,
            )
        hess[j + 1, j] = h
        if j + 1 < m:
            basis[:, j + 1] = w / h

    return ArnoldiFactorization(
        V=basis[:, :m].copy(),
        H=hess[:m, :m].copy(),
        beta=beta,
        h_next=float(hess[m, m - 1]),
    )


def _krylov_propagate(  # noqa: C901
    a: Matrix,
    b: FloatArray,
    m: int,
    t: float,
    tol: float,
    row: int | None = None,
) -> FloatArray | float:
    """exp(tA) b in Krylov sub-steps; returns entry ``row`` only if given.

    A sub-step h is accepted when beta * h * h_next * |[exp(hH)]_{m,1}| stays
    below tol * ||b|| * h / t. A factorization that broke down spans an
    invariant subspace and covers the remaining time in one step.
    """
    if t < 0:
        msg = f"Time must be non-negative, got {t}"
        raise StateDomainError(msg)
    if t == 0.0:
        return float(b[row]) if row is not None else b.copy()

    norm_b = float(np.linalg.norm(b))
    w = b
    t_done = 0.0
    h = t
    for _ in range(KRYLOV_MAX_STEPS):
        fac = arnoldi(a, w, m)
        remaining = t - t_done
        exact = fac.breakdown_at is not None or fac.h_next == 0.0
        h = remaining if exact else min(h, remaining)

        while True:
            expm_h = expm_pade(h * fac.H)
            error = 0.0 if exact else fac.beta * h * fac.h_next * abs(expm_h[-1, 0])
            allowed = tol * norm_b * h / t
            if error <= allowed:
                break
            h *= max(
                KRYLOV_MIN_SHRINK, KRYLOV_SAFETY * (allowed / error) ** (1.0 / fac.dim)
            )
            h = min(h, KRYLOV_SAFETY * remaining)
            if h < KRYLOV_MIN_STEP_FRACTION * t:
                msg = f"Krylov step collapsed to {h:.3e} at t={t_done:.6g}"
                raise ExpmNumericError(msg)

        coefficients = fac.beta * expm_h[:, 0]
        final = h >= remaining
        if final:
            if row is not None:
                return float(fac.V[row, :] @ coefficients)
            return np.asarray(fac.V @ coefficients, dtype=np.float64)

        w = np.asarray(fac.V @ coefficients, dtype=np.float64)
        t_done += h
        growth = (
            KRYLOV_MAX_GROWTH
            if error == 0.0
            else min(
                KRYLOV_MAX_GROWTH,
                KRYLOV_SAFETY * (allowed / error) ** (1.0 / fac.dim),
            )
        )
        h *= max(1.0, growth)
        if not np.any(w):
            return 0.0 if row is not None else w

    msg = f"Krylov propagation exceeded {KRYLOV_MAX_STEPS} steps"
    raise ExpmNumericError(msg)


def expm_krylov_apply(  # noqa: PLR0913
    a: Matrix,
    b: npt.ArrayLike,
    m: int = 30,
    t: float = 1.0,
    tol: float = 1e-12,
    *,
    probability: bool = False,
) -> FloatArray:
    """exp(tA) b ~ ||b|| V_m exp(t H_m) e_1, sub-stepped when needed.

    With ``probability`` the result is clipped into [0, 1]; components that
    were further than round-off outside are logged as a warning.
    """
    n = _dimension(a)
    vector = _as_vector(b, n)
    if not np.any(vector):
        msg = "Krylov start vector must be nonzero"
        raise StateDomainError(msg)
    result = np.asarray(_krylov_propagate(a, vector, m, t, tol), dtype=np.float64)
    if probability:
        low, high = float(result.min()), float(result.max())
        if low < -PROBABILITY_SLACK or high > 1.0 + PROBABILITY_SLACK:
            logger.warning(
                "Krylov result left [0, 1] (min %.3e, max %.3e); clipping", low, high
            )
        result = np.clip(result, 0.0, 1.0)
    return result


def expm_element(  # noqa: PLR0913
    a: Matrix,
    i: int,
    j: int,
    m: int = 30,
    t: float = 1.0,
    tol: float = 1e-12,
) -> float:
    """[exp(tA)]_{ij} (1-based) as (e_i^T V_m)(exp(t H_m) e_1) with b = e_j."""
    n = _dimension(a)
    if not (1 <= i <= n and 1 <= j <= n):
        msg = f"Element ({i}, {j}) outside a {n}x{n} matrix"
        raise StateDomainError(msg)
    unit = np.zeros(n)
    unit[j - 1] = 1.0
    return float(_krylov_propagate(a, unit, m, t, tol, row=i - 1))


class ExpmEngine:
    """Exponential actions and elements through the configured backend."""

    def __init__(
        self, method: ExpmMethod | None = None, settings: Settings | None = None
    ) -> None:
        """Initialize with a backend choice and the operator budgets."""
        self.method = method or ExpmMethod()
        self.settings = settings or get_settings()

    @property
    def tag(self) -> ExpmTag:
        """Backend in use."""
        return self.method.tag

    def _dense(self, a: Matrix) -> FloatArray:
        n = _dimension(a)
        if n > self.settings.dense_limit:
            msg = (
                f"Dense Padé on a {n}x{n} matrix exceeds the dense limit "
                f"{self.settings.dense_limit}; use a window or a sparse backend"
            )
            raise GeneratorBudgetError(msg)
        return a.toarray() if sp.issparse(a) else np.asarray(a, dtype=np.float64)

    def apply(
        self,
        a: Matrix,
        b: npt.ArrayLike,
        t: float = 1.0,
        *,
        probability: bool = False,
    ) -> FloatArray:
        """exp(tA) b."""
        method = self.method
        limit = self.settings.direct_solve_limit
        match method.tag:
            case ExpmTag.PADE:
                dense = self._dense(a)
                return expm_pade(t * dense) @ _as_vector(b, dense.shape[0])
            case ExpmTag.CONTOUR:
                return expm_contour_apply(a, b, method.order, t, limit)
            case ExpmTag.CRAM:
                return expm_cram_apply(a, b, method.order, t, limit)
            case ExpmTag.KRYLOV:
                return expm_krylov_apply(
                    a,
                    b,
                    method.krylov_dim,
                    t,
                    method.krylov_tol,
                    probability=probability,
                )
        msg = f"Unknown exponential backend {method.tag}"
        raise StateDomainError(msg)

    def column(
        self, a: Matrix, j: int, t: float = 1.0, *, probability: bool = False
    ) -> FloatArray:
        """exp(tA) e_j for a 1-based column index."""
        n = _dimension(a)
        if not 1 <= j <= n:
            msg = f"Column {j} outside [1, {n}]"
            raise StateDomainError(msg)
        unit = np.zeros(n)
        unit[j - 1] = 1.0
        return self.apply(a, unit, t, probability=probability)

    def element(self, a: Matrix, i: int, j: int, t: float = 1.0) -> float:
        """[exp(tA)]_{ij} for 1-based indices."""
        if self.method.tag is ExpmTag.KRYLOV:
            return expm_element(
                a, i, j, self.method.krylov_dim, t, self.method.krylov_tol
            )
        n = _dimension(a)
        if not 1 <= i <= n:
            msg = f"Row {i} outside [1, {n}]"
            raise StateDomainError(msg)
        return float(self.column(a, j, t)[i - 1])
