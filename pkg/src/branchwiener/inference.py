"""Estimating the expansion coefficients N_gamma from observed counts.

Counting particles in several disjoint regions at one observation time T0
gives a linear system: each normalized count (2 pi T0)^(d/2) count_A / m^T0
approximately equals S_k(A, T0), which is linear in the unknown N_gamma.
With at least as many well-chosen regions as unknowns the system pins the
N_gamma down, and the fitted table then predicts counts at any later time.

The matrix columns carry T0^(-n) factors spanning several orders of
magnitude, so the solver normalizes columns before least squares and
surfaces the (raw) 2-norm condition number; systems above the threshold are
refused rather than silently solved.

A structural caveat for d >= 2: at order k >= 1 some coefficients enter
S_k only through identical per-region factors — at k=1 every N_{2 e_i}
multiplies -vol(A)/(2 T0), so the d columns for those indices coincide for
*every* choice of sets and only their sum is identifiable.  Such systems
are singular by construction and are refused; full entry-wise recovery is
available for d=1 (any k) and k=0 (any d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import multiindex as mi
from . import regions as rg
from .errors import ConditioningError, ValidationError
from .expansion import expansion_value, required_indices
from .martingales import NTable
from .multiindex import MultiIndex

#: solve_n refuses systems whose 2-norm condition number exceeds this.
DEFAULT_CONDITION_THRESHOLD = 1e8

#: default_sets validation time and retry budget.
DEFAULT_VALIDATION_T0 = 25.0
MAX_PATTERN_TRIES = 10


@dataclass(frozen=True)
class DesignSystem:
    """The linear map from coefficient tables to normalized counts.

    ``matrix[i, j]`` is the coefficient of N_{indices[j]} in
    S_k(sets[i], T0); ``condition_number`` is sigma_max/sigma_min of the
    raw matrix.
    """

    sets: tuple
    T0: float
    k: int
    d: int
    indices: tuple[MultiIndex, ...]
    matrix: np.ndarray = field(compare=False)
    condition_number: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def _coefficient_row(region, T0: float, k: int, d: int, cols) -> np.ndarray:
    col_pos = {g: j for j, g in enumerate(cols)}
    row = np.zeros(len(cols))
    for n in range(k + 1):
        factor = (-T0) ** (-n) / 2.0**n
        for alpha in mi.enumerate_order(d, n):
            two_alpha = 2 * alpha
            fa = factor / mi.factorial(alpha)
            for beta in mi.sub_indices(two_alpha):
                sign = -1.0 if beta.order % 2 else 1.0
                row[col_pos[two_alpha - beta]] += (
                    fa * mi.choose(two_alpha, beta) * sign * rg.moment(region, beta)
                )
    return row


def design_matrix(sets, T0: float, k: int, d: int) -> DesignSystem:
    """Build the system for the given observation sets.

    Requires |sets| >= |required_indices(k, d)| and pairwise-disjoint
    bounded sets (duplicated or overlapping sets are rejected here, before
    they can produce a silently rank-deficient solve).
    """
    sets = tuple(sets)
    if not (T0 > 0 and math.isfinite(T0)):
        raise ValidationError(f"T0 must be positive and finite, got {T0}")
    cols = tuple(required_indices(k, d))
    if len(sets) < len(cols):
        raise ValidationError(
            f"{len(sets)} sets cannot determine {len(cols)} unknowns "
            f"(order k={k}, dimension {d})"
        )
    for a in sets:
        if a.dim != d:
            raise ValidationError(f"set dimension {a.dim} != {d}")
    if len(sets) > 1:
        # Reuse the union validator's pairwise separation test.
        rg.UnionRegion(sets)
    matrix = np.vstack([_coefficient_row(a, T0, k, d, cols) for a in sets])
    cond = float(np.linalg.cond(matrix, 2))
    return DesignSystem(
        sets=sets,
        T0=float(T0),
        k=k,
        d=d,
        indices=cols,
        matrix=matrix,
        condition_number=cond,
    )


def solve_n(
    observed_counts,
    system: DesignSystem,
    m: float,
    *,
    condition_threshold: float = DEFAULT_CONDITION_THRESHOLD,
) -> NTable:
    """Recover the N_gamma from counts observed at T0.

    Right-hand side: b_A = (2 pi T0)^(d/2) count_A / m^T0.  Solves by
    column-normalized least squares.  Counts are real particle counts in
    production; synthetic/validation callers may pass floats.
    """
    counts = np.asarray(observed_counts, dtype=np.float64)
    if counts.shape != (len(system.sets),):
        raise ValidationError(
            f"{counts.size} counts for {len(system.sets)} observation sets"
        )
    if system.condition_number > condition_threshold:
        raise ConditioningError(
            f"design matrix condition number {system.condition_number:.3e} "
            f"exceeds {condition_threshold:.1e}; choose observation sets "
            "with more varied geometry (or a larger scale) and retry"
        )
    b = (2.0 * math.pi * system.T0) ** (system.d / 2.0) * counts / m**system.T0
    col_scale = np.linalg.norm(system.matrix, axis=0)
    if np.any(col_scale == 0.0):
        dead = [tuple(system.indices[j]) for j in np.nonzero(col_scale == 0.0)[0]]
        raise ConditioningError(f"columns {dead} are identically zero")
    scaled = system.matrix / col_scale
    solution, residuals, rank, _ = np.linalg.lstsq(scaled, b, rcond=None)
    if rank < len(system.indices):
        raise ConditioningError(
            f"design matrix rank {rank} < {len(system.indices)} unknowns"
        )
    values = solution / col_scale
    residual_norm = (
        float(np.sqrt(residuals[0])) if residuals.size else
        float(np.linalg.norm(scaled @ solution - b))
    )
    entries = {g: float(v) for g, v in zip(system.indices, values)}
    meta = {
        "T0": system.T0,
        "condition_number": system.condition_number,
        "residual_norm": residual_norm,
        "caveat": f"systematic truncation error o(T0^-{system.k}) not modeled",
    }
    return NTable(
        d=system.d, m=float(m), entries=entries, errors=None, k=system.k, meta=meta
    )


@dataclass(frozen=True)
class Prediction:
    """A forecast for one region at horizon T."""

    region: object
    T: float
    k: int
    s_value: float
    normalized_density: float
    raw_count: float | None


#: Raw m^T counts are only materialized below this horizon (overflow guard).
RAW_COUNT_MAX_T = 40.0


def predict(region, T: float, table: NTable, k: int | None = None,
            m: float | None = None) -> Prediction:
    """Forecast the normalized count (2 pi T)^(-d/2) S_k, i.e. the expected
    psi(A, T)/m^T; the raw expected count is attached only for T <= 40."""
    if k is None:
        k = table.k
    if k is None:
        raise ValidationError("no expansion order: pass k or use a table that has one")
    if m is None:
        m = table.m
    t0 = table.meta.get("T0")
    if t0 is not None and T < t0:
        raise ValidationError(
            f"prediction horizon T={T} precedes the observation time T0={t0}"
        )
    if not table.covers(k, region.dim):
        raise ValidationError(
            f"table does not cover required_indices(k={k}, d={region.dim})"
        )
    s_value = expansion_value(region, T, k, table)
    density = (2.0 * math.pi * T) ** (-region.dim / 2.0) * s_value
    raw = m**T * density if T <= RAW_COUNT_MAX_T else None
    return Prediction(
        region=region,
        T=float(T),
        k=int(k),
        s_value=s_value,
        normalized_density=density,
        raw_count=raw,
    )


def _box_grid(n_sets: int, d: int, scale: float) -> list[rg.Box]:
    """n disjoint half-open cubes of side `scale` on a lattice around the
    origin, filled row-major.  Offsetting the lattice by a fixed irrational
    fraction keeps the boxes asymmetric, which the odd-moment columns need."""
    side = math.ceil(n_sets ** (1.0 / d))
    boxes = []
    shift = 0.318  # fixed lattice offset, breaks x -> -x symmetry

    def edge(c: int) -> float:
        return scale * (c - side / 2.0 + shift)

    for i in range(n_sets):
        cell = []
        rest = i
        for _ in range(d):
            cell.append(rest % side)
            rest //= side
        # Adjacent cells must share the *same float* boundary; computing
        # upper as lower + scale can overshoot the neighbour's lower by one
        # ulp and fail the disjointness check.
        lower = tuple(edge(c) for c in cell)
        upper = tuple(edge(c + 1) for c in cell)
        boxes.append(rg.Box(lower, upper))
    return boxes


def default_sets(
    k: int,
    d: int,
    scale: float,
    *,
    t0: float = DEFAULT_VALIDATION_T0,
    condition_threshold: float = DEFAULT_CONDITION_THRESHOLD,
) -> list[rg.Box]:
    """A validated layout of |required_indices(k,d)| disjoint boxes.

    Starts from a cube lattice of the requested scale and grows the scale
    (up to 10 patterns) until the design matrix at time ``t0`` is
    comfortably conditioned; raises ConditioningError when no pattern
    qualifies.  The accepted pattern's condition number is recomputable via
    design_matrix.  For d >= 2 with k >= 1 no pattern can qualify (see the
    module docstring); the error then says so instead of suggesting retries.
    """
    if scale <= 0:
        raise ValidationError("scale must be positive")
    n_sets = len(required_indices(k, d))
    last = None
    for attempt in range(MAX_PATTERN_TRIES):
        s = scale * 1.25**attempt
        boxes = _box_grid(n_sets, d, s)
        system = design_matrix(boxes, t0, k, d)
        last = system.condition_number
        if system.condition_number <= condition_threshold:
            return boxes
    hint = "pass a different scale"
    if d > 1 and k >= 1:
        hint = (
            "no set choice can help: for d >= 2 several N_gamma enter S_k "
            "with proportional coefficients (e.g. every N_{2 e_i} multiplies "
            "-vol/(2 T0)), so the system is singular by construction"
        )
    raise ConditioningError(
        f"no box pattern reached condition number <= {condition_threshold:.1e} "
        f"after {MAX_PATTERN_TRIES} tries (last: {last:.3e}); {hint}"
    )
