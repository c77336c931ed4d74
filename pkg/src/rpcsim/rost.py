"""Overlap matrices, random overlap structures and their diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.cluster.hierarchy import cophenet, linkage
from scipy.spatial.distance import squareform

from . import kernels
from .errors import NotPositiveSemidefinite, ParameterError
from .pd import MassPartition

PSD_TOL = 1e-8
EXACT_TOL = 1e-9
FLOAT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    """Symmetric, unit-diagonal overlap matrix. The array is stored read-only."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ParameterError("overlap matrix must be square")
        if not np.array_equal(q, q.T):
            raise ParameterError("overlap matrix must be symmetric")
        if q.size and not np.all(np.diag(q) == 1.0):
            raise ParameterError("overlap matrix must have unit diagonal")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def distances(self) -> np.ndarray:
        """d_ij = delta_ij - q_ij."""
        return np.eye(self.n) - self.q

    @property
    def shifted_distances(self) -> np.ndarray:
        """1 - q_ij off the diagonal, 0 on it.

        Differs from ``distances`` by a constant off the diagonal, so the
        ultrametric triple condition is the same, but it is non-negative.
        """
        d = 1.0 - self.q
        np.fill_diagonal(d, 0.0)
        return d

    def permuted(self, perm) -> "OverlapMatrix":
        perm = np.asarray(perm)
        return OverlapMatrix(self.q[np.ix_(perm, perm)])

    def __eq__(self, other):
        return isinstance(other, OverlapMatrix) and np.array_equal(self.q, other.q)

    @classmethod
    def identity(cls, n: int) -> "OverlapMatrix":
        return cls(np.eye(n))

    @classmethod
    def constant(cls, n: int, value: float) -> "OverlapMatrix":
        q = np.full((n, n), float(value))
        np.fill_diagonal(q, 1.0)
        return cls(q)


@dataclass(frozen=True)
class Rost:
    masses: MassPartition
    overlaps: OverlapMatrix

    def __post_init__(self):
        if self.overlaps.n != len(self.masses):
            raise ParameterError(
                f"{len(self.masses)} atoms but overlap matrix of size {self.overlaps.n}"
            )

    @property
    def n(self) -> int:
        return self.overlaps.n


@dataclass(frozen=True)
class StateSpace:
    values: np.ndarray
    tol: float

    def __contains__(self, value) -> bool:
        return bool(np.any(np.abs(self.values - value) <= self.tol))

    def issubset(self, allowed, tol: float | None = None) -> bool:
        tol = self.tol if tol is None else tol
        allowed = np.asarray(allowed, dtype=float)
        return all(np.any(np.abs(allowed - v) <= tol) for v in self.values)


def psd_min_eigenvalue(Q: OverlapMatrix | np.ndarray) -> float:
    q = Q.q if isinstance(Q, OverlapMatrix) else np.asarray(Q, dtype=float)
    if q.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(q)[0])


def schur_power(Q: OverlapMatrix, r: int) -> OverlapMatrix:
    """Entrywise r-th power. PSD is inherited (Schur product theorem) and re-checked."""
    if int(r) != r or r < 1:
        raise ParameterError(f"Schur power must be an integer >= 1, got {r}")
    if r == 1:
        return Q
    out = OverlapMatrix(Q.q ** int(r))
    lam = psd_min_eigenvalue(out)
    if lam < -PSD_TOL:
        raise NotPositiveSemidefinite(lam, PSD_TOL)
    return out


class UltrametricCheck(NamedTuple):
    ok: bool
    triple: tuple[int, int, int] | None

    def __bool__(self) -> bool:
        return self.ok


def _subdominant_gap(d: np.ndarray) -> float:
    """max(d - u) where u is the subdominant ultrametric (single-linkage cophenetic)."""
    cond = squareform(d, checks=False)
    u = cophenet(linkage(cond, method="single"))
    return float(np.max(cond - u)) if cond.size else 0.0


def is_ultrametric(Q: OverlapMatrix, tol: float = EXACT_TOL) -> UltrametricCheck:
    """Check d_ij <= max(d_ik, d_kj) + tol for every triple (0-based indices).

    A single-linkage pass settles most matrices in O(n^2 log n): if d never
    exceeds its subdominant ultrametric by more than tol no triple can fail.
    Otherwise the O(n^3) scan finds the first violating triple in (i<j, k) order.
    """
    d = Q.shifted_distances if isinstance(Q, OverlapMatrix) else np.asarray(Q, dtype=float)
    n = d.shape[0]
    if n < 3:
        return UltrametricCheck(True, None)
    if n > 16 and _subdominant_gap(d) <= tol:
        return UltrametricCheck(True, None)
    triple = kernels.first_ultrametric_violation(d, tol)
    return UltrametricCheck(triple is None, triple)


def ultrametric_excess(Q: OverlapMatrix) -> float:
    """Largest d_ij - max(d_ik, d_kj) over all triples; <= 0 means ultrametric."""
    d = Q.shifted_distances
    if Q.n < 3:
        return 0.0
    return kernels.max_ultrametric_excess(d)


def _padded(q: np.ndarray, n: int) -> np.ndarray:
    out = np.eye(n)
    m = q.shape[0]
    out[:m, :m] = q
    return out


def metric_weights(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return 2.0 ** (-(i[:, None] + i[None, :]))


def metric_tail_bound(n: int) -> float:
    """Largest contribution of entries with max(i, j) > n: 2 * sum_{i v j > n} 2^(-i-j)."""
    return 2.0 * (1.0 - (1.0 - 2.0**-n) ** 2)


class MatrixDistance(NamedTuple):
    value: float
    tail_bound: float


def overlap_distance(Q: OverlapMatrix, P: OverlapMatrix) -> MatrixDistance:
    """sum_{i,j} 2^(-i-j) |q_ij - p_ij| over the retained block, plus the tail bound.

    Missing rows/columns are read as 0 off the diagonal and 1 on it.
    """
    n = max(Q.n, P.n)
    diff = np.abs(_padded(Q.q, n) - _padded(P.q, n))
    return MatrixDistance(float(np.sum(metric_weights(n) * diff)), metric_tail_bound(n))


def rost_distance(a: Rost, b: Rost) -> float:
    """l-infinity distance of the mass partitions plus the weighted overlap metric."""
    n = max(len(a.masses), len(b.masses))
    ma = np.zeros(n)
    mb = np.zeros(n)
    ma[: len(a.masses)] = a.masses.atoms
    mb[: len(b.masses)] = b.masses.atoms
    mass_term = float(np.max(np.abs(ma - mb))) if n else 0.0
    return mass_term + overlap_distance(a.overlaps, b.overlaps).value


def f_alpha(alpha_sq: float) -> Callable[[np.ndarray], np.ndarray]:
    """Scale the open interval (-1, 1) by ``alpha_sq``, fixing -1 and 1."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) == 1.0, x, alpha_sq * x)

    return f


def step_function(breaks, values, below: float | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Right-continuous non-decreasing step function: ``values[i]`` on ``[breaks[i], breaks[i+1])``.

    Arguments below ``breaks[0]`` map to ``below`` (defaults to the identity).
    The value at 1 is always 1.
    """
    breaks = np.asarray(breaks, dtype=float)
    values = np.asarray(values, dtype=float)

    def f(x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(breaks, x, side="right") - 1
        out = np.where(idx >= 0, values[np.clip(idx, 0, None)], x if below is None else below)
        return np.where(x == 1.0, 1.0, out)

    return f


def apply_overlap_function(Q: OverlapMatrix, f: Callable, psd_tol: float = PSD_TOL) -> OverlapMatrix:
    """Entrywise image ``f(Q)``; the diagonal stays 1 and PSD is re-verified."""
    if float(np.asarray(f(np.array(1.0)))) != 1.0:
        raise ParameterError("overlap function must fix 1")
    out = np.asarray(f(Q.q), dtype=float).copy()
    np.fill_diagonal(out, 1.0)
    out = (out + out.T) / 2.0
    res = OverlapMatrix(out)
    lam = psd_min_eigenvalue(res)
    if lam < -psd_tol:
        raise NotPositiveSemidefinite(lam, psd_tol)
    return res


def _merge_values(values: np.ndarray, tol: float) -> np.ndarray:
    values = np.sort(values)
    if values.size == 0:
        return values
    keep = [values[0]]
    for v in values[1:]:
        if v - keep[-1] > tol:
            keep.append(v)
    return np.array(keep)


def state_space(Q: OverlapMatrix, tol: float = EXACT_TOL) -> StateSpace:
    if Q.n < 2:
        raise ParameterError("state space needs at least two particles")
    off = Q.q[~np.eye(Q.n, dtype=bool)]
    return StateSpace(_merge_values(off, tol), tol)


def row_state_spaces(Q: OverlapMatrix, tol: float = EXACT_TOL) -> list[np.ndarray]:
    mask = ~np.eye(Q.n, dtype=bool)
    return [_merge_values(Q.q[i][mask[i]], tol) for i in range(Q.n)]


def is_indecomposable(Q: OverlapMatrix, tol: float = EXACT_TOL) -> bool:
    """True iff every particle sees the whole state space among its overlaps."""
    full = state_space(Q, tol).values
    for row in row_state_spaces(Q, tol):
        if row.size != full.size or np.any(np.abs(row - full) > tol):
            return False
    return True
