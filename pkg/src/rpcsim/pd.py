"""Power-law Poisson processes and Poisson-Dirichlet mass partitions.

The top ``M`` atoms of a Poisson process with intensity ``x s^(-x-1) ds`` are
``G_i^(-1/x)`` where ``G_i`` are the arrival times of a unit-rate Poisson
process. This yields the largest atoms exactly and already sorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError
from .parallel import as_generator

DEFAULT_ATOMS = 4096
NORMALIZATION_TOL = 1e-12


def _check_x(x: float) -> float:
    x = float(x)
    if not 0.0 < x < 1.0:
        raise ParameterError(f"Poisson-Dirichlet parameter must lie in (0, 1), got {x}")
    return x


@dataclass(frozen=True)
class PdParams:
    x: float

    def __post_init__(self):
        _check_x(self.x)


@dataclass(frozen=True)
class MassPartition:
    """Descending atom weights plus an upper bound on the mass that was discarded."""

    atoms: np.ndarray
    residual_mass: float = 0.0
    truncation: int = 0
    normalized: bool = field(default=True, compare=False)

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        if atoms.ndim != 1:
            raise ParameterError("atoms must be one-dimensional")
        if np.any(atoms < 0):
            raise ParameterError("atoms must be non-negative")
        if np.any(np.diff(atoms) > 0):
            raise ParameterError("atoms must be non-increasing")
        if self.residual_mass < 0:
            raise ParameterError("residual mass must be non-negative")
        if self.normalized and atoms.size:
            total = atoms.sum() + self.residual_mass
            if abs(total - 1.0) > 1e-9:
                raise ParameterError(f"normalized partition sums to {total}")

    def __len__(self) -> int:
        return self.atoms.size

    @property
    def total(self) -> float:
        return float(self.atoms.sum() + self.residual_mass)

    @classmethod
    def from_weights(cls, weights: Sequence[float], residual_mass: float = 0.0) -> "MassPartition":
        w = np.sort(np.asarray(weights, dtype=float))[::-1]
        return cls(w, residual_mass=residual_mass, truncation=w.size)


def power_law_log_atoms(x: float, M: int, rng) -> tuple[np.ndarray, float]:
    """Log of the ``M`` largest atoms and log of the expected mass below the last one.

    Working in logs keeps tiny ``x`` (huge exponents ``1/x``) finite.
    """
    x = _check_x(x)
    if M < 0:
        raise ParameterError("atom cap must be non-negative")
    rng = as_generator(rng)
    if M == 0:
        return np.empty(0), math.inf
    arrivals = np.cumsum(rng.standard_exponential(M))
    log_atoms = -np.log(arrivals) / x
    # E[sum of atoms below a] = x a^(1-x) / (1-x)
    log_tail = math.log(x / (1.0 - x)) + (1.0 - x) * log_atoms[-1]
    return log_atoms, log_tail


def sample_power_law_ppp(x: float, M: int, seed=None) -> tuple[np.ndarray, float]:
    """Largest ``M`` atoms, descending, and the expected discarded mass.

    For ``M == 0`` the whole process is discarded and the bound is infinite.
    """
    log_atoms, log_tail = power_law_log_atoms(x, M, seed)
    return np.exp(log_atoms), math.exp(log_tail) if math.isfinite(log_tail) else math.inf


def normalize_log_atoms(log_atoms: np.ndarray, log_tail: float) -> tuple[np.ndarray, float]:
    log_total = logsumexp(np.append(log_atoms, log_tail))
    return np.exp(log_atoms - log_total), math.exp(log_tail - log_total)


def sample_pd(params: PdParams | float, M: int = DEFAULT_ATOMS, seed=None) -> MassPartition:
    """Normalized truncation of the power-law process.

    Atoms are divided by (realized truncated total + expected tail) so that
    ``sum(atoms) + residual_mass == 1``.
    """
    x = params.x if isinstance(params, PdParams) else _check_x(params)
    if M < 1:
        raise ParameterError("sample_pd needs at least one atom")
    log_atoms, log_tail = power_law_log_atoms(x, M, seed)
    atoms, residual = normalize_log_atoms(log_atoms, log_tail)
    # exp/sum rounding can leave a last-ulp increase between equal neighbours
    atoms = np.minimum.accumulate(atoms)
    return MassPartition(atoms, residual_mass=residual, truncation=M)


def pd_moment_exact(x: float, n: int) -> float:
    """E sum_i xi_i^n for xi ~ PD(x, 0): prod_{j=1}^{n-1} (j - x) / (n-1)!."""
    x = _check_x(x)
    if int(n) != n or n < 2:
        raise ParameterError(f"moment order must be an integer >= 2, got {n}")
    out = 1.0
    for j in range(1, int(n)):
        out *= (j - x) / j
    return out


class MomentEstimate(NamedTuple):
    mean: float
    stderr: float
    residual_bound: float


def estimate_partition_moment(samples: Sequence[MassPartition], n: int) -> MomentEstimate:
    """Monte Carlo mean of ``sum_i xi_i^n`` with its standard error.

    Residual mass is ignored in the mean. ``residual_bound`` is the average of
    ``residual * a_M^(n-1)`` (``residual`` itself for ``n == 1``), which caps
    what the discarded atoms could have added.
    """
    if n < 1:
        raise ParameterError("moment order must be >= 1")
    if len(samples) == 0:
        raise ParameterError("no samples")
    vals = np.array([np.sum(s.atoms**n) for s in samples])
    bounds = np.array(
        [
            s.residual_mass * (s.atoms[-1] ** (n - 1) if len(s) else 1.0)
            for s in samples
        ]
    )
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return MomentEstimate(float(vals.mean()), stderr, float(bounds.mean()))
