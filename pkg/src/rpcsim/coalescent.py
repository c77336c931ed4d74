"""Bolthausen-Sznitman coalescent and the continuous cascades it generates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ParameterError
from .parallel import as_generator
from .pd import MassPartition, normalize_log_atoms, power_law_log_atoms, sample_pd
from .rost import OverlapMatrix, Rost
from .rpc import OrderParam

DEFAULT_DU = 1.0 / 64
DEFAULT_U_MAX = 40.0
STEP_ATOMS = 1024


def canonical_labels(labels) -> np.ndarray:
    """Relabel blocks 0, 1, ... in order of their least element."""
    labels = np.asarray(labels)
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inv.ravel()]


@dataclass(frozen=True, eq=False)
class Partition:
    """Partition of {0..n-1}; ``blocks[i]`` is the block of individual i."""

    blocks: np.ndarray

    def __post_init__(self):
        b = canonical_labels(self.blocks)
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n))

    @property
    def n(self) -> int:
        return self.blocks.size

    @property
    def n_blocks(self) -> int:
        return int(self.blocks.max()) + 1 if self.blocks.size else 0

    def same_block(self, i: int, j: int) -> bool:
        return bool(self.blocks[i] == self.blocks[j])

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.blocks, other.blocks)


def _block_picks(u: float, n_blocks: int, M: int, rng) -> np.ndarray:
    """One PD(e^-u) partition eta and an eta-iid integer per block.

    Picks that fall in the truncated tail of eta get fresh labels (no merge).
    """
    x = math.exp(-u)
    if x < 1e-300:
        return np.zeros(n_blocks, dtype=np.int64)
    x = min(x, 1.0 - 1e-12)
    log_atoms, log_tail = power_law_log_atoms(x, M, rng)
    atoms, residual = normalize_log_atoms(log_atoms, log_tail)
    cum = np.cumsum(atoms)
    picks = np.searchsorted(cum, rng.random(n_blocks) * (cum[-1] + residual), side="right")
    tail = picks >= M
    picks[tail] = M + np.arange(int(tail.sum()))
    return picks


def semigroup_step(gamma: Partition, u: float, seed=None, M: int = STEP_ATOMS) -> Partition:
    """Draw from R_u(gamma, .): merge the blocks that pick the same atom of PD(e^-u)."""
    if u < 0:
        raise ParameterError("time increment must be non-negative")
    if u == 0 or gamma.n_blocks <= 1:
        return gamma
    picks = _block_picks(u, gamma.n_blocks, M, as_generator(seed))
    return Partition(picks[gamma.blocks])


@dataclass(frozen=True)
class CoalescenceTimes:
    """Merge times tau_ij; pairs still apart at ``horizon`` carry tau = horizon and are flagged."""

    tau: np.ndarray
    unmerged: np.ndarray
    horizon: float

    @property
    def n(self) -> int:
        return self.tau.shape[0]

    @property
    def any_unmerged(self) -> bool:
        return bool(self.unmerged.any())


def time_grid(du: float, u_max: float, extra: Sequence[float] = ()) -> np.ndarray:
    n_steps = int(math.floor(u_max / du + 1e-9))
    grid = du * np.arange(1, n_steps + 1)
    extra = [t for t in extra if 0 < t < u_max]
    return np.unique(np.concatenate((grid, extra)))


def sample_coalescence_times(
    n: int,
    du: float = DEFAULT_DU,
    u_max: float = DEFAULT_U_MAX,
    seed=None,
    extra_times: Sequence[float] = (),
    u_stop: float | None = None,
    M: int = STEP_ATOMS,
) -> CoalescenceTimes:
    """Run the semigroup on a time grid from the all-singletons partition.

    ``tau_ij`` is the first grid time at which i and j share a block. The grid
    is ``du, 2 du, ...`` merged with ``extra_times``. With ``u_stop`` set the
    run ends there and pairs still apart get ``tau = u_stop + du`` without a
    flag; the caller promises nothing downstream depends on later times.
    """
    if du <= 0:
        raise ParameterError("time step must be positive")
    rng = as_generator(seed)
    tau = np.zeros((n, n))
    blocks = np.arange(n, dtype=np.int64)
    n_blocks = n
    grid = time_grid(du, u_max, extra_times)
    prev = 0.0
    horizon = u_max
    stopped = False
    for t in grid:
        if n_blocks <= 1:
            break
        if u_stop is not None and prev >= u_stop:
            stopped = True
            break
        picks = _block_picks(t - prev, n_blocks, M, rng)
        new_blocks = canonical_labels(picks[blocks])
        new_count = int(new_blocks.max()) + 1
        if new_count < n_blocks:
            kernels.record_merges(blocks, new_blocks, tau, t)
        blocks, n_blocks = new_blocks, new_count
        prev = t
    apart = blocks[:, None] != blocks[None, :]
    if stopped or (u_stop is not None and n_blocks > 1 and prev >= u_stop):
        tau[apart] = u_stop + du
        return CoalescenceTimes(tau, np.zeros_like(apart), u_stop + du)
    tau[apart] = horizon
    return CoalescenceTimes(tau, apart, horizon)


def overlaps_from_times(op: OrderParam, zeta: float, tau: np.ndarray) -> np.ndarray:
    """q_ij = q(zeta e^{-tau_ij}); tau_ii = 0 gives q(zeta) = 1."""
    q = np.asarray(op.q_of_x(zeta * np.exp(-tau)), dtype=float)
    np.fill_diagonal(q, 1.0)
    return q


def stop_time(op: OrderParam, zeta: float) -> float | None:
    """Time after which q(zeta e^-u) no longer changes, when known exactly."""
    if not op.is_step:
        return None
    times = np.log(zeta / op.x_levels[op.x_levels < zeta])
    return float(times.max()) if times.size else 0.0


def build_continuous_rpc(
    op: OrderParam,
    zeta: float,
    n: int,
    M: int = 4096,
    du: float = DEFAULT_DU,
    seed=None,
    u_max: float = DEFAULT_U_MAX,
) -> Rost:
    """Continuous cascade: xi ~ PD(zeta) independent of the coalescent, q_ij = q(zeta e^{-tau_ij}).

    The time change zeta e^{-tau} maps coalescent time onto [0, zeta]; for a
    step q the merge times are also sampled at the level times log(zeta/x_l)
    so the finite cascade is reproduced exactly at those points.
    """
    if not 0 < zeta < 1:
        raise ParameterError("zeta must lie in (0, 1)")
    if op.zeta > zeta + 1e-12:
        raise ParameterError("q(x) must equal 1 for x >= zeta")
    if n > M:
        raise ParameterError("cannot retain more particles than atoms")
    rng = as_generator(seed)
    xi = sample_pd(zeta, M, rng)
    times = sample_coalescence_times(
        n, du, u_max, rng, extra_times=tuple(op.with_breakpoint_times()), u_stop=stop_time(op, zeta)
    )
    top = xi.atoms[:n]
    masses = MassPartition(top, residual_mass=max(0.0, 1.0 - float(top.sum())), truncation=M)
    return Rost(masses, OverlapMatrix(overlaps_from_times(op, zeta, times.tau)))
