"""Finite-level Ruelle probability cascades.

Two constructions are provided. ``build_rpc`` grows the whole truncated tree
of power-law Poisson processes and reads overlaps off deepest common
ancestors. ``build_rpc_recursive`` draws a PD(x_k) partition and marks its
particles with iid picks from an independent (k-1)-level cascade.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import BudgetExceeded, ParameterError
from .parallel import as_generator, replica_map
from .pd import MassPartition, normalize_log_atoms, power_law_log_atoms, sample_pd
from .rost import OverlapMatrix, Rost

LEAF_BUDGET = 2**20
UNIFORM_GRID_POINTS = 64


@dataclass(frozen=True)
class RpcParams:
    q_levels: tuple
    x_levels: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in self.q_levels)
        x = tuple(float(v) for v in self.x_levels)
        object.__setattr__(self, "q_levels", q)
        object.__setattr__(self, "x_levels", x)
        if len(q) == 0 or len(q) != len(x):
            raise ParameterError("q_levels and x_levels must be non-empty and of equal length")
        if q[0] < 0.0 or q[-1] >= 1.0:
            raise ParameterError("q levels must satisfy 0 <= q_1 and q_k < 1")
        if any(b <= a for a, b in zip(q, q[1:])):
            raise ParameterError("q levels must be strictly increasing (q_l < q_l+1)")
        if x[0] <= 0.0 or x[-1] >= 1.0:
            raise ParameterError("x levels must satisfy 0 < x_1 and x_k < 1")
        if any(b <= a for a, b in zip(x, x[1:])):
            raise ParameterError("x levels must be strictly increasing (x_l < x_l+1)")

    @property
    def k(self) -> int:
        return len(self.q_levels)

    @property
    def zeta(self) -> float:
        return self.x_levels[-1]

    @property
    def depth_overlaps(self) -> np.ndarray:
        """Overlap of two leaves whose deepest common ancestor has depth l: q_{l+1} (q_{k+1} = 1)."""
        return np.array(self.q_levels + (1.0,))

    def order_param(self) -> "OrderParam":
        return OrderParam.step(self.q_levels, self.x_levels)

    def power(self, r: int) -> "RpcParams":
        """Parameters of (xi, Q^{*r}): levels q_l^r, same x levels."""
        return RpcParams(tuple(v**r for v in self.q_levels), self.x_levels)

    def reduced(self) -> "RpcParams":
        """The (k-1)-level cascade of the recursive construction."""
        if self.k < 2:
            raise ParameterError("a 1-level cascade has no reduced cascade")
        qk, xk = self.q_levels[-1], self.x_levels[-1]
        if qk == 0.0:
            raise ParameterError("q_k = 0: level rescaling q_l / q_k is undefined")
        return RpcParams(
            tuple(v / qk for v in self.q_levels[:-1]), tuple(v / xk for v in self.x_levels[:-1])
        )


class OrderParam:
    """Non-decreasing right-continuous q(x) on [0, 1] with q = 1 on [zeta, 1].

    Step functions keep their levels and evaluate exactly; general functions are
    wrapped and inverted numerically.
    """

    def __init__(self, func: Callable | None, zeta: float, q_levels=None, x_levels=None):
        if not 0.0 < zeta <= 1.0:
            raise ParameterError(f"zeta must lie in (0, 1], got {zeta}")
        self.zeta = float(zeta)
        self._func = func
        self.q_levels = None if q_levels is None else np.asarray(q_levels, dtype=float)
        self.x_levels = None if x_levels is None else np.asarray(x_levels, dtype=float)
        if func is not None:
            xs = np.linspace(0.0, self.zeta, 513)[:-1]
            vals = np.asarray(func(xs), dtype=float)
            if np.any(np.diff(vals) < -1e-12):
                raise ParameterError("q(x) must be non-decreasing")
            if np.any(vals < 0.0) or np.any(vals > 1.0):
                raise ParameterError("q(x) must take values in [0, 1]")

    @classmethod
    def step(cls, q_levels: Sequence[float], x_levels: Sequence[float]) -> "OrderParam":
        """q(x) = q_l on [x_{l-1}, x_l) for l = 1..k+1 with x_0 = 0, x_{k+1} = 1, q_{k+1} = 1."""
        q = np.asarray(q_levels, dtype=float)
        x = np.asarray(x_levels, dtype=float)
        if q.shape != x.shape or q.size == 0:
            raise ParameterError("step order parameter needs matching non-empty levels")
        if np.any(np.diff(q) <= 0) or np.any(np.diff(x) <= 0):
            raise ParameterError("step levels must be strictly increasing")
        if q[0] < 0 or q[-1] > 1 or x[0] <= 0 or x[-1] > 1:
            raise ParameterError("step levels out of range")
        return cls(None, float(x[-1]), q, x)

    @classmethod
    def from_function(cls, func: Callable, zeta: float) -> "OrderParam":
        return cls(func, zeta)

    @property
    def is_step(self) -> bool:
        return self.q_levels is not None

    def q_of_x(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_step:
            vals = np.append(self.q_levels, 1.0)
            return vals[np.searchsorted(self.x_levels, x, side="right")]
        return np.where(x >= self.zeta, 1.0, np.asarray(self._func(np.minimum(x, self.zeta)), dtype=float))

    def x_of_q(self, q):
        """x(q) = inf{s : q(s) > q}, and 1 when the set is empty."""
        q = np.asarray(q, dtype=float)
        if self.is_step:
            vals = np.concatenate(([0.0], self.x_levels))
            out = vals[np.searchsorted(self.q_levels, q, side="right")]
            return np.where(q >= 1.0, 1.0, out)
        lo = np.zeros_like(q)
        hi = np.full_like(q, self.zeta)
        for _ in range(60):
            mid = (lo + hi) / 2
            above = self.q_of_x(mid) > q
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        return np.where(q >= 1.0, 1.0, np.where(self.q_of_x(np.zeros_like(q)) > q, 0.0, hi))

    def jumps(self) -> tuple[np.ndarray, np.ndarray]:
        """Jump locations of x(q) and their sizes, the jump at q = 1 included (step only)."""
        if not self.is_step:
            raise ParameterError("jumps are only defined for step order parameters")
        locs = np.append(self.q_levels, 1.0)
        sizes = np.diff(np.concatenate(([0.0], self.x_levels, [1.0])))
        return locs, sizes

    def integrate(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """Stieltjes integral of g against dx(q) over [0, 1], atom at 0 included.

        Substituting q = q(x) turns it into int_0^1 g(q(x)) dx.
        """
        if self.is_step:
            locs, sizes = self.jumps()
            return float(np.sum(np.asarray(g(locs), dtype=float) * sizes))
        from scipy.integrate import quad

        val, _ = quad(lambda s: float(g(self.q_of_x(s))), 0.0, self.zeta, limit=400)
        return float(val + (1.0 - self.zeta) * float(g(np.array(1.0))))

    def with_breakpoint_times(self) -> np.ndarray:
        """Coalescent times u = log(zeta / x) at which q(zeta e^-u) can jump (step only)."""
        if not self.is_step:
            return np.empty(0)
        xs = self.x_levels[self.x_levels < self.zeta]
        return np.log(self.zeta / xs)

    def l1_distance(self, other: "OrderParam", points: int = 20001) -> float:
        if self.is_step and other.is_step:
            br = np.unique(np.concatenate(([0.0, 1.0], self.x_levels, other.x_levels)))
            mids = (br[:-1] + br[1:]) / 2
            return float(np.sum(np.abs(self.q_of_x(mids) - other.q_of_x(mids)) * np.diff(br)))
        xs = (np.arange(points) + 0.5) / points
        return float(np.mean(np.abs(self.q_of_x(xs) - other.q_of_x(xs))))


@dataclass
class GenealogySample:
    """Truncated k-level cascade tree with ``M`` atoms per node.

    Leaves are stored flat in lexicographic multi-index order. ``log_weights``
    are unnormalized (log of the product of the atoms along the path) so that
    evolution can keep adding increments. ``node_log_atoms[l]`` has shape
    ``(M,) * (l + 1)`` and holds the atoms of the depth-l nodes.
    """

    params: RpcParams
    M: int
    log_weights: np.ndarray
    node_log_atoms: list = field(default_factory=list)
    discarded_bound: float = 0.0

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def n_leaves(self) -> int:
        return self.log_weights.size

    @property
    def log_normalization(self) -> float:
        return float(logsumexp(self.log_weights))

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_normalization)

    def multi_index(self, leaves) -> np.ndarray:
        """(n, k) array of 0-based multi-indices alpha of the given flat leaf ids."""
        return np.stack(np.unravel_index(np.asarray(leaves), (self.M,) * self.k), axis=1)

    def ancestor_depth(self, leaves) -> np.ndarray:
        """l(i, j): depth of the deepest common ancestor, l(i, i) = k."""
        return kernels.shared_depth(self.multi_index(leaves))

    def top_leaves(self, n: int) -> np.ndarray:
        """Flat ids of the n heaviest leaves, ties broken by multi-index order."""
        w = self.log_weights
        size = w.size
        if n > size:
            raise ParameterError(f"asked for {n} particles from {size} leaves")
        if n < size:
            thr = np.partition(w, size - n)[size - n]
            cand = np.nonzero(w >= thr)[0]
        else:
            cand = np.arange(size)
        return cand[np.argsort(-w[cand], kind="stable")][:n]

    def subtree_masses(self, depth: int) -> np.ndarray:
        """Normalized mass of every depth-``depth`` node (depth k gives the leaves)."""
        w = self.weights
        return w.reshape(self.M**depth, -1).sum(axis=1)

    def level_pair_mass(self) -> np.ndarray:
        """S_l = sum_{i,j} xi_i xi_j 1{l(i,j) >= l} for l = 0..k; S_0 = 1."""
        return np.array([np.sum(self.subtree_masses(l) ** 2) for l in range(self.k + 1)])

    def with_log_weights(self, log_weights: np.ndarray) -> "GenealogySample":
        return GenealogySample(self.params, self.M, log_weights, self.node_log_atoms, self.discarded_bound)

    def view_power(self, r: int) -> "GenealogySample":
        """Same tree and weights read with overlap levels q_l^r."""
        return GenealogySample(self.params.power(r), self.M, self.log_weights, self.node_log_atoms, self.discarded_bound)

    # functional interface shared with Rost and superpositions

    def normalized_masses(self) -> np.ndarray:
        return self.weights

    def overlap_cdf(self, grid) -> np.ndarray:
        s = np.append(self.level_pair_mass(), 0.0)
        exact = s[:-1] - s[1:]
        levels = self.params.depth_overlaps
        grid = np.asarray(grid, dtype=float)
        return (exact[None, :] * (levels[None, :] <= grid[:, None])).sum(axis=1)

    def sample_pair_overlap(self, rng) -> float:
        cum = np.cumsum(self.weights)
        i, j = np.minimum(np.searchsorted(cum, rng.random(2) * cum[-1], side="right"), cum.size - 1)
        if i == j:
            return 1.0
        depth = int(kernels.shared_depth(self.multi_index([i, j]))[0, 1])
        return float(self.params.depth_overlaps[depth])

    def to_rost(self, n: int) -> Rost:
        return overlaps_from_genealogy(self, n)


def build_rpc(params: RpcParams, M: int, seed=None, budget: int = LEAF_BUDGET) -> GenealogySample:
    """Grow the full truncated tree; node processes at depth l use parameter x_{l+1}."""
    if M < 1:
        raise ParameterError("per-node atom cap must be >= 1")
    k = params.k
    if M**k > budget:
        raise BudgetExceeded(f"M^k = {M**k} leaves exceeds the budget of {budget}")
    rng = as_generator(seed)
    log_w = np.zeros((M,) * k)
    node_atoms = []
    discarded = 0.0
    for depth in range(k):
        x = params.x_levels[depth]
        n_nodes = M**depth
        arrivals = np.cumsum(rng.standard_exponential((n_nodes, M)), axis=1)
        la = -np.log(arrivals) / x
        # relative tail of each node: expected mass below its last atom over its kept mass
        log_tail = math.log(x / (1 - x)) + (1 - x) * la[:, -1]
        rel = np.exp(log_tail - logsumexp(la, axis=1))
        discarded = 1.0 - (1.0 - discarded) * (1.0 - float(rel.max()) / (1.0 + float(rel.max())))
        la = la.reshape((M,) * (depth + 1))
        node_atoms.append(la)
        log_w = log_w + la.reshape(la.shape + (1,) * (k - depth - 1))
    return GenealogySample(params, M, log_w.ravel(), node_atoms, discarded)


def _rost_from_leaves(sample: GenealogySample, leaves: np.ndarray, log_weights=None) -> Rost:
    lw = sample.log_weights if log_weights is None else log_weights
    w = np.exp(lw[leaves] - logsumexp(lw))
    w = np.minimum.accumulate(w)
    depth = sample.ancestor_depth(leaves)
    q = sample.params.depth_overlaps[depth]
    masses = MassPartition(w, residual_mass=max(0.0, 1.0 - float(w.sum())), truncation=sample.M)
    return Rost(masses, OverlapMatrix(q))


def overlaps_from_genealogy(sample: GenealogySample, n: int) -> Rost:
    """The n heaviest leaves with overlaps q_{l(i,j)+1} from their ancestor depths."""
    return _rost_from_leaves(sample, sample.top_leaves(n))


def _recursive_overlaps(params: RpcParams, count: int, M: int, rng) -> np.ndarray:
    """Overlap matrix of ``count`` distinct particles of a cascade with ``params``."""
    if params.k == 1:
        q = np.full((count, count), params.q_levels[0])
        np.fill_diagonal(q, 1.0)
        return q
    prime = params.reduced()
    marks = _draw_marks(params.x_levels[-2] / params.x_levels[-1], count, M, rng)
    uniq, inv = np.unique(marks, return_inverse=True)
    q_prime = _recursive_overlaps(prime, uniq.size, M, rng)
    q = params.q_levels[-1] * q_prime[np.ix_(inv, inv)]
    np.fill_diagonal(q, 1.0)
    return q


def _draw_marks(x: float, count: int, M: int, rng) -> np.ndarray:
    """iid picks from a PD(x) partition; picks landing in the discarded tail get fresh labels."""
    log_atoms, log_tail = power_law_log_atoms(x, M, rng)
    atoms, residual = normalize_log_atoms(log_atoms, log_tail)
    cum = np.cumsum(atoms)
    u = rng.random(count) * (cum[-1] + residual)
    marks = np.searchsorted(cum, u, side="right")
    tail = marks >= M
    marks[tail] = M + np.arange(int(tail.sum()))
    return marks


def build_rpc_recursive(params: RpcParams, M: int, n: int, seed=None) -> Rost:
    """k-level cascade from PD(x_k) masses and marks drawn from a (k-1)-level cascade.

    Overlaps are q_k * q'_{i* j*}, with i* the mark of particle i.
    """
    if params.k >= 2 and params.q_levels[-1] == 0.0:
        raise ParameterError("q_k = 0: level rescaling q_l / q_k is undefined")
    if n > M:
        raise ParameterError("cannot retain more particles than atoms")
    rng = as_generator(seed)
    xi = sample_pd(params.zeta, M, rng)
    top = xi.atoms[:n]
    masses = MassPartition(top, residual_mass=max(0.0, 1.0 - float(top.sum())), truncation=M)
    q = _recursive_overlaps(params, n, M, rng)
    return Rost(masses, OverlapMatrix(q))


# ---------------------------------------------------------------- order parameter


def default_grid(extra: Sequence[float] = ()) -> np.ndarray:
    grid = np.concatenate((np.linspace(0.0, 1.0, UNIFORM_GRID_POINTS), np.asarray(extra, dtype=float)))
    grid = np.unique(np.round(grid, 12))
    return grid


def overlap_cdf(structure, grid: np.ndarray, renormalize: bool = True) -> np.ndarray:
    """sum_{i,j} xi_i xi_j 1{q_ij <= q} at each grid point, for one structure.

    ``structure`` is a Rost or anything exposing ``overlap_cdf(grid)``. For a
    Rost the retained masses are rescaled to unit total when ``renormalize``.
    """
    if not isinstance(structure, Rost):
        return structure.overlap_cdf(grid)
    w = structure.masses.atoms
    if renormalize and w.sum() > 0:
        w = w / w.sum()
    ww = np.outer(w, w).ravel()
    b = np.searchsorted(grid, structure.overlaps.q.ravel(), side="left")
    return np.cumsum(np.bincount(b, weights=ww, minlength=grid.size + 1))[: grid.size]


class OrderParamEstimate(NamedTuple):
    grid: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    replicas: int

    @property
    def band(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mean - 3 * self.stderr, self.mean + 3 * self.stderr

    def at(self, q: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.grid - q)))
        if abs(self.grid[i] - q) > 1e-9:
            raise ParameterError(f"{q} is not a grid point")
        return float(self.mean[i]), float(self.stderr[i])

    def sup_distance(self, other: "OrderParamEstimate") -> float:
        if not np.array_equal(self.grid, other.grid):
            raise ParameterError("estimates live on different grids")
        return float(np.max(np.abs(self.mean - other.mean)))


def summarize_cdfs(grid: np.ndarray, rows) -> OrderParamEstimate:
    vals = np.asarray(rows, dtype=float)
    m = vals.shape[0]
    se = vals.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros(grid.size)
    return OrderParamEstimate(grid, vals.mean(axis=0), se, m)


def empirical_order_param(samples, grid=None, renormalize: bool = True) -> OrderParamEstimate:
    """Pointwise Monte Carlo estimate of x(q) = E sum_{i,j} xi_i xi_j 1{q_ij <= q}.

    The default grid joins a uniform 64-point grid with the state-space values
    seen in the first samples. Diagonal terms only count at q = 1.
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("no samples")
    if grid is None:
        seen = []
        for s in samples[:50]:
            if isinstance(s, Rost) and s.n > 1:
                seen.append(np.unique(s.overlaps.q[~np.eye(s.n, dtype=bool)]))
        grid = default_grid(np.concatenate(seen) if seen else ())
    grid = np.asarray(grid, dtype=float)
    return summarize_cdfs(grid, [overlap_cdf(s, grid, renormalize) for s in samples])


# ---------------------------------------------------------------- overlap levels


class EventProbability(NamedTuple):
    estimate: float
    stderr: float
    lower_bound: float
    upper_bound: float
    replicas: int

    def within_bounds(self, slack_sigmas: float = 3.0) -> bool:
        s = slack_sigmas * self.stderr
        return self.lower_bound - s <= self.estimate <= self.upper_bound + s


def level_event_bounds(params: RpcParams, n: int, r: int) -> tuple[float, float]:
    """(|x_{r+1} - x_r|, n(n-1)/(2 zeta) |x_{r+1} - x_r|) with x_0 = 0."""
    xs = (0.0,) + params.x_levels
    dx = abs(xs[r + 1] - xs[r])
    return dx, n * (n - 1) / (2 * params.zeta) * dx


def _top_event(rng, params, n, r, M):
    g = build_rpc(params, M, rng)
    depth = g.ancestor_depth(g.top_leaves(n))
    iu = np.triu_indices(n, 1)
    return float(np.any(depth[iu] == r))


def overlap_event_prob(
    params: RpcParams, n: int, r: int, replicas: int, seed: int = 0, M: int = 64, workers: int = 1
) -> EventProbability:
    """Monte Carlo P(some pair among the n heaviest particles overlaps at level r)."""
    if not 0 <= r <= params.k - 1:
        raise ParameterError(f"level r must lie in 0..{params.k - 1}")
    if n < 2:
        raise ParameterError("need n >= 2")
    hits = np.array(replica_map(_top_event, replicas, seed, f"event/{n}/{r}", (params, n, r, M), workers))
    lo, hi = level_event_bounds(params, n, r)
    se = float(hits.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return EventProbability(float(hits.mean()), se, lo, hi, replicas)


def _size_biased_level(rng, params, r, M):
    g = build_rpc(params, M, rng)
    s = g.level_pair_mass()
    k = params.k
    distinct = s[0] - s[k]
    return (s[r] - s[r + 1]) / distinct


def size_biased_level_prob(
    params: RpcParams, r: int, replicas: int, seed: int = 0, M: int = 64, workers: int = 1
) -> tuple[float, float]:
    """P(two distinct particles drawn by weight overlap at level r), with stderr.

    Each replica contributes the exact conditional probability given the tree
    (sum over distinct pairs of xi_i xi_j at that level over sum over all
    distinct pairs), which removes the pair-drawing noise.
    """
    if not 0 <= r <= params.k - 1:
        raise ParameterError(f"level r must lie in 0..{params.k - 1}")
    vals = np.array(replica_map(_size_biased_level, replicas, seed, f"sizebiased/{r}", (params, r, M), workers))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(replicas))
