"""Distribution comparisons and the property suites built on them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import kolmogorov

from .coalescent import DEFAULT_DU, overlaps_from_times, sample_coalescence_times
from .errors import ParameterError
from .evolution import EvolutionConfig, SuperposedGenealogy, phi
from .parallel import SEED_SCHEME, replica_map
from .rost import OverlapMatrix, Rost, is_ultrametric, metric_tail_bound, overlap_distance, ultrametric_excess
from .rpc import GenealogySample, OrderParam, RpcParams, build_rpc, overlap_cdf

SIGNIFICANCE = 0.01
PERMUTATION_THRESHOLD = 50


# ------------------------------------------------------------------- KS


def ks_statistic(xs: np.ndarray, ys: np.ndarray) -> float:
    xs = np.sort(xs)
    ys = np.sort(ys)
    pooled = np.concatenate((xs, ys))
    fx = np.searchsorted(xs, pooled, side="right") / xs.size
    fy = np.searchsorted(ys, pooled, side="right") / ys.size
    return float(np.max(np.abs(fx - fy)))


def ks_permutation_pvalue(xs, ys, permutations: int = 2000, seed: int = 0) -> float:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    d0 = ks_statistic(xs, ys)
    pooled = np.concatenate((xs, ys))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(permutations):
        p = rng.permutation(pooled)
        if ks_statistic(p[: xs.size], p[xs.size :]) >= d0 - 1e-12:
            hits += 1
    return (hits + 1) / (permutations + 1)


def ks_two_sample(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Two-sided KS statistic and p-value.

    Asymptotic Kolmogorov p-value, or a seeded permutation p-value when either
    side has fewer than 50 points.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size == 0 or ys.size == 0:
        raise ParameterError("KS test needs two non-empty samples")
    d = ks_statistic(xs, ys)
    if d == 0.0:
        return 0.0, 1.0
    if min(xs.size, ys.size) < PERMUTATION_THRESHOLD:
        return d, ks_permutation_pvalue(xs, ys)
    en = xs.size * ys.size / (xs.size + ys.size)
    return d, float(min(1.0, max(0.0, kolmogorov(math.sqrt(en) * d))))


# ------------------------------------------------------------------- laws


@dataclass(frozen=True)
class CascadeLaw:
    """Finite cascade sampled as a full tree. ``atom_power != 1`` raises every
    leaf mass to that power before normalization, which breaks the PD law."""

    params: RpcParams
    M: int
    atom_power: float = 1.0

    def sample(self, rng):
        g = build_rpc(self.params, self.M, rng)
        if self.atom_power != 1.0:
            g = g.with_log_weights(g.log_weights * self.atom_power)
        return g

    def state_points(self) -> tuple:
        return tuple(self.params.q_levels)

    def describe(self) -> dict:
        return {
            "kind": "cascade",
            "q_levels": list(self.params.q_levels),
            "x_levels": list(self.params.x_levels),
            "M": self.M,
            "atom_power": self.atom_power,
        }


@dataclass(frozen=True)
class SuperpositionLaw:
    """Independent cascades joined with cross overlaps 0; relative weights come
    from the unnormalized Poisson totals."""

    blocks: tuple

    def sample(self, rng):
        return SuperposedGenealogy([b.sample(rng) for b in self.blocks])

    def state_points(self) -> tuple:
        pts = {0.0}
        for b in self.blocks:
            pts.update(b.state_points())
        return tuple(sorted(pts))

    def describe(self) -> dict:
        return {"kind": "superposition", "blocks": [b.describe() for b in self.blocks]}


# ------------------------------------------------------------------- functionals


def _masses(state) -> np.ndarray:
    if isinstance(state, Rost):
        return state.masses.atoms
    return state.normalized_masses()


def _pair_overlap(state, rng) -> float:
    if isinstance(state, Rost):
        w = state.masses.atoms
        cum = np.cumsum(w)
        i, j = np.minimum(np.searchsorted(cum, rng.random(2) * cum[-1], side="right"), w.size - 1)
        return float(state.overlaps.q[i, j])
    return state.sample_pair_overlap(rng)


def functional_names(points: Sequence[float]) -> list[str]:
    return ["xi_1", "xi_1+xi_2", "sum xi^2", "sum xi^3", "pair overlap"] + [f"x({p:g})" for p in points]


def battery(state, points: Sequence[float], rng) -> np.ndarray:
    """Label-invariant functionals of one structure, in ``functional_names`` order."""
    w = _masses(state)
    top = np.sort(np.partition(w, max(w.size - 2, 0))[-2:])[::-1] if w.size >= 2 else np.append(w, 0.0)
    grid = np.asarray(points, dtype=float)
    cdf = overlap_cdf(state, grid, renormalize=False) if grid.size else np.empty(0)
    return np.concatenate(
        (
            [top[0], top[0] + top[1], np.sum(w**2), np.sum(w**3), _pair_overlap(state, rng)],
            cdf,
        )
    )


@dataclass
class FunctionalRecord:
    name: str
    pre_mean: float
    pre_sd: float
    post_mean: float
    post_sd: float
    ks_d: float
    p_value: float
    p_corrected: float


@dataclass
class QsReport:
    law: dict
    r: int
    lam: float
    steps: int
    replicas: int
    seed: int
    level: float
    records: list = field(default_factory=list)
    seed_scheme: str = SEED_SCHEME
    note: str = "a pass is evidence of quasi-stationarity on these functionals, not a proof"

    @property
    def passed(self) -> bool:
        return all(rec.p_corrected > self.level for rec in self.records)

    @property
    def min_p(self) -> float:
        return min(rec.p_corrected for rec in self.records)

    def failing(self) -> list[str]:
        return [rec.name for rec in self.records if rec.p_corrected <= self.level]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = "pass" if self.passed else "fail"
        return d


def compare_batteries(pre: np.ndarray, post: np.ndarray, names: Sequence[str]) -> list[FunctionalRecord]:
    """KS per functional with Bonferroni correction across the battery."""
    m = len(names)
    out = []
    for c, name in enumerate(names):
        d, p = ks_two_sample(pre[:, c], post[:, c])
        out.append(
            FunctionalRecord(
                name,
                float(pre[:, c].mean()),
                float(pre[:, c].std()),
                float(post[:, c].mean()),
                float(post[:, c].std()),
                d,
                p,
                min(1.0, p * m),
            )
        )
    return out


def _pre_replica(rng, law, points, view_power):
    s = law.sample(rng)
    if view_power != 1:
        s = s.view_power(view_power)
    return battery(s, points, rng)


def _post_replica(rng, law, config, steps, points, view_power):
    s = law.sample(rng)
    for _ in range(steps):
        s = phi(s, config, rng)
    if view_power != 1:
        s = s.view_power(view_power)
    return battery(s, points, rng)


def sample_battery(law, replicas, seed, label, points, workers=1, config=None, steps=0, view_power=1):
    if config is None or steps == 0:
        rows = replica_map(_pre_replica, replicas, seed, label, (law, points, view_power), workers)
    else:
        rows = replica_map(_post_replica, replicas, seed, label, (law, config, steps, points, view_power), workers)
    return np.array(rows)


def qs_test(
    law,
    config: EvolutionConfig,
    replicas: int,
    seed: int = 0,
    steps: int = 1,
    level: float = SIGNIFICANCE,
    workers: int = 1,
    pre: np.ndarray | None = None,
) -> QsReport:
    """Compare the battery on fresh samples with the battery after ``steps`` applications of Phi.

    The two sides use independent replicas (separate seed streams), so the KS
    tests compare independent samples. ``pre`` lets a grid reuse one
    pre-evolution sample set.
    """
    if replicas < 100:
        raise ParameterError("qs_test needs at least 100 replicas")
    points = law.state_points()
    names = functional_names(points)
    if pre is None:
        pre = sample_battery(law, replicas, seed, "qs/pre", points, workers)
    post = sample_battery(
        law, replicas, seed, f"qs/post/{config.r}/{config.lam}/{steps}", points, workers, config, steps
    )
    report = QsReport(law.describe(), config.r, config.lam, steps, replicas, seed, level)
    report.records = compare_batteries(pre, post, names)
    return report


def qs_grid(law, grid, replicas, seed=0, steps=1, level=SIGNIFICANCE, workers=1) -> list[QsReport]:
    points = law.state_points()
    pre = sample_battery(law, replicas, seed, "qs/pre", points, workers)
    return [qs_test(law, EvolutionConfig(r, lam), replicas, seed, steps, level, workers, pre) for r, lam in grid]


def schur_consistency_test(
    params: RpcParams, r: int, lam: float, replicas: int, M: int, seed: int = 0, level=SIGNIFICANCE, workers=1
) -> QsReport:
    """Phi_{r,lam} on cascade(q) read at overlap power r, against Phi_{1,lam} on cascade(q^r)."""
    law_a = CascadeLaw(params, M)
    law_b = CascadeLaw(params.power(r), M)
    points = law_b.state_points()
    names = functional_names(points)
    a = sample_battery(law_a, replicas, seed, "schur/a", points, workers, EvolutionConfig(r, lam), 1, view_power=r)
    b = sample_battery(law_b, replicas, seed, "schur/b", points, workers, EvolutionConfig(1, lam), 1)
    report = QsReport({"kind": "schur", "a": law_a.describe(), "b": law_b.describe()}, r, lam, 1, replicas, seed, level)
    report.records = compare_batteries(a, b, names)
    return report


# ------------------------------------------------------------------- ultrametricity


@dataclass
class UltrametricityReport:
    fraction: float
    samples: int
    worst_excess: float
    first_failure: tuple | None

    def to_dict(self) -> dict:
        return asdict(self)


def ultrametricity_report(samples, tol: float = 1e-9) -> UltrametricityReport:
    samples = list(samples)
    passed = 0
    worst = 0.0
    first = None
    for idx, s in enumerate(samples):
        Q = s.overlaps if isinstance(s, Rost) else s if isinstance(s, OverlapMatrix) else OverlapMatrix(s)
        res = is_ultrametric(Q, tol)
        if res.ok:
            passed += 1
            continue
        worst = max(worst, ultrametric_excess(Q))
        if first is None:
            first = (idx, res.triple)
    frac = passed / len(samples) if samples else 1.0
    return UltrametricityReport(frac, len(samples), worst, first)


# ------------------------------------------------------------------- continuity


@dataclass
class ContinuityReport:
    eps: float
    n: int
    zeta: float
    l1: float
    replicas: int
    probability: float
    stderr: float
    probability_with_tail: float
    bound: float
    vacuous: bool

    def holds(self, slack_sigmas: float = 3.0) -> bool:
        if self.vacuous:
            return True
        se = max(self.stderr, math.sqrt(self.bound * (1 - self.bound) / self.replicas))
        return self.probability_with_tail <= self.bound + slack_sigmas * se

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds()
        return d


def coupled_overlaps(f: OrderParam, g: OrderParam, zeta: float, n: int, rng, du: float = DEFAULT_DU):
    """Overlap matrices of T(f) and T(g) driven by one coalescent (masses shared)."""
    extra = tuple(f.with_breakpoint_times()) + tuple(g.with_breakpoint_times())
    u_stop = max(extra) if extra and f.is_step and g.is_step else None
    times = sample_coalescence_times(n, du, seed=rng, extra_times=extra, u_stop=u_stop)
    return overlaps_from_times(f, zeta, times.tau), overlaps_from_times(g, zeta, times.tau)


def _continuity_replica(rng, f, g, zeta, n, eps, du, sup_diff):
    q, p = coupled_overlaps(f, g, zeta, n, rng, du)
    d = overlap_distance(OverlapMatrix(q), OverlapMatrix(p)).value
    tail = metric_tail_bound(n) / 2.0 * sup_diff
    return (d >= 2 * eps, d + tail >= 2 * eps)


def coupling_continuity_test(
    f: OrderParam,
    g: OrderParam,
    zeta: float,
    n: int,
    eps: float,
    replicas: int,
    seed: int = 0,
    du: float = DEFAULT_DU,
    workers: int = 1,
) -> ContinuityReport:
    """Estimate P(d(Q, P) >= 2 eps) for coupled T(f), T(g) against n(n-1) eps / (2 zeta).

    ``probability`` uses the n x n block; ``probability_with_tail`` adds the
    largest possible contribution of the entries beyond n, and the verdict uses it.
    """
    if abs(f.zeta - g.zeta) > 1e-12 or f.zeta > zeta + 1e-12:
        raise ParameterError("f and g must share the cascade parameter zeta")
    l1 = f.l1_distance(g)
    if l1 > eps**2 * (1 + 1e-9):
        raise ParameterError(f"||f - g||_1 = {l1:.3e} exceeds eps^2 = {eps**2:.3e}")
    xs = np.linspace(0, 1, 4001)
    sup_diff = float(np.max(np.abs(f.q_of_x(xs) - g.q_of_x(xs))))
    if f.is_step and g.is_step:
        br = np.concatenate((f.x_levels, g.x_levels))
        sup_diff = max(sup_diff, float(np.max(np.abs(f.q_of_x(br) - g.q_of_x(br)))))
    hits = np.array(
        replica_map(_continuity_replica, replicas, seed, f"continuity/{eps}", (f, g, zeta, n, eps, du, sup_diff), workers),
        dtype=float,
    )
    bound = n * (n - 1) * eps / (2 * zeta)
    prob = float(hits[:, 0].mean())
    se = float(hits[:, 1].std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return ContinuityReport(eps, n, zeta, l1, replicas, prob, se, float(hits[:, 1].mean()), bound, bound >= 1.0)
