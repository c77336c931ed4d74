"""Experiment runners behind the CLI subcommands.

Each runner takes a validated ``ExperimentConfig`` and returns a ``RunResult``:
a list of test records plus named text artifacts. Runners never touch the
filesystem; writing is the CLI's job.

Record layout (field order is fixed):

    test              identifier, unique within a run
    kind              experiment kind
    parameters        the parameters this test used
    statistic         main test statistic
    p_value_or_bound  p-value, probability bound or tolerance the statistic is judged against
    verdict           "pass", "fail" or "vacuous" (vacuous records never fail a run)
    details           everything else, including full reports
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coalescent import Partition, build_continuous_rpc, sample_coalescence_times, semigroup_step
from .config import ExperimentConfig, model_params
from .evolution import (
    EvolutionConfig,
    crowd_velocity,
    estimate_velocity,
    evolve,
    match_velocities,
    past_velocity_formula,
    sample_increments,
    velocity_system,
)
from .parallel import default_workers, replica_map, replica_rng
from .rost import OverlapMatrix, is_indecomposable, is_ultrametric, psd_min_eigenvalue, state_space
from .rpc import OrderParam, RpcParams, build_rpc, build_rpc_recursive
from .stats import CascadeLaw, SuperpositionLaw, qs_grid, ultrametricity_report, coupling_continuity_test

PSD_TOL = 1e-8
EXACT_TOL = 1e-9
MATCH_TOL = 1e-12


@dataclass
class RunResult:
    records: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r["verdict"] != "fail" for r in self.records)


def make_record(test, kind, parameters, statistic, bound, verdict, details=None) -> dict:
    return {
        "test": test,
        "kind": kind,
        "parameters": parameters,
        "statistic": statistic,
        "p_value_or_bound": bound,
        "verdict": verdict,
        "details": details if details is not None else {},
    }


def _verdict(ok: bool) -> str:
    return "pass" if ok else "fail"


def _matrix_text(a: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(a), fmt="%.17g", delimiter=",")
    return buf.getvalue()


def _workers(cfg: ExperimentConfig) -> int:
    return cfg["workers"] or default_workers()


def matrix_invariants(q: np.ndarray, allowed) -> dict:
    """Checks every cascade overlap matrix must satisfy."""
    Q = OverlapMatrix(q)
    um = is_ultrametric(Q, EXACT_TOL)
    return {
        "ultrametric": bool(um.ok),
        "triple": list(um.triple) if um.triple is not None else None,
        "unit_diagonal": bool(np.all(np.diag(q) == 1.0)),
        "min_eigenvalue": psd_min_eigenvalue(Q),
        "state_space_ok": state_space(Q).issubset(allowed) if Q.n >= 2 else True,
    }


def invariants_ok(inv: dict) -> bool:
    return inv["ultrametric"] and inv["unit_diagonal"] and inv["min_eigenvalue"] >= -PSD_TOL and inv["state_space_ok"]


# ------------------------------------------------------------------- sample


def _build(params: RpcParams, construction: str, M: int, n: int, rng):
    if construction == "tree":
        return build_rpc(params, M, rng).to_rost(n)
    if construction == "recursive":
        return build_rpc_recursive(params, M, n, rng)
    return build_continuous_rpc(params.order_param(), params.zeta, n, M=M, seed=rng)


def run_sample(cfg: ExperimentConfig) -> RunResult:
    params = model_params(cfg["model"], "model")
    res = RunResult()
    allowed = params.q_levels
    for i in range(cfg.replicas):
        rost = _build(params, cfg["construction"], cfg["M"], cfg["n"], replica_rng(cfg.seed, "sample", i))
        res.artifacts[f"masses_{i:04d}.csv"] = _matrix_text(rost.masses.atoms)
        res.artifacts[f"overlaps_{i:04d}.csv"] = _matrix_text(rost.overlaps.q)
        inv = matrix_invariants(rost.overlaps.q, allowed)
        res.records.append(
            make_record(
                f"sample/{i}/invariants",
                "sample",
                {"construction": cfg["construction"], "M": cfg["M"], "n": cfg["n"], "replica": i},
                inv["min_eigenvalue"],
                -PSD_TOL,
                _verdict(invariants_ok(inv)),
                inv,
            )
        )
    return res


# ------------------------------------------------------------------- evolve


def run_evolve(cfg: ExperimentConfig) -> RunResult:
    params = model_params(cfg["model"], "model")
    res = RunResult()
    ec = EvolutionConfig(cfg["r"], cfg["lam"])
    for i in range(cfg.replicas):
        rng = replica_rng(cfg.seed, "evolve", i)
        rost = build_rpc(params, cfg["M"], rng).to_rost(cfg["n"])
        q0 = rost.overlaps.q.copy()
        ids = np.arange(cfg["n"])
        trajectory = [{"step": 0, "ids": ids.tolist(), "masses": rost.masses.atoms.tolist()}]
        preserved = True
        for t in range(1, cfg["steps"] + 1):
            kappa = sample_increments(rost, ec.r, rng)
            rost, perm = evolve(rost, kappa, ec.lam, ec.psi)
            ids = ids[perm]
            preserved &= bool(np.array_equal(rost.overlaps.q, q0[np.ix_(ids, ids)]))
            trajectory.append({"step": t, "ids": ids.tolist(), "masses": rost.masses.atoms.tolist()})
        res.artifacts[f"trajectory_{i:04d}.json"] = json.dumps(trajectory, indent=1) + "\n"
        res.records.append(
            make_record(
                f"evolve/{i}/overlap-preservation",
                "evolve",
                {"r": ec.r, "lam": ec.lam, "steps": cfg["steps"], "n": cfg["n"], "replica": i},
                None,
                None,
                _verdict(preserved),
                {"tracked_overlaps_preserved": preserved},
            )
        )
    return res


# ------------------------------------------------------------------- qs-test


def qs_record(report, kind: str, test: str, expect_pass: bool = True) -> dict:
    stat = max(rec.ks_d for rec in report.records)
    observed = report.passed
    return make_record(
        test,
        kind,
        {"r": report.r, "lam": report.lam, "steps": report.steps, "replicas": report.replicas},
        stat,
        report.min_p,
        _verdict(observed == expect_pass),
        {"expected": "pass" if expect_pass else "fail", "observed": "pass" if observed else "fail", **report.to_dict()},
    )


def run_qs(cfg: ExperimentConfig) -> RunResult:
    params = model_params(cfg["model"], "model")
    law = CascadeLaw(params, cfg["M"], float(cfg["atom_power"]))
    reports = qs_grid(law, [tuple(g) for g in cfg["grid"]], cfg.replicas, cfg.seed, cfg["steps"], workers=_workers(cfg))
    res = RunResult()
    for rep in reports:
        res.records.append(qs_record(rep, "qs-test", f"qs/r={rep.r}/lam={rep.lam:g}"))
    return res


# ------------------------------------------------------------------- velocity


def adjudicate(estimate: float, formulas: dict, rel_tol: float) -> list[str]:
    return [name for name, v in formulas.items() if v != 0 and abs(estimate - v) / abs(v) <= rel_tol]


def run_velocity(cfg: ExperimentConfig) -> RunResult:
    params = model_params(cfg["model"], "model")
    op = params.order_param()
    res = RunResult()
    rows = ["r,lam,crowd,past,estimate,stderr,matches"]
    for r in cfg["r_values"]:
        ec = EvolutionConfig(r, cfg["lam"])
        est = estimate_velocity(
            params, ec, cfg.replicas, cfg.seed, M=cfg["M"], workers=_workers(cfg), inner_draws=cfg["inner_draws"]
        )
        formulas = {"crowd": crowd_velocity(op, r, ec.lam), "past": past_velocity_formula(op, r, ec.lam)}
        matches = adjudicate(est.mean, formulas, cfg["rel_tol"])
        rows.append(
            f"{r},{ec.lam!r},{formulas['crowd']!r},{formulas['past']!r},{est.mean!r},{est.stderr!r},{'|'.join(matches) or 'none'}"
        )
        res.records.append(
            make_record(
                f"velocity/r={r}/lam={ec.lam:g}",
                "velocity",
                {"r": r, "lam": ec.lam, "M": cfg["M"], "replicas": cfg.replicas},
                est.mean,
                formulas[matches[0]] if len(matches) == 1 else None,
                _verdict(len(matches) == 1),
                {"stderr": est.stderr, **formulas, "matches": matches, "rel_tol": cfg["rel_tol"]},
            )
        )
    res.artifacts["velocity.csv"] = "\n".join(rows) + "\n"
    return res


# ------------------------------------------------------------------- counterexample


def embedded_block(q_levels, x_levels, base_x: float) -> RpcParams:
    """Cascade with a base level at overlap 0 (x = base_x) above the given levels."""
    return RpcParams((0.0,) + tuple(q_levels), (base_x,) + tuple(base_x + x for x in x_levels))


def counterexample_law(a: RpcParams, x_b, q_b, base_x: float, M: int) -> SuperpositionLaw:
    return SuperpositionLaw(
        (
            CascadeLaw(embedded_block(a.q_levels, a.x_levels, base_x), M),
            CascadeLaw(embedded_block(q_b, x_b, base_x), M),
        )
    )


def _overlaps_of(rng, law, n):
    return law.sample(rng).to_rost(n).overlaps.q


def run_counterexample(cfg: ExperimentConfig) -> RunResult:
    a = model_params(cfg["block_a"], "block_a")
    q_b = tuple(float(q) for q in cfg["q_levels_b"])
    R = cfg["R"]
    res = RunResult()
    x_b = match_velocities(a.q_levels, a.x_levels, q_b, R, tol=MATCH_TOL)
    dx_a = np.diff(np.concatenate(([0.0], a.x_levels)))
    dx_b = np.diff(np.concatenate(([0.0], x_b)))
    residual = float(np.max(np.abs(velocity_system(q_b, R) @ dx_b - velocity_system(a.q_levels, R) @ dx_a)))
    res.records.append(
        make_record(
            "counterexample/match",
            "counterexample",
            {"R": R, "q_levels_a": list(a.q_levels), "x_levels_a": list(a.x_levels), "q_levels_b": list(q_b)},
            residual,
            MATCH_TOL,
            _verdict(residual < MATCH_TOL),
            {"x_levels_b": list(x_b)},
        )
    )
    if cfg["base_x"] + x_b[-1] >= 1.0:
        raise ValueError("base_x + matched x levels of block B reach 1")
    law = counterexample_law(a, x_b, q_b, cfg["base_x"], cfg["M"])
    workers = _workers(cfg)
    for rep in qs_grid(law, [tuple(g) for g in cfg["grid"]], cfg.replicas, cfg.seed, cfg["steps"], workers=workers):
        res.records.append(
            qs_record(rep, "counterexample", f"counterexample/qs/r={rep.r}/lam={rep.lam:g}", expect_pass=rep.r <= R)
        )
    count = min(cfg.replicas, 200)
    mats = replica_map(_overlaps_of, count, cfg.seed, "counterexample/ultrametric", (law, cfg["n"]), workers)
    um = ultrametricity_report(mats)
    res.records.append(
        make_record(
            "counterexample/ultrametricity",
            "counterexample",
            {"samples": count, "n": cfg["n"]},
            um.fraction,
            1.0,
            _verdict(um.fraction == 1.0),
            um.to_dict(),
        )
    )
    indec = is_indecomposable(OverlapMatrix(mats[0]))
    res.records.append(
        make_record(
            "counterexample/indecomposable",
            "counterexample",
            {"n": cfg["n"]},
            float(indec),
            0.0,
            _verdict(not indec),
            {"indecomposable": indec},
        )
    )
    return res


# ------------------------------------------------------------------- coalescent


def _pair_times(rng, du, extra):
    times = sample_coalescence_times(2, du, seed=rng, extra_times=extra, u_stop=max(extra))
    return float(times.tau[0, 1])


def _semigroup_pair(rng, u, v):
    g = semigroup_step(Partition.singletons(4), u, rng)
    g = semigroup_step(g, v, rng)
    return g.same_block(0, 1)


def binomial_check(hits: np.ndarray, target: float, sigmas: float = 3.0):
    p = float(np.mean(hits))
    se = math.sqrt(max(target * (1 - target), 1e-300) / hits.size)
    return p, se, abs(p - target) <= sigmas * se


def run_coalescent(cfg: ExperimentConfig) -> RunResult:
    res = RunResult()
    us = [float(u) for u in cfg["u_values"]]
    workers = _workers(cfg)
    tau = np.array(replica_map(_pair_times, cfg.replicas, cfg.seed, "coalescent/pair", (cfg["du"], tuple(us)), workers))
    for u in us:
        target = math.exp(-u)
        p, se, ok = binomial_check(tau > u, target)
        res.records.append(
            make_record(
                f"coalescent/pair-survival/u={u:g}",
                "coalescent",
                {"u": u, "du": cfg["du"], "replicas": cfg.replicas},
                p,
                target,
                _verdict(ok),
                {"stderr": se, "tolerance_sigmas": 3},
            )
        )
    u, v = (float(t) for t in cfg["semigroup"])
    hits = np.array(replica_map(_semigroup_pair, cfg.replicas, cfg.seed, "coalescent/semigroup", (u, v), workers))
    target = 1 - math.exp(-(u + v))
    p, se, ok = binomial_check(hits, target)
    res.records.append(
        make_record(
            f"coalescent/semigroup/u={u:g}/v={v:g}",
            "coalescent",
            {"u": u, "v": v, "replicas": cfg.replicas},
            p,
            target,
            _verdict(ok),
            {"stderr": se, "tolerance_sigmas": 3},
        )
    )
    return res


# ------------------------------------------------------------------- continuity


def run_continuity(cfg: ExperimentConfig) -> RunResult:
    fp = model_params(cfg["f"], "f")
    gp = model_params(cfg["g"], "g")
    f = OrderParam.step(fp.q_levels, fp.x_levels)
    g = OrderParam.step(gp.q_levels, gp.x_levels)
    rep = coupling_continuity_test(
        f, g, cfg["zeta"], cfg["n"], cfg["eps"], cfg.replicas, cfg.seed, cfg["du"], _workers(cfg)
    )
    verdict = "vacuous" if rep.vacuous else _verdict(rep.holds())
    return RunResult(
        [
            make_record(
                f"continuity/eps={cfg['eps']:g}",
                "continuity",
                {"eps": cfg["eps"], "n": cfg["n"], "zeta": cfg["zeta"], "replicas": cfg.replicas},
                rep.probability_with_tail,
                rep.bound,
                verdict,
                rep.to_dict(),
            )
        ]
    )


RUNNERS = {
    "sample": run_sample,
    "evolve": run_evolve,
    "qs-test": run_qs,
    "velocity": run_velocity,
    "counterexample": run_counterexample,
    "coalescent": run_coalescent,
    "continuity": run_continuity,
}


def run(cfg: ExperimentConfig) -> RunResult:
    return RUNNERS[cfg.kind](cfg)
