"""Time the Cython kernels against the NumPy fallback on identical inputs.

    python benchmarks/bench_kernels.py [--n 256] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from rpcsim import _kernels_py
from rpcsim.rpc import RpcParams, build_rpc

try:
    from rpcsim import _kernels as _compiled
except ImportError:
    _compiled = None


def inputs(n: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    g = build_rpc(RpcParams((0.2, 0.5, 0.8), (0.3, 0.6, 0.85)), 64, rng)
    leaves = g.top_leaves(n)
    paths = np.ascontiguousarray(g.multi_index(leaves), dtype=np.int64)
    q = g.to_rost(n).overlaps.q
    d = np.ascontiguousarray(1.0 - q)
    np.fill_diagonal(d, 0.0)
    old = np.arange(n, dtype=np.int64)
    new = np.ascontiguousarray(rng.integers(0, max(n // 4, 1), n), dtype=np.int64)
    return {"d": d, "paths": paths, "old": old, "new": new}


def cases(mod, x):
    tau = np.zeros((x["old"].size,) * 2)
    return {
        "first_ultrametric_violation": lambda: mod.first_ultrametric_violation(x["d"], 1e-9),
        "max_ultrametric_excess": lambda: mod.max_ultrametric_excess(x["d"]),
        "record_merges": lambda: mod.record_merges(x["old"], x["new"], tau, 1.0),
        "shared_depth": lambda: mod.shared_depth(x["paths"]),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    x = inputs(args.n)
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled extension not built; timing the fallback only")
    timings = {}
    for name, mod in backends.items():
        for kernel, fn in cases(mod, x).items():
            timings[(kernel, name)] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':30s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for kernel in cases(_kernels_py, x):
        py = timings[(kernel, "python")] * 1e3
        cy = timings.get((kernel, "cython"))
        if cy is None:
            print(f"{kernel:30s} {py:12.3f} {'-':>12s} {'-':>8s}")
        else:
            print(f"{kernel:30s} {py:12.3f} {cy * 1e3:12.3f} {py / (cy * 1e3):8.1f}")


if __name__ == "__main__":
    main()
