import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rpcsim import _kernels_py, kernels

compiled = pytest.importorskip("rpcsim._kernels")


def brute_violation(d, tol):
    n = d.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(n):
                if d[i, j] > max(d[i, k], d[k, j]) + tol:
                    return (i, j, k)
    return None


def sym(n, elems):
    return arrays(np.float64, (n, n), elements=elems).map(lambda a: np.triu(a, 1) + np.triu(a, 1).T)


matrices = st.integers(1, 9).flatmap(lambda n: sym(n, st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0])))


@pytest.mark.parametrize("impl", [_kernels_py, compiled], ids=["python", "cython"])
class TestBackends:
    @settings(max_examples=60)
    @given(d=matrices)
    def test_violation(self, impl, d):
        assert impl.first_ultrametric_violation(np.ascontiguousarray(d), 0.0) == brute_violation(d, 0.0)

    @settings(max_examples=60)
    @given(d=matrices)
    def test_excess(self, impl, d):
        n = d.shape[0]
        want = max(
            [0.0] + [d[i, j] - max(d[i, k], d[k, j]) for i, j, k in itertools.product(range(n), repeat=3)]
        )
        assert impl.max_ultrametric_excess(np.ascontiguousarray(d)) == pytest.approx(want)

    @given(
        old=st.lists(st.integers(0, 4), min_size=1, max_size=10),
        merge=st.lists(st.integers(0, 2), min_size=5, max_size=5),
    )
    def test_record_merges(self, impl, old, merge):
        old = np.array(old, dtype=np.int64)
        new = np.array([merge[b] for b in old], dtype=np.int64)
        tau = np.full((old.size, old.size), -1.0)
        count = impl.record_merges(old, new, tau, 2.5)
        n = old.size
        expected = sum(1 for i in range(n) for j in range(i + 1, n) if old[i] != old[j] and new[i] == new[j])
        assert count == expected
        for i in range(n):
            for j in range(n):
                stamped = old[i] != old[j] and new[i] == new[j]
                assert tau[i, j] == (2.5 if stamped else -1.0)

    @given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(0, 4)), elements=st.integers(0, 2)))
    def test_shared_depth(self, impl, paths):
        out = impl.shared_depth(np.ascontiguousarray(paths))
        n, m = paths.shape
        for i in range(n):
            for j in range(n):
                k = 0
                while k < m and paths[i, k] == paths[j, k]:
                    k += 1
                assert out[i, j] == k


def test_dispatch_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_tolerance():
    d = np.array([[0.0, 0.5, 0.4], [0.5, 0.0, 0.4], [0.4, 0.4, 0.0]])
    assert kernels.first_ultrametric_violation(d, 0.2) is None
    assert kernels.first_ultrametric_violation(d, 0.0) == (0, 1, 2)
