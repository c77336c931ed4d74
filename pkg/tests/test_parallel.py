import numpy as np

from rpcsim.parallel import SEED_SCHEME, as_generator, replica_map, replica_rng, stream_id


def _draw(rng, scale):
    return float(rng.normal() * scale)


def test_stream_id_stable():
    assert stream_id("qs/pre") == stream_id("qs/pre")
    assert stream_id("a") != stream_id("b")


def test_replica_rng_independent_of_order():
    a = replica_rng(7, "x", 3).random()
    replica_rng(7, "x", 0).random()
    assert replica_rng(7, "x", 3).random() == a
    assert replica_rng(7, "y", 3).random() != a
    assert replica_rng(8, "x", 3).random() != a


def test_worker_count_invariance():
    serial = replica_map(_draw, 23, 11, "test", (2.0,), workers=1)
    pooled = replica_map(_draw, 23, 11, "test", (2.0,), workers=3)
    assert serial == pooled


def test_as_generator():
    g = np.random.default_rng(1)
    assert as_generator(g) is g
    assert as_generator(5).random() == np.random.default_rng(5).random()


def test_scheme_name():
    assert SEED_SCHEME.endswith("/v1")
