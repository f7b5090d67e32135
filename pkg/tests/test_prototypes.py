import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pidproto.assignment import AssignmentMatrix, assign_batch
from pidproto.hypersphere import cosine, normalize, uniform_sphere
from pidproto.prototypes import PrototypeSet, ema_update, init_prototypes, read_snapshots, write_snapshot


def test_init_examples():
    p = init_prototypes(3, 4, 8, np.random.default_rng(0))
    assert p.counts() == [4, 4, 4] and p.total() == 12
    p.check()
    q = init_prototypes(3, 4, 8, np.random.default_rng(0))
    assert all(np.array_equal(a, b) for a, b in zip(p.vectors, q.vectors))
    circle = init_prototypes(2, 1, 2, np.random.default_rng(1))
    assert circle.counts() == [1, 1]
    circle.check()
    with pytest.raises(ValueError):
        init_prototypes(0, 1, 2, np.random.default_rng(0))


def single(z, w=1.0):
    return np.atleast_2d(z), np.array([0]), {0: AssignmentMatrix(np.array([[w]]), 0, np.array([0]))}


def test_ema_examples():
    e = np.eye(3)
    p = PrototypeSet([e[:1]])
    ema_update(p, *single(e[1]), alpha=1.0)
    assert np.allclose(p.vectors[0], e[:1])
    p = PrototypeSet([e[:1]])
    ema_update(p, *single(e[1]), alpha=0.0)
    assert np.allclose(p.vectors[0], e[1:2], atol=1e-12)
    p = PrototypeSet([e[:1]])
    ema_update(p, *single(e[1]), alpha=0.5)
    s = np.sqrt(2) / 2
    assert np.allclose(p.vectors[0], [[s, s, 0]], atol=1e-9)


def test_ema_zero_mass_untouched_and_empty_batch_identity(rng):
    P = PrototypeSet([normalize(rng.standard_normal((3, 4)))])
    before = P.vectors[0].copy()
    z = uniform_sphere(2, 4, rng)
    w = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
    ema_update(P, z, np.array([0, 0]), {0: AssignmentMatrix(w, 0, np.array([0, 1]))}, 0.9)
    assert np.array_equal(P.vectors[0][2], before[2])
    assert not np.allclose(P.vectors[0][0], before[0])
    snap = P.vectors[0].copy()
    ema_update(P, np.zeros((0, 4)), np.zeros(0, int), {}, 0.9)
    assert np.array_equal(P.vectors[0], snap)
    with pytest.raises(ValueError):
        ema_update(P, z, np.array([0, 0]), {}, 1.5)


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_ema_keeps_unit_norm(seed, alpha):
    rng = np.random.default_rng(seed)
    P = init_prototypes(2, 3, 5, rng)
    z = uniform_sphere(10, 5, rng)
    labels = rng.integers(0, 2, 10)
    ema_update(P, z, labels, assign_batch(z, labels, P.vectors), alpha)
    P.check(1e-6)


@given(st.integers(0, 2**31), st.floats(0.5, 0.99))
def test_ema_converges_monotonically_to_fixed_target(seed, alpha):
    rng = np.random.default_rng(seed)
    mu = uniform_sphere(1, 6, rng)[0]
    p = uniform_sphere(1, 6, rng)
    if cosine(p[0], mu) < -0.999:
        return
    P = PrototypeSet([p])
    cos = [cosine(P.vectors[0][0], mu)]
    for _ in range(100):
        ema_update(P, *single(mu), alpha=alpha)
        cos.append(cosine(P.vectors[0][0], mu))
    assert all(b >= a - 1e-12 for a, b in zip(cos, cos[1:]))
    assert cos[-1] > cos[0] or cos[0] > 1 - 1e-12


def test_replace_remove_bookkeeping():
    e = np.eye(3)
    P = PrototypeSet([e[:2], e[2:]])
    P.ages[0][:] = [4, 7]
    P.streaks[0][:] = [2, 1]
    v = P.version
    P.replace(0, 0, np.vstack([e[1], e[2]]))
    assert P.counts() == [3, 1]
    assert P.ages[0].tolist() == [0, 0, 7] and P.streaks[0].tolist() == [0, 0, 1]
    assert P.version == v + 1
    P.remove(0, 2)
    assert P.counts() == [2, 1]
    with pytest.raises(ValueError):
        P.remove(1, 0)


def test_snapshot_round_trip(tmp_path, rng):
    P = init_prototypes(2, 3, 4, rng)
    path = tmp_path / "snap.csv"
    with open(path, "w") as fh:
        write_snapshot(fh, 0, P)
        P.remove(1, 0)
        write_snapshot(fh, 10, P)
    snaps = read_snapshots(path)
    assert sorted(snaps) == [0, 10]
    assert [s.shape[0] for s in snaps[10]] == [3, 2]
    assert all(np.array_equal(a, b) for a, b in zip(snaps[10], P.vectors))
