import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pidproto.datagen import (
    ClassSpec, DumpFormatError, HeaderError, LabelError, NonFiniteError, SyntheticSpec, default_spec,
    generate_id, generate_ood, load_embeddings, place_held_out_means, save_embeddings,
)
from pidproto.hypersphere import mean_resultant_length, normalize


def test_class_spec_validation():
    e = np.eye(3)
    with pytest.raises(ValueError):
        ClassSpec(e[:2], 10.0, [0.7, 0.7])
    with pytest.raises(ValueError):
        ClassSpec(np.zeros((0, 3)), 10.0, [])


def test_single_cluster_concentrated(rng):
    spec = SyntheticSpec([ClassSpec(np.eye(16)[:1], 200.0, [1.0])], samples_per_class=1000)
    X, y, sub = generate_id(spec, rng)
    assert normalize(X.mean(axis=0)) @ np.eye(16)[0] > 0.99
    assert np.all(y == 0) and np.all(sub == 0)


def test_mixture_weights_respected(rng):
    spec = SyntheticSpec([ClassSpec(np.eye(4)[:2], 50.0, [0.5, 0.5])], samples_per_class=10_000)
    _, _, sub = generate_id(spec, rng)
    counts = np.bincount(sub, minlength=2)
    assert np.all(np.abs(counts - 5000) <= 0.02 * 5000)


@given(st.integers(0, 2**31))
def test_generate_deterministic_and_unit(seed):
    spec = default_spec(np.random.default_rng(seed), samples_per_class=30)
    a = generate_id(spec, np.random.default_rng(seed))
    b = generate_id(spec, np.random.default_rng(seed))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert np.allclose(np.linalg.norm(a[0], axis=1), 1)
    assert a[0].shape == (90, 16)


def test_default_spec_structure(rng):
    spec = default_spec(rng, (1, 2, 4))
    assert [c.means.shape[0] for c in spec.classes] == [1, 2, 4]
    # means at 60 degrees from the center along orthogonal tangents: pairwise cosine cos^2(60)
    for c in spec.classes[1:]:
        G = c.means @ c.means.T
        off = G[~np.eye(G.shape[0], dtype=bool)]
        assert np.allclose(off, 0.25, atol=1e-9)


def test_lift_path(rng):
    spec = default_spec(rng, (1, 2), lift_dim=32, samples_per_class=20)
    X, _, _ = generate_id(spec, rng)
    assert X.shape == (40, 32)
    assert np.allclose(np.linalg.norm(X, axis=1), 1)


def test_uniform_ood(rng):
    X = generate_ood("uniform_sphere", 10_000, 16, rng)
    assert mean_resultant_length(X) < 0.05


@given(st.integers(0, 2**31))
def test_held_out_means_are_far_from_id(seed):
    rng = np.random.default_rng(seed)
    spec = default_spec(rng)
    M = place_held_out_means(spec, 4, rng)
    cos = M @ spec.sub_means().T
    assert np.all(cos <= math.cos(math.radians(30)) + 1e-9)


def test_held_out_placement_gives_up():
    # four ID means at 90 degree spacing on a circle leave no point 50 degrees from all of them
    spec = SyntheticSpec([ClassSpec(np.array([[1.0, 0.0]]), 1.0, [1.0]),
                          ClassSpec(np.array([[-1.0, 0.0]]), 1.0, [1.0]),
                          ClassSpec(np.array([[0.0, 1.0]]), 1.0, [1.0]),
                          ClassSpec(np.array([[0.0, -1.0]]), 1.0, [1.0])])
    with pytest.raises(RuntimeError, match="could not place"):
        place_held_out_means(spec, 1, np.random.default_rng(0), min_angle_deg=50, max_angle_deg=60, max_tries=50)


def test_ood_errors(rng):
    with pytest.raises(ValueError):
        generate_ood("uniform_sphere", 0, 4, rng)
    with pytest.raises(ValueError):
        generate_ood("held_out_vmf", 5, 4, rng)
    with pytest.raises(ValueError):
        generate_ood("bogus", 5, 4, rng)


def test_round_trip(tmp_path, rng):
    spec = default_spec(rng, samples_per_class=10)
    X, y, _ = generate_id(spec, rng)
    path = tmp_path / "id.csv"
    save_embeddings(path, X, y, 3)
    X2, y2 = load_embeddings(path)
    assert np.array_equal(y, y2)
    assert np.allclose(X, X2, atol=1e-15)
    O = generate_ood("uniform_sphere", 5, 16, rng)
    save_embeddings(tmp_path / "ood.csv", O, np.full(5, -1), 3)
    assert load_embeddings(tmp_path / "ood.csv", allow_ood=True)[0].shape == (5, 16)
    with pytest.raises(LabelError):
        load_embeddings(tmp_path / "ood.csv")
    with pytest.raises(LabelError):
        load_embeddings(path, allow_ood=True)


def write(tmp_path, text):
    p = tmp_path / "dump.csv"
    p.write_text(text)
    return p


@pytest.mark.parametrize("text, err, row", [
    ("2,2\n0,1,0\n", HeaderError, None),
    ("x,2,3\n", HeaderError, None),
    ("2,2,2\n0,1,0\n2,0,1\n", LabelError, 3),
    ("2,2,2\n0,1,0\n1,nan,1\n", NonFiniteError, 3),
    ("1,2,2\n0,1,0,5\n", DumpFormatError, 2),
    ("1,2,2\n0,1,0\n1,0,1\n", DumpFormatError, None),
    ("1,2,2\n0,0,0\n", DumpFormatError, 2),
])
def test_load_errors_name_the_row(tmp_path, text, err, row):
    with pytest.raises(err) as info:
        load_embeddings(write(tmp_path, text))
    if row is not None:
        assert f"row {row}" in str(info.value)


def test_distinct_error_types():
    assert len({HeaderError, LabelError, NonFiniteError}) == 3
    assert all(issubclass(e, DumpFormatError) for e in (HeaderError, LabelError, NonFiniteError))


def test_load_normalizes_with_warning(tmp_path, caplog):
    p = write(tmp_path, "2,2,1\n0,3,4\n0,1,0\n")
    X, _ = load_embeddings(p)
    assert np.allclose(X, [[0.6, 0.8], [1, 0]])
    assert any("normalized" in r.message for r in caplog.records)
