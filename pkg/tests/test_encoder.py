import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgap.autodiff import ShapeError, Tape, finite_difference_check
from cgap.data import normalize_adjacency
from cgap.encoder import encode_regions, gcn_layer_forward, init_node_features


def _run(a, f, ws, **kw):
    t = Tape()
    return encode_regions(t.const(normalize_adjacency(a)), t.const(f), [t.const(w) for w in ws], **kw).value


def test_init_bounds():
    f = init_node_features(4, 128, seed=1)
    assert f.shape == (4, 128)
    assert np.abs(f).max() < 0.0884
    np.testing.assert_array_equal(f, init_node_features(4, 128, seed=1))
    assert np.abs(init_node_features(50, 1, seed=2)).max() < 1.0


def test_init_rejects_zero_dim():
    with pytest.raises(ValueError):
        init_node_features(3, 0, seed=0)


def test_gcn_identity_chain():
    t = Tape()
    i3 = t.const(np.eye(3))
    np.testing.assert_array_equal(gcn_layer_forward(i3, i3, i3).value, np.eye(3))


def test_gcn_hand_case():
    t = Tape()
    a = t.const([[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_array_equal(gcn_layer_forward(a, t.const(np.eye(2)), t.const(np.eye(2))).value,
                                  [[0.5, 0.5], [0.5, 0.5]])


def test_gcn_zero_weight():
    t = Tape()
    out = gcn_layer_forward(t.const(np.eye(2)), t.const(np.ones((2, 3))), t.const(np.zeros((3, 3))))
    np.testing.assert_array_equal(out.value, np.zeros((2, 3)))


def test_gcn_shape_mismatch():
    t = Tape()
    with pytest.raises(ShapeError):
        gcn_layer_forward(t.const(np.eye(2)), t.const(np.ones((3, 3))), t.const(np.eye(3)))


def test_zero_layers_returns_features(rng):
    f = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(_run(np.zeros((3, 3)), f, []), f)


def test_two_region_path_matches_plain_numpy(rng):
    a = np.array([[0, 1], [1, 0]])
    f = init_node_features(2, 6, seed=3)
    ws = [rng.uniform(-0.4, 0.4, (6, 6)) for _ in range(2)]
    a_hat = np.full((2, 2), 0.5)  # (N + I) has degree 2 everywhere
    expected = f
    for w in ws:
        expected = np.maximum(a_hat @ expected @ w, 0.0)
    np.testing.assert_allclose(_run(a, f, ws), expected, rtol=0, atol=1e-15)


def test_inference_is_deterministic(rng):
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    f, ws = rng.normal(size=(3, 4)), [rng.normal(size=(4, 4))]
    out1 = _run(a, f, ws, dropout=0.5, training=False, rng=np.random.default_rng(0))
    out2 = _run(a, f, ws, dropout=0.5, training=False, rng=np.random.default_rng(1))
    assert out1.tobytes() == out2.tobytes()


def test_dropout_only_in_training(rng):
    a = np.array([[0, 1], [1, 0]])
    f, ws = np.abs(rng.normal(size=(2, 50))), [np.eye(50)]
    out = _run(a, f, ws, dropout=0.5, training=True, rng=np.random.default_rng(0))
    clean = _run(a, f, ws)
    dropped = out == 0
    assert dropped.any()
    np.testing.assert_allclose(out[~dropped], 2 * clean[~dropped])


@given(st.integers(0, 10_000), st.permutations(range(5)))
def test_permutation_equivariance(seed, perm):
    r = np.random.default_rng(seed)
    upper = np.triu(r.random((5, 5)) < 0.5, 1).astype(float)
    a = upper + upper.T
    f = r.normal(size=(5, 3))
    ws = [r.normal(size=(3, 3)) for _ in range(2)]
    p = np.eye(5)[list(perm)]
    np.testing.assert_allclose(_run(p @ a @ p.T, p @ f, ws), p @ _run(a, f, ws), rtol=0, atol=1e-10)


@given(st.integers(0, 10_000))
def test_outputs_nonnegative(seed):
    r = np.random.default_rng(seed)
    assert np.all(_run(np.array([[0, 1], [1, 0]]), r.normal(size=(2, 3)), [r.normal(size=(3, 3))]) >= 0)


def test_encoder_gradients(rng):
    a_hat = normalize_adjacency(np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]]))
    target = rng.normal(size=(3, 4))
    params = {"f": rng.normal(size=(3, 4)), "w0": rng.normal(size=(4, 4)), "w1": rng.normal(size=(4, 4))}

    def forward(p):
        t = Tape()
        z = encode_regions(t.const(a_hat), t.param("f", p["f"]), [t.param("w0", p["w0"]), t.param("w1", p["w1"])])
        return z.sqdiff(target).sum()

    assert finite_difference_check(forward, params)[0] < 1e-4
