import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netslice import nn
from netslice.model import Event, SmdpState

from nn_helpers import max_fd_error, random_net


def hand_dueling(v, g):
    """Dueling net with no hidden layers: V and G are constants set by the biases."""
    value = [(np.zeros((1, 1)), np.array([v], dtype=float))]
    adv = [(np.zeros((1, len(g))), np.array(g, dtype=float))]
    return nn.MlpParams("dueling", [], value, adv)


def test_dueling_example():
    assert np.array_equal(nn.forward(hand_dueling(1.0, [0.5, -0.5]), [0.0]), [1.5, 0.5])


def test_dueling_constant_advantage():
    q = nn.forward(hand_dueling(2.5, [7.0, 7.0]), [1.0])
    assert np.array_equal(q, [2.5, 2.5])


def test_dueling_max_combiner():
    p = hand_dueling(1.0, [0.5, -0.5])
    p.combiner = "max"
    assert np.array_equal(nn.forward(p, [0.0]), [1.0, 0.0])


def test_zero_net_outputs_zero():
    p = nn.init_single(4, 2, (5, 5), 0).map(np.zeros_like)
    assert np.array_equal(nn.forward(p, np.ones(4)), [0.0, 0.0])
    d = nn.init_dueling(4, 2, rng=0).map(np.zeros_like)
    assert np.array_equal(nn.forward(d, np.ones((3, 4))), np.zeros((3, 2)))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.forward(nn.init_single(4, 2, rng=0), np.ones(5))


def test_bad_layer_chain():
    W = np.zeros((3, 4))
    with pytest.raises(ValueError):
        nn.MlpParams("single", [(W, np.zeros(4)), (np.zeros((5, 2)), np.zeros(2))])


def test_init_shapes_and_bounds():
    p = nn.init_single(6, 2, (64, 64), 1)
    assert [W.shape for W, _ in p.trunk] == [(6, 64), (64, 64), (64, 2)]
    assert np.abs(p.trunk[0][0]).max() <= 1 / np.sqrt(6)
    d = nn.init_dueling(6, 2, (64,), (), 1)
    assert [W.shape for W, _ in d.value] == [(6, 64), (64, 1)]
    assert [W.shape for W, _ in d.advantage] == [(6, 64), (64, 2)]
    assert d.trunk == []


def test_init_is_reproducible():
    a, b = nn.init_dueling(6, 2, rng=9), nn.init_dueling(6, 2, rng=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_forward_batch_matches_rows():
    p = nn.init_dueling(5, 2, (8,), (6,), 3)
    X = np.random.default_rng(0).normal(size=(4, 5))
    Q = nn.forward(p, X)
    for i in range(4):
        assert np.allclose(Q[i], nn.forward(p, X[i]), atol=1e-15)


@pytest.mark.parametrize("kind", ["single", "dueling-mean", "dueling-max"])
def test_backward_matches_finite_differences(kind):
    rng = np.random.default_rng(123)
    for _ in range(10):
        assert max_fd_error(random_net(kind, rng), rng) < 1e-4


def test_linear_layer_gradient_is_outer_product():
    p = nn.init_single(3, 2, (), 0)
    x = np.array([0.5, -1.0, 2.0])
    g = np.array([1.5, -0.25])
    grads = nn.backward(p, x, g)
    dW, db = grads.trunk[0]
    assert np.allclose(dW, np.outer(x, g), atol=1e-15)
    assert np.allclose(db, g, atol=1e-15)


def test_advantage_shift_has_zero_directional_derivative():
    rng = np.random.default_rng(4)
    p = nn.init_dueling(4, 3, (5,), (), rng)
    X = rng.normal(size=(2, 4))
    G = rng.normal(size=(2, 3))
    grads = nn.backward(p, X, G)
    # shifting the last advantage bias equally moves every G output equally
    assert abs(grads.advantage[-1][1].sum()) < 1e-12


def test_sgd_zero_rate_unchanged():
    p = nn.init_single(3, 2, (4,), 0)
    g = nn.backward(p, np.ones(3), np.ones(2))
    q = nn.sgd_step(p, [g], 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_sgd_averages_batch():
    p = nn.init_single(3, 2, (4,), 0)
    g1 = nn.backward(p, np.ones(3), np.array([1.0, 0.0]))
    g2 = nn.backward(p, -np.ones(3), np.array([0.0, 2.0]))
    q = nn.sgd_step(p, [g1, g2], 0.1)
    for a, b, x, y in zip(p.arrays(), q.arrays(), g1.arrays(), g2.arrays()):
        assert np.allclose(b, a - 0.1 * (x + y) / 2, atol=1e-15)


def test_sgd_quadratic_one_step():
    # L = (w*x + b - 3)^2 at w = 1, b = 0, x = 1: both partials are -4
    p = nn.MlpParams("single", [(np.array([[1.0]]), np.array([0.0]))])
    x = np.array([1.0])
    q = nn.forward(p, x)
    g = nn.backward(p, x, 2 * (q - 3.0))
    new = nn.sgd_step(p, [g], 0.25)
    assert new.trunk[0][0][0, 0] == 2.0
    assert new.trunk[0][1][0] == 1.0


def test_sgd_least_squares_converges_to_normal_equations():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, size=50)
    y = 1.7 * x - 0.4 + 0.1 * rng.normal(size=50)
    A = np.column_stack([x, np.ones_like(x)])
    w_star = np.linalg.solve(A.T @ A, A.T @ y)
    p = nn.MlpParams("single", [(np.zeros((1, 1)), np.zeros(1))])
    X = x[:, None]
    for _ in range(5000):
        q = nn.forward(p, X)
        g = nn.backward(p, X, 2 * (q - y[:, None]) / len(x))
        p = nn.sgd_step(p, [g], 0.5)
    assert abs(p.trunk[0][0][0, 0] - w_star[0]) < 1e-6
    assert abs(p.trunk[0][1][0] - w_star[1]) < 1e-6


def test_sgd_rejects_non_finite():
    p = nn.init_single(2, 2, (3,), 0)
    g = nn.backward(p, np.ones(2), np.ones(2)).map(lambda a: np.full_like(a, np.nan))
    with pytest.raises(nn.TrainingDiverged):
        nn.sgd_step(p, [g], 0.1)
    with pytest.raises(ValueError):
        nn.sgd_step(p, [], 0.1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dueling_identifiability(seed):
    rng = np.random.default_rng(seed)
    p = nn.init_dueling(5, 2, (6,), (), rng)
    X = rng.normal(size=(4, 5))
    Q, cache = nn.forward_cached(p, X)
    assert np.all(np.abs((Q - cache["V"]).mean(axis=1)) < 1e-12)


def test_encode_features_examples(small):
    f = nn.encode_features(SmdpState((0, 0, 0), Event.arrival(0)), small)
    assert np.array_equal(f, [0, 0, 0, 1, 0, 0])
    f = nn.encode_features(SmdpState((2, 1, 1), Event.arrival(2)), small)
    assert np.array_equal(f, [1.0, 1.0, 1.0, 0, 0, 1])
    f = nn.encode_features(SmdpState((1, 0, 0), Event.trivial()), small)
    assert np.array_equal(f[3:], [0, 0, 0])
    f = nn.encode_features(SmdpState((1, 0, 0), Event.arrival(1)), small, "index")
    assert f.shape == (4,) and f[3] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        nn.encode_features(SmdpState((1, 0, 0), Event.trivial()), small, "binary")


@pytest.mark.parametrize("encoding", ["onehot", "index"])
def test_feature_matrix_matches_encoder(small, encoding):
    F = nn.feature_matrix(small, encoding)
    for x in small.valid_decision_states():
        assert np.array_equal(F[x], nn.encode_features(small.decode(x), small, encoding))
    assert F.min() >= 0 and F.max() <= 1


@pytest.mark.parametrize("make", [lambda: nn.init_single(6, 2, rng=5),
                                  lambda: nn.init_dueling(6, 2, (8,), (7,), 5, "max")])
def test_checkpoint_round_trip(tmp_path, make):
    p = make()
    path = tmp_path / "ckpt.json"
    nn.save_checkpoint(p, path)
    q = nn.load_checkpoint(path)
    assert q.kind == p.kind and q.combiner == p.combiner
    assert all(np.array_equal(a, b) and a.shape == b.shape for a, b in zip(p.arrays(), q.arrays()))
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and all(isinstance(v, str) for v in doc["groups"]["trunk"][0]["weights"])


def test_checkpoint_rejects_other_formats():
    with pytest.raises(ValueError):
        nn.loads_params(json.dumps({"format": "other"}))
    with pytest.raises(ValueError):
        nn.loads_params(json.dumps({"format": "netslice-mlp", "version": 99}))
