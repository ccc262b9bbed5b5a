import numpy as np
import pytest

import oracles
from drocox.exceptions import ConfigError, NumericError, ShapeError
from drocox.model import (
    AdamState,
    LinearRisk,
    MlpRisk,
    adam_step,
    backward,
    flatten,
    init_params,
    load_checkpoint,
    risk_scores,
    save_checkpoint,
    unflatten,
)


def test_linear_scores():
    assert np.all(risk_scores(LinearRisk(np.zeros(3)), np.ones((4, 3))) == 0)
    assert risk_scores(LinearRisk([1.0, 2.0]), np.array([[3.0, 4.0]]))[0] == 11.0


def test_mlp_hand_example():
    m = MlpRisk.from_layers(np.eye(2), np.zeros(2), np.ones(2), 0.0)
    assert m.forward(np.array([[-1.0, 2.0]]))[0] == 2.0


def test_shape_errors():
    with pytest.raises(ShapeError):
        risk_scores(LinearRisk([1.0, 2.0]), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        backward(LinearRisk([1.0]), np.ones((2, 1)), np.ones(3))
    with pytest.raises(ShapeError):
        MlpRisk(np.zeros(5), 2, 3)


def test_backward_zero_and_linear():
    m = LinearRisk([0.3, -0.2])
    X = np.array([[1.5, -2.0]])
    assert np.all(backward(m, X, np.zeros(1)) == 0)
    np.testing.assert_array_equal(backward(m, X, np.array([2.5])), 2.5 * X[0])


def test_backward_nonfinite_upstream():
    with pytest.raises(NumericError):
        backward(LinearRisk([1.0]), np.ones((1, 1)), np.array([np.nan]))


@pytest.mark.parametrize("trial", range(100))
def test_mlp_backward_finite_difference(trial):
    rng = np.random.default_rng(trial)
    d = int(rng.integers(1, 6))
    m = init_params("mlp", d, hidden=24, seed=trial)
    X = rng.normal(size=(5, d))
    while np.min(np.abs(m.hidden_preactivation(X))) < 1e-3:  # stay clear of ReLU kinks
        X = rng.normal(size=(5, d))
    u = rng.normal(size=5)
    g = backward(m, X, u)
    fd = oracles.central_difference(lambda p: float(u @ m.with_params(p).forward(X)), m.params, h=1e-5)
    assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8) < 1e-4


def test_relu_kink_convention():
    m = MlpRisk.from_layers(np.array([[1.0]]), np.array([0.0]), np.array([1.0]), 0.0)
    g = backward(m, np.array([[0.0]]), np.array([1.0]))
    # zero pre-activation: no gradient flows into the first layer
    assert g[0] == 0 and g[1] == 0


def test_init_bounds_and_determinism():
    m = init_params("linear", 6, seed=1)
    assert m.params.size == 6 and np.all(np.abs(m.params) <= 1 / np.sqrt(6))
    assert np.array_equal(init_params("linear", 6, seed=1).params, m.params)
    mlp = init_params("mlp", 6, hidden=24, seed=0)
    assert mlp.params.size == 193
    W1, b1, W2, b2 = mlp.unflatten()
    assert np.all(np.abs(W1) <= 1 / np.sqrt(6)) and np.all(np.abs(b1) <= 1 / np.sqrt(6))
    assert np.all(np.abs(W2) <= 1 / np.sqrt(24)) and abs(b2) <= 1 / np.sqrt(24)
    with pytest.raises(ConfigError):
        init_params("cnn", 3)


@pytest.mark.parametrize("kind", ["linear", "mlp"])
def test_flatten_roundtrip(kind):
    m = init_params(kind, 4, seed=3)
    back = unflatten(m, flatten(m))
    assert np.array_equal(back.params, m.params) and type(back) is type(m)


@pytest.mark.parametrize("c", [-1.0, 0.5, 2.0])
def test_linear_homogeneity(c, rng):
    w = rng.normal(size=3)
    X = rng.normal(size=(10, 3))
    np.testing.assert_allclose(LinearRisk(c * w).forward(X), c * LinearRisk(w).forward(X), rtol=1e-14)


def test_params_read_only():
    m = init_params("linear", 2)
    with pytest.raises(ValueError):
        m.params[0] = 1.0


def test_checkpoint_roundtrip(tmp_path):
    m = init_params("mlp", 3, hidden=5, seed=2)
    save_checkpoint(m, tmp_path / "c.json", config={"seed": 2})
    back, payload = load_checkpoint(tmp_path / "c.json")
    assert np.array_equal(back.params, m.params)
    assert payload["config"] == {"seed": 2}


def test_adam_zero_gradient():
    st = AdamState.zeros(3, lr=0.1)
    p, _ = adam_step(st, np.ones(3), np.zeros(3))
    assert np.array_equal(p, np.ones(3))


def test_adam_first_step():
    st = AdamState.zeros(1, lr=0.1)
    p, st2 = adam_step(st, np.zeros(1), np.ones(1))
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert st2.step == 1


def test_adam_two_steps_vs_doubled_rate():
    g = np.array([0.3])
    p1, s1 = adam_step(AdamState.zeros(1, 0.1), np.zeros(1), g)
    q, _ = adam_step(AdamState.zeros(1, 0.2), np.zeros(1), g)
    # a constant gradient gives identical bias-corrected steps, so the two
    # paths agree up to rounding
    p2, _ = adam_step(s1, p1, g)
    assert p2[0] == pytest.approx(q[0], abs=1e-15)
    # any change of gradient breaks the equivalence
    p2b, _ = adam_step(s1, p1, 3 * g)
    assert abs(p2b[0] - q[0]) > 1e-3


def test_adam_errors():
    with pytest.raises(NumericError):
        adam_step(AdamState.zeros(1, 0.1), np.zeros(1), np.array([np.inf]))
    with pytest.raises(ConfigError):
        AdamState.zeros(1, 0.0)
