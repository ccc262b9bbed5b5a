"""Log partial hazard functions ``f(x; theta)`` and their parameter updates.

Two model families are supported:

* :class:`LinearRisk` -- ``f(x) = w @ x`` (no intercept; a constant shift
  cancels in the Cox partial likelihood).
* :class:`MlpRisk` -- ``f(x) = W2 @ relu(W1 @ x + b1) + b2``.

Parameters live in a single flat float64 vector. The canonical order for the
MLP is ``W1`` (row-major, shape ``(h, d)``), ``b1``, ``W2``, ``b2``.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import make_rng
from .exceptions import ConfigError, NumericError, ShapeError

DEFAULT_HIDDEN = 24


class RiskModel:
    """Common interface: a flat parameter vector plus forward/backward."""

    kind = None

    def __init__(self, params):
        params = np.array(params, dtype=float, copy=True).reshape(-1)
        if params.size != self.n_params:
            raise ShapeError(f"{self.kind} model expects {self.n_params} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise NumericError("model parameters must be finite")
        params.setflags(write=False)
        self._params = params

    @property
    def params(self):
        return self._params

    def with_params(self, params):
        raise NotImplementedError

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ShapeError(f"expected inputs with {self.d} features, got shape {X.shape}")
        return X

    def forward(self, X):
        raise NotImplementedError

    def backward(self, X, upstream):
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind, "dims": self.dims, "params": [float(p) for p in self._params]}

    def __repr__(self):
        return f"{type(self).__name__}(dims={self.dims})"


class LinearRisk(RiskModel):
    kind = "linear"

    def __init__(self, weights):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        self.d = weights.size
        super().__init__(weights)

    @property
    def n_params(self):
        return self.d

    @property
    def dims(self):
        return {"d": self.d}

    @property
    def weights(self):
        return self._params

    def with_params(self, params):
        return LinearRisk(params)

    def forward(self, X):
        X = self._check_input(X)
        return X @ self._params

    def backward(self, X, upstream):
        X = self._check_input(X)
        u = np.asarray(upstream, dtype=float).reshape(-1)
        if u.size != X.shape[0]:
            raise ShapeError("upstream length must equal the number of inputs")
        return X.T @ u


class MlpRisk(RiskModel):
    """Two-layer ReLU network. The ReLU derivative at exactly 0 is taken as 0."""

    kind = "mlp"

    def __init__(self, params, d, hidden=DEFAULT_HIDDEN):
        self.d = int(d)
        self.hidden = int(hidden)
        super().__init__(params)

    @property
    def n_params(self):
        h, d = self.hidden, self.d
        return h * d + h + h + 1

    @property
    def dims(self):
        return {"d": self.d, "hidden": self.hidden}

    def unflatten(self):
        """Views ``(W1, b1, W2, b2)`` into the flat parameter vector."""
        h, d = self.hidden, self.d
        p = self._params
        W1 = p[: h * d].reshape(h, d)
        b1 = p[h * d: h * d + h]
        W2 = p[h * d + h: h * d + 2 * h]
        b2 = p[-1]
        return W1, b1, W2, b2

    @classmethod
    def from_layers(cls, W1, b1, W2, b2):
        W1 = np.asarray(W1, dtype=float)
        h, d = W1.shape
        flat = np.concatenate([W1.reshape(-1), np.ravel(b1), np.ravel(W2), np.ravel([b2])])
        return cls(flat, d, h)

    def with_params(self, params):
        return MlpRisk(params, self.d, self.hidden)

    def hidden_preactivation(self, X):
        W1, b1, _, _ = self.unflatten()
        return self._check_input(X) @ W1.T + b1

    def forward(self, X):
        _, _, W2, b2 = self.unflatten()
        Z = self.hidden_preactivation(X)
        return np.maximum(Z, 0.0) @ W2 + b2

    def backward(self, X, upstream):
        X = self._check_input(X)
        W1, b1, W2, b2 = self.unflatten()
        u = np.asarray(upstream, dtype=float).reshape(-1)
        if u.size != X.shape[0]:
            raise ShapeError("upstream length must equal the number of inputs")
        Z = X @ W1.T + b1
        A = np.maximum(Z, 0.0)
        dZ = np.outer(u, W2) * (Z > 0)
        return np.concatenate([
            (dZ.T @ X).reshape(-1),
            dZ.sum(axis=0),
            A.T @ u,
            [u.sum()],
        ])


def risk_scores(model: RiskModel, X) -> np.ndarray:
    """Log partial hazards ``f(x_i)`` for each row of `X`."""
    return model.forward(X)


def backward(model: RiskModel, X, upstream) -> np.ndarray:
    """Gradient of ``sum_i upstream[i] * f(X[i])`` with respect to the flat
    parameter vector."""
    u = np.asarray(upstream, dtype=float)
    if not np.all(np.isfinite(u)):
        raise NumericError("upstream gradient contains non-finite values")
    return model.backward(X, u)


def flatten(model: RiskModel) -> np.ndarray:
    return np.array(model.params)


def unflatten(template: RiskModel, params) -> RiskModel:
    return template.with_params(params)


def init_params(kind, d, hidden=DEFAULT_HIDDEN, seed=0) -> RiskModel:
    """Initialize a model the way PyTorch's ``nn.Linear`` does by default.

    Every weight and bias of a layer with fan-in ``m`` is drawn from
    ``U(-1/sqrt(m), 1/sqrt(m))``. The linear model has no bias.
    """
    if d < 1:
        raise ConfigError("input dimension must be positive")
    rng = make_rng(seed)
    if kind == "linear":
        bound = 1.0 / np.sqrt(d)
        return LinearRisk(rng.uniform(-bound, bound, size=d))
    if kind == "mlp":
        if hidden < 1:
            raise ConfigError("hidden width must be positive")
        b_in = 1.0 / np.sqrt(d)
        b_hid = 1.0 / np.sqrt(hidden)
        W1 = rng.uniform(-b_in, b_in, size=(hidden, d))
        b1 = rng.uniform(-b_in, b_in, size=hidden)
        W2 = rng.uniform(-b_hid, b_hid, size=hidden)
        b2 = rng.uniform(-b_hid, b_hid)
        return MlpRisk.from_layers(W1, b1, W2, b2)
    raise ConfigError(f"unknown model kind {kind!r}")


def model_from_dict(d) -> RiskModel:
    kind = d["kind"]
    dims = d["dims"]
    if kind == "linear":
        return LinearRisk(d["params"])
    if kind == "mlp":
        return MlpRisk(d["params"], dims["d"], dims["hidden"])
    raise ConfigError(f"unknown model kind {kind!r}")


def save_checkpoint(model, path, config=None, extra=None):
    """Write the model (kind, dims, flat parameters) and its config as JSON."""
    payload = model.to_dict()
    payload["config"] = config or {}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(model, payload)`` from a checkpoint written by
    :func:`save_checkpoint`."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return model_from_dict(payload), payload


# --------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr > 0:
            raise ConfigError("learning rate must be positive")
        return cls(np.zeros(size), np.zeros(size), 0, float(lr), beta1, beta2, eps)


def adam_step(state: AdamState, params, grad):
    """One bias-corrected Adam update.

    Returns
    -------
    params : ndarray
        Updated parameters.
    state : AdamState
        Updated moments and step counter.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or grad.shape != state.m.shape:
        raise ShapeError("parameter, gradient and moment vectors must have equal length")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in Adam step")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)
