"""Full-batch training loops for Cox risk models.

Every trainer follows the same pattern: compute the objective and its
gradient with respect to the model parameters, then take one Adam step. The
DRO trainers re-solve the dual variable exactly before each step, so the
gradient is that of the dual objective at the current optimal ``eta``, which
is a Cox gradient reweighted by ``[loss_i - eta]_+``.

Trainer kinds
-------------
``erm``
    Mean Cox loss.
``dro``
    Dual DRO objective over the full Cox individual losses.
``dro_split``
    Sum of two sample-split DRO objectives with roles of the halves swapped,
    each with its own dual variable.
``dro_split_one_side``
    Only the first of the two split objectives.
``reg_individual``, ``reg_group``, ``reg_intersectional``
    Mean Cox loss plus ``lam`` times a fairness metric of the training
    predictions.
"""

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import coxloss, metrics
from .data import Dataset, default_n1, halve_indices
from .dro import dro_constants, dro_loss_grad, solve_eta
from .exceptions import ConfigError, NumericError
from .model import DEFAULT_HIDDEN, AdamState, RiskModel, adam_step, init_params

logger = logging.getLogger(__name__)

TRAINER_KINDS = (
    "erm",
    "dro",
    "dro_split",
    "dro_split_one_side",
    "reg_individual",
    "reg_group",
    "reg_intersectional",
)
DRO_KINDS = ("dro", "dro_split", "dro_split_one_side")
SPLIT_KINDS = ("dro_split", "dro_split_one_side")
REG_KINDS = ("reg_individual", "reg_group", "reg_intersectional")
MODEL_KINDS = ("linear", "mlp")
MAX_REGULARIZED_N = 5000


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``alpha`` is used by the DRO kinds only, ``lam`` and the group options by
    the regularized kinds only, ``n1`` by the split kinds only (default
    ``n // 2``). ``patience > 0`` turns on early stopping on validation
    c-index when a validation set is passed to :func:`train`.
    """

    kind: str = "erm"
    model: str = "linear"
    lr: float = 0.01
    max_iterations: int = 500
    seed: int = 0
    alpha: Optional[float] = None
    lam: Optional[float] = None
    n1: Optional[int] = None
    patience: int = 0
    hidden: int = DEFAULT_HIDDEN
    gamma: float = 0.01
    group_attr: Optional[str] = None
    intersect_attrs: Tuple[str, ...] = ()
    uncensored_only_dro: bool = False

    def validate(self):
        if self.kind not in TRAINER_KINDS:
            raise ConfigError(f"unknown trainer kind {self.kind!r}")
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}")
        if not (isinstance(self.lr, (int, float)) and self.lr > 0 and np.isfinite(self.lr)):
            raise ConfigError("learning rate must be positive")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.n1 is not None and (int(self.n1) != self.n1 or self.n1 < 1):
            raise ConfigError(f"n1 must be a positive integer, got {self.n1}")
        if self.patience < 0:
            raise ConfigError("patience must be nonnegative")
        if self.kind in DRO_KINDS:
            if self.alpha is None:
                raise ConfigError(f"trainer {self.kind!r} needs alpha")
            dro_constants(self.alpha)
        if self.kind in REG_KINDS:
            if self.lam is None or not self.lam >= 0:
                raise ConfigError(f"trainer {self.kind!r} needs a nonnegative lam")
            if self.gamma < 0:
                raise ConfigError("gamma must be nonnegative")
        return self

    def to_dict(self):
        d = asdict(self)
        d["intersect_attrs"] = list(self.intersect_attrs)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "intersect_attrs" in d:
            d["intersect_attrs"] = tuple(d["intersect_attrs"] or ())
        return cls(**d)


TRACE_COLUMNS = ("iter", "objective", "mean_loss", "eta", "eta2", "val_c_index")


@dataclass
class TrainTrace:
    """Per-iteration log. ``objective`` and ``mean_loss`` are evaluated at the
    parameters before that iteration's update, ``val_c_index`` after it."""

    rows: List[dict] = field(default_factory=list)

    def append(self, **row):
        self.rows.append({k: row.get(k) for k in TRACE_COLUMNS})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow(["" if r[k] is None else repr(r[k]) for k in TRACE_COLUMNS])


class TrainingAborted(NumericError):
    """Raised when the objective or gradient becomes non-finite."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# --------------------------------------------------------------------------
# Objectives: model -> (value, gradient wrt flat params, info)


def _dual_weights(losses, mask, C, uncensored_only):
    """Dual objective and per-loss weights ``dObjective / dloss``."""
    sel = mask if uncensored_only else np.ones(losses.size, dtype=bool)
    n_sel = int(sel.sum())
    w = np.zeros(losses.size)
    if n_sel == 0:
        return 0.0, 0.0, w
    sub = losses[sel]
    sol = solve_eta(sub, C)
    if not sol.attained:
        w[sel] = 1.0 / n_sel
        return sol.objective, None, w
    w[sel] = dro_loss_grad(sub, sol.eta, C)
    return sol.objective, sol.eta, w


def _erm_objective(ds):
    X, Y, d, n = ds.X, ds.time, ds.event, ds.n

    def objective(model):
        f = model.forward(X)
        value = coxloss.average_cox_loss(f, Y, d)
        up = coxloss.cox_loss_upstream(f, Y, d) / n
        return value, model.backward(X, up), {"mean_loss": value}

    return objective


def _dro_objective(ds, cfg):
    X, Y, d, n = ds.X, ds.time, ds.event, ds.n
    _, C = dro_constants(cfg.alpha)
    if C == 1.0 and not cfg.uncensored_only_dro:
        # infimum at eta -> -inf: the dual objective is the mean loss exactly
        erm = _erm_objective(ds)

        def objective(model):
            value, grad, info = erm(model)
            return value, grad, {**info, "eta": None}

        return objective

    def objective(model):
        f = model.forward(X)
        losses = coxloss.individual_cox_losses(f, Y, d)
        value, eta, w = _dual_weights(losses, d == 1, C, cfg.uncensored_only_dro)
        up = coxloss.cox_loss_upstream(f, Y, d, weights=w)
        return value, model.backward(X, up), {"mean_loss": float(losses.mean()), "eta": eta}

    return objective


def split_halves(n, cfg):
    """Fixed halves ``(D1, D2)`` used by the split trainers."""
    n1 = default_n1(n) if cfg.n1 is None else cfg.n1
    if not (0 < n1 < n):
        raise ConfigError(f"n1 must satisfy 0 < n1 < n, got n1={n1}, n={n}")
    return halve_indices(n, n1, seed=(cfg.seed, 1))


def _split_objective(ds, cfg, two_sided):
    X, Y, d, n = ds.X, ds.time, ds.event, ds.n
    _, C = dro_constants(cfg.alpha)
    halves = split_halves(n, cfg)
    sides = [(halves.D1, halves.D2)]
    if two_sided:
        sides.append((halves.D2, halves.D1))

    def objective(model):
        f = model.forward(X)
        up = np.zeros(n)
        value = 0.0
        etas = []
        for A, B in sides:
            losses = coxloss.split_losses(f, Y, d, A, B)
            v, eta, w = _dual_weights(losses, d[A] == 1, C, cfg.uncensored_only_dro)
            value += v
            etas.append(eta)
            up += coxloss.split_loss_upstream(f, Y, d, A, B, weights=w)
        info = {
            "mean_loss": coxloss.average_cox_loss(f, Y, d),
            "eta": etas[0],
            "eta2": etas[1] if two_sided else None,
        }
        return value, model.backward(X, up), info

    return objective


def _regularized_objective(ds, cfg):
    X, Y, d, n = ds.X, ds.time, ds.event, ds.n
    lam = float(cfg.lam)
    if cfg.kind == "reg_individual":
        if n > MAX_REGULARIZED_N:
            raise ConfigError(
                f"individual-fairness regularization is O(n^2); n={n} exceeds {MAX_REGULARIZED_N}")

        def penalty(f):
            return metrics.fairness_individual_grad(f, X, cfg.gamma)
    elif cfg.kind == "reg_group":
        attr = cfg.group_attr or (next(iter(ds.groups)) if ds.groups else None)
        if attr is None or attr not in ds.groups:
            raise ConfigError("group-fairness regularization needs a group attribute on the training set")
        part = metrics.GroupPartition.from_dataset(ds, attr)

        def penalty(f):
            return metrics.fairness_group_grad(f, part)
    else:
        attrs = tuple(cfg.intersect_attrs) or tuple(ds.groups)
        if not attrs or any(a not in ds.groups for a in attrs):
            raise ConfigError("intersectional regularization needs group attributes on the training set")
        parts = [metrics.GroupPartition.from_dataset(ds, a) for a in attrs]

        def penalty(f):
            return metrics.fairness_intersectional_grad(f, parts)

    def objective(model):
        f = model.forward(X)
        mean_loss = coxloss.average_cox_loss(f, Y, d)
        up = coxloss.cox_loss_upstream(f, Y, d) / n
        value = mean_loss
        if lam != 0.0:
            pen, pen_grad = penalty(f)
            value = mean_loss + lam * pen
            up = up + lam * pen_grad
        return value, model.backward(X, up), {"mean_loss": mean_loss}

    return objective


def make_objective(ds: Dataset, cfg: TrainConfig) -> Callable:
    """Objective closure ``model -> (value, grad, info)`` for `cfg.kind`."""
    cfg.validate()
    if not np.any(ds.event == 1):
        raise ConfigError("training needs at least one uncensored record")
    if cfg.kind == "erm":
        return _erm_objective(ds)
    if cfg.kind == "dro":
        return _dro_objective(ds, cfg)
    if cfg.kind in SPLIT_KINDS:
        return _split_objective(ds, cfg, two_sided=cfg.kind == "dro_split")
    return _regularized_objective(ds, cfg)


# --------------------------------------------------------------------------
# Loop


def train(ds: Dataset, cfg: TrainConfig, val: Optional[Dataset] = None,
          init: Optional[RiskModel] = None, callback: Optional[Callable] = None):
    """Train a model on `ds` according to `cfg`.

    Parameters
    ----------
    ds : Dataset
        Training data.
    cfg : TrainConfig
    val : Dataset, optional
        Validation data for early stopping (only used if ``cfg.patience``).
    init : RiskModel, optional
        Starting parameters; by default :func:`init_params` with ``cfg.seed``.
    callback : callable, optional
        Called as ``callback(iteration, model)`` after every update.

    Returns
    -------
    model : RiskModel
    trace : TrainTrace
    """
    objective = make_objective(ds, cfg)
    model = init if init is not None else init_params(cfg.model, ds.d, cfg.hidden, cfg.seed)
    state = AdamState.zeros(model.n_params, cfg.lr)
    trace = TrainTrace()
    early = cfg.patience > 0 and val is not None
    best, best_score, since_best = model, -np.inf, 0

    for it in range(int(cfg.max_iterations)):
        try:
            value, grad, info = objective(model)
        except NumericError as exc:
            raise TrainingAborted(f"iteration {it}: {exc}", trace) from exc
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingAborted(f"iteration {it}: non-finite objective or gradient", trace)
        params, state = adam_step(state, model.params, grad)
        model = model.with_params(params)
        val_ci = None
        if early:
            val_ci = metrics.c_index(model.forward(val.X), val.time, val.event)
        trace.append(iter=it, objective=float(value), val_c_index=val_ci, **info)
        if callback is not None:
            callback(it, model)
        if early:
            if val_ci > best_score:
                best, best_score, since_best = model, val_ci, 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    logger.info("early stop at iteration %d", it)
                    break
    return (best if early else model), trace


def train_erm(ds, cfg, **kwargs):
    return train(ds, replace(cfg, kind="erm"), **kwargs)


def train_dro_cox(ds, cfg, **kwargs):
    return train(ds, replace(cfg, kind="dro"), **kwargs)


def train_dro_cox_split(ds, cfg, **kwargs):
    return train(ds, replace(cfg, kind="dro_split"), **kwargs)


def train_dro_cox_split_one_side(ds, cfg, **kwargs):
    return train(ds, replace(cfg, kind="dro_split_one_side"), **kwargs)


def train_fair_regularized(ds, cfg, **kwargs):
    if cfg.kind not in REG_KINDS:
        raise ConfigError(f"expected a regularized trainer kind, got {cfg.kind!r}")
    return train(ds, cfg, **kwargs)
