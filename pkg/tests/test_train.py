from dataclasses import replace

import numpy as np
import pytest

import drocox.train as train_mod
from drocox import coxloss, metrics
from drocox.data import SyntheticConfig, generate_synthetic, split_dataset
from drocox.exceptions import ConfigError
from drocox.train import (
    TrainConfig,
    TrainingAborted,
    make_objective,
    split_halves,
    train,
    train_dro_cox,
    train_dro_cox_split,
    train_dro_cox_split_one_side,
    train_erm,
    train_fair_regularized,
)


def trajectory(ds, cfg):
    out = []
    train(ds, cfg, callback=lambda it, m: out.append(m.params.copy()))
    return np.array(out)


@pytest.mark.parametrize("kwargs", [
    {"max_iterations": 0},
    {"lr": 0.0},
    {"lr": -1.0},
    {"kind": "sgd"},
    {"model": "tree"},
    {"kind": "dro"},
    {"kind": "dro", "alpha": 1.5},
    {"kind": "dro_split", "alpha": 0.2, "n1": 0},
    {"kind": "reg_group"},
    {"kind": "reg_group", "lam": -1.0},
    {"patience": -1},
])
def test_config_errors(kwargs, tiny_ds):
    with pytest.raises(ConfigError):
        train(tiny_ds, TrainConfig(**kwargs))


def test_config_dict_roundtrip():
    cfg = TrainConfig(kind="reg_intersectional", lam=0.4, intersect_attrs=("a", "b"))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_needs_an_event(tiny_ds):
    ds = tiny_ds.subset(np.flatnonzero(tiny_ds.event == 0))
    with pytest.raises(ConfigError):
        train(ds, TrainConfig())


def test_erm_recovers_coefficients():
    theta = np.array([1.0, -0.5, 0.25, 0.75])
    ds = generate_synthetic(SyntheticConfig(2000, (1.0,), (tuple(theta),), 0.3, seed=11))
    model, trace = train_erm(ds, TrainConfig(max_iterations=500, lr=0.05))
    w = model.params
    cos = w @ theta / np.linalg.norm(w) / np.linalg.norm(theta)
    assert cos > 0.95
    assert trace.column("objective")[-1] < trace.column("objective")[0]


def test_determinism(small_ds):
    cfg = TrainConfig(kind="dro", alpha=0.3, max_iterations=50, model="mlp", seed=4)
    a, b = trajectory(small_ds, cfg), trajectory(small_ds, cfg)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("model", ["linear", "mlp"])
def test_alpha_one_is_erm(small_ds, model):
    base = TrainConfig(model=model, max_iterations=100, seed=2)
    e = trajectory(small_ds, base)
    d = trajectory(small_ds, replace(base, kind="dro", alpha=1.0))
    assert np.max(np.abs(e - d)) <= 1e-12


@pytest.mark.parametrize("kind", ["reg_individual", "reg_group", "reg_intersectional"])
def test_zero_lambda_is_erm(small_ds, kind):
    base = TrainConfig(max_iterations=60, seed=1)
    e = trajectory(small_ds, base)
    r = trajectory(small_ds, replace(base, kind=kind, lam=0.0))
    assert np.max(np.abs(e - r)) <= 1e-12


def test_large_lambda_reduces_group_gap(small_ds):
    g = metrics.GroupPartition.from_dataset(small_ds, "latent_group")
    erm, _ = train_erm(small_ds, TrainConfig(max_iterations=300))
    reg, _ = train_fair_regularized(small_ds, TrainConfig(kind="reg_group", lam=1e3, max_iterations=300))
    assert metrics.fairness_group(reg.forward(small_ds.X), g) < metrics.fairness_group(erm.forward(small_ds.X), g)


def test_regularized_requires_groups(small_ds):
    ds = small_ds.subset(np.arange(small_ds.n))
    from drocox.data import Dataset
    plain = Dataset(ds.X, ds.time, ds.event)
    for kind in ("reg_group", "reg_intersectional"):
        with pytest.raises(ConfigError):
            train(plain, TrainConfig(kind=kind, lam=1.0))
    with pytest.raises(ConfigError):
        train_fair_regularized(ds, TrainConfig(kind="erm"))


def test_regularized_size_cap(monkeypatch, small_ds):
    monkeypatch.setattr(train_mod, "MAX_REGULARIZED_N", 50)
    with pytest.raises(ConfigError):
        train(small_ds, TrainConfig(kind="reg_individual", lam=1.0))


def test_duality_bound_in_trace(small_ds):
    _, trace = train_dro_cox(small_ds, TrainConfig(alpha=0.2, max_iterations=100))
    assert np.all(trace.column("objective") - trace.column("mean_loss") >= -1e-9)
    assert np.all(np.isfinite(trace.column("eta")))


def test_uncensored_only_changes_objective(small_ds):
    cfg = TrainConfig(kind="dro", alpha=0.2, max_iterations=5)
    _, a = train(small_ds, cfg)
    _, b = train(small_ds, replace(cfg, uncensored_only_dro=True))
    assert a.column("objective")[0] != b.column("objective")[0]


def test_split_boundary(tiny_ds):
    n = tiny_ds.n
    model, trace = train_dro_cox_split(tiny_ds, TrainConfig(alpha=0.2, n1=n - 1, max_iterations=5))
    assert np.all(np.isfinite(trace.column("objective")))
    with pytest.raises(ConfigError):
        train_dro_cox_split(tiny_ds, TrainConfig(alpha=0.2, n1=n, max_iterations=5))


def test_split_etas_in_range(small_ds):
    cfg = TrainConfig(kind="dro_split", alpha=0.3, max_iterations=1)
    model, trace = train(small_ds, cfg)
    h = split_halves(small_ds.n, cfg)
    f = train_mod.init_params("linear", small_ds.d, seed=0).forward(small_ds.X)
    l1 = coxloss.split_losses(f, small_ds.time, small_ds.event, h.D1, h.D2)
    l2 = coxloss.split_losses(f, small_ds.time, small_ds.event, h.D2, h.D1)
    eta, eta2 = trace.rows[0]["eta"], trace.rows[0]["eta2"]
    assert np.isfinite(eta) and np.isfinite(eta2)
    assert eta <= l1.max() and eta2 <= l2.max()


def test_split_sides_differ(small_ds):
    cfg = TrainConfig(alpha=0.2, max_iterations=3)
    a = trajectory(small_ds, replace(cfg, kind="dro_split"))
    b = trajectory(small_ds, replace(cfg, kind="dro_split_one_side"))
    assert not np.array_equal(a[1], b[1])
    _, tr = train_dro_cox_split_one_side(small_ds, cfg)
    assert all(r["eta2"] is None for r in tr.rows)


def test_split_sanity():
    ds = generate_synthetic(SyntheticConfig(2000, (1.0,), ((1.0, -1.0, 0.5),), 0.5, seed=21))
    tr, va = split_dataset(ds, (0.8, 0.2), seed=0)
    model, trace = train_dro_cox_split(tr, TrainConfig(alpha=0.2, max_iterations=300))
    assert np.all(np.isfinite(trace.column("objective")))
    assert metrics.c_index(model.forward(va.X), va.time, va.event) > 0.5


def test_early_stopping(small_ds):
    tr, va = split_dataset(small_ds, (0.7, 0.3), seed=0)
    model, trace = train(tr, TrainConfig(max_iterations=500, lr=0.05, patience=5), val=va)
    assert len(trace) < 500
    ci = trace.column("val_c_index")
    assert metrics.c_index(model.forward(va.X), va.time, va.event) == np.max(ci)


def test_abort_on_nonfinite(monkeypatch, tiny_ds):
    real = make_objective

    def broken(ds, cfg):
        obj = real(ds, cfg)
        calls = []

        def wrapped(model):
            v, g, info = obj(model)
            calls.append(1)
            if len(calls) > 3:
                g = g * np.nan
            return v, g, info

        return wrapped

    monkeypatch.setattr(train_mod, "make_objective", broken)
    with pytest.raises(TrainingAborted) as err:
        train(tiny_ds, TrainConfig(max_iterations=10))
    assert len(err.value.trace) == 3


def test_trace_csv(tmp_path, tiny_ds):
    _, trace = train(tiny_ds, TrainConfig(kind="dro_split", alpha=0.2, max_iterations=4))
    trace.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,objective,mean_loss,eta,eta2,val_c_index" and len(lines) == 5
