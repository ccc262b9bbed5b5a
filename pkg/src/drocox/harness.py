"""Experiment orchestration: grid search with a c-index-tolerance selection
rule, repeated validation splits over a fixed test set, alpha sweeps and
table output."""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .coxloss import breslow_baseline
from .data import Dataset, split_dataset, standardize_features
from .exceptions import ConfigError, DroCoxError
from .train import DRO_KINDS, REG_KINDS, TrainConfig, train

logger = logging.getLogger(__name__)

DEFAULT_LEARNING_RATES = (0.01, 0.001, 0.0001)
DEFAULT_LAMBDAS = (1.0, 0.7, 0.4)
DEFAULT_ALPHAS = (0.1, 0.15, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid. Only the axes relevant to a trainer kind are
    expanded (ERM ignores both ``alphas`` and ``lambdas``)."""

    learning_rates: Tuple[float, ...] = DEFAULT_LEARNING_RATES
    lambdas: Tuple[float, ...] = DEFAULT_LAMBDAS
    alphas: Tuple[float, ...] = DEFAULT_ALPHAS
    model_kinds: Tuple[str, ...] = ("linear",)
    trainer_kinds: Tuple[str, ...] = ("erm", "dro")

    def __post_init__(self):
        if not (self.learning_rates and self.model_kinds and self.trainer_kinds):
            raise ConfigError("grid axes must be nonempty")

    def candidates(self, model_kind, trainer_kind, base: TrainConfig) -> List[TrainConfig]:
        """Configs for one method, in grid order (learning rate, then
        alpha or lambda)."""
        out = []
        for lr in self.learning_rates:
            if trainer_kind in DRO_KINDS:
                extra = [{"alpha": a} for a in self.alphas]
            elif trainer_kind in REG_KINDS:
                extra = [{"lam": lam} for lam in self.lambdas]
            else:
                extra = [{}]
            if not extra:
                raise ConfigError(f"grid has no values for trainer {trainer_kind!r}")
            for e in extra:
                out.append(replace(base, kind=trainer_kind, model=model_kind, lr=lr, **e).validate())
        return out

    def expand(self, base: TrainConfig = TrainConfig()) -> List[TrainConfig]:
        out = []
        for mk in self.model_kinds:
            for tk in self.trainer_kinds:
                out.extend(self.candidates(mk, tk, base))
        return out

    def to_dict(self):
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass(frozen=True)
class SelectionRule:
    """Keep candidates whose validation c-index is at least
    ``(1 - tolerance) * reference_c_index``; among those minimize
    `objective` (``"ci_percent"`` or ``"f_a"``)."""

    reference_c_index: float
    tolerance: float = 0.05
    objective: str = "ci_percent"

    def __post_init__(self):
        if not (0 <= self.tolerance < 1):
            raise ConfigError("tolerance must lie in [0, 1)")
        if self.objective not in ("ci_percent", "f_a"):
            raise ConfigError(f"unknown selection objective {self.objective!r}")


@dataclass(frozen=True)
class Candidate:
    config: object
    val_c_index: Optional[float]
    val_objective: Optional[float]


@dataclass(frozen=True)
class Selection:
    index: int
    candidate: Candidate
    fallback: bool


def select_candidate(candidates: Sequence[Candidate], rule: SelectionRule) -> Selection:
    """Apply the selection rule; ties go to the earliest candidate.

    If no candidate reaches the c-index threshold, the one with the highest
    validation c-index is returned with ``fallback=True``. Undefined (None)
    values count as the worst possible.
    """
    if not candidates:
        raise ConfigError("no candidates to select from")
    threshold = (1.0 - rule.tolerance) * rule.reference_c_index
    best = None
    for k, c in enumerate(candidates):
        if c.val_c_index is None or c.val_c_index < threshold:
            continue
        obj = np.inf if c.val_objective is None else c.val_objective
        if best is None or obj < best[0]:
            best = (obj, k)
    if best is not None:
        return Selection(best[1], candidates[best[1]], False)
    cs = [-np.inf if c.val_c_index is None else c.val_c_index for c in candidates]
    k = int(np.argmax(cs))
    return Selection(k, candidates[k], True)


# --------------------------------------------------------------------------
# Method naming and evaluation

_BASE_NAMES = {
    "erm": "{base}",
    "dro": "{deep}DRO-COX",
    "dro_split": "{deep}DRO-COX (SPLIT)",
    "dro_split_one_side": "{deep}DRO-COX (SPLIT, one side)",
    "reg_individual": "{base}_I",
    "reg_group": "{base}_G",
    "reg_intersectional": "{base}_cap",
}


def method_name(model_kind, trainer_kind):
    base = "Cox" if model_kind == "linear" else "DeepSurv"
    deep = "" if model_kind == "linear" else "Deep "
    return _BASE_NAMES[trainer_kind].format(base=base, deep=deep)


def _partitions(ds, group_attr, intersect_attrs):
    group = metrics.GroupPartition.from_dataset(ds, group_attr) if group_attr else None
    inter = [metrics.GroupPartition.from_dataset(ds, a) for a in intersect_attrs]
    return group, inter


def evaluate_model(model, ds: Dataset, train_ds: Optional[Dataset] = None, group_attr=None,
                   intersect_attrs=(), gamma=0.01, grid=None):
    """Metric report of `model` on `ds`; the Breslow baseline for IBS comes
    from `train_ds`."""
    scores = model.forward(ds.X)
    baseline = None
    if train_ds is not None and np.any(train_ds.event == 1):
        baseline = breslow_baseline(model.forward(train_ds.X), train_ds.time, train_ds.event)
    group, inter = _partitions(ds, group_attr, intersect_attrs)
    return metrics.evaluate_scores(scores, ds.X, ds.time, ds.event, group=group,
                                   intersect=inter, baseline=baseline, grid=grid, gamma=gamma)


def _validation_scores(model, val, group_attr, intersect_attrs, objective, gamma):
    f = model.forward(val.X)
    ci = metrics._maybe(metrics.c_index, f, val.time, val.event)
    group, inter = _partitions(val, group_attr, intersect_attrs)
    if objective == "ci_percent":
        obj = None if group is None else metrics._maybe(
            metrics.concordance_imparity, f, val.time, val.event, group)
    else:
        parts = [metrics._maybe(metrics.fairness_individual, f, val.X, gamma),
                 None if group is None else metrics._maybe(metrics.fairness_group, f, group),
                 metrics._maybe(metrics.fairness_intersectional, f, inter) if inter else None]
        obj = None if None in parts else metrics.fairness_average(*parts)
    return ci, obj


# --------------------------------------------------------------------------
# Experiments


@dataclass
class MethodResult:
    name: str
    model_kind: str
    trainer_kind: str
    reports: List[metrics.MetricsReport] = field(default_factory=list)
    chosen: List[dict] = field(default_factory=list)
    fallback: List[bool] = field(default_factory=list)

    def values(self, metric):
        return [getattr(r, metric) for r in self.reports]

    def summary(self, metric):
        """``(mean, std)`` over repeats, ignoring NA; ``None`` if all NA.

        The standard deviation uses ``ddof=1`` when there are at least two
        values."""
        v = np.array([x for x in self.values(metric) if x is not None], dtype=float)
        if v.size == 0:
            return None
        return float(v.mean()), float(v.std(ddof=1) if v.size > 1 else 0.0)


@dataclass
class ExperimentResult:
    methods: Dict[str, MethodResult]
    test_fingerprint: str
    seeds: List[int]
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "test_fingerprint": self.test_fingerprint,
            "seeds": list(self.seeds),
            "settings": self.settings,
            "methods": {
                name: {
                    "model_kind": m.model_kind,
                    "trainer_kind": m.trainer_kind,
                    "reports": [r.as_dict() for r in m.reports],
                    "chosen": m.chosen,
                    "fallback": m.fallback,
                }
                for name, m in self.methods.items()
            },
        }

    @classmethod
    def from_dict(cls, d):
        methods = {}
        for name, m in d["methods"].items():
            methods[name] = MethodResult(
                name, m["model_kind"], m["trainer_kind"],
                [metrics.MetricsReport(**r) for r in m["reports"]],
                list(m["chosen"]), list(m["fallback"]),
            )
        return cls(methods, d["test_fingerprint"], list(d["seeds"]), d.get("settings", {}))


def _run_repeat(args):
    (r, seed, train_full, test, grid, base, objective, tolerance, val_fraction,
     group_attr, intersect_attrs, standardize, trace_dir) = args
    tr, va = split_dataset(train_full, (1.0 - val_fraction, val_fraction), seed)
    te = test
    if standardize:
        (tr, va, te), _, _ = standardize_features(tr, [va, te])
    base = replace(base, seed=seed)
    out = {}
    for mk in grid.model_kinds:
        # reference c-index: best unregularized model over the learning-rate axis
        erm_cfgs = grid.candidates(mk, "erm", base)
        erm_runs = []
        for cfg in erm_cfgs:
            model, trace = train(tr, cfg, val=va)
            ci, obj = _validation_scores(model, va, group_attr, intersect_attrs, objective, base.gamma)
            erm_runs.append((cfg, model, trace, ci, obj))
        ref = max((x[3] for x in erm_runs if x[3] is not None), default=None)
        if ref is None:
            raise ConfigError(f"repeat {r}: reference model has undefined validation c-index")
        rule = SelectionRule(ref, tolerance, objective)
        for tk in grid.trainer_kinds:
            if tk == "erm":
                runs = erm_runs
            else:
                runs = []
                for cfg in grid.candidates(mk, tk, base):
                    try:
                        model, trace = train(tr, cfg, val=va)
                    except DroCoxError as exc:
                        raise type(exc)(f"repeat {r}, candidate {cfg}: {exc}") from exc
                    ci, obj = _validation_scores(model, va, group_attr, intersect_attrs, objective,
                                                 base.gamma)
                    runs.append((cfg, model, trace, ci, obj))
            sel = select_candidate([Candidate(x[0], x[3], x[4]) for x in runs], rule)
            cfg, model, trace = runs[sel.index][:3]
            name = method_name(mk, tk)
            report = evaluate_model(model, te, tr, group_attr, intersect_attrs, base.gamma)
            if trace_dir:
                safe = name.replace(" ", "_").replace("(", "").replace(")", "").replace(",", "")
                trace.to_csv(os.path.join(trace_dir, f"{safe}_rep{r}.csv"))
            logger.info("repeat %d %s: chose %s (fallback=%s)", r, name, cfg, sel.fallback)
            out[name] = (mk, tk, report, cfg.to_dict(), sel.fallback)
    return out


def run_experiment(ds: Dataset, grid: GridSpec, *, base: TrainConfig = TrainConfig(),
                   objective="ci_percent", tolerance=0.05, repeats=10, seeds=None,
                   test_fraction=0.2, val_fraction=0.2, split_seed=0, group_attr=None,
                   intersect_attrs=(), standardize=False, jobs=1, trace_dir=None):
    """Repeated tune-and-test protocol.

    The test split is drawn once (``split_seed``). Each repeat draws a fresh
    validation split from the remaining data with its own seed, trains every
    grid cell, applies :func:`select_candidate` per method against the best
    unregularized model's validation c-index, and evaluates the chosen model
    on the common test set.

    Returns
    -------
    ExperimentResult
    """
    seeds = list(range(repeats)) if seeds is None else list(seeds)
    if len(seeds) != repeats:
        raise ConfigError("need one seed per repeat")
    if objective == "ci_percent" and not group_attr:
        raise ConfigError("the CI selection objective needs a group attribute")
    train_full, test = split_dataset(ds, (1.0 - test_fraction, test_fraction), split_seed)
    if trace_dir:
        os.makedirs(trace_dir, exist_ok=True)
    jobs_args = [
        (r, seeds[r], train_full, test, grid, base, objective, tolerance, val_fraction,
         group_attr, tuple(intersect_attrs), standardize, trace_dir)
        for r in range(repeats)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_repeat = list(pool.map(_run_repeat, jobs_args))
    else:
        per_repeat = [_run_repeat(a) for a in jobs_args]

    methods: Dict[str, MethodResult] = {}
    for out in per_repeat:
        for name, (mk, tk, report, chosen, fallback) in out.items():
            m = methods.setdefault(name, MethodResult(name, mk, tk))
            m.reports.append(report)
            m.chosen.append(chosen)
            m.fallback.append(fallback)
    settings = {
        "grid": grid.to_dict(), "objective": objective, "tolerance": tolerance,
        "repeats": repeats, "test_fraction": test_fraction, "val_fraction": val_fraction,
        "split_seed": split_seed, "group_attr": group_attr,
        "intersect_attrs": list(intersect_attrs), "standardize": standardize,
        "base": base.to_dict(),
    }
    return ExperimentResult(methods, test.fingerprint(), seeds, settings)


SWEEP_COLUMNS = ("alpha", "c_index", "f_i", "f_g", "f_cap", "f_a", "ci_percent")


def sweep_alpha(train_ds: Dataset, test_ds: Dataset, alphas, base: TrainConfig,
                group_attr=None, intersect_attrs=()):
    """Train the DRO trainer once per alpha and evaluate on `test_ds`.

    Returns a list of dicts (one per alpha, ascending) with keys
    :data:`SWEEP_COLUMNS`; undefined metrics are None.
    """
    if not len(alphas):
        raise ConfigError("need at least one alpha")
    rows = []
    for a in sorted(float(x) for x in alphas):
        cfg = replace(base, kind=base.kind if base.kind in DRO_KINDS else "dro", alpha=a).validate()
        model, _ = train(train_ds, cfg)
        rep = evaluate_model(model, test_ds, train_ds, group_attr, intersect_attrs, base.gamma)
        row = {"alpha": a}
        row.update({k: getattr(rep, k) for k in SWEEP_COLUMNS[1:]})
        rows.append(row)
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow(["NA" if row[k] is None else repr(row[k]) for k in SWEEP_COLUMNS])


def format_sweep(rows):
    cells = [["NA" if row[k] is None else f"{row[k]:.4f}" for k in SWEEP_COLUMNS] for row in rows]
    width = max([10] + [len(c) for r in cells for c in r])
    lines = [" | ".join(f"{c:>{width}}" for c in SWEEP_COLUMNS)]
    lines += [" | ".join(f"{c:>{width}}" for c in r) for r in cells]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Reports

ACCURACY_METRICS = ("c_index", "auc", "lpl", "ibs")
FAIRNESS_METRICS = ("f_i", "f_g", "f_cap", "f_a", "ci_percent")


def _cell(summary):
    return "NA" if summary is None else f"{summary[0]:.4f} ({summary[1]:.4f})"


def report_markdown(result: ExperimentResult, metric_names=metrics.METRIC_NAMES):
    """Markdown table with ``mean (std)`` cells; accuracy columns first."""
    metric_names = tuple(metric_names)
    head = ["Method"] + [
        metrics.METRIC_TITLES[m] + ("↑" if metrics.MetricsReport.better[m] == "up" else "↓")
        for m in metric_names
    ]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for name, m in result.methods.items():
        cells = [name] + [_cell(m.summary(k)) for k in metric_names]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report_csv_rows(result: ExperimentResult, metric_names=metrics.METRIC_NAMES):
    header = ["method"]
    for k in metric_names:
        header += [f"{k}_mean", f"{k}_std"]
    rows = [header]
    for name, m in result.methods.items():
        row = [name]
        for k in metric_names:
            s = m.summary(k)
            row += ["NA", "NA"] if s is None else [repr(s[0]), repr(s[1])]
        rows.append(row)
    return rows


def emit_report(result: ExperimentResult, out_dir, metric_names=metrics.METRIC_NAMES):
    """Write ``report.csv``, ``report.md`` and ``chosen.json`` to `out_dir`.

    Returns the list of written paths.
    """
    if result is None or not result.methods or not any(m.reports for m in result.methods.values()):
        raise ConfigError("empty experiment result")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "report.csv")
    with open(p, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(report_csv_rows(result, metric_names))
    paths.append(p)
    p = os.path.join(out_dir, "report.md")
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(report_markdown(result, metric_names))
    paths.append(p)
    p = os.path.join(out_dir, "chosen.json")
    chosen = {
        name: [{"repeat": r, "seed": result.seeds[r], "fallback": m.fallback[r], "config": c}
               for r, c in enumerate(m.chosen)]
        for name, m in result.methods.items()
    }
    with open(p, "w", encoding="utf-8") as fh:
        json.dump(chosen, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(p)
    return paths


def load_report_csv(path):
    """Read ``report.csv`` back as ``{method: {metric: (mean, std) or None}}``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    names = [h[: -len("_mean")] for h in header[1::2]]
    out = {}
    for row in body:
        vals = {}
        for k, name in enumerate(names):
            mean, std = row[1 + 2 * k], row[2 + 2 * k]
            vals[name] = None if mean == "NA" else (float(mean), float(std))
        out[row[0]] = vals
    return out


def save_result(result: ExperimentResult, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_result(path) -> ExperimentResult:
    with open(path, encoding="utf-8") as fh:
        return ExperimentResult.from_dict(json.load(fh))
