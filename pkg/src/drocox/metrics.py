"""Accuracy and fairness metrics for Cox-type risk scores.

Fairness metrics act on partial hazards ``exp(f)``, not on raw scores. The
pairwise concordance rules (comparability, ties) used by :func:`c_index` are
the same as those of :func:`concordance_imparity`, so the concordance
fraction of a single all-inclusive group equals the c-index.
"""

from dataclasses import asdict, dataclass, fields
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .coxloss import average_cox_loss
from .exceptions import ConfigError, ShapeError, UndefinedMetricError

__all__ = [
    "GroupPartition",
    "FairnessConfig",
    "MetricsReport",
    "StepFunction",
    "c_index",
    "concordance_fractions",
    "concordance_imparity",
    "fairness_individual",
    "fairness_group",
    "fairness_intersectional",
    "fairness_average",
    "kaplan_meier",
    "km_censoring",
    "brier_scores",
    "integrated_brier",
    "time_dependent_auc",
    "test_lpl",
    "default_time_grid",
    "evaluate_scores",
]

_BLOCK_ELEMS = 1 << 21
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class GroupPartition:
    """A discrete sensitive attribute: one category index per record."""

    name: str
    codes: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "codes", codes)
        if not self.labels:
            k = int(codes.max()) + 1 if codes.size else 0
            object.__setattr__(self, "labels", tuple(str(i) for i in range(k)))

    @classmethod
    def from_dataset(cls, ds, attribute):
        if attribute not in ds.groups:
            raise ConfigError(f"dataset has no group attribute {attribute!r}")
        return cls(attribute, ds.groups[attribute], ds.group_labels[attribute])

    @property
    def n_categories(self):
        return len(self.labels)


def _as_partition(groups, n):
    if not isinstance(groups, GroupPartition):
        groups = GroupPartition("group", groups)
    if groups.codes.size != n:
        raise ShapeError("group codes must have one entry per record")
    return groups


@dataclass(frozen=True)
class FairnessConfig:
    gamma: float = 0.01
    distance: str = "euclidean"

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError("gamma must be nonnegative")


# --------------------------------------------------------------------------
# Concordance


def _pair_counts(scores, time, event):
    """Per-record numerator and denominator counts over ordered pairs
    ``(i, j)``, ``j != i``, following the concordance-imparity pair rules."""
    f = np.asarray(scores, dtype=float).reshape(-1)
    Y = np.asarray(time, dtype=float).reshape(-1)
    d = np.asarray(event).reshape(-1).astype(bool)
    n = f.size
    if not (Y.size == n and d.size == n):
        raise ShapeError("scores, durations and events must have equal length")
    num = np.zeros(n)
    den = np.zeros(n)
    block = max(1, _BLOCK_ELEMS // max(n, 1))
    cols = np.arange(n)
    for start in range(0, n, block):
        rows = np.arange(start, min(n, start + block))
        Yi, Yj = Y[rows, None], Y[None, :]
        fi, fj = f[rows, None], f[None, :]
        di, dj = d[rows, None], d[None, :]
        lt, gt, eq = Yi < Yj, Yi > Yj, Yi == Yj
        skip = (lt & ~di) | (gt & ~dj) | (eq & ~di & ~dj)
        comp = ~skip & (rows[:, None] != cols[None, :])
        f_eq = fi == fj
        half_if_tie = np.where(f_eq, 0.5, 0.0)
        s = np.zeros(comp.shape)
        s = np.where(lt, np.where(fi > fj, 1.0, half_if_tie), s)
        s = np.where(gt, np.where(fi < fj, 1.0, half_if_tie), s)
        both = di & dj
        tied = np.where(
            both,
            np.where(f_eq, 1.0, 0.5),
            np.where((~di & dj & (fi < fj)) | (di & ~dj & (fi > fj)), 1.0, 0.5),
        )
        s = np.where(eq, tied, s)
        num[rows] = np.where(comp, s, 0.0).sum(axis=1)
        den[rows] = comp.sum(axis=1)
    return num, den


def c_index(scores, time, event):
    """Harrell-style concordance index (higher scores mean earlier events).

    Raises
    ------
    UndefinedMetricError
        If no pair is comparable.
    """
    num, den = _pair_counts(scores, time, event)
    D = den.sum()
    if D == 0:
        raise UndefinedMetricError("no comparable pairs")
    return float(num.sum() / D)


def concordance_fractions(scores, time, event, groups):
    """Concordance fraction per category: ``{label: CF}``.

    Categories with no comparable pairs map to ``None``.
    """
    part = _as_partition(groups, np.asarray(scores).size)
    num, den = _pair_counts(scores, time, event)
    k = part.n_categories
    N = np.bincount(part.codes, weights=num, minlength=k)
    D = np.bincount(part.codes, weights=den, minlength=k)
    return {part.labels[a]: (float(N[a] / D[a]) if D[a] > 0 else None) for a in range(k)}


def concordance_imparity(scores, time, event, groups, percent=True):
    """Largest gap between the concordance fractions of two categories.

    Returned in percent by default.

    Raises
    ------
    UndefinedMetricError
        With fewer than two categories, or if a category has no comparable
        pair.
    """
    cf = concordance_fractions(scores, time, event, groups)
    if len(cf) < 2:
        raise UndefinedMetricError("concordance imparity needs at least two groups")
    for label, v in cf.items():
        if v is None:
            raise UndefinedMetricError(f"group {label!r} has no comparable pairs")
    vals = list(cf.values())
    ci = max(abs(a - b) for a in vals for b in vals)
    return 100.0 * ci if percent else ci


# --------------------------------------------------------------------------
# Fairness metrics on partial hazards


def _pairwise_distance(Xi, X):
    diff = Xi[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _individual_terms(scores, X, gamma, with_grad):
    h = np.exp(np.asarray(scores, dtype=float).reshape(-1))
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = h.size
    if X.shape[0] != n:
        raise ShapeError("X must have one row per score")
    total = 0.0
    grad_h = np.zeros(n) if with_grad else None
    block = max(1, _BLOCK_ELEMS // max(n * X.shape[1], 1))
    for start in range(0, n, block):
        stop = min(n, start + block)
        rows = np.arange(start, stop)
        diff_h = h[rows, None] - h[None, :]
        viol = np.abs(diff_h) - gamma * _pairwise_distance(X[rows], X)
        upper = rows[:, None] < np.arange(n)[None, :]
        active = upper & (viol > 0)
        total += float(np.where(active, viol, 0.0).sum())
        if with_grad:
            sgn = np.where(active, np.sign(diff_h), 0.0)
            grad_h[rows] += sgn.sum(axis=1)
            grad_h -= sgn.sum(axis=0)
    return total, (grad_h * h if with_grad else None)


def fairness_individual(scores, X, gamma=0.01):
    """``sum_{i<j} [|h_i - h_j| - gamma * ||x_i - x_j||]_+`` with
    ``h = exp(scores)`` and Euclidean distance."""
    if np.asarray(scores).size < 2:
        raise UndefinedMetricError("individual fairness needs at least two records")
    return _individual_terms(scores, X, gamma, False)[0]


def fairness_individual_grad(scores, X, gamma=0.01):
    """Value and subgradient (w.r.t. the scores) of
    :func:`fairness_individual`. Kinks of the ReLU and of ``|.|`` get
    derivative 0."""
    return _individual_terms(scores, X, gamma, True)


def _group_means(h, part):
    k = part.n_categories
    counts = np.bincount(part.codes, minlength=k)
    if np.any(counts == 0):
        empty = [part.labels[a] for a in np.flatnonzero(counts == 0)]
        raise UndefinedMetricError(f"empty group(s) {empty} in attribute {part.name!r}")
    means = np.array([np.mean(h[part.codes == a]) for a in range(k)])
    return means, counts


def fairness_group(scores, groups):
    """``max_g |mean_{i in g} h_i - mean_i h_i|`` with ``h = exp(scores)``."""
    return fairness_group_grad(scores, groups)[0]


def fairness_group_grad(scores, groups):
    """Value and subgradient of :func:`fairness_group` w.r.t. the scores.

    The leftmost maximizing group is used; a zero deviation has zero
    derivative."""
    f = np.asarray(scores, dtype=float).reshape(-1)
    h = np.exp(f)
    part = _as_partition(groups, h.size)
    means, counts = _group_means(h, part)
    overall = np.mean(h)
    dev = means - overall
    g = int(np.argmax(np.abs(dev)))
    value = float(np.abs(dev[g]))
    grad_h = np.sign(dev[g]) * ((part.codes == g) / counts[g] - 1.0 / h.size)
    return value, grad_h * h


def _intersections(partitions, n):
    parts = [_as_partition(p, n) for p in partitions]
    if not parts:
        raise ConfigError("need at least one group partition")
    keys = np.stack([p.codes for p in parts], axis=1)
    subgroups = []
    for combo in product(*[range(p.n_categories) for p in parts]):
        mask = np.all(keys == np.asarray(combo), axis=1)
        if mask.any():
            subgroups.append((combo, mask))
    if not subgroups:
        raise UndefinedMetricError("all intersectional subgroups are empty")
    return subgroups


def fairness_intersectional(scores, partitions):
    """``max_{s, s'} |log(hbar(s) / hbar(s'))|`` over nonempty intersections
    of the given partitions, ``hbar`` being the mean partial hazard."""
    return fairness_intersectional_grad(scores, partitions)[0]


def fairness_intersectional_grad(scores, partitions):
    """Value and subgradient of :func:`fairness_intersectional`.

    The first maximizing ordered pair in enumeration order is used."""
    h = np.exp(np.asarray(scores, dtype=float).reshape(-1))
    subs = _intersections(partitions, h.size)
    means = [np.mean(h[mask]) for _, mask in subs]
    best, arg = -1.0, (0, 0)
    for a in range(len(subs)):
        for b in range(len(subs)):
            v = abs(np.log(means[a] / means[b]))
            if v > best:
                best, arg = v, (a, b)
    a, b = arg
    grad_h = np.zeros_like(h)
    if best > 0:
        sgn = 1.0 if means[a] > means[b] else -1.0
        ma, mb = subs[a][1], subs[b][1]
        grad_h += sgn * ma / (ma.sum() * means[a])
        grad_h -= sgn * mb / (mb.sum() * means[b])
    return float(best), grad_h * h


def fairness_average(f_i, f_g, f_cap):
    """Mean of the individual, group and intersectional metrics."""
    return (f_i + f_g + f_cap) / 3.0


# --------------------------------------------------------------------------
# Kaplan-Meier, Brier score, AUC


class StepFunction:
    """Right-continuous step function equal to 1 before ``times[0]``."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def _at(self, t, side):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.ones_like(t)
        idx = np.searchsorted(self.times, t, side=side)
        return np.where(idx > 0, self.values[np.maximum(idx - 1, 0)], 1.0)

    def __call__(self, t):
        return self._at(t, "right")

    def left_limit(self, t):
        return self._at(t, "left")


def kaplan_meier(time, event, events_first=False):
    """Product-limit estimate of the survival function of the marked times.

    Parameters
    ----------
    time : array_like
    event : array_like of {0, 1}
        Marks the records whose time is an occurrence of the modelled event.
    events_first : bool
        If True, unmarked records tied with a marked time are treated as
        leaving the risk set just before it (used for the censoring
        distribution, where censoring-at-event ties should not count as at
        risk).
    """
    Y = np.asarray(time, dtype=float).reshape(-1)
    e = np.asarray(event).reshape(-1).astype(bool)
    times = np.unique(Y[e])
    if times.size == 0:
        return StepFunction([], [])
    Ys = np.sort(Y)
    at_risk = Ys.size - np.searchsorted(Ys, times, side="left")
    if events_first:
        others = np.sort(Y[~e])
        at_risk = at_risk - (np.searchsorted(others, times, side="right")
                             - np.searchsorted(others, times, side="left"))
    counts = np.searchsorted(np.sort(Y[e]), times, side="right") - np.searchsorted(
        np.sort(Y[e]), times, side="left")
    return StepFunction(times, np.cumprod(1.0 - counts / at_risk))


def km_censoring(time, event):
    """Kaplan-Meier estimate of the censoring survival function ``G``.

    Censorings are the marked times; records with an event at the same time
    as a censoring are taken to fail first and are not counted at risk.
    """
    e = np.asarray(event).reshape(-1)
    return kaplan_meier(time, 1 - e, events_first=True)


def default_time_grid(time, event, n_points=100, lower=5.0, upper=95.0):
    """Equally spaced times between two percentiles of the event times."""
    Y = np.asarray(time, dtype=float)[np.asarray(event).astype(bool)]
    if Y.size == 0:
        raise UndefinedMetricError("no event times to build a grid from")
    lo, hi = np.percentile(Y, [lower, upper])
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n_points)


def brier_scores(surv, time, event, grid, censoring=None, min_weight=1e-8):
    """IPCW Brier score at each grid time.

    Parameters
    ----------
    surv : array of shape (n, len(grid))
        Predicted survival probabilities ``S(t | x_i)`` at the grid times.
    censoring : StepFunction, optional
        Censoring survival estimate; by default :func:`km_censoring` of the
        same data.
    min_weight : float
        Records whose censoring probability is below this value are dropped
        from that time's average.
    """
    Y = np.asarray(time, dtype=float).reshape(-1)
    d = np.asarray(event).reshape(-1).astype(bool)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    surv = np.asarray(surv, dtype=float).reshape(Y.size, grid.size)
    if grid.size == 0:
        raise ConfigError("empty time grid")
    G = km_censoring(Y, d) if censoring is None else censoring
    G_case = G.left_limit(Y)
    out = np.empty(grid.size)
    for k, t in enumerate(grid):
        Gt = float(G(t))
        case = (Y <= t) & d
        ctrl = Y > t
        keep = ~((case & (G_case < min_weight)) | (ctrl & (Gt < min_weight)))
        s = surv[:, k]
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(case, s ** 2 / G_case, 0.0) + np.where(ctrl, (1 - s) ** 2 / Gt, 0.0)
        m = keep.sum()
        out[k] = np.clip(term[keep].sum() / m, 0.0, 1.0) if m else np.nan
    return out


def integrated_brier(surv, time, event, grid, censoring=None):
    """Brier score averaged over the grid with the trapezoidal rule."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    bs = brier_scores(surv, time, event, grid, censoring)
    if grid.size == 1:
        return float(bs[0])
    return float(_trapezoid(bs, grid) / (grid[-1] - grid[0]))


def time_dependent_auc(scores, time, event, grid, censoring=None, min_weight=1e-8,
                       return_curve=False):
    """Cumulative/dynamic AUC with inverse-probability-of-censoring weights.

    At time ``t`` cases are events with ``Y_i <= t`` (weighted by
    ``1 / G(Y_i-)``) and controls are records with ``Y_j > t``. Score ties
    count one half. The summary is the average over valid grid points
    weighted by the Kaplan-Meier event-time distribution increments.

    Raises
    ------
    UndefinedMetricError
        If no grid point has both a case and a control.
    """
    f = np.asarray(scores, dtype=float).reshape(-1)
    Y = np.asarray(time, dtype=float).reshape(-1)
    d = np.asarray(event).reshape(-1).astype(bool)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    G = km_censoring(Y, d) if censoring is None else censoring
    w_case = np.zeros_like(f)
    Gl = G.left_limit(Y)
    ok = d & (Gl >= min_weight)
    w_case[ok] = 1.0 / Gl[ok]
    valid_t, aucs = [], []
    for t in grid:
        case = ok & (Y <= t)
        ctrl = Y > t
        if not case.any() or not ctrl.any():
            continue
        fc = np.sort(f[ctrl])
        below = np.searchsorted(fc, f[case], side="left")
        ties = np.searchsorted(fc, f[case], side="right") - below
        wc = w_case[case]
        aucs.append(float(np.sum(wc * (below + 0.5 * ties)) / (wc.sum() * fc.size)))
        valid_t.append(t)
    if not aucs:
        raise UndefinedMetricError("no grid time has both cases and controls")
    aucs = np.asarray(aucs)
    S = kaplan_meier(Y, d)(np.asarray(valid_t))
    dS = -np.diff(np.concatenate([[1.0], S]))
    denom = 1.0 - S[-1]
    mean = float(np.sum(aucs * dS) / denom) if denom > 0 and dS.sum() > 0 else float(aucs.mean())
    if return_curve:
        return mean, np.asarray(valid_t), aucs
    return mean


def test_lpl(scores, time, event):
    """Log partial likelihood per record (higher is better).

    The sum is divided by the number of records, censored ones included;
    multiply by ``n / sum(event)`` for the per-event normalization.
    """
    return -average_cox_loss(scores, time, event)


# --------------------------------------------------------------------------
# Reports

_BETTER = {
    "c_index": "up", "auc": "up", "lpl": "up", "ibs": "down",
    "f_i": "down", "f_g": "down", "f_cap": "down", "f_a": "down", "ci_percent": "down",
}

METRIC_NAMES = tuple(_BETTER)
METRIC_TITLES = {
    "c_index": "c-index", "auc": "AUC", "lpl": "LPL", "ibs": "IBS",
    "f_i": "F_I", "f_g": "F_G", "f_cap": "F_cap", "f_a": "F_A", "ci_percent": "CI(%)",
}


@dataclass
class MetricsReport:
    """One evaluation. ``None`` marks a metric that is undefined (NA).

    The AUC is the cumulative/dynamic IPCW estimator.
    """

    c_index: Optional[float] = None
    auc: Optional[float] = None
    lpl: Optional[float] = None
    ibs: Optional[float] = None
    f_i: Optional[float] = None
    f_g: Optional[float] = None
    f_cap: Optional[float] = None
    f_a: Optional[float] = None
    ci_percent: Optional[float] = None

    better = _BETTER

    def as_dict(self):
        return asdict(self)

    def csv_header(self):
        return ",".join(f.name for f in fields(self))

    def csv_row(self):
        return ",".join("NA" if v is None else repr(float(v)) for v in asdict(self).values())

    def table(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            arrow = "↑" if _BETTER[f.name] == "up" else "↓"
            lines.append(f"{METRIC_TITLES[f.name] + arrow:<10} {'NA' if v is None else f'{v:.4f}'}")
        return "\n".join(lines)


def _maybe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except UndefinedMetricError:
        return None


def evaluate_scores(scores, X, time, event, *, group=None, intersect: Sequence = (),
                    baseline=None, grid=None, gamma=0.01):
    """Full metric suite for one set of predictions.

    Parameters
    ----------
    scores : array of shape (n,)
        Log partial hazards on the evaluation set.
    X : array of shape (n, d)
        Evaluation features (for the individual fairness metric).
    time, event : array of shape (n,)
    group : GroupPartition, optional
        Sensitive attribute used by F_G and CI. Without it both are NA.
    intersect : sequence of GroupPartition
        Attributes whose intersections define F_cap. NA when empty.
    baseline : BaselineHazard, optional
        Training-set Breslow estimate. IBS is NA without it.
    grid : array, optional
        Time grid for IBS and AUC; :func:`default_time_grid` by default.
    gamma : float
        Scale factor of the individual fairness metric.
    """
    from .coxloss import survival_matrix

    r = MetricsReport()
    r.c_index = _maybe(c_index, scores, time, event)
    r.lpl = test_lpl(scores, time, event)
    if grid is None:
        grid = _maybe(default_time_grid, time, event)
    if grid is not None:
        r.auc = _maybe(time_dependent_auc, scores, time, event, grid)
        if baseline is not None:
            S = survival_matrix(baseline, scores, grid)
            r.ibs = _maybe(integrated_brier, S, time, event, grid)
    r.f_i = _maybe(fairness_individual, scores, X, gamma)
    if group is not None:
        r.f_g = _maybe(fairness_group, scores, group)
        r.ci_percent = _maybe(concordance_imparity, scores, time, event, group)
    if intersect:
        r.f_cap = _maybe(fairness_intersectional, scores, list(intersect))
    if None not in (r.f_i, r.f_g, r.f_cap):
        r.f_a = fairness_average(r.f_i, r.f_g, r.f_cap)
    return r
