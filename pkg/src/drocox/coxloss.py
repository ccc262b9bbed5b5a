"""Cox negative log partial likelihood, its sample-split variant, and the
Breslow baseline hazard.

Risk sets follow the Breslow convention: record ``j`` is at risk for record
``i`` whenever ``Y[j] >= Y[i]``, ties and censored ties included. Risk-set
sums are computed in log space after sorting by time (``O(n log n)``); every
loss function also has a ``method="naive"`` ``O(n^2)`` path used in tests.
"""

import numpy as np

from .exceptions import ConfigError, ContractError, ShapeError

__all__ = [
    "individual_cox_losses",
    "average_cox_loss",
    "cox_loss_upstream",
    "split_individual_loss",
    "split_losses",
    "split_loss_upstream",
    "BaselineHazard",
    "breslow_baseline",
    "survival_estimate",
    "survival_matrix",
]


def _check(scores, time, event):
    f = np.asarray(scores, dtype=float).reshape(-1)
    Y = np.asarray(time, dtype=float).reshape(-1)
    d = np.asarray(event).reshape(-1)
    if f.size == 0:
        raise ShapeError("empty input")
    if not (f.size == Y.size == d.size):
        raise ShapeError("scores, durations and events must have equal length")
    return f, Y, d.astype(float)


def _log_tail_sum(ref_time, ref_val, query):
    """``log sum_{k : ref_time[k] >= q} exp(ref_val[k])`` for each query q."""
    query = np.asarray(query, dtype=float)
    if ref_time.size == 0:
        return np.full(query.shape, -np.inf)
    order = np.argsort(-ref_time, kind="stable")
    t_desc = ref_time[order]
    acc = np.logaddexp.accumulate(ref_val[order])
    idx = np.searchsorted(-t_desc, -query, side="right") - 1
    return np.where(idx >= 0, acc[np.maximum(idx, 0)], -np.inf)


def _log_head_sum(ref_time, ref_val, query):
    """``log sum_{k : ref_time[k] <= q} exp(ref_val[k])`` for each query q."""
    query = np.asarray(query, dtype=float)
    if ref_time.size == 0:
        return np.full(query.shape, -np.inf)
    order = np.argsort(ref_time, kind="stable")
    t_asc = ref_time[order]
    acc = np.logaddexp.accumulate(ref_val[order])
    idx = np.searchsorted(t_asc, query, side="right") - 1
    return np.where(idx >= 0, acc[np.maximum(idx, 0)], -np.inf)


def _log_risk_sums(f, Y, method="sorted"):
    if method == "naive":
        out = np.empty_like(f)
        for i in range(f.size):
            at_risk = f[Y >= Y[i]]
            m = at_risk.max()
            out[i] = m + np.log(np.exp(at_risk - m).sum())
        return out
    if method != "sorted":
        raise ConfigError(f"unknown method {method!r}")
    return _log_tail_sum(Y, f, Y)


def individual_cox_losses(scores, time, event, method="sorted"):
    """Per-record Cox losses ``-delta_i [f_i - log sum_{Y_j >= Y_i} exp(f_j)]``.

    Censored records get exactly 0. Because record ``i`` is in its own risk
    set, every loss is nonnegative.
    """
    f, Y, d = _check(scores, time, event)
    logS = _log_risk_sums(f, Y, method)
    return np.where(d > 0, logS - f, 0.0)


def average_cox_loss(scores, time, event, method="sorted"):
    """Mean of :func:`individual_cox_losses` over all records (censored
    records count in the denominator)."""
    return float(np.mean(individual_cox_losses(scores, time, event, method)))


def cox_loss_upstream(scores, time, event, weights=None, method="sorted"):
    """Gradient of ``sum_i w_i * loss_i`` with respect to the score vector.

    Parameters
    ----------
    scores, time, event : array of shape (n,)
    weights : array of shape (n,), optional
        Nonnegative per-record loss weights; all ones by default.

    Returns
    -------
    ndarray of shape (n,)
        ``-w_j delta_j + exp(f_j) * sum_{k: delta_k=1, Y_k <= Y_j} w_k / S_k``
        where ``S_k`` is the risk-set sum of record ``k``.
    """
    f, Y, d = _check(scores, time, event)
    w = np.ones_like(f) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.size != f.size:
        raise ShapeError("weights must have one entry per record")
    if np.any(w < 0):
        raise ContractError("loss weights must be nonnegative")
    logS = _log_risk_sums(f, Y, method)
    active = (d > 0) & (w > 0)
    if method == "naive":
        g = -w * d
        for j in range(f.size):
            for k in np.flatnonzero(active):
                if Y[k] <= Y[j]:
                    g[j] += w[k] * np.exp(f[j] - logS[k])
        return g
    with np.errstate(divide="ignore"):
        log_terms = np.log(w[active]) - logS[active]
    logA = _log_head_sum(Y[active], log_terms, Y)
    return -w * d + np.exp(f + logA)


# --------------------------------------------------------------------------
# Sample-split losses


def split_individual_loss(i, scores, time, event, D2):
    """Loss of record `i` against the reference set `D2`.

    ``-delta_i [f_i - log(exp(f_i) + sum_{j in D2, Y_j >= Y_i} exp(f_j))]``.
    Requires ``i`` not in `D2`.
    """
    f, Y, d = _check(scores, time, event)
    D2 = np.asarray(D2, dtype=np.int64).reshape(-1)
    if np.any(D2 == i):
        raise ContractError(f"record {i} is a member of the reference set")
    if d[i] == 0:
        return 0.0
    others = f[D2][Y[D2] >= Y[i]]
    vals = np.concatenate([[f[i]], others])
    m = vals.max()
    return float(m + np.log(np.exp(vals - m).sum()) - f[i])


def _split_log_phi(f, Y, D1, D2):
    return np.logaddexp(f[D1], _log_tail_sum(Y[D2], f[D2], Y[D1]))


def _check_split(n, D1, D2):
    D1 = np.asarray(D1, dtype=np.int64).reshape(-1)
    D2 = np.asarray(D2, dtype=np.int64).reshape(-1)
    if D1.size == 0:
        raise ContractError("D1 must be nonempty")
    if np.intersect1d(D1, D2).size:
        raise ContractError("D1 and D2 must be disjoint")
    if D1.size and (D1.min() < 0 or D1.max() >= n) or D2.size and (D2.min() < 0 or D2.max() >= n):
        raise ContractError("split indices out of range")
    return D1, D2


def split_losses(scores, time, event, D1, D2, method="sorted"):
    """Split losses of every record in `D1` against `D2` (length ``|D1|``)."""
    f, Y, d = _check(scores, time, event)
    D1, D2 = _check_split(f.size, D1, D2)
    if method == "naive":
        return np.array([split_individual_loss(i, f, Y, d, D2) for i in D1])
    logphi = _split_log_phi(f, Y, D1, D2)
    return np.where(d[D1] > 0, logphi - f[D1], 0.0)


def split_loss_upstream(scores, time, event, D1, D2, weights=None):
    """Gradient of ``sum_{i in D1} w_i * split_loss_i`` with respect to all
    ``n`` scores. `weights` is indexed like `D1`."""
    f, Y, d = _check(scores, time, event)
    D1, D2 = _check_split(f.size, D1, D2)
    w = np.ones(D1.size) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.size != D1.size:
        raise ShapeError("weights must have one entry per D1 record")
    if np.any(w < 0):
        raise ContractError("loss weights must be nonnegative")
    logphi = _split_log_phi(f, Y, D1, D2)
    wd = w * d[D1]
    g = np.zeros_like(f)
    g[D1] = wd * (np.exp(f[D1] - logphi) - 1.0)
    active = wd > 0
    if D2.size and np.any(active):
        log_terms = np.log(wd[active]) - logphi[active]
        logA = _log_head_sum(Y[D1][active], log_terms, Y[D2])
        g[D2] += np.exp(f[D2] + logA)
    return g


# --------------------------------------------------------------------------
# Baseline hazard and survival curves


class BaselineHazard:
    """Breslow step estimate of the baseline hazard.

    Attributes
    ----------
    times : ndarray
        Unique event times ``t_1 < ... < t_m``.
    increments : ndarray
        Hazard jumps at those times.
    """

    def __init__(self, times, increments):
        self.times = np.asarray(times, dtype=float)
        self.increments = np.asarray(increments, dtype=float)
        self._cum = np.cumsum(self.increments)

    def cumulative(self, t):
        """Right-continuous cumulative baseline hazard ``H0(t)``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        return np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("time,hazard_increment,cumulative_hazard\n")
            for t, h, c in zip(self.times, self.increments, self._cum):
                fh.write(f"{t!r},{h!r},{c!r}\n")


def breslow_baseline(scores, time, event):
    """Breslow estimate ``h_j = d_j / sum_{Y_i >= t_j} exp(f_i)``.

    Raises
    ------
    ContractError
        If there are no events.
    """
    f, Y, d = _check(scores, time, event)
    if not np.any(d > 0):
        raise ContractError("the Breslow estimator needs at least one event")
    times, counts = np.unique(Y[d > 0], return_counts=True)
    # max-shifted linear sums keep f == 0 exact (increments d_j / at-risk);
    # log space is the fallback where the shifted sum underflows
    m = f.max()
    order = np.argsort(-Y, kind="stable")
    tail = np.cumsum(np.exp(f[order] - m))
    idx = np.searchsorted(-Y[order], -times, side="right") - 1
    den = tail[idx]
    inc = counts / den * np.exp(-m)
    bad = ~(den > 1e-300) | ~np.isfinite(inc)
    if np.any(bad):
        inc[bad] = counts[bad] * np.exp(-_log_tail_sum(Y, f, times[bad]))
    return BaselineHazard(times, inc)


def survival_estimate(bh: BaselineHazard, score, t):
    """``S(t | x) = exp(-H0(t) * exp(f(x)))``."""
    return np.exp(-bh.cumulative(t) * np.exp(score))


def survival_matrix(bh: BaselineHazard, scores, times):
    """Survival curves for many records: array of shape ``(n, len(times))``."""
    scores = np.asarray(scores, dtype=float).reshape(-1, 1)
    H = bh.cumulative(np.asarray(times, dtype=float)).reshape(1, -1)
    return np.exp(-H * np.exp(scores))
