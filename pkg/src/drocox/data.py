"""Survival datasets: containers, CSV input/output, splitting and a synthetic
mixture-of-groups generator.

All randomness goes through :func:`make_rng`, a NumPy ``Generator`` backed by
the PCG64 bit generator. PCG64 output is specified bit-for-bit, so a given
seed reproduces the same datasets and splits on every platform.
"""

import csv
import json
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, ParseError, SchemaError, ShapeError

__all__ = [
    "SurvivalRecord",
    "Dataset",
    "SyntheticConfig",
    "SplitIndices",
    "make_rng",
    "load_csv",
    "save_csv",
    "generate_synthetic",
    "split_dataset",
    "standardize_features",
    "halve_indices",
]


def make_rng(seed):
    """Return the library's seeded generator (NumPy ``Generator`` on PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurvivalRecord:
    """A single observation ``(features, duration, event)``."""

    features: np.ndarray
    duration: float
    event: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented survival dataset.

    Parameters
    ----------
    X : array of shape (n, d)
        Feature matrix.
    time : array of shape (n,)
        Observed durations, nonnegative.
    event : array of shape (n,)
        Event indicators (1 = event observed, 0 = censored).
    feature_names : tuple of str
        One name per column of `X`.
    groups : dict
        Attribute name -> integer category index per record.
    group_labels : dict
        Attribute name -> tuple of category labels; ``group_labels[a][k]`` is
        the label of category index ``k``.

    Notes
    -----
    Arrays are copied and made read-only on construction.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    feature_names: Tuple[str, ...] = ()
    groups: Dict[str, np.ndarray] = field(default_factory=dict)
    group_labels: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ConfigError("X must be a 2-d array")
        n, d = X.shape
        time = np.asarray(self.time, dtype=float).reshape(-1)
        event = np.asarray(self.event).reshape(-1)
        if time.shape[0] != n or event.shape[0] != n:
            raise ShapeError("X, time and event must have the same number of rows")
        if np.any(~np.isfinite(time)) or np.any(time < 0):
            raise ConfigError("durations must be finite and nonnegative")
        if not np.all((event == 0) | (event == 1)):
            raise ConfigError("event indicators must be 0 or 1")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(d))
        if len(names) != d:
            raise ConfigError("feature_names length does not match X")
        groups = {}
        labels = {}
        for name, codes in self.groups.items():
            codes = np.asarray(codes).reshape(-1)
            if codes.shape[0] != n:
                raise ConfigError(f"group attribute {name!r} does not cover every record")
            if n and (codes.min() < 0 or not np.issubdtype(codes.dtype, np.integer)):
                raise ConfigError(f"group attribute {name!r} must hold nonnegative integers")
            lab = self.group_labels.get(name)
            if lab is None:
                k = int(codes.max()) + 1 if n else 0
                lab = tuple(str(i) for i in range(k))
            lab = tuple(str(v) for v in lab)
            if n and int(codes.max()) >= len(lab):
                raise ConfigError(f"group attribute {name!r} has codes without labels")
            groups[name] = _frozen(codes, np.int64)
            labels[name] = lab
        object.__setattr__(self, "X", _frozen(X, float))
        object.__setattr__(self, "time", _frozen(time, float))
        object.__setattr__(self, "event", _frozen(event, np.int64))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_labels", labels)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def records(self) -> Iterator[SurvivalRecord]:
        for i in range(self.n):
            yield SurvivalRecord(self.X[i], float(self.time[i]), int(self.event[i]))

    def subset(self, idx) -> "Dataset":
        """Rows `idx` (in the given order) as a new dataset."""
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.X[idx],
            self.time[idx],
            self.event[idx],
            self.feature_names,
            {k: v[idx] for k, v in self.groups.items()},
            dict(self.group_labels),
        )

    def with_features(self, X) -> "Dataset":
        return Dataset(X, self.time, self.event, self.feature_names,
                       dict(self.groups), dict(self.group_labels))

    def labels_of(self, attribute) -> np.ndarray:
        """Per-record category labels (strings) of a group attribute."""
        lab = np.asarray(self.group_labels[attribute], dtype=object)
        return lab[self.groups[attribute]]

    def fingerprint(self) -> str:
        """Content hash, used to check that a split does not change."""
        import hashlib

        h = hashlib.sha256()
        for a in (self.X, self.time, self.event):
            h.update(np.ascontiguousarray(a).tobytes())
        for name in sorted(self.groups):
            h.update(name.encode())
            h.update(self.groups[name].tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# CSV


def _parse_float(cell, row, column):
    try:
        return float(cell)
    except ValueError:
        raise ParseError(row, f"column {column!r}: cannot parse {cell!r} as a number") from None


def load_csv(path, time_col="time", event_col="status", group_cols=(), feature_cols=None):
    """Read a survival dataset from a CSV file with a header row.

    Parameters
    ----------
    path : str or path-like
        UTF-8 CSV file.
    time_col, event_col : str
        Duration and event indicator columns.
    group_cols : sequence of str
        Categorical group attributes. Categories are numbered in order of
        first appearance.
    feature_cols : sequence of str, optional
        Feature columns. Defaults to every column not named above.

    Returns
    -------
    Dataset

    Raises
    ------
    SchemaError
        If a named column is missing or no feature column remains.
    ParseError
        On a non-numeric feature, a negative duration or an event value
        other than 0/1. The error carries the one-based data row number.
    """
    group_cols = list(group_cols or ())
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    for col in [time_col, event_col, *group_cols]:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    reserved = {time_col, event_col, *group_cols}
    if feature_cols is None:
        feature_cols = [h for h in header if h not in reserved]
    else:
        feature_cols = list(feature_cols)
        for col in feature_cols:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
    if not feature_cols:
        raise SchemaError(f"{path}: no feature columns")

    pos = {h: k for k, h in enumerate(header)}
    n = len(rows)
    X = np.empty((n, len(feature_cols)))
    time = np.empty(n)
    event = np.empty(n, dtype=np.int64)
    codes = {g: np.empty(n, dtype=np.int64) for g in group_cols}
    seen: Dict[str, Dict[str, int]] = {g: {} for g in group_cols}

    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(r, f"expected {len(header)} fields, found {len(row)}")
        for j, col in enumerate(feature_cols):
            X[r - 1, j] = _parse_float(row[pos[col]], r, col)
        t = _parse_float(row[pos[time_col]], r, time_col)
        if not np.isfinite(t) or t < 0:
            raise ParseError(r, f"duration must be finite and nonnegative, got {row[pos[time_col]]!r}")
        time[r - 1] = t
        e = _parse_float(row[pos[event_col]], r, event_col)
        if e not in (0.0, 1.0):
            raise ParseError(r, f"event indicator must be 0 or 1, got {row[pos[event_col]]!r}")
        event[r - 1] = int(e)
        for g in group_cols:
            label = row[pos[g]].strip()
            codes[g][r - 1] = seen[g].setdefault(label, len(seen[g]))

    return Dataset(
        X,
        time,
        event,
        tuple(feature_cols),
        codes,
        {g: tuple(seen[g]) for g in group_cols},
    )


def save_csv(ds, path, time_col="time", event_col="status"):
    """Write `ds` as CSV (features, duration, event, group labels).

    Floats are written with 17 significant digits so that :func:`load_csv`
    reproduces them exactly.
    """
    groups = list(ds.groups)
    labels = {g: ds.labels_of(g) for g in groups}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.feature_names, time_col, event_col, *groups])
        for i in range(ds.n):
            w.writerow(
                [format(v, ".17g") for v in ds.X[i]]
                + [format(ds.time[i], ".17g"), int(ds.event[i])]
                + [labels[g][i] for g in groups]
            )


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the latent-group exponential generator.

    Group ``k`` is drawn with probability ``mixture_weights[k]``; given the
    group, features are standard normal and the event time is exponential
    with rate ``exp(coefficients[k] @ x)``. Censoring times are exponential
    with rate `censoring_rate` (no censoring when it is 0).
    """

    n: int
    mixture_weights: Sequence[float]
    coefficients: Sequence[Sequence[float]]
    censoring_rate: float = 0.0
    seed: int = 0

    @property
    def K(self) -> int:
        return len(self.mixture_weights)

    @property
    def feature_dim(self) -> int:
        return len(self.coefficients[0]) if len(self.coefficients) else 0

    def validate(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n must be a positive integer")
        pi = np.asarray(self.mixture_weights, dtype=float)
        if pi.ndim != 1 or pi.size < 1:
            raise ConfigError("need at least one mixture component")
        if np.any(pi <= 0) or (pi.size > 1 and np.any(pi >= 1)):
            raise ConfigError("mixture weights must lie in (0, 1)")
        if abs(pi.sum() - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights sum to {pi.sum():g}, not 1")
        if len(self.coefficients) != pi.size:
            raise ConfigError("need one coefficient vector per group")
        dims = {len(c) for c in self.coefficients}
        if len(dims) != 1 or 0 in dims:
            raise ConfigError("coefficient vectors must share a positive length")
        if not np.all(np.isfinite(np.asarray(self.coefficients, dtype=float))):
            raise ConfigError("coefficients must be finite")
        if not (self.censoring_rate >= 0 and np.isfinite(self.censoring_rate)):
            raise ConfigError("censoring_rate must be finite and nonnegative")
        return self

    def to_json(self):
        return json.dumps(
            {
                "n": int(self.n),
                "mixture_weights": [float(p) for p in self.mixture_weights],
                "coefficients": [[float(v) for v in c] for c in self.coefficients],
                "censoring_rate": float(self.censoring_rate),
                "seed": int(self.seed),
            },
            indent=2,
        )

    @classmethod
    def from_dict(cls, d):
        return cls(
            n=int(d["n"]),
            mixture_weights=tuple(float(p) for p in d["mixture_weights"]),
            coefficients=tuple(tuple(float(v) for v in c) for c in d["coefficients"]),
            censoring_rate=float(d.get("censoring_rate", 0.0)),
            seed=int(d.get("seed", 0)),
        )


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Sample a dataset from `cfg`.

    Draw order (fixed, part of the reproducibility contract): group labels,
    features, event-time exponentials, censoring exponentials. Ties between
    event and censoring time count as events. The true group of each record
    is kept as the group attribute ``"latent_group"``.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    n = int(cfg.n)
    theta = np.asarray(cfg.coefficients, dtype=float)
    pi = np.asarray(cfg.mixture_weights, dtype=float)
    g = rng.choice(cfg.K, size=n, p=pi / pi.sum())
    X = rng.standard_normal((n, cfg.feature_dim))
    rate = np.exp(np.einsum("ij,ij->i", X, theta[g]))
    T = rng.standard_exponential(n) / rate
    if cfg.censoring_rate > 0:
        C = rng.standard_exponential(n) / cfg.censoring_rate
    else:
        C = np.full(n, np.inf)
    event = (T <= C).astype(np.int64)
    Y = np.where(event == 1, T, C)
    return Dataset(
        X,
        Y,
        event,
        tuple(f"x{j + 1}" for j in range(cfg.feature_dim)),
        {"latent_group": g.astype(np.int64)},
        {"latent_group": tuple(str(k) for k in range(cfg.K))},
    )


# --------------------------------------------------------------------------
# Splitting and preprocessing


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint index sets covering ``range(n)``."""

    D1: np.ndarray
    D2: np.ndarray


def _split_sizes(n, fractions):
    fr = np.asarray(fractions, dtype=float)
    if fr.ndim != 1 or fr.size < 2:
        raise ConfigError("need at least two split fractions")
    if np.any(fr <= 0):
        raise ConfigError(f"split fractions must be positive, got {tuple(fractions)}")
    if abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    sizes = [int(round(f * n)) for f in fr[:-1]]
    sizes.append(n - sum(sizes))
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"split of n={n} by {tuple(fractions)} leaves an empty part")
    return sizes


def split_indices(n, fractions, seed):
    """Seeded partition of ``range(n)`` into consecutive chunks of a shuffle."""
    sizes = _split_sizes(n, fractions)
    perm = make_rng(seed).permutation(n)
    out = []
    start = 0
    for s in sizes:
        out.append(np.sort(perm[start:start + s]))
        start += s
    return out


def split_dataset(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed=0) -> List[Dataset]:
    """Partition `ds` by a seeded shuffle into parts of the given fractions.

    Part sizes are rounded proportions; the last part absorbs the rounding.
    Any empty part raises :class:`ConfigError`.
    """
    return [ds.subset(idx) for idx in split_indices(ds.n, fractions, seed)]


def standardize_features(train: Dataset, others: Sequence[Dataset] = ()):
    """Z-score every feature with the training set's mean and population std.

    Zero-variance features are centered only.

    Returns
    -------
    datasets : list of Dataset
        ``[train, *others]`` transformed.
    means, stds : ndarray
        Statistics used (``stds`` holds 1.0 for constant columns).
    """
    if train.n == 0:
        raise ConfigError("cannot standardize with an empty training set")
    means = train.X.mean(axis=0)
    stds = train.X.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    out = [ds.with_features((ds.X - means) / stds) for ds in (train, *others)]
    return out, means, stds


def halve_indices(n, n1, seed=0) -> SplitIndices:
    """Random partition of ``range(n)`` into sorted sets of sizes n1 and n-n1."""
    if not (0 < n1 < n):
        raise ConfigError(f"n1 must satisfy 0 < n1 < n, got n1={n1}, n={n}")
    perm = make_rng(seed).permutation(n)
    return SplitIndices(np.sort(perm[:n1]), np.sort(perm[n1:]))


def default_n1(n):
    """Half of `n`, rounded down."""
    return n // 2
