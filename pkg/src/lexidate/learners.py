"""Native transformer and classifier methods used as pipeline nodes.

A node is described by an immutable :class:`LearnerSpec` (method name plus
hyperparameters). :func:`fit` turns a spec and data into a
:class:`FittedModel` whose ``params`` dict holds exactly the learned scalars
that :func:`apply` needs; :func:`param_count` reports their number following
the counting table below.

=================  ==========================
method             trainable parameters
=================  ==========================
StandardScaler     2 d
MinMaxScaler       2 d
SelectKBest        k
LogisticRegression d + 1 (binary), c (d + 1)
DecisionTree       2 internal + leaves
GaussianNB         c (2 d + 1)
KNearestNeighbors  n_train (d + 1)
=================  ==========================
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
from scipy.special import expit

__all__ = [
    "CLASSIFIERS",
    "FIT_CALLS",
    "HYPERPARAMETER_SPACE",
    "METHODS",
    "TRANSFORMERS",
    "FitCounter",
    "FittedModel",
    "LearnerError",
    "LearnerSpec",
    "apply",
    "fit",
    "is_classifier",
    "param_count",
    "sample_spec",
]


class LearnerError(ValueError):
    """Raised when a method cannot be fitted or applied to the given data."""


TRANSFORMERS = ("StandardScaler", "MinMaxScaler", "SelectKBest")
CLASSIFIERS = ("LogisticRegression", "DecisionTree", "GaussianNB", "KNearestNeighbors")
METHODS = TRANSFORMERS + CLASSIFIERS

HYPERPARAMETER_SPACE: Mapping[str, Mapping[str, tuple]] = MappingProxyType({
    "StandardScaler": {},
    "MinMaxScaler": {},
    "SelectKBest": {"k": (1, 2, 4, 8)},
    "LogisticRegression": {
        "learning_rate": (0.01, 0.1),
        "iterations": (100, 500),
        "l2": (0.0, 0.01, 0.1),
    },
    "DecisionTree": {"max_depth": (1, 2, 3, 5)},
    "GaussianNB": {},
    "KNearestNeighbors": {"k": (1, 3, 5, 7, 9)},
})


class FitCounter:
    """Process-wide, lock-protected tally of learner fits."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._value = 0

    def increment(self, n: int = 1) -> None:
        with self._lock:
            self._value += n

    @property
    def value(self) -> int:
        with self._lock:
            return self._value

    def reset(self) -> None:
        with self._lock:
            self._value = 0


FIT_CALLS = FitCounter()


def is_classifier(method: str) -> bool:
    return method in CLASSIFIERS


@dataclass(frozen=True)
class LearnerSpec:
    method: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in HYPERPARAMETER_SPACE:
            raise LearnerError(f"unknown method {self.method!r}")
        object.__setattr__(self, "hyperparameters", dict(sorted(dict(self.hyperparameters).items())))

    def __hash__(self) -> int:
        return hash((self.method, tuple(self.hyperparameters.items())))

    def violations(self) -> list[str]:
        space = HYPERPARAMETER_SPACE[self.method]
        problems = []
        if set(self.hyperparameters) != set(space):
            problems.append(
                f"{self.method}: hyperparameter keys {sorted(self.hyperparameters)} != {sorted(space)}"
            )
        for key, value in self.hyperparameters.items():
            if key in space and value not in space[key]:
                problems.append(f"{self.method}: {key}={value!r} outside {space[key]}")
        return problems

    def describe(self) -> str:
        if not self.hyperparameters:
            return self.method
        args = " ".join(f"{k}={v!r}" for k, v in self.hyperparameters.items())
        return f"{self.method} {args}"


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: LearnerSpec
    params: dict[str, np.ndarray]
    input_width: int
    classes: tuple[str, ...] = ()
    param_count: int = 0
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_learned_scalars(self) -> int:
        return int(sum(np.asarray(v).size for v in self.params.values()))


def sample_spec(method: str, rng: np.random.Generator) -> LearnerSpec:
    """Draw every hyperparameter of ``method`` uniformly from its domain."""
    if method not in HYPERPARAMETER_SPACE:
        raise LearnerError(f"unknown method {method!r}")
    space = HYPERPARAMETER_SPACE[method]
    return LearnerSpec(method, {k: dom[int(rng.integers(len(dom)))] for k, dom in sorted(space.items())})


# --------------------------------------------------------------------------
# individual methods
# --------------------------------------------------------------------------

def _fit_standard_scaler(X, y, hp):
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    return {"mean": X.mean(axis=0), "scale": scale}, ()


def _apply_standard_scaler(p, X):
    return (X - p["mean"]) / p["scale"]


def _fit_minmax_scaler(X, y, hp):
    low = X.min(axis=0)
    span = X.max(axis=0) - low
    span[span == 0.0] = 1.0
    return {"min": low, "range": span}, ()


def _apply_minmax_scaler(p, X):
    return (X - p["min"]) / p["range"]


def anova_f_scores(X: np.ndarray, codes: np.ndarray, n_classes: int) -> np.ndarray:
    """One-way ANOVA F statistic of every column against the class codes.

    Zero-variance columns (and degenerate degrees of freedom) score 0; a
    column with between-class but no within-class spread scores ``inf``.
    """
    n, d = X.shape
    df_between, df_within = n_classes - 1, n - n_classes
    if df_between <= 0 or df_within <= 0:
        return np.zeros(d)
    grand = X.mean(axis=0)
    ss_between = np.zeros(d)
    ss_within = np.zeros(d)
    for c in range(n_classes):
        Xc = X[codes == c]
        if len(Xc) == 0:
            continue
        mc = Xc.mean(axis=0)
        ss_between += len(Xc) * (mc - grand) ** 2
        ss_within += ((Xc - mc) ** 2).sum(axis=0)
    scores = np.zeros(d)
    total = ss_between + ss_within
    live = total > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (ss_between / df_between) / (ss_within / df_within)
    scores[live] = np.where(ss_within[live] > 0, f[live], np.inf)
    return scores


def _fit_select_k_best(X, y, hp):
    k = min(int(hp["k"]), X.shape[1])
    classes, codes = np.unique(y, return_inverse=True)
    scores = anova_f_scores(X, codes, len(classes))
    # stable sort on -score keeps the lower index first among ties
    chosen = np.argsort(-scores, kind="stable")[:k]
    return {"indices": np.sort(chosen)}, ()


def _apply_select_k_best(p, X):
    return X[:, p["indices"]]


def _gradient_descent(X, T, lr, iterations, l2):
    """Full-batch gradient descent on independent logistic losses, one per
    column of the 0/1 target matrix ``T``; weights start at zero and the
    bias is not penalised."""
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    Xa_t = Xa.T / n
    decay = np.full((d + 1, 1), 1.0 - lr * l2)
    decay[-1] = 1.0
    W = np.zeros((d + 1, T.shape[1]))
    for _ in range(iterations):
        err = expit(Xa @ W)
        err -= T
        W = W * decay - lr * (Xa_t @ err)
    return W[:-1].T, W[-1]


def _fit_logistic_regression(X, y, hp):
    classes, codes = np.unique(y, return_inverse=True)
    lr, iters, l2 = float(hp["learning_rate"]), int(hp["iterations"]), float(hp["l2"])
    if len(classes) == 1:
        return {"constant": np.zeros(1)}, tuple(classes)
    # binary: a single model for the second class; otherwise one-vs-rest
    targets = range(1, 2) if len(classes) == 2 else range(len(classes))
    T = np.stack([(codes == c).astype(float) for c in targets], axis=1)
    coef, intercept = _gradient_descent(X, T, lr, iters, l2)
    params = {"coef": coef, "intercept": intercept}
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise LearnerError("LogisticRegression diverged to non-finite weights")
    return params, tuple(classes)


def _predict_logistic_regression(p, X):
    if "constant" in p:
        return np.zeros(len(X), dtype=np.int64)
    scores = X @ p["coef"].T + p["intercept"]
    if p["coef"].shape[0] == 1:
        return (scores[:, 0] > 0.0).astype(np.int64)
    return np.argmax(scores, axis=1)


def _gini_from_counts(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = counts / totals[..., None]
    return np.where(totals > 0, 1.0 - np.nansum(frac**2, axis=-1), 0.0)


def best_gini_split(X: np.ndarray, codes: np.ndarray, n_classes: int):
    """Exhaustive CART split search.

    Returns ``(feature, threshold, weighted_impurity)`` minimising the
    size-weighted Gini impurity of the two children over every feature and
    every midpoint between consecutive distinct values, or ``None`` when no
    column has two distinct values. Ties go to the lower feature index, then
    the lower threshold.
    """
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None
    onehot = np.eye(n_classes)[codes]
    left = np.cumsum(onehot[order], axis=0)[:-1]
    right = onehot.sum(axis=0) - left
    n_left = np.arange(1, n, dtype=float)[:, None]
    impurity = (
        n_left * (1.0 - (left**2).sum(axis=2) / n_left**2)
        + (n - n_left) * (1.0 - (right**2).sum(axis=2) / (n - n_left) ** 2)
    ) / n
    impurity = np.where(valid, impurity, np.inf)
    # column-major flat argmin: lower feature first, then lower cut position
    flat = int(np.argmin(impurity.T))
    j, i = divmod(flat, n - 1)
    return j, 0.5 * (xs[i, j] + xs[i + 1, j]), float(impurity[i, j])


def _majority(codes: np.ndarray, n_classes: int) -> int:
    # argmax returns the first maximum, i.e. the lower class index on ties
    return int(np.argmax(np.bincount(codes, minlength=n_classes)))


def _fit_decision_tree(X, y, hp):
    classes, codes = np.unique(y, return_inverse=True)
    c = len(classes)
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(_majority(codes[rows], c))
        sub = codes[rows]
        if depth >= hp["max_depth"] or np.all(sub == sub[0]):
            return node
        split = best_gini_split(X[rows], sub, c)
        if split is None or split[2] >= _gini_from_counts(np.bincount(sub, minlength=c).astype(float)) - 1e-12:
            return node
        j, t, _ = split
        go_left = X[rows, j] <= t
        feature[node], threshold[node] = j, t
        left[node] = grow(rows[go_left], depth + 1)
        right[node] = grow(rows[~go_left], depth + 1)
        return node

    grow(np.arange(len(codes)), 0)
    feature_a = np.array(feature, dtype=np.int64)
    internal = feature_a >= 0
    params = {
        "feature": feature_a[internal],
        "threshold": np.array(threshold)[internal],
        "leaf_class": np.array(value, dtype=np.int64)[~internal],
    }
    # tree topology is bookkeeping, not counted as learned scalars
    topology = {
        "node_feature": feature_a,
        "node_threshold": np.array(threshold),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "value": np.array(value, dtype=np.int64),
    }
    return params, tuple(classes), topology


def _predict_decision_tree(topology, X):
    node = np.zeros(len(X), dtype=np.int64)
    feat, thr = topology["node_feature"], topology["node_threshold"]
    rows = np.arange(len(X))
    while True:
        active = feat[node] >= 0
        if not active.any():
            break
        a = node[active]
        go_left = X[rows[active], feat[a]] <= thr[a]
        node[active] = np.where(go_left, topology["left"][a], topology["right"][a])
    return topology["value"][node]


def _fit_gaussian_nb(X, y, hp):
    classes, codes = np.unique(y, return_inverse=True)
    c = len(classes)
    means = np.array([X[codes == i].mean(axis=0) for i in range(c)])
    variances = np.array([X[codes == i].var(axis=0) for i in range(c)])
    variances += 1e-9 * max(float(X.var(axis=0).max()), 1.0)
    priors = np.bincount(codes, minlength=c) / len(codes)
    return {"mean": means, "var": variances, "prior": priors}, tuple(classes)


def _predict_gaussian_nb(p, X):
    var = p["var"]
    log_lik = -0.5 * (
        np.log(2.0 * np.pi * var).sum(axis=1)[None, :]
        + (((X[:, None, :] - p["mean"][None, :, :]) ** 2) / var[None, :, :]).sum(axis=2)
    )
    return np.argmax(log_lik + np.log(p["prior"])[None, :], axis=1)


def _fit_knn(X, y, hp):
    classes, codes = np.unique(y, return_inverse=True)
    return {"X": X.copy(), "y": codes.astype(np.int64)}, tuple(classes)


def _predict_knn(p, X, k, n_classes):
    train, codes = p["X"], p["y"]
    k = min(k, len(train))
    d2 = ((X[:, None, :] - train[None, :, :]) ** 2).sum(axis=2)
    # stable ordering so that equal distances favour the lower training index
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = np.zeros((len(X), n_classes), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(len(X)), k), codes[nearest].ravel()), 1)
    return np.argmax(votes, axis=1)


# --------------------------------------------------------------------------
# public surface
# --------------------------------------------------------------------------

_FITTERS = {
    "StandardScaler": _fit_standard_scaler,
    "MinMaxScaler": _fit_minmax_scaler,
    "SelectKBest": _fit_select_k_best,
    "LogisticRegression": _fit_logistic_regression,
    "DecisionTree": _fit_decision_tree,
    "GaussianNB": _fit_gaussian_nb,
    "KNearestNeighbors": _fit_knn,
}


def _count_rule(spec: LearnerSpec, params: dict, d: int, c: int) -> int:
    m = spec.method
    if m in ("StandardScaler", "MinMaxScaler"):
        return 2 * d
    if m == "SelectKBest":
        return len(params["indices"])
    if m == "LogisticRegression":
        if "constant" in params:
            return 1
        return (d + 1) if c == 2 else c * (d + 1)
    if m == "DecisionTree":
        internal = len(params["feature"])
        return 2 * internal + len(params["leaf_class"])
    if m == "GaussianNB":
        return c * (2 * d + 1)
    if m == "KNearestNeighbors":
        return len(params["y"]) * (d + 1)
    raise LearnerError(f"unknown method {m!r}")


def fit(spec: LearnerSpec, X, y=None) -> FittedModel:
    """Fit ``spec`` on ``X`` (and ``y``; transformers other than SelectKBest
    ignore it). Every call bumps :data:`FIT_CALLS`, successful or not."""
    FIT_CALLS.increment()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise LearnerError(f"{spec.method}: need a non-empty 2-D input, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise LearnerError(f"{spec.method}: input contains non-finite values")
    needs_y = spec.method == "SelectKBest" or is_classifier(spec.method)
    if needs_y:
        if y is None:
            raise LearnerError(f"{spec.method}: labels required")
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise LearnerError(f"{spec.method}: labels misaligned with {X.shape[0]} rows")
    out = _FITTERS[spec.method](X, y, spec.hyperparameters)
    params, classes = out[0], out[1]
    return FittedModel(
        spec=spec,
        params=params,
        input_width=X.shape[1],
        classes=classes,
        param_count=_count_rule(spec, params, X.shape[1], len(classes)),
        aux=out[2] if len(out) > 2 else {},
    )


def apply(model: FittedModel, X) -> np.ndarray:
    """Transform ``X`` (transformers) or predict its labels (classifiers)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_width:
        raise LearnerError(
            f"{model.spec.method}: fitted on width {model.input_width}, got input of shape {X.shape}"
        )
    m, p = model.spec.method, model.params
    if m == "StandardScaler":
        return _apply_standard_scaler(p, X)
    if m == "MinMaxScaler":
        return _apply_minmax_scaler(p, X)
    if m == "SelectKBest":
        return _apply_select_k_best(p, X)
    if len(X) == 0:
        return np.array([], dtype=str)
    if m == "LogisticRegression":
        codes = _predict_logistic_regression(p, X)
    elif m == "DecisionTree":
        codes = _predict_decision_tree(model.aux, X)
    elif m == "GaussianNB":
        codes = _predict_gaussian_nb(p, X)
    else:
        codes = _predict_knn(p, X, int(model.spec.hyperparameters["k"]), len(model.classes))
    return np.asarray(model.classes)[codes]


def param_count(model: FittedModel) -> int:
    return model.param_count
