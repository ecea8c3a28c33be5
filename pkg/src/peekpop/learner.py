"""Logistic-regression training and the evaluation protocols built on it.

The two estimators follow the scikit-learn API (``fit``/``transform``/
``predict``, ``get_params``), so they can be cloned, grid-searched or put in
a :class:`sklearn.pipeline.Pipeline`. Training itself is plain full-batch
gradient descent with step halving, started from zero weights, which keeps
every run bit-for-bit reproducible.
"""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import NON_TEMPORAL, FeatureMatrix, FeatureSchema

_TINY = np.finfo(float).tiny


class TrainingError(RuntimeError):
    pass


class Standardizer(TransformerMixin, BaseEstimator):
    """Z-score columns with statistics from the rows passed to ``fit``.

    NaN cells are ignored when fitting and mapped to 0 (the training mean)
    by ``transform``. Columns with zero variance are flagged in
    ``constant_`` and always map to 0.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_all_finite="allow-nan", dtype=float)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a standardizer on zero rows")
        present = ~np.isnan(X)
        counts = present.sum(axis=0)
        filled = np.where(present, X, 0.0)
        safe = np.maximum(counts, 1)
        self.mean_ = filled.sum(axis=0) / safe
        dev = np.where(present, X - self.mean_, 0.0)
        self.scale_ = np.sqrt((dev ** 2).sum(axis=0) / safe)
        self.constant_ = (counts == 0) | (self.scale_ == 0)
        self.scale_[self.constant_] = 1.0
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, ensure_all_finite="allow-nan", dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        Z = (X - self.mean_) / self.scale_
        Z[:, self.constant_] = 0.0
        Z[np.isnan(Z)] = 0.0
        return Z


def fit_standardizer(X, rows=None):
    X = np.asarray(X, dtype=float)
    return Standardizer().fit(X if rows is None else X[rows])


def apply_standardizer(params, X):
    return params.transform(X)


def logistic_loss_grad(w, b, X, y, l2):
    """Mean negative log-likelihood plus ``l2/2 * |w|^2`` and its gradient."""
    z = X @ w + b
    # one exp serves both log(1 + e^z) and the sigmoid
    e = np.exp(-np.abs(z))
    pos = z >= 0
    loss = float(np.mean(np.maximum(z, 0.0) + np.log1p(e) - y * z) + 0.5 * l2 * (w @ w))
    p = np.where(pos, 1.0, e) / (1.0 + e)
    r = (p - y) / len(y)
    return loss, X.T @ r + l2 * w, float(r.sum())


class LogisticRegressionGD(ClassifierMixin, BaseEstimator):
    """L2-regularized logistic regression fit by full-batch gradient descent.

    A step that would raise the loss is retried at half the learning rate,
    and the smaller rate is kept from then on. Training stops once the
    gradient norm falls below ``tol`` or after ``max_epochs``.

    With ``standardize=True`` the features are z-scored on the training rows
    first; the fitted :class:`Standardizer` is kept in ``standardizer_``.

    Probabilities at exactly 0.5 are classified as 1.
    """

    def __init__(self, learning_rate=0.1, l2=1e-4, max_epochs=5000, tol=1e-6, standardize=True):
        self.learning_rate = learning_rate
        self.l2 = l2
        self.max_epochs = max_epochs
        self.tol = tol
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_all_finite="allow-nan", dtype=float)
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        self.classes_ = np.array([0, 1])
        if self.standardize:
            self.standardizer_ = Standardizer().fit(X)
            X = self.standardizer_.transform(X)
        else:
            self.standardizer_ = None
            X = np.nan_to_num(X, nan=0.0)
        y = y.astype(float)
        X = np.asfortranarray(X)
        w = np.zeros(X.shape[1])
        b = 0.0
        lr = self.learning_rate
        loss, gw, gb = logistic_loss_grad(w, b, X, y, self.l2)
        history = [loss]
        converged = False
        epoch = 0
        for epoch in range(1, self.max_epochs + 1):
            if math.sqrt(gw @ gw + gb * gb) < self.tol:
                converged = True
                epoch -= 1
                break
            while True:
                w_new, b_new = w - lr * gw, b - lr * gb
                new_loss, new_gw, new_gb = logistic_loss_grad(w_new, b_new, X, y, self.l2)
                if not math.isfinite(new_loss):
                    raise TrainingError(f"diverged: non-finite loss at epoch {epoch}")
                if new_loss <= loss:
                    break
                lr *= 0.5
                if lr < 1e-12:
                    break
            if new_loss > loss:
                break
            w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
            history.append(loss)
        else:
            converged = math.sqrt(gw @ gw + gb * gb) < self.tol
        self.coef_ = w
        self.intercept_ = b
        self.loss_history_ = history
        self.n_iter_ = epoch
        self.converged_ = converged
        self.n_features_in_ = X.shape[1]
        return self

    def _prepare(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_all_finite="allow-nan", dtype=float)
        if self.standardizer_ is not None:
            return self.standardizer_.transform(X)
        return np.nan_to_num(X, nan=0.0)

    def decision_function(self, X):
        return self._prepare(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = np.clip(expit(self.decision_function(X)), _TINY, 1.0 - np.finfo(float).epsneg)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.0).astype(np.int64)


# ---------------------------------------------------------------------------
# Model persistence
# ---------------------------------------------------------------------------


def model_to_dict(model, feature_names):
    st = model.standardizer_
    return {
        "schema": list(feature_names),
        "weights": model.coef_.tolist(),
        "bias": model.intercept_,
        "standardization": None if st is None else {
            "mean": st.mean_.tolist(),
            "scale": st.scale_.tolist(),
            "constant": st.constant_.tolist(),
        },
        "hyperparams": model.get_params(),
        "converged": bool(model.converged_),
        "epochs": int(model.n_iter_),
    }


def model_from_dict(d):
    model = LogisticRegressionGD(**d["hyperparams"])
    model.classes_ = np.array([0, 1])
    model.coef_ = np.array(d["weights"], dtype=float)
    model.intercept_ = float(d["bias"])
    model.n_features_in_ = len(model.coef_)
    model.converged_ = d.get("converged", False)
    model.n_iter_ = d.get("epochs", 0)
    model.loss_history_ = []
    st = d["standardization"]
    if st is None:
        model.standardizer_ = None
    else:
        s = Standardizer()
        s.mean_ = np.array(st["mean"], dtype=float)
        s.scale_ = np.array(st["scale"], dtype=float)
        s.constant_ = np.array(st["constant"], dtype=bool)
        s.n_features_in_ = len(s.mean_)
        model.standardizer_ = s
    return model, tuple(d["schema"])


def save_model(model, feature_names, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, feature_names), fh, indent=2)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    accuracy: float
    fold_accuracies: list = field(default_factory=list)
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0
    features: list = field(default_factory=list)

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self):
        return asdict(self)


def _confusion(y_true, y_pred):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    return (int(((y_true == 1) & (y_pred == 1)).sum()), int(((y_true == 0) & (y_pred == 0)).sum()),
            int(((y_true == 0) & (y_pred == 1)).sum()), int(((y_true == 1) & (y_pred == 0)).sum()))


def evaluate(model, X, y, features=()):
    tp, tn, fp, fn = _confusion(y, model.predict(X))
    total = tp + tn + fp + fn
    return EvalReport((tp + tn) / total, [], tp, tn, fp, fn, list(features))


def fold_indices(n, folds=5, seed=0):
    """Seeded shuffle split into ``folds`` contiguous test blocks."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > n:
        raise ValueError(f"{folds} folds requested for only {n} rows")
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, folds)


def _as_xy(data, y):
    if isinstance(data, FeatureMatrix):
        return data.X, data.y, list(data.schema.names)
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(y), [f"x{i}" for i in range(X.shape[1])]


def cross_validate(data, y=None, folds=5, seed=0, estimator=None, threads=1):
    """K-fold accuracy; ``accuracy`` pools the confusion counts over all folds.

    ``data`` is a :class:`FeatureMatrix` or an array paired with ``y``.
    """
    X, y, names = _as_xy(data, y)
    estimator = LogisticRegressionGD() if estimator is None else estimator
    splits = fold_indices(len(y), folds, seed)

    def run(test):
        train = np.ones(len(y), dtype=bool)
        train[test] = False
        model = clone(estimator).fit(X[train], y[train])
        return _confusion(y[test], model.predict(X[test]))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, splits))
    else:
        results = [run(s) for s in splits]
    per_fold = [(tp + tn) / (tp + tn + fp + fn) for tp, tn, fp, fn in results]
    tp, tn, fp, fn = (int(sum(r[i] for r in results)) for i in range(4))
    return EvalReport((tp + tn) / len(y), per_fold, tp, tn, fp, fn, names)


ALL = "all"
ALL_MINUS_TEMPORAL = "all-temporal"
TEMPORAL_AND_DAILY = "temporal+daily"


def feature_sets(schema, categories=None):
    """Named column groups for an ablation run, in report order."""
    present = schema.present_categories()
    if categories is None:
        categories = present
    categories = list(dict.fromkeys(categories))
    missing = [c for c in categories if c not in present]
    if missing:
        raise ValueError(f"unknown or absent feature categories: {missing}")
    sets = {c: schema.columns([c]) for c in categories}
    sets[ALL] = list(range(len(schema)))
    sets[ALL_MINUS_TEMPORAL] = schema.columns(NON_TEMPORAL)
    if "daily" in present:
        sets[TEMPORAL_AND_DAILY] = schema.columns(["temporal", "daily"])
    return sets


def _subset(fm, cols):
    schema = FeatureSchema(tuple(fm.schema.names[i] for i in cols),
                           tuple(fm.schema.categories[i] for i in cols))
    return FeatureMatrix(fm.X[:, cols], fm.y, schema, fm.items, fm.age_proxy)


def ablation(fm, categories=None, folds=5, seed=0, estimator=None, threads=1):
    """Cross-validated accuracy per feature category plus the aggregate sets."""
    return {name: cross_validate(_subset(fm, cols), folds=folds, seed=seed,
                                 estimator=estimator, threads=threads)
            for name, cols in feature_sets(fm.schema, categories).items()}


@dataclass
class FeatureScan:
    feature: str
    category: str
    accuracy: float
    coef: float
    sign: int


def single_feature_scan(fm, folds=5, seed=0, estimator=None, threads=1):
    """CV accuracy of each feature alone, and its coefficient sign on the full cohort."""
    estimator = LogisticRegressionGD() if estimator is None else estimator
    out = []
    for i, (name, cat) in enumerate(zip(fm.schema.names, fm.schema.categories)):
        sub = _subset(fm, [i])
        rep = cross_validate(sub, folds=folds, seed=seed, estimator=estimator, threads=threads)
        coef = float(clone(estimator).fit(sub.X, sub.y).coef_[0])
        out.append(FeatureScan(name, cat, rep.accuracy, coef, int(np.sign(coef))))
    return out


def sign_table(scans):
    """Per-feature coefficient signs across datasets; ``flips`` marks disagreement.

    ``scans`` maps dataset name to the output of :func:`single_feature_scan`.
    """
    names = list(scans)
    features = [s.feature for s in scans[names[0]]]
    for n in names[1:]:
        if [s.feature for s in scans[n]] != features:
            raise ValueError("datasets were scanned with different schemas")
    rows = []
    for j, feat in enumerate(features):
        signs = {n: scans[n][j].sign for n in names}
        nonzero = {s for s in signs.values() if s != 0}
        rows.append({"feature": feat, "category": scans[names[0]][j].category,
                     "signs": signs, "flips": len(nonzero) > 1})
    return rows


@dataclass
class TransferResult:
    names: list
    accuracy: np.ndarray  # rows: test dataset, columns: training dataset
    features: list

    def to_dict(self):
        return {"test_rows": self.names, "train_columns": self.names,
                "features": self.features, "accuracy": self.accuracy.tolist()}


def transfer_matrix(datasets, categories=None, folds=5, seed=0, estimator=None, threads=1):
    """Train on each dataset, test on every dataset.

    Off-diagonal cells fit on the whole training dataset and score the whole
    test dataset; diagonal cells are within-dataset cross-validation.
    """
    names = list(datasets)
    if not names:
        raise ValueError("no datasets given")
    first = datasets[names[0]].schema
    for n in names[1:]:
        if datasets[n].schema.names != first.names:
            raise ValueError(f"schema mismatch between {names[0]!r} and {n!r}")
    cols = list(range(len(first))) if categories is None else first.columns(categories)
    if not cols:
        raise ValueError(f"no columns for categories {categories}")
    subs = {n: _subset(datasets[n], cols) for n in names}
    estimator = LogisticRegressionGD() if estimator is None else estimator
    models = {n: clone(estimator).fit(subs[n].X, subs[n].y) for n in names}
    acc = np.empty((len(names), len(names)))
    for i, test in enumerate(names):
        for j, train in enumerate(names):
            if i == j:
                acc[i, j] = cross_validate(subs[test], folds=folds, seed=seed,
                                           estimator=estimator, threads=threads).accuracy
            else:
                acc[i, j] = evaluate(models[train], subs[test].X, subs[test].y).accuracy
    return TransferResult(names, acc, list(subs[names[0]].schema.names))
