"""Built-in learners, task metrics, cross-validated evaluation, and
impurity-based feature importance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Task, kfold_indices


class LearnError(ValueError):
    pass


@dataclass
class LearnerSpec:
    kind: str = "random_forest"  # decision_tree | random_forest | linear | logistic
    max_depth: int = 6
    n_trees: int = 50
    feature_subsample: Optional[float] = None  # None -> sqrt(p)/p
    ridge_lambda: float = 1e-6
    logistic_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1 or self.n_trees < 1 or self.logistic_iters < 1:
            raise LearnError("hyperparameters must be positive")
        if self.ridge_lambda <= 0:
            raise LearnError("ridge lambda must be positive")

    def check_task(self, task: Task):
        if self.kind == "linear" and task != Task.REGRESSION:
            raise LearnError("linear learner requires a regression task")
        if self.kind == "logistic" and task != Task.CLASSIFICATION:
            raise LearnError("logistic learner requires a classification task")


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class Model:
    kind: str
    task: Task
    n_features: int
    trees: list = field(default_factory=list)
    coef: Optional[np.ndarray] = None            # linear / per-class logistic
    scaler: Optional[tuple] = None               # logistic (mean, std)
    classes: Optional[np.ndarray] = None         # encoded labels, sorted
    importances: Optional[np.ndarray] = None


def _impurity(y: np.ndarray, n_classes: int, task: Task) -> float:
    if task == Task.CLASSIFICATION:
        counts = np.bincount(y.astype(np.int64), minlength=n_classes)
        p = counts / len(y)
        return float(1.0 - np.sum(p * p))
    return float(np.var(y))


def _best_split(X, y, feat_idx, n_classes, task):
    """Best axis-aligned split over the given features.

    Returns (feature, threshold, weighted child impurity) or None. Ties break
    toward the lowest feature index, then the lowest threshold position.
    """
    n = len(y)
    best = None
    for j in feat_idx:
        x = X[:, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        ys = y[order]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        nl = np.arange(1, n, dtype=float)
        nr = n - nl
        if task == Task.CLASSIFICATION:
            onehot = ys[:, None] == np.arange(n_classes)[None, :]
            pref = np.cumsum(onehot, axis=0)[:-1].astype(float)
            right = pref[-1] + onehot[-1] - pref
            gini_l = 1.0 - np.sum((pref / nl[:, None]) ** 2, axis=1)
            gini_r = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
            score = (nl * gini_l + nr * gini_r) / n
        else:
            s1 = np.cumsum(ys)[:-1]
            s2 = np.cumsum(ys * ys)[:-1]
            t1, t2 = ys.sum(), (ys * ys).sum()
            var_l = s2 / nl - (s1 / nl) ** 2
            var_r = (t2 - s2) / nr - ((t1 - s1) / nr) ** 2
            score = (nl * np.maximum(var_l, 0) + nr * np.maximum(var_r, 0)) / n
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[2] - 1e-15:
            best = (j, float((xs[i] + xs[i + 1]) / 2.0), float(score[i]))
    return best


def _leaf_value(y, n_classes, task) -> float:
    if task == Task.CLASSIFICATION:
        counts = np.bincount(y.astype(np.int64), minlength=n_classes)
        return float(np.argmax(counts))  # argmax takes the lowest code on ties
    return float(np.mean(y))


def _fit_tree(X, y, task, n_classes, max_depth, rng, n_sub, importances, n_total):
    node = _TreeNode()
    imp = _impurity(y, n_classes, task)
    if len(y) < 2 or max_depth == 0 or imp <= 1e-15:
        node.value = _leaf_value(y, n_classes, task)
        return node
    p = X.shape[1]
    if n_sub is not None and n_sub < p:
        feat_idx = np.sort(rng.choice(p, size=n_sub, replace=False))
    else:
        feat_idx = np.arange(p)
    best = _best_split(X, y, feat_idx, n_classes, task)
    if best is None or best[2] >= imp - 1e-15:
        node.value = _leaf_value(y, n_classes, task)
        return node
    j, thr, child_imp = best
    importances[j] += (len(y) / n_total) * (imp - child_imp)
    mask = X[:, j] <= thr
    node.feature = j
    node.threshold = thr
    node.left = _fit_tree(X[mask], y[mask], task, n_classes, max_depth - 1, rng,
                          n_sub, importances, n_total)
    node.right = _fit_tree(X[~mask], y[~mask], task, n_classes, max_depth - 1, rng,
                           n_sub, importances, n_total)
    return node


def _tree_predict(node, X, out, idx):
    if node.is_leaf:
        out[idx] = node.value
        return
    mask = X[idx, node.feature] <= node.threshold
    _tree_predict(node.left, X, out, idx[mask])
    _tree_predict(node.right, X, out, idx[~mask])


def train(spec: LearnerSpec, X: np.ndarray, y: np.ndarray, task: Task) -> Model:
    """Fit a learner; X is a fully numeric, imputed matrix, y is encoded
    (class codes for classification). Deterministic for a fixed seed."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise LearnError("empty training matrix")
    if X.shape[0] != len(y):
        raise LearnError("X rows must match y length")
    spec.check_task(task)
    n, p = X.shape
    classes = None
    n_classes = 0
    if task == Task.CLASSIFICATION:
        classes = np.unique(y.astype(np.int64))
        n_classes = int(classes.max()) + 1 if len(classes) else 0

    if spec.kind == "decision_tree":
        importances = np.zeros(p)
        root = _fit_tree(X, y, task, n_classes, spec.max_depth,
                         np.random.default_rng(spec.seed), None, importances, n)
        return Model("decision_tree", task, p, trees=[root], classes=classes,
                     importances=importances)

    if spec.kind == "random_forest":
        frac = spec.feature_subsample
        n_sub = max(1, int(round(frac * p))) if frac is not None else max(1, int(math.isqrt(p)))
        importances = np.zeros(p)
        trees = []
        seeds = np.random.SeedSequence(spec.seed).spawn(spec.n_trees)
        for ss in seeds:
            rng = np.random.default_rng(ss)
            boot = rng.integers(0, n, size=n)
            trees.append(_fit_tree(X[boot], y[boot], task, n_classes, spec.max_depth,
                                   rng, n_sub, importances, n))
        return Model("random_forest", task, p, trees=trees, classes=classes,
                     importances=importances)

    if spec.kind == "linear":
        A = np.hstack([X, np.ones((n, 1))])
        reg = spec.ridge_lambda * np.eye(p + 1)
        reg[p, p] = 0.0  # leave the intercept unregularized
        coef = np.linalg.solve(A.T @ A + reg, A.T @ y)
        return Model("linear", task, p, coef=coef)

    if spec.kind == "logistic":
        if len(classes) < 2:
            raise LearnError("logistic requires at least two classes in y")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        Z = np.hstack([(X - mean) / std, np.ones((n, 1))])
        coefs = []
        for c in classes:
            t = (y == c).astype(float)
            w = np.zeros(p + 1)
            for _ in range(spec.logistic_iters):
                prob = 1.0 / (1.0 + np.exp(-(Z @ w)))
                grad = Z.T @ (t - prob) / n - spec.ridge_lambda * w
                w = w + 0.5 * grad
            coefs.append(w)
        return Model("logistic", task, p, coef=np.array(coefs), classes=classes,
                     scaler=(mean, std))

    raise LearnError(f"unknown learner {spec.kind!r}")


def predict(model: Model, X: np.ndarray) -> np.ndarray:
    """Class codes for classification, real values for regression."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise LearnError("prediction matrix does not match the training schema")
    n = X.shape[0]
    if model.kind in ("decision_tree", "random_forest"):
        preds = np.zeros((len(model.trees), n))
        for t, root in enumerate(model.trees):
            _tree_predict(root, X, preds[t], np.arange(n))
        if model.task == Task.REGRESSION:
            return preds.mean(axis=0)
        votes = preds.astype(np.int64)
        n_classes = int(model.classes.max()) + 1
        out = np.zeros(n)
        for i in range(n):
            out[i] = np.argmax(np.bincount(votes[:, i], minlength=n_classes))
        return out
    if model.kind == "linear":
        return np.hstack([X, np.ones((n, 1))]) @ model.coef
    if model.kind == "logistic":
        mean, std = model.scaler
        Z = np.hstack([(X - mean) / std, np.ones((n, 1))])
        scores = Z @ model.coef.T  # monotone in probability
        # ties (e.g. an all-zero model scores 0.5 everywhere) go to the class
        # with the lower encoded index, which argmax already guarantees
        return model.classes[np.argmax(scores, axis=1)].astype(float)
    raise LearnError(f"unknown model {model.kind!r}")


def metric_f1(y_true, y_pred, positive=None) -> float:
    """Binary F1 on the positive class for two-class problems (default: the
    lexicographically last label), macro-averaged F1 otherwise."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise LearnError("length mismatch")
    labels = sorted(set(y_true.tolist()), key=str)
    if len(labels) <= 2:
        pos = positive if positive is not None else labels[-1]
        return _binary_f1(y_true, y_pred, pos)
    return float(np.mean([_binary_f1(y_true, y_pred, lab) for lab in labels]))


def _binary_f1(y_true, y_pred, positive) -> float:
    tp = int(np.sum((y_pred == positive) & (y_true == positive)))
    fp = int(np.sum((y_pred == positive) & (y_true != positive)))
    fn = int(np.sum((y_pred != positive) & (y_true == positive)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def metric_one_minus_rae(y_true, y_pred) -> float:
    """1 - (sum |err|) / (sum |deviation from the mean|)."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if len(y_true) != len(y_pred):
        raise LearnError("length mismatch")
    denom = np.abs(y_true - y_true.mean()).sum()
    if denom == 0:
        raise LearnError("constant target: relative absolute error undefined")
    return float(1.0 - np.abs(y_pred - y_true).sum() / denom)


def _impute_columns(train_X, other_X):
    """Median-impute both matrices using training-fold medians."""
    med = np.zeros(train_X.shape[1])
    for j in range(train_X.shape[1]):
        col = train_X[:, j]
        finite = col[~np.isnan(col)]
        med[j] = np.median(finite) if len(finite) else 0.0
    out = []
    for M in (train_X, other_X):
        M = M.copy()
        nanmask = np.isnan(M)
        M[nanmask] = np.take(med, np.nonzero(nanmask)[1])
        out.append(M)
    return out


def encode_labels(y):
    """Map raw labels to integer codes in sorted label order."""
    labels = sorted(set(np.asarray(y).tolist()), key=str)
    code = {lab: i for i, lab in enumerate(labels)}
    return np.array([code[v] for v in np.asarray(y).tolist()], dtype=float), labels


def evaluate_cv(spec: LearnerSpec, X: np.ndarray, y, task: Task, k: int,
                seed: int, positive=None) -> float:
    """Mean k-fold score: F1 for classification, 1-rae for regression.

    Missing cells are median-imputed per training fold; degenerate folds
    (constant target) contribute 0.
    """
    X = np.asarray(X, dtype=float)
    if task == Task.CLASSIFICATION:
        y_codes, labels = encode_labels(y)
        pos_code = labels.index(positive) if positive is not None else len(labels) - 1
        folds = kfold_indices(len(y_codes), k, seed, labels=y_codes)
    else:
        y_codes = np.asarray(y, dtype=float)
        folds = kfold_indices(len(y_codes), k, seed)
    scores = []
    for train_idx, valid_idx in folds:
        Xtr, Xva = _impute_columns(X[train_idx], X[valid_idx])
        ytr, yva = y_codes[train_idx], y_codes[valid_idx]
        if task == Task.CLASSIFICATION:
            if len(np.unique(ytr)) < 2:
                pred = np.full(len(yva), ytr[0])
            else:
                pred = predict(train(spec, Xtr, ytr, task), Xva)
            scores.append(metric_f1(yva, pred, positive=float(pos_code)))
        else:
            if np.abs(yva - yva.mean()).sum() == 0:
                scores.append(0.0)
                continue
            pred = predict(train(spec, Xtr, ytr, task), Xva)
            scores.append(metric_one_minus_rae(yva, pred))
    return float(np.mean(scores))


def feature_importance(model: Model) -> np.ndarray:
    """Normalized mean-decrease-in-impurity importances of a forest."""
    if model.kind != "random_forest":
        raise LearnError("feature importance requires a random forest model")
    imp = model.importances.copy()
    total = imp.sum()
    if total <= 0:
        return np.full(len(imp), 1.0 / len(imp))
    return imp / total
