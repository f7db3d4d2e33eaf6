"""Shallow baselines: inverse-distance-weighted kNN and one-vs-all linear SVM."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Standardizer",
    "LabeledFeatureSet",
    "knn_classify",
    "knn_predict",
    "LinearSVM",
    "linear_svm_train",
    "linear_svm_classify",
    "cross_validate",
    "grid_search",
    "KNN_GRID",
    "SVM_LAMBDA_GRID",
]

KNN_DELTA = 1e-12
KNN_GRID = (1, 3, 5, 7, 9)
SVM_LAMBDA_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


@dataclass
class Standardizer:
    """Per-dimension mean removal, optionally followed by division by the standard deviation."""

    scale: bool = True
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0) if self.scale else np.ones(X.shape[1])
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass
class LabeledFeatureSet:
    vectors: np.ndarray
    labels: np.ndarray
    standardizer: Standardizer = field(default_factory=Standardizer)

    @classmethod
    def fit(cls, X, y, scale: bool = True) -> "LabeledFeatureSet":
        st = Standardizer(scale).fit(X)
        return cls(st.transform(X), np.asarray(y, dtype=int), st)

    def transform(self, X) -> np.ndarray:
        return self.standardizer.transform(X)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)


def _pairwise_sq(A, B):
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def knn_predict(train: LabeledFeatureSet, queries: np.ndarray, k: int) -> np.ndarray:
    """Classify already-standardized ``queries`` by inverse-distance-weighted vote."""
    n = len(train.labels)
    if n == 0:
        raise ValueError("training set is empty")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    queries = np.atleast_2d(queries)
    n_classes = int(train.labels.max()) + 1
    out = np.empty(len(queries), dtype=int)
    for s in range(0, len(queries), 512):
        Q = queries[s:s + 512]
        d = np.sqrt(_pairwise_sq(Q, train.vectors))
        # equal distances are ordered by label, so the training order never matters
        nearest = np.lexsort((np.broadcast_to(train.labels, d.shape), d), axis=1)[:, :k]
        w = 1.0 / (np.take_along_axis(d, nearest, axis=1) + KNN_DELTA)
        votes = np.zeros((len(Q), n_classes))
        np.add.at(votes, (np.arange(len(Q))[:, None], train.labels[nearest]), w)
        out[s:s + 512] = np.argmax(votes, axis=1)  # first maximum = smallest class id
    return out


def knn_classify(train: LabeledFeatureSet, query: np.ndarray, k: int) -> int:
    return int(knn_predict(train, np.asarray(query, dtype=np.float64)[None], k)[0])


@dataclass
class LinearSVM:
    weights: np.ndarray  # (classes, d + 1); last column is the bias
    classes: np.ndarray
    reg: float
    objective_history: list[list[float]] = field(default_factory=list)

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return X @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision(X), axis=1)]


def svm_objective(w: np.ndarray, Xb: np.ndarray, y: np.ndarray, reg: float) -> float:
    """reg/2 * ||w||^2 + mean hinge loss; ``Xb`` carries a trailing ones column."""
    margins = y * (Xb @ w)
    return float(0.5 * reg * w @ w + np.mean(np.maximum(0.0, 1.0 - margins)))


def _train_binary(Xb, y, reg, epochs, rng, batch):
    """Pegasos-style minibatch subgradient descent with iterate averaging.

    The returned vector is the best averaged iterate seen at any epoch end, so the
    recorded objective never increases.
    """
    n, d = Xb.shape
    w = np.zeros(d)
    avg = np.zeros(d)
    t = 0
    best = avg.copy()
    best_obj = svm_objective(best, Xb, y, reg)
    history = [best_obj]
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            t += 1
            eta = 1.0 / (reg * (t + 1))
            viol = idx[y[idx] * (Xb[idx] @ w) < 1.0]
            grad = reg * w - (y[viol, None] * Xb[viol]).sum(axis=0) / len(idx)
            w = w - eta * grad
            norm = np.linalg.norm(w)
            if norm > 1.0 / np.sqrt(reg):
                w *= 1.0 / (np.sqrt(reg) * norm)
            avg += (w - avg) / t
        obj = svm_objective(avg, Xb, y, reg)
        if obj <= best_obj:
            best, best_obj = avg.copy(), obj
        history.append(best_obj)
    return best, history


def linear_svm_train(train: LabeledFeatureSet, reg: float = 1e-3, epochs: int = 20,
                     seed: int = 0, batch: int = 32) -> LinearSVM:
    """One-vs-all linear SVMs on hinge loss with L2 regularization."""
    classes = train.classes
    if len(classes) < 2:
        raise ValueError("a linear SVM needs at least two classes")
    if reg <= 0:
        raise ValueError("regularization must be positive")
    Xb = np.hstack([train.vectors, np.ones((len(train.labels), 1))])
    rng = np.random.default_rng(seed)
    weights, history = [], []
    for c in classes:
        y = np.where(train.labels == c, 1.0, -1.0)
        w, h = _train_binary(Xb, y, reg, epochs, rng, batch)
        weights.append(w)
        history.append(h)
    return LinearSVM(np.stack(weights), classes, reg, history)


def linear_svm_classify(model: LinearSVM, query: np.ndarray) -> int:
    return int(model.predict(np.asarray(query, dtype=np.float64)[None])[0])


def _folds(n, k, rng):
    order = rng.permutation(n)
    return [order[i::k] for i in range(k)]


def cross_validate(X, y, kind: str, param, folds: int = 5, seed: int = 0, scale: bool = True) -> float:
    """Mean held-out accuracy; standardization is refit on each training fold."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    scores = []
    for held in _folds(len(y), folds, rng):
        mask = np.ones(len(y), dtype=bool)
        mask[held] = False
        fs = LabeledFeatureSet.fit(X[mask], y[mask], scale)
        Q = fs.transform(X[held])
        if kind == "knn":
            pred = knn_predict(fs, Q, param)
        elif kind == "svm":
            pred = linear_svm_train(fs, param, seed=seed).predict(Q)
        else:
            raise ValueError(f"unknown classifier {kind!r}")
        scores.append(np.mean(pred == y[held]))
    return float(np.mean(scores))


def grid_search(X, y, kind: str, grid: Sequence | None = None, folds: int = 5,
                seed: int = 0) -> tuple[object, dict]:
    """Best hyperparameter by cross-validated accuracy (first one wins ties)."""
    grid = grid if grid is not None else (KNN_GRID if kind == "knn" else SVM_LAMBDA_GRID)
    scores = {p: cross_validate(X, y, kind, p, folds, seed) for p in grid}
    best = max(grid, key=lambda p: scores[p])
    return best, scores
