"""CART classifiers, second-order boosted ensembles, metrics and grid search."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data_io import Dataset
from .model import ADDITIVE, CLASSIFIER, Ensemble, Node, Tree, predict

logger = logging.getLogger(__name__)

DEFAULT_DEPTHS = (3, 4, 5)
DEFAULT_MIN_SAMPLES = (2, 10, 20, 50)

# relative slack when comparing floating split scores for ties
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class TrainParams:
    max_depth: int = 3
    min_samples_split: int = 2
    n_rounds: int = 20
    learning_rate: float = 0.3
    l2_reg: float = 1.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")


def _candidate_splits(X: np.ndarray):
    """Yield ``(feature, threshold, order, cut)`` for every midpoint split.

    ``order`` sorts the rows by the feature and ``cut`` is the number of rows
    that go left. Features ascend, thresholds ascend within a feature.
    """
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cuts = np.flatnonzero(xs[1:] != xs[:-1]) + 1
        if cuts.size:
            yield f, (xs[cuts - 1] + xs[cuts]) / 2.0, order, cuts


def _best(scores: list[tuple[float, int, float]]) -> tuple[float, int, float] | None:
    """Highest score; ties go to the lowest feature, then lowest threshold."""
    if not scores:
        return None
    top = max(s for s, _, _ in scores)
    tol = _TIE_TOL * max(1.0, abs(top))
    return min((t for t in scores if t[0] >= top - tol), key=lambda t: (t[1], t[2]))


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []

    def reserve(self) -> int:
        self.nodes.append(None)
        return len(self.nodes) - 1

    def set(self, node: Node) -> None:
        self.nodes[node.node_id] = node


def _gini_split(X: np.ndarray, y: np.ndarray, n_classes: int):
    n = len(y)
    onehot = np.eye(n_classes)[y]
    parent = 1.0 - np.sum((np.bincount(y, minlength=n_classes) / n) ** 2)
    scores = []
    for f, thresholds, order, cuts in _candidate_splits(X):
        cum = np.cumsum(onehot[order], axis=0)
        left = cum[cuts - 1]
        right = cum[-1] - left
        nl = cuts.astype(float)
        nr = n - nl
        gini_l = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
        gain = parent - (nl * gini_l + nr * gini_r) / n
        scores += [(float(g), f, float(t)) for g, t in zip(gain, thresholds)]
    best = _best(scores)
    if best is None or best[0] <= _TIE_TOL:
        return None
    return best


def train_cart(train: Dataset, params: TrainParams) -> Tree:
    """Greedy Gini tree.

    A node is a leaf at ``max_depth``, below ``min_samples_split`` samples, when
    pure, or when no split has positive gain. Leaves take the majority class;
    ties go to the smallest class id.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    X, y = train.to_arrays()
    if y.min() < 0:
        raise ValueError("class ids must be non-negative")
    n_classes = int(y.max()) + 1
    b = _Builder()

    def grow(idx: np.ndarray, depth: int) -> int:
        nid = b.reserve()
        counts = np.bincount(y[idx], minlength=n_classes)
        label = int(np.argmax(counts))
        split = None
        if depth < params.max_depth and len(idx) >= params.min_samples_split and counts.max() < len(idx):
            split = _gini_split(X[idx], y[idx], n_classes)
        if split is None:
            b.set(Node(nid, label=label))
            return nid
        _, f, thr = split
        go_left = X[idx, f] <= thr
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        b.set(Node(nid, f, thr, left, right))
        return nid

    grow(np.arange(len(y)), 0)
    return Tree(b.nodes, root=0, mode=CLASSIFIER)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _fit_regression_tree(X, grad, hess, params: TrainParams) -> Tree:
    lam = params.l2_reg
    b = _Builder()

    def leaf_weight(G: float, H: float) -> float:
        denom = H + lam
        return 0.0 if denom == 0 else -G / denom * params.learning_rate

    def grow(idx: np.ndarray, depth: int) -> int:
        nid = b.reserve()
        G, H = float(grad[idx].sum()), float(hess[idx].sum())
        split = None
        if depth < params.max_depth and len(idx) >= params.min_samples_split:
            parent = G * G / (H + lam) if H + lam > 0 else 0.0
            scores = []
            for f, thresholds, order, cuts in _candidate_splits(X[idx]):
                cg = np.cumsum(grad[idx][order])
                ch = np.cumsum(hess[idx][order])
                gl, hl = cg[cuts - 1], ch[cuts - 1]
                gr, hr = G - gl, H - hl
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = 0.5 * (
                        np.where(hl + lam > 0, gl**2 / (hl + lam), 0.0)
                        + np.where(hr + lam > 0, gr**2 / (hr + lam), 0.0)
                        - parent
                    )
                scores += [(float(g), f, float(t)) for g, t in zip(gain, thresholds)]
            best = _best(scores)
            if best is not None and best[0] > _TIE_TOL * max(1.0, abs(parent)):
                split = best
        if split is None:
            b.set(Node(nid, value=leaf_weight(G, H)))
            return nid
        _, f, thr = split
        go_left = X[idx, f] <= thr
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        b.set(Node(nid, f, thr, left, right))
        return nid

    grow(np.arange(X.shape[0]), 0)
    return Tree(b.nodes, root=0, mode=ADDITIVE)


def train_boosted(train: Dataset, params: TrainParams) -> Ensemble:
    """Logistic-loss boosting with Newton leaf weights ``-G / (H + lambda)``.

    The raw score starts at 0, so label 1 iff the summed leaf values are >= 0.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    X, y = train.to_arrays()
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("boosting needs binary 0/1 labels")
    raw = np.zeros(len(y))
    trees = []
    for _ in range(params.n_rounds):
        p = _sigmoid(raw)
        grad = p - y
        hess = p * (1.0 - p)
        tree = _fit_regression_tree(X, grad, hess, params)
        trees.append(tree)
        raw += np.array([tree.nodes[tree.traverse(row)].value for row in X])
    return Ensemble(tuple(trees), n_features=train.n_features, base_score=0.0, mode=ADDITIVE)


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall, 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def confusion(y_true: Sequence[int], y_pred: Sequence[int]) -> Metrics:
    y_true = np.asarray(y_true) == 1
    y_pred = np.asarray(y_pred) == 1
    return Metrics(
        tp=int(np.sum(y_true & y_pred)),
        fp=int(np.sum(~y_true & y_pred)),
        fn=int(np.sum(y_true & ~y_pred)),
        tn=int(np.sum(~y_true & ~y_pred)),
    )


def evaluate(model: Tree | Ensemble, test: Dataset) -> Metrics:
    """Confusion-matrix metrics with class 1 as the positive (severe) class."""
    d = test.n_features
    preds = [predict(model, ex.dense(d))[0] for ex in test]
    return confusion([ex.label for ex in test], preds)


@dataclass
class GridResult:
    best_model: Tree | Ensemble
    best_params: TrainParams
    best_metrics: Metrics
    all_cells: dict[TrainParams, Metrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best": {
                "max_depth": self.best_params.max_depth,
                "min_samples_split": self.best_params.min_samples_split,
                "metrics": self.best_metrics.to_dict(),
            },
            "cells": [
                {"max_depth": p.max_depth, "min_samples_split": p.min_samples_split, "metrics": m.to_dict()}
                for p, m in self.all_cells.items()
            ],
        }


class GridCellError(RuntimeError):
    pass


def grid_search(
    train: Dataset,
    test: Dataset,
    depths: Sequence[int] = DEFAULT_DEPTHS,
    min_samples: Sequence[int] = DEFAULT_MIN_SAMPLES,
    *,
    boosted: bool = False,
    base_params: TrainParams | None = None,
) -> GridResult:
    """Train every (depth, min_samples_split) cell and keep the best test F1.

    Exact F1 ties go to the smaller depth, then the smaller min_samples_split.
    """
    if not depths or not min_samples:
        raise ValueError("grid axes must be nonempty")
    base = base_params or TrainParams()
    fit = train_boosted if boosted else train_cart
    cells: dict[TrainParams, Metrics] = {}
    models = {}
    for depth, mss in itertools.product(depths, min_samples):
        params = TrainParams(depth, mss, base.n_rounds, base.learning_rate, base.l2_reg)
        try:
            model = fit(train, params)
        except Exception as exc:
            raise GridCellError(f"cell max_depth={depth}, min_samples_split={mss}: {exc}") from exc
        cells[params] = evaluate(model, test)
        models[params] = model
        logger.debug("cell depth=%d mss=%d f1=%.4f", depth, mss, cells[params].f1)
    best = min(cells, key=lambda p: (-cells[p].f1, p.max_depth, p.min_samples_split))
    return GridResult(models[best], best, cells[best], cells)
