"""CART regression trees, bagged forests and residual boosting.

Trees split on raw feature values: greedy CART partitions are invariant to
per-column affine scaling, so no standardization step is applied here.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _treecore
from ._common import as_matrix, check_xy

UNBOUNDED_DEPTH = 10_000


class Criterion(str, Enum):
    SQUARED_ERROR = "squared_error"
    FRIEDMAN_MSE = "friedman_mse"
    ABSOLUTE_ERROR = "absolute_error"

    @property
    def code(self) -> int:
        return {
            Criterion.SQUARED_ERROR: _treecore.SQUARED_ERROR,
            Criterion.FRIEDMAN_MSE: _treecore.FRIEDMAN_MSE,
            Criterion.ABSOLUTE_ERROR: _treecore.ABSOLUTE_ERROR,
        }[self]


def presort(X: np.ndarray) -> np.ndarray:
    """Per-feature stable argsort, shape (n_features, n_rows)."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


@dataclass(frozen=True)
class TreeModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    improvement: np.ndarray
    depth: np.ndarray
    n_features: int
    criterion: Criterion = Criterion.SQUARED_ERROR

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def max_depth_reached(self) -> int:
        return int(self.depth.max()) if self.n_nodes else 0

    def predict(self, X):
        X, single = as_matrix(X, self.n_features)
        out = _treecore.predict_tree(np.ascontiguousarray(X), self.feature, self.threshold,
                                     self.left, self.right, self.value)
        return float(out[0]) if single else out

    def raw_importance(self) -> np.ndarray:
        imp = np.zeros(self.n_features)
        internal = self.feature >= 0
        np.add.at(imp, self.feature[internal], self.improvement[internal])
        return imp

    def feature_importances(self) -> np.ndarray:
        return _normalize(self.raw_importance())

    def truncated(self, max_depth: int, min_samples_split: float) -> "TreeModel":
        """The tree that growth under stricter depth/split limits produces.

        Greedy split choices do not depend on these two limits, so the
        stricter tree is a pruned copy of this one.
        """
        keep, feat, left, right = _treecore.truncate_tree(
            self.feature, self.left, self.right, self.weight, self.depth,
            int(max_depth), float(min_samples_split))
        thr = np.where(feat >= 0, self.threshold[keep], 0.0)
        imp = np.where(feat >= 0, self.improvement[keep], 0.0)
        return TreeModel(feature=feat, threshold=thr, left=left, right=right,
                         value=self.value[keep], weight=self.weight[keep], improvement=imp,
                         depth=self.depth[keep], n_features=self.n_features,
                         criterion=self.criterion)

    def to_dict(self) -> dict:
        return {
            "kind": "tree",
            "criterion": self.criterion.value,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "weight": self.weight.tolist(),
        }


def _normalize(imp: np.ndarray) -> np.ndarray:
    total = imp.sum()
    return imp / total if total > 0 else np.zeros_like(imp)


def _grow(X, y, w, order, allowed, max_depth, min_samples_split, min_samples_leaf,
          criterion: Criterion, min_gain=0.0) -> TreeModel:
    arrays = _treecore.grow_tree(X, y, w, order, allowed, int(max_depth),
                                 float(min_samples_split), float(min_samples_leaf),
                                 criterion.code, float(min_gain))
    return TreeModel(*arrays, n_features=X.shape[1], criterion=criterion)


def _depth_arg(max_depth):
    return UNBOUNDED_DEPTH if max_depth is None else int(max_depth)


def dt_fit(X, y, criterion=Criterion.SQUARED_ERROR, max_depth=None, min_samples_split=2,
           min_samples_leaf=1, sample_weight=None, order=None) -> TreeModel:
    """Grow one CART regression tree.

    Leaves predict the weighted mean (squared error, Friedman) or the
    weighted median (absolute error) of their samples. Ties between splits
    go to the lowest feature index, then the lowest threshold.
    """
    X, y = check_xy(X, y, min_rows=1)
    X = np.ascontiguousarray(X)
    w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if order is None:
        order = presort(X)
    allowed = np.ones(X.shape[1], dtype=np.bool_)
    return _grow(X, y, w, order, allowed, _depth_arg(max_depth), min_samples_split,
                 min_samples_leaf, Criterion(criterion))


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    seed: int
    bootstrap: bool = True

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, X):
        X, single = as_matrix(X, self.n_features)
        X = np.ascontiguousarray(X)
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += tree.predict(X)
        out /= len(self.trees)
        return float(out[0]) if single else out

    def tree_predictions(self, X) -> np.ndarray:
        X, _ = as_matrix(X, self.n_features)
        return np.stack([t.predict(X) for t in self.trees])

    def feature_importances(self) -> np.ndarray:
        return _normalize(sum(t.raw_importance() for t in self.trees))

    def subset(self, n_trees: int, max_depth: int, min_samples_split: float) -> "ForestModel":
        trees = tuple(t.truncated(max_depth, min_samples_split) for t in self.trees[:n_trees])
        return ForestModel(trees=trees, seed=self.seed, bootstrap=self.bootstrap)

    def to_dict(self) -> dict:
        return {"kind": "forest", "seed": self.seed, "bootstrap": self.bootstrap,
                "trees": [t.to_dict() for t in self.trees]}


def bootstrap_weights(n: int, seed: int, n_trees: int) -> np.ndarray:
    """Bootstrap multiplicities, one row per tree, drawn sequentially from one stream.

    Row ``t`` does not depend on ``n_trees``, so forests nest by prefix.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n_trees, n))
    for t in range(n_trees):
        out[t] = np.bincount(rng.integers(0, n, n), minlength=n)
    return out


def rf_fit(X, y, n_trees=100, max_depth=None, min_samples_split=2, min_samples_leaf=1,
           seed=0, bootstrap=True, criterion=Criterion.SQUARED_ERROR) -> ForestModel:
    """Average of CART trees, each grown on a same-size bootstrap resample.

    Every split considers all features. Resamples come from one seeded
    stream in tree order, so a smaller forest is a prefix of a larger one
    grown with the same seed.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X, y = check_xy(X, y, min_rows=1)
    X = np.ascontiguousarray(X)
    order = presort(X)
    allowed = np.ones(X.shape[1], dtype=np.bool_)
    n = X.shape[0]
    trees = []
    weights = bootstrap_weights(n, seed, n_trees) if bootstrap else np.ones((n_trees, n))
    for t in range(n_trees):
        w = weights[t]
        trees.append(_grow(X, y, w, order, allowed, _depth_arg(max_depth), min_samples_split,
                           min_samples_leaf, Criterion(criterion)))
    return ForestModel(trees=tuple(trees), seed=int(seed), bootstrap=bootstrap)


@dataclass(frozen=True)
class BoostedModel:
    """Additive tree model ``base + learning_rate * sum_t f_t(x)``."""

    base_score: float
    learning_rate: float
    trees: tuple
    train_loss: tuple = field(default=(), compare=False)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict(self, X, n_rounds=None):
        X, single = as_matrix(X, self.n_features)
        X = np.ascontiguousarray(X)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees[:n_rounds]:
            out += self.learning_rate * tree.predict(X)
        return float(out[0]) if single else out

    def feature_importances(self) -> np.ndarray:
        return _normalize(sum(t.raw_importance() for t in self.trees))

    def prefix(self, n_rounds: int) -> "BoostedModel":
        return BoostedModel(self.base_score, self.learning_rate, self.trees[:n_rounds],
                            self.train_loss[:n_rounds + 1])

    def to_dict(self) -> dict:
        return {"kind": "boosted", "base_score": self.base_score,
                "learning_rate": self.learning_rate,
                "trees": [t.to_dict() for t in self.trees]}


def gbdt_fit(X, y, n_rounds=100, learning_rate=0.1, max_depth=3, subsample=1.0,
             colsample=1.0, min_split_loss=0.0, seed=0) -> BoostedModel:
    """Squared-error gradient boosting with row/column subsampling.

    Each round fits a depth-limited tree to the current residuals on a
    Bernoulli row sample and a per-tree feature sample. A split is kept only
    when its loss reduction (half the drop in squared error) reaches
    ``min_split_loss``. Rounds draw their samples in order from one seeded
    stream, so fewer rounds give an exact prefix.
    """
    if n_rounds < 1 or not (0 < learning_rate <= 1) or not (0 < subsample <= 1) \
            or not (0 < colsample <= 1) or min_split_loss < 0:
        raise ValueError("invalid boosting hyperparameters")
    X, y = check_xy(X, y, min_rows=1)
    X = np.ascontiguousarray(X)
    n, p = X.shape
    order = presort(X)
    base = float(y.mean())
    n_cols = max(1, int(round(colsample * p)))
    weights = np.ones((n_rounds, n))
    allowed = np.ones((n_rounds, p), dtype=np.bool_)
    rng = np.random.default_rng(seed)
    for t in range(n_rounds):
        if subsample < 1.0:
            w = (rng.random(n) < subsample).astype(float)
            if not w.any():
                w[rng.integers(n)] = 1.0
            weights[t] = w
        if n_cols < p:
            allowed[t] = False
            allowed[t, rng.choice(p, n_cols, replace=False)] = True
    arrays, offsets, losses = _treecore.boost(X, y, order, weights, allowed, float(learning_rate),
                                              _depth_arg(max_depth), 2.0 * min_split_loss, base)
    trees = tuple(TreeModel(*(a[offsets[t]:offsets[t + 1]] for a in arrays), n_features=p)
                  for t in range(n_rounds))
    return BoostedModel(base_score=base, learning_rate=float(learning_rate),
                        trees=trees, train_loss=tuple(float(v) for v in losses))
