"""Base regression families: linear, SVR, CART, random forest, boosting.

Every fitted model exposes ``predict(X)`` accepting a single row or a matrix
whose width equals the number of active features it was trained on.
"""

import json

import numpy as np

from ._common import DimensionError, Standardizer
from .linear import LinearModel, ols_fit
from .svr import Kernel, SvrModel, kernel_matrix, svr_fit
from .trees import (BoostedModel, Criterion, ForestModel, TreeModel, dt_fit, gbdt_fit,
                    presort, rf_fit)

MODEL_FORMAT = "sessioncast.model/1"


class ImportanceNotSupported(TypeError):
    """Raised when asking a non-tree model for impurity importances."""


def predict(model, X):
    """Batch or single-row prediction; batch output equals row-wise output."""
    return model.predict(X)


def feature_importance(model, feature_names=None) -> dict:
    """Normalized total split improvement per feature.

    Keys are ``feature_names`` when given, else column indices. Models
    without any split report all zeros.
    """
    if not isinstance(model, (TreeModel, ForestModel, BoostedModel)):
        raise ImportanceNotSupported(f"{type(model).__name__} has no built-in importance")
    imp = model.feature_importances()
    names = list(feature_names) if feature_names is not None else list(range(imp.shape[0]))
    if len(names) != imp.shape[0]:
        raise DimensionError("feature_names length does not match model width")
    return {name: float(v) for name, v in zip(names, imp)}


def dump_model(model) -> str:
    """Self-describing JSON dump for inspection (not a stable interchange format)."""
    return json.dumps({"format": MODEL_FORMAT, "model": model.to_dict()})


__all__ = [
    "BoostedModel", "Criterion", "DimensionError", "ForestModel", "ImportanceNotSupported",
    "Kernel", "LinearModel", "Standardizer", "SvrModel", "TreeModel", "dt_fit", "dump_model",
    "feature_importance", "gbdt_fit", "kernel_matrix", "ols_fit", "predict", "presort",
    "rf_fit", "svr_fit",
]
