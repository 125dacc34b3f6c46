"""Stacked ensemble: a boosted-tree meta model over base forecasts and features.

The meta model sees ``[5 base forecasts] ++ [original feature columns]`` in
that order. Base forecasts used for meta training are out-of-fold, so no row's
base forecast comes from a model that saw its target.
"""

from dataclasses import dataclass

import numpy as np

from .regressors import DimensionError, trees
from .tuning import (BASE_FAMILIES, CvPlan, FitContext, Family, HyperGrid, fit_family, full_grid,
                     grid_search)


@dataclass(frozen=True)
class BaseSpec:
    family: Family
    params: dict
    mask: np.ndarray   # columns of the full feature matrix this base reads


@dataclass(frozen=True)
class StackedEnsemble:
    bases: tuple           # fitted models in BASE_FAMILIES order
    specs: tuple           # BaseSpec per base
    meta: trees.BoostedModel
    meta_mask: np.ndarray  # original columns appended after the base forecasts
    meta_params: dict
    meta_cv_r2: float = float("nan")

    @property
    def n_meta_inputs(self) -> int:
        return len(self.bases) + int(self.meta_mask.sum())

    def base_predictions(self, X) -> np.ndarray:
        X = _as_2d(X, self.meta_mask.size)
        return np.column_stack([m.predict(X[:, s.mask]) for m, s in zip(self.bases, self.specs)])

    def meta_matrix(self, X) -> np.ndarray:
        X = _as_2d(X, self.meta_mask.size)
        return np.hstack([self.base_predictions(X), X[:, self.meta_mask]])

    def predict(self, X):
        single = np.ndim(X) == 1
        out = self.meta.predict(self.meta_matrix(X))
        return float(out[0]) if single else out

    def meta_importances(self) -> np.ndarray:
        return self.meta.feature_importances()

    def summary(self, feature_names=None) -> dict:
        names = list(feature_names) if feature_names is not None else list(range(self.meta_mask.size))
        layout = [s.family.value for s in self.specs] + [names[i] for i in np.flatnonzero(self.meta_mask)]
        return {
            "bases": [s.family.value for s in self.specs],
            "meta_params": self.meta_params,
            "meta_cv_r2": self.meta_cv_r2,
            "meta_layout": layout,
            "meta_importance": dict(zip(layout, (float(v) for v in self.meta_importances()))),
        }


def _as_2d(X, width):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != width:
        raise DimensionError(f"expected {width} columns, got shape {X.shape}")
    return X


def _default_fit(spec: BaseSpec, X, y, ctx: FitContext):
    return fit_family(spec.family, spec.params, X[:, spec.mask], y, ctx)


def union_mask(specs) -> np.ndarray:
    mask = np.zeros_like(specs[0].mask, dtype=bool)
    for s in specs:
        mask |= s.mask
    return mask


def oof_predictions(specs, X, y, plan: CvPlan, ctx: FitContext = FitContext(), fit_fn=None) -> np.ndarray:
    """Out-of-fold forecasts, one column per base; row i comes from a model not trained on i."""
    fit_fn = fit_fn or _default_fit
    out = np.zeros((y.shape[0], len(specs)))
    for tr, va in plan.folds():
        for b, spec in enumerate(specs):
            model = fit_fn(spec, X[tr], y[tr], ctx)
            out[va, b] = model.predict(X[va][:, spec.mask])
    return out


def stack_fit(X, y, plan: CvPlan, specs, meta_grid: HyperGrid = None, ctx: FitContext = FitContext(),
              fit_fn=None, meta_params: dict = None) -> StackedEnsemble:
    """Fit the ensemble.

    ``fit_fn(spec, X, y, ctx)`` replaces base fitting (test hook). When
    ``meta_params`` is given the meta grid search is skipped.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    specs = tuple(specs)
    if [s.family for s in specs] != list(BASE_FAMILIES):
        raise ValueError("bases must be given in the order linear, svr, tree, forest, boosted")
    fit_fn = fit_fn or _default_fit
    meta_mask = union_mask(specs)
    oof = oof_predictions(specs, X, y, plan, ctx, fit_fn)
    M = np.hstack([oof, X[:, meta_mask]])
    cv = float("nan")
    if meta_params is None:
        best = grid_search(Family.BOOSTED, meta_grid or full_grid(Family.BOOSTED), M, y, plan, ctx)
        meta_params, cv = best.params, best.score
    meta = fit_family(Family.BOOSTED, meta_params, M, y, ctx)
    bases = tuple(fit_fn(s, X, y, ctx) for s in specs)
    return StackedEnsemble(bases=bases, specs=specs, meta=meta, meta_mask=meta_mask,
                           meta_params=dict(meta_params), meta_cv_r2=cv)


def stack_predict(ensemble: StackedEnsemble, X):
    return ensemble.predict(X)
