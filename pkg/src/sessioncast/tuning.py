"""Grid search and floating backward feature selection, both scored by CV R^2.

Grid evaluation shares work between candidates where the result is provably
identical to fitting each candidate on its own:

* a CART tree grown under looser depth/split limits prunes to the stricter tree;
* a forest of ``T`` trees is a prefix of a larger forest with the same seed;
* a boosted model with ``R`` rounds is a prefix of a longer run;
* SVR candidates sharing kernel and gamma share one Gram matrix per fold.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .regressors import linear, svr, trees

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = 5


class Family(str, Enum):
    LINEAR = "linear"
    SVR = "svr"
    TREE = "tree"
    FOREST = "forest"
    BOOSTED = "boosted"


BASE_FAMILIES = (Family.LINEAR, Family.SVR, Family.TREE, Family.FOREST, Family.BOOSTED)


class GridProfile(str, Enum):
    FULL = "full"
    FAST = "fast"


GRIDS = {
    Family.LINEAR: (),
    Family.SVR: (
        ("C", (1.0, 10.0, 100.0, 1000.0)),
        ("gamma", (0.01, 0.1, 1.0, 10.0)),
        ("kernel", ("rbf", "linear")),
        ("epsilon", (0.01, 0.1, 0.5, 1.0)),
    ),
    Family.TREE: (
        ("max_depth", tuple(range(1, 20))),
        ("min_samples_split", tuple(range(2, 20))),
        ("min_samples_leaf", (1, 2, 4, 6)),
        ("criterion", ("squared_error", "friedman_mse", "absolute_error")),
    ),
    Family.FOREST: (
        ("n_trees", (50, 75, 100, 150, 200, 250, 300)),
        ("max_depth", (2, 3, 4, 5, 6)),
        ("min_samples_split", (2, 3, 4, 5, 6)),
        ("min_samples_leaf", (1, 2, 3, 4, 5)),
    ),
    Family.BOOSTED: (
        ("n_rounds", (25, 50, 100, 150, 200)),
        ("learning_rate", (0.01, 0.1, 0.2)),
        ("max_depth", (2, 3, 4, 5)),
        ("subsample", (0.8, 0.9, 1.0)),
        ("colsample", (0.8, 0.9, 1.0)),
        ("min_split_loss", (0.0, 0.1, 0.2, 0.5)),
    ),
}


@dataclass(frozen=True)
class HyperGrid:
    family: Family
    params: tuple = ()   # ((name, (values, ...)), ...)

    def __len__(self) -> int:
        return int(np.prod([len(v) for _, v in self.params])) if self.params else 1

    def points(self) -> list:
        """Candidates in enumeration order (last parameter varies fastest)."""
        names = [n for n, _ in self.params]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in self.params))]

    def thinned(self, n_values: int) -> "HyperGrid":
        return HyperGrid(self.family, tuple((n, v[:n_values]) for n, v in self.params))

    def first(self) -> "HyperGrid":
        return self.thinned(1)

    def to_dict(self) -> dict:
        return {name: list(values) for name, values in self.params}


def full_grid(family: Family) -> HyperGrid:
    family = Family(family)
    return HyperGrid(family, GRIDS[family])


def grid_for(family: Family, profile: GridProfile = GridProfile.FULL) -> HyperGrid:
    """Full grid, or the fast profile: the first two values of every list."""
    grid = full_grid(family)
    return grid if GridProfile(profile) is GridProfile.FULL else grid.thinned(2)


@dataclass(frozen=True)
class FitContext:
    seed: int = 0
    svr_row_cap: int = svr.DEFAULT_ROW_CAP


def fit_family(family: Family, params: dict, X, y, ctx: FitContext = FitContext()):
    family = Family(family)
    if family is Family.LINEAR:
        return linear.ols_fit(X, y)
    if family is Family.SVR:
        return svr.svr_fit(X, y, C=params["C"], gamma=params["gamma"], epsilon=params["epsilon"],
                           kernel=params["kernel"], row_cap=ctx.svr_row_cap, seed=ctx.seed)
    if family is Family.TREE:
        return trees.dt_fit(X, y, criterion=params["criterion"], max_depth=params["max_depth"],
                            min_samples_split=params["min_samples_split"],
                            min_samples_leaf=params["min_samples_leaf"])
    if family is Family.FOREST:
        return trees.rf_fit(X, y, n_trees=params["n_trees"], max_depth=params["max_depth"],
                            min_samples_split=params["min_samples_split"],
                            min_samples_leaf=params["min_samples_leaf"], seed=ctx.seed)
    return trees.gbdt_fit(X, y, n_rounds=params["n_rounds"], learning_rate=params["learning_rate"],
                          max_depth=params["max_depth"], subsample=params["subsample"],
                          colsample=params["colsample"], min_split_loss=params["min_split_loss"],
                          seed=ctx.seed)


@dataclass(frozen=True)
class CvPlan:
    """Contiguous, time-ordered folds over ``n`` rows."""

    n: int
    bounds: tuple   # ((start, stop), ...)

    @classmethod
    def contiguous(cls, n: int, k: int = DEFAULT_FOLDS) -> "CvPlan":
        if k < 2:
            raise ValueError("need at least 2 folds")
        if n < k:
            raise ValueError(f"fewer rows ({n}) than folds ({k})")
        sizes = np.full(k, n // k)
        sizes[: n % k] += 1
        stops = np.cumsum(sizes)
        return cls(n=n, bounds=tuple((int(b - s), int(b)) for s, b in zip(sizes, stops)))

    @property
    def k(self) -> int:
        return len(self.bounds)

    def folds(self):
        idx = np.arange(self.n)
        for start, stop in self.bounds:
            yield np.concatenate((idx[:start], idx[stop:])), idx[start:stop]


def r2_score(y_true, y_pred) -> float:
    """Standard R^2; a constant target scores 0 instead of dividing by zero."""
    y_true = np.asarray(y_true, dtype=float)
    resid = y_true - np.asarray(y_pred, dtype=float)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot <= 0.0:
        return 0.0
    return 1.0 - float(np.sum(resid ** 2)) / ss_tot


def _check_plan(X, y, plan: CvPlan):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or plan.n != y.shape[0]:
        raise ValueError(f"plan covers {plan.n} rows but data has shape {X.shape}")
    if y.shape[0] < plan.k:
        raise ValueError(f"fewer rows ({y.shape[0]}) than folds ({plan.k})")
    return np.ascontiguousarray(X), y


def cv_score(family: Family, params: dict, X, y, plan: CvPlan, ctx: FitContext = FitContext()) -> float:
    """Mean out-of-fold R^2 with one independent fit per fold."""
    X, y = _check_plan(X, y, plan)
    fold_scores = np.zeros(plan.k)
    for f, (tr, va) in enumerate(plan.folds()):
        model = fit_family(family, params, X[tr], y[tr], ctx)
        fold_scores[f] = r2_score(y[va], model.predict(X[va]))
    return float(fold_scores.mean())


def _group_points(points, keys):
    groups = {}
    for j, p in enumerate(points):
        groups.setdefault(tuple(p[k] for k in keys), []).append(j)
    return groups


def _scores_svr(points, X, y, plan, ctx, out):
    for f, (tr, va) in enumerate(plan.folds()):
        data = svr.prepare(X[tr], y[tr], ctx.svr_row_cap, ctx.seed)
        Zva = None
        grams, done = {}, {}
        for j, p in enumerate(points):
            kernel = svr.Kernel(p["kernel"])
            gamma = p["gamma"] if kernel is svr.Kernel.RBF else None
            key = (p["C"], p["epsilon"], kernel, gamma)
            if key not in done:
                gkey = (kernel, gamma)
                if gkey not in grams:
                    grams[gkey] = svr.kernel_matrix(data.Z, data.Z, kernel, p["gamma"])
                model = svr.fit_prepared(data, C=p["C"], gamma=p["gamma"], epsilon=p["epsilon"],
                                         kernel=kernel, gram=grams[gkey])
                if Zva is None:
                    Zva = X[va]
                done[key] = r2_score(y[va], model.predict(Zva))
            out[f, j] = done[key]


def _scores_tree(points, X, y, plan, ctx, out):
    groups = _group_points(points, ("min_samples_leaf", "criterion"))
    for f, (tr, va) in enumerate(plan.folds()):
        Xtr = np.ascontiguousarray(X[tr])
        order = trees.presort(Xtr)
        for (msl, crit), members in groups.items():
            depth = max(points[j]["max_depth"] for j in members)
            mss = min(points[j]["min_samples_split"] for j in members)
            full = trees.dt_fit(Xtr, y[tr], criterion=crit, max_depth=depth, min_samples_split=mss,
                                min_samples_leaf=msl, order=order)
            for j in members:
                p = points[j]
                tree = full.truncated(p["max_depth"], p["min_samples_split"])
                out[f, j] = r2_score(y[va], tree.predict(X[va]))


def _scores_forest(points, X, y, plan, ctx, out):
    groups = _group_points(points, ("min_samples_leaf",))
    for f, (tr, va) in enumerate(plan.folds()):
        Xva = np.ascontiguousarray(X[va])
        for (msl,), members in groups.items():
            n_max = max(points[j]["n_trees"] for j in members)
            depth = max(points[j]["max_depth"] for j in members)
            mss = min(points[j]["min_samples_split"] for j in members)
            forest = trees.rf_fit(X[tr], y[tr], n_trees=n_max, max_depth=depth,
                                  min_samples_split=mss, min_samples_leaf=msl, seed=ctx.seed)
            shapes = _group_points([points[j] for j in members], ("max_depth", "min_samples_split"))
            for (d, s), sub in shapes.items():
                wanted = {}
                for i in sub:
                    wanted.setdefault(points[members[i]]["n_trees"], []).append(members[i])
                running = np.zeros(Xva.shape[0])
                for t, tree in enumerate(forest.trees[:max(wanted)], start=1):
                    running += tree.truncated(d, s).predict(Xva)
                    if t in wanted:
                        score = r2_score(y[va], running / t)
                        for j in wanted[t]:
                            out[f, j] = score


def _scores_boosted(points, X, y, plan, ctx, out):
    keys = ("learning_rate", "max_depth", "subsample", "colsample", "min_split_loss")
    groups = _group_points(points, keys)
    for f, (tr, va) in enumerate(plan.folds()):
        Xva = np.ascontiguousarray(X[va])
        for combo, members in groups.items():
            p = dict(zip(keys, combo))
            wanted = {}
            for j in members:
                wanted.setdefault(points[j]["n_rounds"], []).append(j)
            model = trees.gbdt_fit(X[tr], y[tr], n_rounds=max(wanted), seed=ctx.seed, **p)
            staged = np.full(Xva.shape[0], model.base_score)
            for t, tree in enumerate(model.trees, start=1):
                staged += model.learning_rate * tree.predict(Xva)
                if t in wanted:
                    score = r2_score(y[va], staged)
                    for j in wanted[t]:
                        out[f, j] = score


_SHARED = {
    Family.SVR: _scores_svr,
    Family.TREE: _scores_tree,
    Family.FOREST: _scores_forest,
    Family.BOOSTED: _scores_boosted,
}


def grid_scores(family: Family, points, X, y, plan: CvPlan, ctx: FitContext = FitContext()) -> np.ndarray:
    """Mean CV R^2 of every candidate, equal to calling ``cv_score`` on each."""
    family = Family(family)
    X, y = _check_plan(X, y, plan)
    if family is Family.LINEAR:
        return np.array([cv_score(family, p, X, y, plan, ctx) for p in points])
    out = np.zeros((plan.k, len(points)))
    _SHARED[family](points, X, y, plan, ctx, out)
    return np.array([out[:, j].mean() for j in range(len(points))])


@dataclass(frozen=True)
class GridResult:
    params: dict
    score: float
    n_candidates: int

    def to_dict(self) -> dict:
        return {"params": self.params, "cv_r2": self.score, "n_candidates": self.n_candidates}


def grid_search(family: Family, grid: HyperGrid, X, y, plan: CvPlan,
                ctx: FitContext = FitContext()) -> GridResult:
    """Best candidate by mean CV R^2; ties go to the first in enumeration order."""
    points = grid.points()
    if not points:
        raise ValueError("empty grid")
    scores = grid_scores(family, points, X, y, plan, ctx)
    best = int(np.argmax(scores))
    return GridResult(params=points[best], score=float(scores[best]), n_candidates=len(points))


@dataclass(frozen=True)
class SfbsStep:
    action: str          # "start", "exclude" or "include"
    feature: int         # column index, -1 for the start step
    score: float
    n_active: int


@dataclass(frozen=True)
class SfbsResult:
    mask: np.ndarray
    score: float
    full_score: float
    steps: tuple
    n_evaluations: int

    def accepted_scores(self) -> list:
        return [s.score for s in self.steps]


def sfbs(family: Family, params: dict, X, y, plan: CvPlan, allowed, ctx: FitContext = FitContext(),
         score_fn=None) -> SfbsResult:
    """Sequential floating backward selection over the ``allowed`` columns.

    Exclusion accepts the best single drop whose score is at least the
    current score; after each accepted drop, the best re-addition is taken
    while it strictly improves. Masks are never revisited, which bounds the
    search. ``score_fn(mask)`` replaces CV scoring when given.
    """
    allowed = np.asarray(allowed, dtype=bool).copy()
    if allowed.sum() < 2:
        raise ValueError("feature selection needs at least two allowed features")
    if score_fn is None:
        X, y = _check_plan(X, y, plan)

        def score_fn(mask):
            return cv_score(family, params, X[:, mask], y, plan, ctx)

    cache = {}

    def score(mask):
        key = mask.tobytes()
        if key not in cache:
            cache[key] = float(score_fn(mask.copy()))
        return cache[key]

    cur = allowed.copy()
    cur_score = score(cur)
    full_score = cur_score
    steps = [SfbsStep("start", -1, cur_score, int(cur.sum()))]
    while cur.sum() > 1:
        best_f, best_s = -1, -np.inf
        for f in np.flatnonzero(cur):
            cand = cur.copy()
            cand[f] = False
            if cand.tobytes() in cache:
                continue
            s = score(cand)
            if s > best_s:
                best_f, best_s = int(f), s
        if best_f < 0 or best_s < cur_score:
            break
        cur[best_f] = False
        cur_score = best_s
        steps.append(SfbsStep("exclude", best_f, cur_score, int(cur.sum())))
        while True:
            add_f, add_s = -1, cur_score
            for f in np.flatnonzero(allowed & ~cur):
                cand = cur.copy()
                cand[f] = True
                if cand.tobytes() in cache:
                    continue
                s = score(cand)
                if s > add_s:
                    add_f, add_s = int(f), s
            if add_f < 0:
                break
            cur[add_f] = True
            cur_score = add_s
            steps.append(SfbsStep("include", add_f, cur_score, int(cur.sum())))
    return SfbsResult(mask=cur, score=cur_score, full_score=full_score, steps=tuple(steps),
                      n_evaluations=len(cache))


@dataclass(frozen=True)
class SelectionResult:
    family: Family
    params: dict
    mask: np.ndarray          # over all input columns
    score: float
    stage1: GridResult
    selection: SfbsResult = None
    stage3: GridResult = None
    reduced: bool = False     # small stratum: first grid values, no selection
    n_rows: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self, feature_names=None) -> dict:
        names = list(feature_names) if feature_names is not None else list(range(self.mask.size))
        out = {
            "family": self.family.value,
            "params": self.params,
            "cv_r2": self.score,
            "selected": [names[i] for i in np.flatnonzero(self.mask)],
            "reduced": self.reduced,
            "n_rows": self.n_rows,
            "stage1": self.stage1.to_dict(),
            "stage3": self.stage3.to_dict() if self.stage3 is not None else None,
        }
        if self.selection is not None:
            out["sfbs"] = {
                "full_cv_r2": self.selection.full_score,
                "n_evaluations": self.selection.n_evaluations,
                "steps": [{"action": s.action, "feature": names[s.feature] if s.feature >= 0 else None,
                           "cv_r2": s.score, "n_active": s.n_active} for s in self.selection.steps],
            }
        out.update(self.extra)
        return out


def tune_and_select(family: Family, X, y, plan: CvPlan, allowed, grid: HyperGrid = None,
                    ctx: FitContext = FitContext(), reduced: bool = False) -> SelectionResult:
    """Tune on all allowed features, select features, then re-tune on the selection.

    With ``reduced`` set, only the first value of each grid list is used and
    selection is skipped.
    """
    family = Family(family)
    allowed = np.asarray(allowed, dtype=bool)
    X, y = _check_plan(X, y, plan)
    if grid is None:
        grid = full_grid(family)
    if reduced:
        grid = grid.first()
    stage1 = grid_search(family, grid, X[:, allowed], y, plan, ctx)
    if reduced or allowed.sum() < 2:
        return SelectionResult(family=family, params=stage1.params, mask=allowed.copy(),
                               score=stage1.score, stage1=stage1, reduced=reduced,
                               n_rows=y.shape[0])
    selection = sfbs(family, stage1.params, X, y, plan, allowed, ctx)
    stage3 = grid_search(family, grid, X[:, selection.mask], y, plan, ctx)
    logger.debug("%s: stage1 %.4f, sfbs %.4f (%d features), stage3 %.4f", family.value,
                 stage1.score, selection.score, int(selection.mask.sum()), stage3.score)
    return SelectionResult(family=family, params=stage3.params, mask=selection.mask,
                           score=stage3.score, stage1=stage1, selection=selection, stage3=stage3,
                           n_rows=y.shape[0])
