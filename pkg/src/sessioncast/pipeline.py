"""Weekly growing-window forecasting with dual-model routing.

Each iteration trains on everything before a test week and forecasts that
week. Sessions of cars already seen at the location go to Model 2 (with
per-car history features); all others go to Model 1. Both variants are tuned,
selected and stacked independently per (location, target).
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum

import numpy as np

from . import features as F
from .regressors import feature_importance
from .seeding import derive_seed
from .sessions import Location
from .stacking import BaseSpec, stack_fit
from .tuning import (BASE_FAMILIES, CvPlan, FitContext, Family, GridProfile, fit_family,
                     grid_for, r2_score, tune_and_select)

logger = logging.getLogger(__name__)

WEEK = timedelta(days=7)
ENSEMBLE = "ensemble"
MODEL_NAMES = (ENSEMBLE,) + tuple(f.value for f in BASE_FAMILIES)
DEFAULT_LOOKBACK_WINDOWS = (60, 160, 260, 360, 460, 560, 660)
TREE_FAMILIES = (Family.TREE, Family.FOREST, Family.BOOSTED)


class Mode(str, Enum):
    GROWING = "growing"
    REPLAY = "replay"


_TS = "%Y-%m-%dT%H:%M:%SZ"
_SPLIT_TIMES = ("window_start", "val_start", "test_start", "test_end")


class HorizonError(ValueError):
    """The data does not cover the requested split."""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    targets: tuple = (F.Target.ENERGY, F.Target.DURATION)
    locations: tuple = (Location.WORKPLACE, Location.RESIDENTIAL)
    initial_window_days: int = 365
    lookback_days: int = None
    mode: Mode = Mode.GROWING
    replay_cap: int = 5000
    k: int = 5
    profile: GridProfile = GridProfile.FULL
    svr_row_cap: int = 5000
    utc_offset_h: float = 1.0
    validation_fraction: float = 0.2
    min_stratum_rows: int = 50
    # runtime knobs; None keeps every row
    tune_rows: int = None
    fit_rows: int = None
    retune_every: int = 1
    jobs: int = 1

    def validate(self) -> "PipelineConfig":
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.initial_window_days < 60:
            raise ValueError("initial window must be >= 60 days")
        if self.lookback_days is not None and self.lookback_days < 1:
            raise ValueError("lookback must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.retune_every < 1 or self.jobs < 1:
            raise ValueError("retune_every and jobs must be >= 1")
        if self.replay_cap < 1:
            raise ValueError("replay_cap must be >= 1")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["targets"] = [F.Target(t).value for t in self.targets]
        out["locations"] = [Location(x).value for x in self.locations]
        out["mode"] = Mode(self.mode).value
        out["profile"] = GridProfile(self.profile).value
        return out


class Dataset:
    """Cleaned sessions plus per-session arrays reused by every iteration."""

    def __init__(self, sessions, weather: dict, calendar, utc_offset_h: float = 1.0):
        self.sessions = sorted(sessions, key=lambda s: (s.arrival, s.session_id))
        if not self.sessions:
            raise HorizonError("no sessions")
        self.weather = weather
        self.calendar = calendar
        self.utc_offset_h = float(utc_offset_h)
        self.static = F.static_block(self.sessions, weather, calendar, utc_offset_h)
        self.times = F.epoch_seconds([s.arrival for s in self.sessions])
        self.car_ids = np.array([s.car_id for s in self.sessions], dtype=object)
        self.station_ids = np.array([s.station_id for s in self.sessions], dtype=object)
        self.hours = np.array(F.local_hours(self.sessions, utc_offset_h))
        self.locations = np.array([s.location.value for s in self.sessions], dtype=object)
        self.session_ids = np.array([s.session_id for s in self.sessions], dtype=object)
        self.targets = {t: np.array([t.of(s) for s in self.sessions]) for t in F.Target}
        first = self.sessions[0].arrival
        self.origin = datetime(first.year, first.month, first.day)
        last = self.sessions[-1].arrival
        self.data_end = datetime(last.year, last.month, last.day) + timedelta(days=1)

    def __len__(self) -> int:
        return len(self.sessions)

    def rows_between(self, start: datetime, stop: datetime) -> np.ndarray:
        lo, hi = np.searchsorted(self.times, F.epoch_seconds([start, stop]), side="left")
        return np.arange(lo, hi)


@dataclass(frozen=True)
class SplitPlan:
    iteration: int
    window_start: datetime
    val_start: datetime
    test_start: datetime
    test_end: datetime
    n_train: int
    n_val: int
    n_test: int

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in _SPLIT_TIMES:
            d[k] = d[k].strftime(_TS)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        d = dict(d)
        for k in _SPLIT_TIMES:
            d[k] = datetime.strptime(d[k], _TS)
        return cls(**d)


def dynamic_split(data: Dataset, iteration: int, initial_window_days: int = 365,
                  lookback_days: int = None, validation_fraction: float = 0.2) -> SplitPlan:
    """Growing window up to the test week; the last rows of the window validate.

    Iteration ``i`` tests on days ``initial + 7i`` to ``initial + 7i + 7``
    counted from midnight of the first arrival. ``lookback_days`` truncates
    the window to its most recent days.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    test_start = data.origin + timedelta(days=initial_window_days) + iteration * WEEK
    test_end = test_start + WEEK
    if test_end > data.data_end:
        raise HorizonError(f"iteration {iteration} needs data up to {test_end:%Y-%m-%d}, "
                           f"data ends {data.data_end:%Y-%m-%d}")
    window_start = data.origin
    if lookback_days is not None:
        window_start = max(window_start, test_start - timedelta(days=lookback_days))
    window = data.rows_between(window_start, test_start)
    n_val = int(math.floor(validation_fraction * window.size))
    val_start = data.sessions[window[window.size - n_val]].arrival if n_val else test_start
    # rows sharing the boundary arrival all land in validation
    n_val_eff = int(np.sum(data.times[window] >= F.epoch_seconds([val_start])[0]))
    return SplitPlan(iteration=iteration, window_start=window_start, val_start=val_start,
                     test_start=test_start, test_end=test_end, n_train=int(window.size - n_val_eff),
                     n_val=n_val_eff, n_test=int(data.rows_between(test_start, test_end).size))


@dataclass(frozen=True)
class RouteDecision:
    variant: F.Variant
    prior_sessions: int


def route(car_id: str, training_car_counts: dict) -> RouteDecision:
    """Model 2 iff the car has at least one training/validation session."""
    n = int(training_car_counts.get(car_id, 0))
    return RouteDecision(F.Variant.MODEL2 if n > 0 else F.Variant.MODEL1, n)


def metrics(y_true, y_pred):
    """``(RMSE, MAE, R^2)``; a constant ``y_true`` gives R^2 = 0."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty input")
    err = y_true - y_pred
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err))), r2_score(y_true, y_pred)


def closest_model_stats(forecasts: dict, y_true) -> dict:
    """Share of rows (percent) on which each model had the smallest absolute error.

    Ties split the row's credit equally.
    """
    names = list(forecasts)
    y_true = np.asarray(y_true, dtype=float)
    err = np.abs(np.stack([np.asarray(forecasts[n], dtype=float) for n in names]) - y_true)
    if y_true.size == 0:
        return {n: 0.0 for n in names}
    best = err == err.min(axis=0)
    credit = (best / best.sum(axis=0)).sum(axis=1)
    return {n: float(100.0 * c / y_true.size) for n, c in zip(names, credit)}


@dataclass
class CellForecast:
    """Test-week forecasts for one (location, target), every row routed once."""

    location: str
    target: str
    session_ids: list
    y_true: np.ndarray
    variant: np.ndarray           # routed variant per row
    ensemble: np.ndarray
    family: dict                  # family -> routed forecasts
    model1_ensemble: np.ndarray   # Model 1 forecast of every row
    model1_family: dict

    def to_dict(self) -> dict:
        return {
            "location": self.location, "target": self.target,
            "session_id": list(self.session_ids), "y_true": self.y_true.tolist(),
            "variant": self.variant.tolist(), "ensemble": self.ensemble.tolist(),
            "family": {k: v.tolist() for k, v in self.family.items()},
            "model1_ensemble": self.model1_ensemble.tolist(),
            "model1_family": {k: v.tolist() for k, v in self.model1_family.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellForecast":
        return cls(location=d["location"], target=d["target"], session_ids=list(d["session_id"]),
                   y_true=np.array(d["y_true"], dtype=float), variant=np.array(d["variant"], dtype=object),
                   ensemble=np.array(d["ensemble"], dtype=float),
                   family={k: np.array(v, dtype=float) for k, v in d["family"].items()},
                   model1_ensemble=np.array(d["model1_ensemble"], dtype=float),
                   model1_family={k: np.array(v, dtype=float) for k, v in d["model1_family"].items()})

    @staticmethod
    def concat(cells) -> "CellForecast":
        cells = list(cells)
        fams = cells[0].family.keys()
        return CellForecast(
            location=cells[0].location, target=cells[0].target,
            session_ids=[s for c in cells for s in c.session_ids],
            y_true=np.concatenate([c.y_true for c in cells]),
            variant=np.concatenate([c.variant for c in cells]),
            ensemble=np.concatenate([c.ensemble for c in cells]),
            family={f: np.concatenate([c.family[f] for c in cells]) for f in fams},
            model1_ensemble=np.concatenate([c.model1_ensemble for c in cells]),
            model1_family={f: np.concatenate([c.model1_family[f] for c in cells]) for f in fams})


@dataclass(frozen=True)
class MetricRow:
    location: str
    target: str
    scope: str     # combined | model1 | model2 | model1_on_model2_rows
    model: str
    n: int
    rmse: float
    mae: float
    r2: float


@dataclass
class MetricsReport:
    rows: list
    routing: dict          # location -> {"model1": n, "model2": n}
    closest: dict          # "location/target" -> {family: percent}

    def get(self, location, target, model=ENSEMBLE, scope="combined"):
        location, target = Location(location).value, F.Target(target).value
        for r in self.rows:
            if (r.location, r.target, r.scope, r.model) == (location, target, scope, model):
                return r
        return None

    def to_dict(self) -> dict:
        return {"metrics": [asdict(r) for r in self.rows], "routing": self.routing,
                "closest": self.closest}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(rows=[MetricRow(**r) for r in d["metrics"]], routing=d["routing"],
                   closest=d["closest"])


def build_report(cells) -> MetricsReport:
    """Metrics over routed forecasts, per variant, and Model 1 on Model 2's rows."""
    rows, routing, closest = [], {}, {}
    for c in cells:
        if c.y_true.size == 0:
            continue
        m1 = c.variant == F.Variant.MODEL1.value
        m2 = ~m1
        counts = routing.setdefault(c.location, {})
        counts[F.Variant.MODEL1.value] = int(m1.sum())
        counts[F.Variant.MODEL2.value] = int(m2.sum())
        preds = {ENSEMBLE: c.ensemble, **c.family}
        for scope, sel in (("combined", slice(None)), ("model1", m1), ("model2", m2)):
            y = c.y_true[sel]
            if y.size == 0:
                continue
            for name in MODEL_NAMES:
                rows.append(MetricRow(c.location, c.target, scope, name, int(y.size),
                                      *metrics(y, preds[name][sel])))
        if m2.any():
            shadow = {ENSEMBLE: c.model1_ensemble, **c.model1_family}
            for name in MODEL_NAMES:
                rows.append(MetricRow(c.location, c.target, "model1_on_model2_rows", name,
                                      int(m2.sum()), *metrics(c.y_true[m2], shadow[name][m2])))
        closest[f"{c.location}/{c.target}"] = closest_model_stats(c.family, c.y_true)
    return MetricsReport(rows=rows, routing=routing, closest=closest)


@dataclass
class StratumResult:
    location: str
    target: str
    variant: str
    status: str                      # "ok" or "skipped"
    reason: str = ""
    n_fit: int = 0
    n_tune: int = 0
    n_val: int = 0
    reduced: bool = False
    retuned: bool = False
    selections: dict = field(default_factory=dict)     # family -> serialized SelectionResult
    validation_r2: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)          # family -> 15 booleans
    importances: dict = field(default_factory=dict)    # tree family -> 15 reals
    ensemble: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StratumResult":
        return cls(**d)


@dataclass
class WeeklyIterationResult:
    split: SplitPlan
    strata: list
    cells: list
    metrics: MetricsReport
    flags: list
    config: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "split": self.split.to_dict(),
                "strata": [s.to_dict() for s in self.strata],
                "metrics": self.metrics.to_dict(),
                "forecasts": [c.to_dict() for c in self.cells],
                "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d: dict) -> "WeeklyIterationResult":
        return cls(split=SplitPlan.from_dict(d["split"]),
                   strata=[StratumResult.from_dict(s) for s in d["strata"]],
                   cells=[CellForecast.from_dict(c) for c in d["forecasts"]],
                   metrics=MetricsReport.from_dict(d["metrics"]), flags=list(d["flags"]),
                   config=d["config"])


@dataclass(frozen=True)
class _StratumTask:
    key: tuple                # (location, target, variant)
    X_fit: np.ndarray
    y_fit: np.ndarray
    X_tune: np.ndarray
    y_tune: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    allowed: np.ndarray
    k: int
    profile: GridProfile
    ctx: FitContext
    reduced: bool
    previous: dict            # family -> (params, mask) and "meta" -> params, or None


def _fit_stratum(task: _StratumTask):
    names = [f.value for f in F.FEATURES]
    tune_plan = CvPlan.contiguous(task.y_tune.size, task.k)
    specs, selections, val_r2 = [], {}, {}
    for fam in BASE_FAMILIES:
        if task.previous is None:
            sel = tune_and_select(fam, task.X_tune, task.y_tune, tune_plan, task.allowed,
                                  grid_for(fam, task.profile), task.ctx, reduced=task.reduced)
            params, mask = sel.params, sel.mask
            selections[fam.value] = sel.to_dict(names)
        else:
            params, mask = task.previous[fam.value]
        specs.append(BaseSpec(fam, params, np.asarray(mask, dtype=bool)))
        if task.y_val.size:
            model = fit_family(fam, params, task.X_tune[:, mask], task.y_tune, task.ctx)
            val_r2[fam.value] = r2_score(task.y_val, model.predict(task.X_val[:, mask]))
    fit_plan = CvPlan.contiguous(task.y_fit.size, task.k)
    meta_params = task.previous["meta"] if task.previous is not None else None
    meta_grid = grid_for(Family.BOOSTED, task.profile)
    if task.reduced:
        meta_grid = meta_grid.first()
    ens = stack_fit(task.X_fit, task.y_fit, fit_plan, specs, meta_grid, task.ctx,
                    meta_params=meta_params)
    preds = ens.predict(task.X_test) if task.X_test.shape[0] else np.zeros(0)
    base_preds = ens.base_predictions(task.X_test) if task.X_test.shape[0] else np.zeros((0, 5))
    importances = {}
    for fam, model, spec in zip(BASE_FAMILIES, ens.bases, ens.specs):
        if fam in TREE_FAMILIES:
            full = np.zeros(F.N_FEATURES)
            full[spec.mask] = list(feature_importance(model).values())
            importances[fam.value] = full.tolist()
    summary = ens.summary(names)
    state = {s.family.value: (s.params, s.mask.tolist()) for s in specs}
    state["meta"] = ens.meta_params
    return {"selections": selections, "validation_r2": val_r2, "ensemble": summary,
            "importances": importances, "masks": {s.family.value: s.mask.tolist() for s in specs},
            "pred": preds, "base_pred": base_preds, "state": state}


def _replay_rows(rows: np.ndarray, data: Dataset, split: SplitPlan, cap: int, seed: int) -> np.ndarray:
    """Newest week in full plus a seeded uniform sample of older rows, at most ``cap`` in total."""
    recent_from = F.epoch_seconds([split.test_start - WEEK])[0]
    recent = rows[data.times[rows] >= recent_from]
    older = rows[data.times[rows] < recent_from]
    room = max(cap - recent.size, 0)
    if older.size > room:
        older = np.sort(np.random.default_rng(seed).choice(older, room, replace=False))
    return np.sort(np.concatenate([older, recent]))


def run_week(data: Dataset, iteration: int, config: PipelineConfig, state: dict = None,
             executor=None) -> tuple:
    """One weekly iteration. Returns ``(WeeklyIterationResult, state)``.

    ``state`` carries tuned parameters between iterations when
    ``retune_every > 1``; pass the returned value to the next call.
    """
    config.validate()
    split = dynamic_split(data, iteration, config.initial_window_days, config.lookback_days,
                          config.validation_fraction)
    retune = state is None or iteration % config.retune_every == 0
    state = {} if state is None else dict(state)
    window = data.rows_between(split.window_start, split.test_start)
    test = data.rows_between(split.test_start, split.test_end)
    val_from = F.epoch_seconds([split.val_start])[0]
    flags, tasks, metas = [], [], []
    cell_inputs = []
    for loc in config.locations:
        loc = Location(loc).value
        hist_rows = window[data.locations[window] == loc]
        test_rows = test[data.locations[test] == loc]
        if test_rows.size == 0:
            flags.append(f"{loc}: no test sessions")
            continue
        if hist_rows.size == 0:
            flags.append(f"{loc}: no training sessions, {test_rows.size} test sessions not forecast")
            continue
        train_rows = hist_rows
        if Mode(config.mode) is Mode.REPLAY:
            train_rows = _replay_rows(hist_rows, data, split, config.replay_cap,
                                      derive_seed(config.seed, "replay", iteration, loc))
        counts = {}
        for c in data.car_ids[hist_rows]:
            counts[c] = counts.get(c, 0) + 1
        routed = np.array([route(c, counts).variant.value for c in data.car_ids[test_rows]], dtype=object)
        hist_sessions = [data.sessions[i] for i in hist_rows]
        for target in config.targets:
            target = F.Target(target)
            index = F.build_history_index(hist_sessions, target, data.utc_offset_h)
            blk = lambda rows: index.history_block(list(data.car_ids[rows]), list(data.station_ids[rows]),
                                                    list(data.hours[rows]), data.times[rows])
            h_train, h_test = blk(train_rows), blk(test_rows)
            y_all = data.targets[target]
            cell_inputs.append((loc, target, test_rows, routed))
            for variant in F.Variant:
                key = (loc, target.value, variant.value)
                if variant is F.Variant.MODEL2:
                    keep = ~np.isnan(h_train[:, F.FeatureId.H_AVC.index])
                    test_sel = routed == variant.value
                else:
                    keep = np.ones(train_rows.size, dtype=bool)
                    test_sel = np.ones(test_rows.size, dtype=bool)
                rows = train_rows[keep]
                X = F.assemble(data.static[rows], h_train[keep], variant)
                X_test = F.assemble(data.static[test_rows[test_sel]], h_test[test_sel], variant)
                y = y_all[rows]
                is_val = data.times[rows] >= val_from
                tune_idx = np.flatnonzero(~is_val)
                if config.tune_rows is not None:
                    tune_idx = tune_idx[-config.tune_rows:]
                fit_idx = np.arange(rows.size)
                if config.fit_rows is not None:
                    fit_idx = fit_idx[-config.fit_rows:]
                val_idx = np.flatnonzero(is_val)
                if fit_idx.size < 2 * config.k:
                    metas.append((key, None, f"only {fit_idx.size} training rows"))
                    continue
                if tune_idx.size < 2 * config.k:
                    tune_idx, val_idx = fit_idx, val_idx[:0]
                reduced = tune_idx.size < config.min_stratum_rows
                previous = None if retune else state.get(key)
                ctx = FitContext(seed=derive_seed(config.seed, iteration, *key),
                                 svr_row_cap=config.svr_row_cap)
                tasks.append(_StratumTask(
                    key=key, X_fit=X[fit_idx], y_fit=y[fit_idx], X_tune=X[tune_idx], y_tune=y[tune_idx],
                    X_val=X[val_idx], y_val=y[val_idx], X_test=X_test, allowed=F.variant_mask(variant),
                    k=config.k, profile=GridProfile(config.profile), ctx=ctx, reduced=reduced,
                    previous=previous))
                metas.append((key, len(tasks) - 1, ""))
    if executor is not None:
        outputs = list(executor.map(_fit_stratum, tasks))
    else:
        outputs = [_fit_stratum(t) for t in tasks]
    strata, results = [], {}
    for key, ti, reason in metas:
        if ti is None:
            strata.append(StratumResult(*key, status="skipped", reason=reason))
            flags.append(f"{'/'.join(key)}: skipped ({reason})")
            continue
        task, out = tasks[ti], outputs[ti]
        results[key] = out
        state[key] = out["state"]
        strata.append(StratumResult(
            *key, status="ok", n_fit=int(task.y_fit.size), n_tune=int(task.y_tune.size),
            n_val=int(task.y_val.size), reduced=task.reduced, retuned=task.previous is None,
            selections=out["selections"], validation_r2=out["validation_r2"], masks=out["masks"],
            importances=out["importances"], ensemble=out["ensemble"]))
    cells = []
    for loc, target, test_rows, routed in cell_inputs:
        k1 = (loc, target.value, F.Variant.MODEL1.value)
        k2 = (loc, target.value, F.Variant.MODEL2.value)
        if k1 not in results:
            flags.append(f"{loc}/{target.value}: Model 1 unavailable, {test_rows.size} sessions not forecast")
            continue
        variant = routed.copy()
        m1 = results[k1]
        ens = m1["pred"].copy()
        fam = {f.value: m1["base_pred"][:, b].copy() for b, f in enumerate(BASE_FAMILIES)}
        sel2 = routed == F.Variant.MODEL2.value
        if sel2.any():
            if k2 in results:
                ens[sel2] = results[k2]["pred"]
                for b, f in enumerate(BASE_FAMILIES):
                    fam[f.value][sel2] = results[k2]["base_pred"][:, b]
            else:
                variant[sel2] = F.Variant.MODEL1.value
                flags.append(f"{loc}/{target.value}: Model 2 unavailable, "
                             f"{int(sel2.sum())} sessions fall back to Model 1")
        cells.append(CellForecast(
            location=loc, target=target.value, session_ids=list(data.session_ids[test_rows]),
            y_true=data.targets[target][test_rows], variant=variant, ensemble=ens, family=fam,
            model1_ensemble=m1["pred"],
            model1_family={f.value: m1["base_pred"][:, b] for b, f in enumerate(BASE_FAMILIES)}))
    result = WeeklyIterationResult(split=split, strata=strata, cells=cells,
                                   metrics=build_report(cells), flags=flags, config=config.to_dict())
    return result, state


@dataclass
class HorizonResult:
    weeks: list
    aggregate: MetricsReport
    config: dict

    def pooled_cells(self) -> list:
        return pool_cells(self.weeks)

    def to_dict(self) -> dict:
        return {"config": self.config, "n_weeks": len(self.weeks),
                "aggregate": self.aggregate.to_dict()}


def pool_cells(weeks) -> list:
    groups = {}
    for w in weeks:
        for c in w.cells:
            groups.setdefault((c.location, c.target), []).append(c)
    return [CellForecast.concat(v) for _, v in sorted(groups.items())]


def run_horizon(data: Dataset, n_weeks: int, config: PipelineConfig, progress=None) -> HorizonResult:
    """Consecutive weekly iterations; aggregate metrics pool every test forecast."""
    if n_weeks < 1:
        raise ValueError("n_weeks must be >= 1")
    config.validate()
    dynamic_split(data, n_weeks - 1, config.initial_window_days)  # fail fast on short data
    weeks, state = [], None
    executor = ProcessPoolExecutor(config.jobs) if config.jobs > 1 else None
    try:
        for i in range(n_weeks):
            week, state = run_week(data, i, config, state, executor)
            weeks.append(week)
            if progress is not None:
                progress(week)
    finally:
        if executor is not None:
            executor.shutdown()
    return HorizonResult(weeks=weeks, aggregate=build_report(pool_cells(weeks)),
                         config=config.to_dict())


def lookback_study(data: Dataset, windows=DEFAULT_LOOKBACK_WINDOWS, n_weeks: int = 4,
                   config: PipelineConfig = PipelineConfig(), progress=None) -> dict:
    """Aggregate report per lookback window, all windows tested on the same weeks.

    Test weeks start once the largest window fits, so the windows differ only
    in how much history they admit.
    """
    windows = sorted(int(w) for w in windows)
    if not windows:
        raise ValueError("no lookback windows")
    start = max(config.initial_window_days, windows[-1])
    base = replace(config, initial_window_days=start)
    dynamic_split(data, n_weeks - 1, start)
    return {w: run_horizon(data, n_weeks, replace(base, lookback_days=w), progress).aggregate
            for w in windows}


@dataclass
class ImportanceSummary:
    """Selection frequency and mean importance per feature and per base forecast."""

    features: dict   # (location, target, variant) -> family -> feature -> (freq, importance)
    bases: dict      # (location, target) -> family -> (freq, importance)
    n_iterations: dict


def aggregate_importance(weekly_results) -> ImportanceSummary:
    """Frequency = share of iterations selecting the item; importance averages where present.

    A base forecast counts as selected in an iteration when the meta model
    gives it non-zero importance.
    """
    feats, bases, n_iter, base_n = {}, {}, {}, {}
    names = [f.value for f in F.FEATURES]
    for week in weekly_results:
        for s in week.strata:
            if s.status != "ok":
                continue
            key = (s.location, s.target, s.variant)
            n_iter[key] = n_iter.get(key, 0) + 1
            per_fam = feats.setdefault(key, {})
            for fam in BASE_FAMILIES:
                mask = s.masks.get(fam.value)
                if mask is None:
                    continue
                imp = s.importances.get(fam.value)
                acc = per_fam.setdefault(fam.value, {n: [0, 0.0, 0] for n in names})
                for i, n in enumerate(names):
                    if mask[i]:
                        acc[n][0] += 1
                        if imp is not None:
                            acc[n][1] += imp[i]
                            acc[n][2] += 1
            bkey = (s.location, s.target)
            base_n[bkey] = base_n.get(bkey, 0) + 1
            meta_imp = s.ensemble.get("meta_importance", {})
            acc_b = bases.setdefault(bkey, {f.value: [0, 0.0] for f in BASE_FAMILIES})
            for fam in BASE_FAMILIES:
                v = float(meta_imp.get(fam.value, 0.0))
                if v > 0:
                    acc_b[fam.value][0] += 1
                    acc_b[fam.value][1] += v
    features_out = {
        key: {fam: {n: (c / n_iter[key], (s / m) if m else 0.0) for n, (c, s, m) in acc.items()}
              for fam, acc in per_fam.items()}
        for key, per_fam in feats.items()}
    bases_out = {key: {fam: (c / base_n[key], (s / c) if c else 0.0) for fam, (c, s) in acc.items()}
                 for key, acc in bases.items()}
    return ImportanceSummary(features=features_out, bases=bases_out, n_iterations=n_iter)
