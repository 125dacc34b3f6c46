"""Per-session feature encoding with strictly causal historical statistics.

Every session maps to a fixed 15-slot vector. Calendar and weather slots
depend only on the session itself; the historical slots summarize the
target over sessions that arrived strictly before the query instant.
"""

import csv
from dataclasses import dataclass
from datetime import timedelta
from enum import Enum
from pathlib import Path

import numpy as np

from .sessions import CalendarInfo, ChargingSession


class FeatureId(str, Enum):
    HOUR = "HOUR"
    MONTH = "MONTH"
    SEASON = "SEASON"
    T_WD = "T_WD"
    T_NH = "T_NH"
    T_SH = "T_SH"
    T_W = "T_W"
    H_AVC = "H_AVC"
    H_AVS = "H_AVS"
    H_AVH = "H_AVH"
    H_MAX = "H_MAX"
    H_MIN = "H_MIN"
    M_T = "M_T"
    M_WS = "M_WS"
    M_PV = "M_PV"

    @property
    def index(self) -> int:
        return FEATURE_INDEX[self]


FEATURES = tuple(FeatureId)
FEATURE_INDEX = {f: i for i, f in enumerate(FEATURES)}
N_FEATURES = len(FEATURES)
MODEL2_ONLY = frozenset({FeatureId.H_AVC, FeatureId.H_AVS, FeatureId.H_MAX, FeatureId.H_MIN})

_SEASON_OF_MONTH = (0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 0)  # Dec-Feb winter = 0


class Target(str, Enum):
    ENERGY = "energy"
    DURATION = "duration"

    def of(self, session: ChargingSession) -> float:
        return session.energy_kwh if self is Target.ENERGY else session.duration_h


class Variant(str, Enum):
    MODEL1 = "model1"
    MODEL2 = "model2"


class FeatureError(ValueError):
    """A session cannot be featurized (missing weather hour, unseen car for Model 2)."""


def variant_mask(variant: Variant) -> np.ndarray:
    mask = np.ones(N_FEATURES, dtype=bool)
    if Variant(variant) is Variant.MODEL1:
        for f in MODEL2_ONLY:
            mask[f.index] = False
    return mask


def season_of(month: int) -> int:
    return _SEASON_OF_MONTH[month - 1]


def epoch_seconds(times) -> np.ndarray:
    return np.array(times, dtype="datetime64[s]").astype(np.int64).reshape(-1)


@dataclass(frozen=True)
class _Series:
    times: np.ndarray    # sorted arrival seconds
    csum: np.ndarray     # prefix sums, length n + 1
    runmax: np.ndarray
    runmin: np.ndarray

    @classmethod
    def build(cls, times, values) -> "_Series":
        values = np.asarray(values, dtype=float)
        return cls(times=np.asarray(times, dtype=np.int64),
                   csum=np.concatenate(([0.0], np.cumsum(values))),
                   runmax=np.maximum.accumulate(values) if values.size else values,
                   runmin=np.minimum.accumulate(values) if values.size else values)

    def count(self, t) -> np.ndarray:
        return np.searchsorted(self.times, t, side="left")


_EMPTY = _Series.build(np.zeros(0, dtype=np.int64), np.zeros(0))


def _group(keys, times, values) -> dict:
    return {key: _Series.build(times[rows], values[rows])
            for key, rows in _rows_by_key(keys).items()}


class HistoryIndex:
    """Running target aggregates by car, station, local hour and overall.

    A query at instant ``t`` sees only sessions with arrival strictly before
    ``t``. The index is immutable once built.
    """

    def __init__(self, sessions, target: Target, utc_offset_h: float = 1.0):
        self.target = Target(target)
        self.utc_offset_h = float(utc_offset_h)
        sessions = sorted(sessions, key=lambda s: s.arrival)
        self.n_sessions = len(sessions)
        times = epoch_seconds([s.arrival for s in sessions])
        values = np.array([self.target.of(s) for s in sessions], dtype=float)
        self._global = _Series.build(times, values)
        self._car = _group([s.car_id for s in sessions], times, values)
        self._station = _group([s.station_id for s in sessions], times, values)
        hours = local_hours(sessions, self.utc_offset_h)
        self._hour = _group(hours, times, values)

    def known_cars(self) -> frozenset:
        return frozenset(self._car)

    def global_stats(self, t):
        k = int(self._global.count(epoch_seconds([t])[0]))
        return k, (self._global.csum[k] / k if k else None)

    def car_stats(self, car_id, t):
        """``(count, mean, max, min)`` for one car; statistics are ``None`` at count 0."""
        s = self._car.get(car_id, _EMPTY)
        k = int(s.count(epoch_seconds([t])[0]))
        if k == 0:
            return 0, None, None, None
        return k, s.csum[k] / k, float(s.runmax[k - 1]), float(s.runmin[k - 1])

    def station_stats(self, station_id, t):
        s = self._station.get(station_id, _EMPTY)
        k = int(s.count(epoch_seconds([t])[0]))
        return k, (s.csum[k] / k if k else None)

    def hour_stats(self, hour: int, t):
        s = self._hour.get(int(hour), _EMPTY)
        k = int(s.count(epoch_seconds([t])[0]))
        return k, (s.csum[k] / k if k else None)

    def car_counts(self, car_ids, t_sec) -> np.ndarray:
        out = np.zeros(len(car_ids), dtype=np.int64)
        for key, rows in _rows_by_key(car_ids).items():
            out[rows] = self._car.get(key, _EMPTY).count(t_sec[rows])
        return out

    def history_block(self, car_ids, station_ids, hours, t_sec) -> np.ndarray:
        """Historical slots for many queries; columns follow ``FEATURES``.

        Fallbacks: an empty hour or station bucket takes the global mean, and
        an empty global history takes 0. Car slots are NaN where the car has
        no history; callers decide whether that is an error.
        """
        n = len(t_sec)
        out = np.zeros((n, N_FEATURES))
        k = self._global.count(t_sec)
        gmean = np.divide(self._global.csum[k], k, out=np.zeros(n), where=k > 0)

        def mean_col(series_map, keys, col):
            vals = gmean.copy()
            for key, rows in _rows_by_key(keys).items():
                s = series_map.get(key)
                if s is None:
                    continue
                c = s.count(t_sec[rows])
                hit = c > 0
                vals[rows[hit]] = s.csum[c[hit]] / c[hit]
            out[:, col] = vals

        mean_col(self._hour, hours, FeatureId.H_AVH.index)
        mean_col(self._station, station_ids, FeatureId.H_AVS.index)
        avc = np.full(n, np.nan)
        hmax = np.full(n, np.nan)
        hmin = np.full(n, np.nan)
        for key, rows in _rows_by_key(car_ids).items():
            s = self._car.get(key)
            if s is None:
                continue
            c = s.count(t_sec[rows])
            hit = c > 0
            r, c = rows[hit], c[hit]
            avc[r] = s.csum[c] / c
            hmax[r] = s.runmax[c - 1]
            hmin[r] = s.runmin[c - 1]
        out[:, FeatureId.H_AVC.index] = avc
        out[:, FeatureId.H_MAX.index] = hmax
        out[:, FeatureId.H_MIN.index] = hmin
        return out


def _rows_by_key(keys) -> dict:
    groups = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}


def build_history_index(sessions, target: Target, utc_offset_h: float = 1.0) -> HistoryIndex:
    return HistoryIndex(sessions, target, utc_offset_h)


def local_hours(sessions, utc_offset_h: float) -> list:
    shift = timedelta(hours=utc_offset_h)
    return [(s.arrival + shift).hour for s in sessions]


def static_block(sessions, weather: dict, calendar: CalendarInfo, utc_offset_h: float = 1.0) -> np.ndarray:
    """Calendar and weather slots; historical columns are left at zero."""
    out = np.zeros((len(sessions), N_FEATURES))
    shift = timedelta(hours=utc_offset_h)
    for i, s in enumerate(sessions):
        local = s.arrival + shift
        day = local.date()
        wd = local.weekday()
        hour_key = s.arrival.replace(minute=0, second=0, microsecond=0)
        rec = weather.get(hour_key)
        if rec is None:
            raise FeatureError(f"no weather row for hour {hour_key.isoformat()} (session {s.session_id})")
        out[i, FeatureId.HOUR.index] = local.hour
        out[i, FeatureId.MONTH.index] = local.month
        out[i, FeatureId.SEASON.index] = season_of(local.month)
        out[i, FeatureId.T_WD.index] = wd
        out[i, FeatureId.T_NH.index] = float(calendar.is_national_holiday(day))
        out[i, FeatureId.T_SH.index] = float(calendar.is_school_holiday(day))
        out[i, FeatureId.T_W.index] = float(wd >= 5)
        out[i, FeatureId.M_T.index] = rec.temp_c
        out[i, FeatureId.M_WS.index] = rec.wind_mps
        out[i, FeatureId.M_PV.index] = rec.precip_mm
    return out


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray   # 15 slots in FEATURES order, inactive slots zero
    mask: np.ndarray
    target: float
    car_id: str
    location: str
    arrival: object

    def active(self) -> np.ndarray:
        return self.values[self.mask]


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray   # (n, 15)
    mask: np.ndarray
    target: np.ndarray
    car_ids: tuple
    locations: tuple
    arrivals: tuple

    def __len__(self) -> int:
        return self.values.shape[0]

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(self.values[i].copy(), self.mask.copy(), float(self.target[i]),
                             self.car_ids[i], self.locations[i], self.arrivals[i])


def assemble(static: np.ndarray, history: np.ndarray, variant: Variant, car_ids=None) -> np.ndarray:
    """Merge static and historical blocks under a variant's mask."""
    variant = Variant(variant)
    mask = variant_mask(variant)
    values = np.where(mask[None, :], static + history, 0.0)
    if variant is Variant.MODEL2:
        missing = np.isnan(values[:, FeatureId.H_AVC.index])
        if missing.any():
            who = car_ids[int(np.argmax(missing))] if car_ids is not None else "?"
            raise FeatureError(f"Model 2 requested for car {who!r} with no prior sessions")
    return values


def featurize_many(sessions, index: HistoryIndex, weather: dict, calendar: CalendarInfo,
                   variant: Variant, static=None) -> FeatureMatrix:
    """Featurize a batch; each row's history cutoff is its own arrival.

    ``static`` may carry a precomputed ``static_block`` for these sessions.
    """
    sessions = list(sessions)
    if static is None:
        static = static_block(sessions, weather, calendar, index.utc_offset_h)
    car_ids = tuple(s.car_id for s in sessions)
    hist = index.history_block(car_ids, [s.station_id for s in sessions],
                               local_hours(sessions, index.utc_offset_h),
                               epoch_seconds([s.arrival for s in sessions]))
    values = assemble(static, hist, variant, car_ids)
    return FeatureMatrix(values=values, mask=variant_mask(variant),
                         target=np.array([index.target.of(s) for s in sessions], dtype=float),
                         car_ids=car_ids, locations=tuple(s.location.value for s in sessions),
                         arrivals=tuple(s.arrival for s in sessions))


def featurize(session: ChargingSession, index: HistoryIndex, weather: dict,
              calendar: CalendarInfo, variant: Variant) -> FeatureVector:
    return featurize_many([session], index, weather, calendar, variant).row(0)


def write_feature_csv(path, matrix: FeatureMatrix) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["car_id", "location", "arrival"] + [f.value for f in FEATURES] + ["target"])
        for i in range(len(matrix)):
            writer.writerow([matrix.car_ids[i], matrix.locations[i],
                             matrix.arrivals[i].strftime("%Y-%m-%dT%H:%M:%SZ")]
                            + [repr(float(v)) for v in matrix.values[i]]
                            + [repr(float(matrix.target[i]))])
