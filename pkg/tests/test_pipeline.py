import json
from dataclasses import replace
from datetime import datetime, timedelta

import numpy as np
import pytest

from sessioncast import features as F
from sessioncast import pipeline as P
from sessioncast.sessions import CalendarInfo, Location, clean_sessions

from .conftest import flat_weather, make_session

# every stratum in reduced mode: first grid values, no feature selection
QUICK = P.PipelineConfig(seed=1, initial_window_days=90, profile="fast", tune_rows=60, fit_rows=150,
                         svr_row_cap=100, min_stratum_rows=10 ** 6)


@pytest.fixture(scope="module")
def small_data(small_synth):
    kept, _ = clean_sessions(small_synth.sessions)
    return P.Dataset(kept, small_synth.weather_map, small_synth.calendar)


@pytest.fixture(scope="module")
def week0(small_data):
    return P.run_week(small_data, 0, QUICK)[0]


def _daily(n_days, start=datetime(2022, 1, 1, 12), cars=("C1",)):
    sessions = [make_session(f"S{d:04d}{c}", car=c, arrival=start + timedelta(days=d), energy=5.0 + d % 7)
                for d in range(n_days) for c in cars]
    weather = flat_weather(datetime(2021, 12, 31), 24 * (n_days + 3))
    return P.Dataset(sessions, weather, CalendarInfo())


def _cell(y, variant, ens, shadow, loc="residential", target="energy"):
    y = np.asarray(y, float)
    fam = {f: np.asarray(ens, float) for f in ("linear", "svr", "tree", "forest", "boosted")}
    fam1 = {f: np.asarray(shadow, float) for f in fam}
    return P.CellForecast(loc, target, [f"S{i}" for i in range(len(y))], y, np.array(variant, dtype=object),
                          np.asarray(ens, float), fam, np.asarray(shadow, float), fam1)


class TestMetrics:
    def test_hand_fixture(self):
        rmse, mae, r2 = P.metrics([1, 2, 3], [2, 2, 2])
        assert rmse == pytest.approx(np.sqrt(2 / 3), abs=1e-15)
        assert mae == pytest.approx(2 / 3, abs=1e-15)
        assert r2 == 0.0

    def test_perfect(self):
        assert P.metrics([1.0, 4.0, 2.5], [1.0, 4.0, 2.5]) == (0.0, 0.0, 1.0)

    def test_mean_forecast(self):
        y = np.array([3.0, 9.0, 4.0, 1.0])
        assert P.metrics(y, np.full(4, y.mean()))[2] == pytest.approx(0.0, abs=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            P.metrics([1, 2], [1])
        with pytest.raises(ValueError):
            P.metrics([], [])


class TestClosest:
    def test_four_row_tally(self):
        y = [0.0, 0.0, 0.0, 0.0]
        forecasts = {"a": [1, 2, 1, 5], "b": [2, 2, 1, 5], "c": [3, 1, 1, 4]}
        # row 0 -> a; row 1 -> c; row 2 three-way tie; row 3 -> c
        got = P.closest_model_stats(forecasts, y)
        assert got["a"] == pytest.approx(100 * (1 + 1 / 3) / 4)
        assert got["b"] == pytest.approx(100 * (1 / 3) / 4)
        assert got["c"] == pytest.approx(100 * (2 + 1 / 3) / 4)
        assert sum(got.values()) == pytest.approx(100.0)

    def test_two_way_tie(self):
        assert P.closest_model_stats({"a": [1.0], "b": [-1.0]}, [0.0]) == {"a": 50.0, "b": 50.0}


class TestSplit:
    def test_arithmetic(self):
        data = _daily(400)
        sp = P.dynamic_split(data, 0)
        assert data.origin == datetime(2022, 1, 1)
        assert sp.test_start == datetime(2023, 1, 1) and sp.test_end == datetime(2023, 1, 8)
        assert sp.n_train + sp.n_val == 365
        assert sp.n_val == 73
        assert sp.n_test == 7
        sp2 = P.dynamic_split(data, 2)
        assert sp2.test_start == datetime(2023, 1, 15)
        assert sp2.n_train + sp2.n_val == 379

    def test_lookback_truncates(self):
        data = _daily(400)
        sp = P.dynamic_split(data, 0, lookback_days=60)
        assert sp.window_start == datetime(2022, 11, 2)
        assert sp.n_train + sp.n_val == 60

    def test_short_data(self):
        with pytest.raises(P.HorizonError):
            P.dynamic_split(_daily(300), 0)

    def test_round_trip(self):
        sp = P.dynamic_split(_daily(400), 1)
        assert P.SplitPlan.from_dict(json.loads(json.dumps(sp.to_dict()))) == sp


class TestRouting:
    def test_route(self):
        assert P.route("A", {"A": 3}).variant is F.Variant.MODEL2
        assert P.route("B", {"A": 3}) == P.RouteDecision(F.Variant.MODEL1, 0)


class TestReport:
    def test_scopes_and_routing(self):
        cell = _cell([1, 2, 3, 4], ["model1", "model2", "model2", "model2"], [1, 2, 3, 5], [0, 0, 0, 0])
        rep = P.build_report([cell])
        assert rep.routing == {"residential": {"model1": 1, "model2": 3}}
        assert rep.get("residential", "energy", scope="model2").n == 3
        shadow = rep.get("residential", "energy", scope="model1_on_model2_rows")
        assert shadow.n == 3 and shadow.mae == pytest.approx(3.0)
        assert rep.get("residential", "energy").mae == pytest.approx(0.25)
        assert all(r.rmse >= r.mae for r in rep.rows)

    def test_no_model2_rows_no_shadow_scope(self):
        rep = P.build_report([_cell([1, 2], ["model1", "model1"], [1, 2], [1, 2])])
        assert rep.get("residential", "energy", scope="model1_on_model2_rows") is None

    def test_pooled_sse_identity(self):
        rng = np.random.default_rng(0)
        weeks = []
        for n in (5, 9, 3):
            y = rng.normal(size=n)
            weeks.append(_cell(y, ["model2"] * n, y + rng.normal(size=n), y))
        pooled = P.build_report([P.CellForecast.concat(weeks)]).get("residential", "energy")
        per_week = [P.build_report([c]).get("residential", "energy") for c in weeks]
        assert pooled.rmse ** 2 * pooled.n == pytest.approx(sum(r.rmse ** 2 * r.n for r in per_week))
        assert pooled.n == 17

    def test_report_round_trip(self):
        rep = P.build_report([_cell([1, 2, 3], ["model1", "model2", "model2"], [1, 2, 2], [0, 1, 1])])
        assert P.MetricsReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep


class _Week:
    def __init__(self, strata):
        self.strata = strata


def _stratum(masks, imps, meta):
    return P.StratumResult("workplace", "energy", "model1", "ok", masks=masks, importances=imps,
                           ensemble={"meta_importance": meta})


class TestAggregateImportance:
    def test_two_week_fixture(self):
        on = [True] + [False] * 14
        both = [True, True] + [False] * 13
        imp_a = [0.6, 0.4] + [0.0] * 13
        imp_b = [1.0] + [0.0] * 14
        weeks = [
            _Week([_stratum({"tree": both}, {"tree": imp_a}, {"linear": 0.0, "tree": 0.7, "boosted": 0.3})]),
            _Week([_stratum({"tree": on}, {"tree": imp_b}, {"linear": 0.5, "tree": 0.5})]),
        ]
        summ = P.aggregate_importance(weeks)
        tree = summ.features[("workplace", "energy", "model1")]["tree"]
        assert tree["HOUR"] == (1.0, pytest.approx(0.8))
        assert tree["MONTH"] == (0.5, pytest.approx(0.4))
        assert tree["SEASON"] == (0.0, 0.0)
        bases = summ.bases[("workplace", "energy")]
        assert bases["tree"] == (1.0, pytest.approx(0.6))
        assert bases["linear"] == (0.5, pytest.approx(0.5))
        assert bases["svr"] == (0.0, 0.0)
        assert summ.n_iterations[("workplace", "energy", "model1")] == 2

    def test_skipped_strata_ignored(self):
        weeks = [_Week([P.StratumResult("workplace", "energy", "model2", "skipped", reason="few rows")])]
        assert P.aggregate_importance(weeks).n_iterations == {}


class TestRunWeek:
    def test_every_test_row_forecast_once(self, small_data, week0):
        sp = week0.split
        test_rows = small_data.rows_between(sp.test_start, sp.test_end)
        for cell in week0.cells:
            want = {small_data.session_ids[i] for i in test_rows if small_data.locations[i] == cell.location}
            assert sorted(cell.session_ids) == sorted(want)
            assert len(cell.ensemble) == len(cell.session_ids)
            assert np.isfinite(cell.ensemble).all()

    def test_routing_matches_history(self, small_data, week0):
        sp = week0.split
        window = small_data.rows_between(sp.window_start, sp.test_start)
        for cell in week0.cells:
            seen = {small_data.car_ids[i] for i in window if small_data.locations[i] == cell.location}
            car_of = {small_data.session_ids[i]: small_data.car_ids[i] for i in range(len(small_data))}
            for sid, v in zip(cell.session_ids, cell.variant):
                assert (v == "model2") == (car_of[sid] in seen)

    def test_week_round_trip(self, week0):
        again = P.WeeklyIterationResult.from_dict(json.loads(json.dumps(week0.to_dict())))
        assert json.dumps(again.to_dict()) == json.dumps(week0.to_dict())

    def test_deterministic(self, small_data, week0):
        again = P.run_week(small_data, 0, QUICK)[0]
        assert json.dumps(again.to_dict()) == json.dumps(week0.to_dict())

    def test_future_data_is_invisible(self, small_synth, small_data, week0):
        sp = week0.split
        changed = []
        for s in small_data.sessions:
            if s.arrival >= sp.test_start:
                s = replace(s, energy_kwh=s.energy_kwh * 1.5 + 1, departure=s.departure + timedelta(hours=2))
            changed.append(s)
        extra = make_session("NEW", car=small_data.sessions[0].car_id, arrival=sp.test_end + timedelta(hours=3))
        data2 = P.Dataset(changed + [extra], small_synth.weather_map, small_synth.calendar)
        other = P.run_week(data2, 0, QUICK)[0]
        for a, b in zip(week0.cells, other.cells):
            assert a.session_ids == b.session_ids
            assert np.array_equal(a.ensemble, b.ensemble)
            assert np.array_equal(a.model1_ensemble, b.model1_ensemble)

    def test_car_constant_target_is_learned(self, small_synth):
        kept, _ = clean_sessions(small_synth.sessions)
        level = {c: 5.0 + 3.0 * i for i, c in enumerate(sorted({s.car_id for s in kept}))}
        fixed = [replace(s, energy_kwh=level[s.car_id]) for s in kept]
        data = P.Dataset(fixed, small_synth.weather_map, small_synth.calendar)
        cfg = replace(QUICK, targets=(F.Target.ENERGY,), locations=(Location.RESIDENTIAL,))
        rep = P.run_week(data, 0, cfg)[0].metrics
        # the car mean is the target, so a linear read-out is exact
        assert rep.get("residential", "energy", "linear", "model2").r2 == pytest.approx(1.0, abs=1e-6)
        assert (rep.get("residential", "energy", "ensemble", "model2").r2
                > rep.get("residential", "energy", "ensemble", "model1_on_model2_rows").r2)

    def test_retune_every_reuses_parameters(self, small_data):
        cfg = replace(QUICK, retune_every=2, locations=(Location.RESIDENTIAL,), targets=(F.Target.ENERGY,))
        h = P.run_horizon(small_data, 2, cfg)
        assert all(s.retuned for s in h.weeks[0].strata)
        assert not any(s.retuned for s in h.weeks[1].strata)
        assert h.weeks[1].strata[0].selections == {}

    def test_replay_caps_training_rows(self, small_data):
        cfg = replace(QUICK, mode="replay", replay_cap=80, fit_rows=None, locations=(Location.RESIDENTIAL,),
                      targets=(F.Target.DURATION,))
        week = P.run_week(small_data, 0, cfg)[0]
        assert all(s.n_fit <= 80 for s in week.strata if s.status == "ok")

    def test_horizon_pools_weeks(self, small_data):
        cfg = replace(QUICK, locations=(Location.WORKPLACE,), targets=(F.Target.DURATION,))
        h = P.run_horizon(small_data, 2, cfg)
        n = sum(c.y_true.size for w in h.weeks for c in w.cells)
        assert h.aggregate.get("workplace", "duration").n == n

    def test_horizon_too_long(self, small_data):
        with pytest.raises(P.HorizonError):
            P.run_horizon(small_data, 60, QUICK)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            replace(QUICK, k=1).validate()
        with pytest.raises(ValueError):
            replace(QUICK, initial_window_days=30).validate()


class TestLookback:
    def test_one_report_per_window(self, small_data):
        cfg = replace(QUICK, locations=(Location.WORKPLACE,), targets=(F.Target.ENERGY,))
        out = P.lookback_study(small_data, (60, 100), 1, cfg)
        assert sorted(out) == [60, 100]
        assert out[60].get("workplace", "energy").n == out[100].get("workplace", "energy").n
