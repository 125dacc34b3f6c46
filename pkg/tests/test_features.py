from datetime import date, datetime, timedelta

import numpy as np
import pytest

from sessioncast import features as F
from sessioncast.features import FeatureId, Target, Variant
from sessioncast.sessions import CalendarInfo

from .conftest import flat_weather, make_session
from .oracles import brute_history

T0 = datetime(2022, 3, 1)
WEATHER = flat_weather(T0 - timedelta(days=1), 24 * 60)


def _vec(session, history, variant=Variant.MODEL2, target=Target.ENERGY, calendar=CalendarInfo()):
    index = F.build_history_index(history, target)
    return F.featurize(session, index, WEATHER, calendar, variant)


class TestLayout:
    def test_fifteen_slots(self):
        assert F.N_FEATURES == 15
        assert [f.value for f in F.FEATURES][:3] == ["HOUR", "MONTH", "SEASON"]

    def test_variant_masks(self):
        m1 = F.variant_mask(Variant.MODEL1)
        assert m1.sum() == 11
        assert not any(m1[f.index] for f in F.MODEL2_ONLY)
        assert F.variant_mask(Variant.MODEL2).all()

    def test_model1_inactive_slots_zero(self):
        hist = [make_session("A", arrival=T0, energy=10)]
        v = _vec(make_session("B", arrival=T0 + timedelta(days=1)), hist, Variant.MODEL1)
        assert all(v.values[f.index] == 0 for f in F.MODEL2_ONLY)
        assert len(v.active()) == 11

    def test_seasons(self):
        assert [F.season_of(m) for m in (12, 1, 3, 6, 9, 11)] == [0, 0, 1, 2, 3, 3]


class TestCalendarSlots:
    def test_saturday_and_local_hour(self):
        # 2022-03-05 is a Saturday; 07:30 UTC is 08:30 local
        s = make_session(arrival=datetime(2022, 3, 5, 7, 30))
        v = _vec(s, [], Variant.MODEL1)
        assert v.values[FeatureId.T_W.index] == 1.0
        assert v.values[FeatureId.T_WD.index] == 5
        assert v.values[FeatureId.HOUR.index] == 8

    def test_local_midnight_rolls_date(self):
        # 23:30 UTC on Friday is Saturday 00:30 local
        s = make_session(arrival=datetime(2022, 3, 4, 23, 30))
        v = _vec(s, [], Variant.MODEL1)
        assert v.values[FeatureId.T_W.index] == 1.0
        assert v.values[FeatureId.HOUR.index] == 0

    def test_holiday_flags(self):
        cal = CalendarInfo(frozenset({date(2022, 3, 2)}), frozenset({date(2022, 3, 2)}))
        v = _vec(make_session(arrival=datetime(2022, 3, 2, 9)), [], Variant.MODEL1, calendar=cal)
        assert v.values[FeatureId.T_NH.index] == 1.0 and v.values[FeatureId.T_SH.index] == 1.0

    def test_weather_lookup(self):
        w = dict(WEATHER)
        key = datetime(2022, 3, 2, 9)
        w[key] = type(w[key])(key, -3.5, 7.0, 1.2)
        index = F.build_history_index([], Target.ENERGY)
        v = F.featurize(make_session(arrival=key.replace(minute=40)), index, w, CalendarInfo(), Variant.MODEL1)
        assert v.values[FeatureId.M_T.index] == -3.5
        assert v.values[FeatureId.M_WS.index] == 7.0
        assert v.values[FeatureId.M_PV.index] == 1.2

    def test_missing_weather(self):
        index = F.build_history_index([], Target.ENERGY)
        with pytest.raises(F.FeatureError, match="weather"):
            F.featurize(make_session(arrival=datetime(2030, 1, 1)), index, WEATHER, CalendarInfo(), Variant.MODEL1)


class TestHistory:
    def test_car_stats_example(self):
        hist = [make_session("A", arrival=T0, energy=10.0), make_session("B", arrival=T0 + timedelta(days=1), energy=14.0)]
        v = _vec(make_session("Q", arrival=T0 + timedelta(days=2)), hist)
        assert v.values[FeatureId.H_AVC.index] == 12.0
        assert v.values[FeatureId.H_MAX.index] == 14.0
        assert v.values[FeatureId.H_MIN.index] == 10.0

    def test_duration_target(self):
        hist = [make_session("A", arrival=T0, hours=3.0), make_session("B", arrival=T0 + timedelta(days=1), hours=5.0)]
        v = _vec(make_session("Q", arrival=T0 + timedelta(days=2)), hist, target=Target.DURATION)
        assert v.values[FeatureId.H_AVC.index] == 4.0

    def test_empty_history_counts(self):
        index = F.build_history_index([], Target.ENERGY)
        assert index.car_stats("C1", T0) == (0, None, None, None)
        assert index.global_stats(T0) == (0, None)

    def test_model2_unseen_car(self):
        hist = [make_session("A", car="other", arrival=T0)]
        with pytest.raises(F.FeatureError, match="C1"):
            _vec(make_session("Q", arrival=T0 + timedelta(days=1)), hist)

    def test_simultaneous_arrival_excluded(self):
        hist = [make_session("A", arrival=T0, energy=10.0)]
        with pytest.raises(F.FeatureError):
            _vec(make_session("Q", arrival=T0), hist)

    def test_first_session_at_hour_uses_global_mean(self):
        hist = [make_session("A", car="X", station="P9", arrival=T0 + timedelta(hours=2), energy=6.0),
                make_session("B", car="Y", station="P9", arrival=T0 + timedelta(hours=5), energy=10.0)]
        q = make_session("Q", car="X", station="P1", arrival=T0 + timedelta(days=1, hours=12))
        v = _vec(q, hist)
        assert v.values[FeatureId.H_AVH.index] == 8.0
        assert v.values[FeatureId.H_AVS.index] == 8.0

    def test_future_sessions_do_not_change_features(self):
        hist = [make_session(f"A{i}", arrival=T0 + timedelta(hours=7 * i), energy=3.0 + i) for i in range(10)]
        q = make_session("Q", arrival=T0 + timedelta(hours=33))
        later = [make_session(f"Z{i}", arrival=T0 + timedelta(hours=40 + i), energy=99.0) for i in range(5)]
        a = _vec(q, hist)
        b = _vec(q, hist + later)
        assert np.array_equal(a.values, b.values)

    def test_matches_brute_force_on_synthetic_sample(self, small_synth):
        sessions = small_synth.sessions
        index = F.build_history_index(sessions, Target.ENERGY)
        rng = np.random.default_rng(0)
        for i in rng.choice(len(sessions), 40, replace=False):
            q = sessions[i]
            want = brute_history(sessions, q, Target.ENERGY)
            if want["H_AVC"] is None:
                continue
            got = F.featurize(q, index, small_synth.weather_map, small_synth.calendar, Variant.MODEL2).values
            for name, val in want.items():
                assert got[FeatureId[name].index] == pytest.approx(val, rel=1e-12)

    def test_deleting_future_rows_is_invisible(self, small_synth):
        sessions = small_synth.sessions
        full = F.build_history_index(sessions, Target.DURATION)
        for q in sessions[200::97][:10]:
            cut = [s for s in sessions if s.arrival < q.arrival]
            part = F.build_history_index(cut, Target.DURATION)
            a = F.featurize(q, full, small_synth.weather_map, small_synth.calendar, Variant.MODEL1).values
            b = F.featurize(q, part, small_synth.weather_map, small_synth.calendar, Variant.MODEL1).values
            assert np.array_equal(a, b)


class TestBatch:
    def test_batch_equals_single(self, small_synth):
        sessions = small_synth.sessions[100:140]
        index = F.build_history_index(small_synth.sessions, Target.ENERGY)
        mat = F.featurize_many(sessions, index, small_synth.weather_map, small_synth.calendar, Variant.MODEL1)
        for i, s in enumerate(sessions):
            one = F.featurize(s, index, small_synth.weather_map, small_synth.calendar, Variant.MODEL1)
            assert np.array_equal(mat.values[i], one.values)
            assert mat.target[i] == s.energy_kwh

    def test_csv_columns(self, tmp_path, small_synth):
        index = F.build_history_index(small_synth.sessions, Target.ENERGY)
        mat = F.featurize_many(small_synth.sessions[:5], index, small_synth.weather_map,
                               small_synth.calendar, Variant.MODEL1)
        F.write_feature_csv(tmp_path / "f.csv", mat)
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0].split(",") == ["car_id", "location", "arrival"] + [f.value for f in F.FEATURES] + ["target"]
        assert len(lines) == 6
