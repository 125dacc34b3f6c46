import json
from datetime import date, datetime

import pytest

from sessioncast import sessions as S
from sessioncast.sessions import Location, RejectReason

from .conftest import make_session

HEADER = ",".join(S.SESSION_COLUMNS) + "\n"


class TestParse:
    def test_header_only(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER)
        assert S.parse_sessions(p) == []

    def test_round_trip_three_rows(self, tmp_path):
        rows = [make_session(f"S{i}", car=f"C{i}", arrival=datetime(2022, 1, 1 + i, 7, 30), hours=1.5 + i,
                             energy=5.25 * (i + 1), location=loc)
                for i, loc in enumerate([Location.WORKPLACE, Location.RESIDENTIAL, Location.WORKPLACE])]
        p = tmp_path / "s.csv"
        S.write_sessions(p, rows)
        parsed = S.parse_sessions(p)
        assert parsed == rows
        S.write_sessions(tmp_path / "again.csv", parsed)
        assert (tmp_path / "again.csv").read_bytes() == p.read_bytes()

    def test_departure_before_arrival_parses_then_rejected(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "S1,C1,P1,workplace,2022-01-01T10:00:00Z,2022-01-01T09:00:00Z,5,22\n")
        (s,) = S.parse_sessions(p)
        kept, rejected = S.clean_sessions([s])
        assert kept == [] and rejected[0][1] is RejectReason.NON_POSITIVE_DURATION

    def test_malformed_row_names_row_and_field(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "S1,C1,P1,workplace,2022-01-01T10:00:00Z,2022-01-01T12:00:00Z,abc,22\n")
        with pytest.raises(S.DataFormatError, match="row 2.*energy_kwh"):
            S.parse_sessions(p)

    def test_unknown_location(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text(HEADER + "S1,C1,P1,garage,2022-01-01T10:00:00Z,2022-01-01T12:00:00Z,5,22\n")
        with pytest.raises(S.DataFormatError, match="garage"):
            S.parse_sessions(p)

    def test_wrong_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(S.DataFormatError):
            S.parse_sessions(p)


class TestClean:
    def test_low_energy(self):
        _, rej = S.clean_sessions([make_session(energy=0.5)])
        assert rej[0][1] is RejectReason.LOW_ENERGY

    def test_short_duration(self):
        _, rej = S.clean_sessions([make_session(hours=10 / 60)])
        assert rej[0][1] is RejectReason.SHORT_DURATION

    def test_infeasible(self):
        # 50 kWh in 2 h at 22 kW exceeds the 44 kWh cap
        _, rej = S.clean_sessions([make_session(energy=50.0, hours=2.0, power=22.0)])
        assert rej[0][1] is RejectReason.INFEASIBLE

    def test_boundaries_are_kept(self):
        kept, _ = S.clean_sessions([make_session(energy=1.0, hours=0.25, power=4.0)])
        assert len(kept) == 1

    def test_partition_and_idempotence(self):
        batch = [make_session(f"S{i}", energy=e, hours=h)
                 for i, (e, h) in enumerate([(0.5, 2), (5, 2), (5, 0.1), (60, 2), (20, 3)])]
        kept, rej = S.clean_sessions(batch)
        assert len(kept) + len(rej) == len(batch)
        assert S.clean_sessions(kept)[0] == kept


class TestWeatherCalendar:
    def test_empty_weather_file(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text("")
        assert S.load_weather(p) == {}

    def test_day_of_weather_has_24_keys(self, tmp_path):
        recs = [S.WeatherRecord(datetime(2022, 1, 1, h), 1.0 + h, 2.0, 0.0) for h in range(24)]
        p = tmp_path / "w.csv"
        S.write_weather(p, recs)
        loaded = S.load_weather(p)
        assert len(loaded) == 24
        assert loaded[datetime(2022, 1, 1, 5)].temp_c == 6.0

    def test_duplicate_hour_is_error(self, tmp_path):
        p = tmp_path / "w.csv"
        row = "2022-01-01T00:00:00Z,1,2,0\n"
        p.write_text(",".join(S.WEATHER_COLUMNS) + "\n" + row + row)
        with pytest.raises(S.DataFormatError, match="duplicate"):
            S.load_weather(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            S.load_weather(tmp_path / "nope.csv")

    def test_date_in_both_sets(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"national_holidays": ["2022-04-27"], "school_holidays": ["2022-04-27"]}))
        cal = S.load_calendar(p)
        d = date(2022, 4, 27)
        assert cal.is_national_holiday(d) and cal.is_school_holiday(d)

    def test_calendar_round_trip(self, tmp_path):
        cal = S.CalendarInfo(frozenset({date(2022, 1, 1)}), frozenset({date(2022, 7, 20), date(2022, 7, 21)}))
        S.write_calendar(tmp_path / "c.json", cal)
        assert S.load_calendar(tmp_path / "c.json") == cal

    def test_bad_calendar_date(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"national_holidays": ["not-a-date"]}))
        with pytest.raises(S.DataFormatError):
            S.load_calendar(p)
