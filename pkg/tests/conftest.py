from datetime import date, datetime, timedelta
from types import SimpleNamespace

import pytest

from sessioncast import synthgen
from sessioncast.sessions import CalendarInfo, ChargingSession, Location, WeatherRecord


def make_session(sid="S1", car="C1", station="P1", location=Location.RESIDENTIAL,
                 arrival=datetime(2022, 3, 1, 8), hours=2.0, energy=10.0, power=22.0):
    return ChargingSession(session_id=sid, car_id=car, station_id=station, location=Location(location),
                           arrival=arrival, departure=arrival + timedelta(hours=hours),
                           energy_kwh=energy, max_power_kw=power)


def flat_weather(start: datetime, n_hours: int, temp=10.0):
    return {start + timedelta(hours=h): WeatherRecord(start + timedelta(hours=h), temp, 3.0, 0.0)
            for h in range(n_hours)}


def build_synth(config):
    cal = synthgen.gen_calendar(config.start_date, config.end_date, config.fixed_holidays,
                                config.easter_offsets, config.school_breaks)
    weather = synthgen.gen_weather(config.seed, config.start_date, config.end_date, config.utc_offset_h)
    sessions = synthgen.gen_sessions(config, cal, weather)
    return SimpleNamespace(config=config, calendar=cal, weather=weather,
                           weather_map={w.hour_start: w for w in weather}, sessions=sessions)


@pytest.fixture(scope="session")
def default_synth():
    """Default two-year synthetic data set, seed 0."""
    return build_synth(synthgen.SynthConfig(seed=0))


SMALL_CONFIG = synthgen.SynthConfig(seed=3, n_cars_workplace=8, n_cars_residential=14,
                                    start_date=date(2022, 1, 1), end_date=date(2022, 6, 1))


@pytest.fixture(scope="session")
def small_synth():
    """Five months, a handful of cars: enough for fast end-to-end runs."""
    return build_synth(SMALL_CONFIG)


@pytest.fixture
def empty_calendar():
    return CalendarInfo()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
