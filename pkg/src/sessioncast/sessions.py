"""Charging-session records, file I/O and cleaning rules.

Timestamps are naive ``datetime`` objects holding UTC wall time.
"""

import csv
import json
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from pathlib import Path

SESSION_COLUMNS = ("session_id", "car_id", "station_id", "location", "arrival",
                   "departure", "energy_kwh", "max_power_kw")
WEATHER_COLUMNS = ("hour_start", "temp_c", "wind_mps", "precip_mm")
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

MIN_ENERGY_KWH = 1.0
MIN_DURATION_H = 0.25


class Location(str, Enum):
    WORKPLACE = "workplace"
    RESIDENTIAL = "residential"


class RejectReason(str, Enum):
    NON_POSITIVE_DURATION = "NonPositiveDuration"
    LOW_ENERGY = "LowEnergy"
    SHORT_DURATION = "ShortDuration"
    INFEASIBLE = "Infeasible"


class DataFormatError(ValueError):
    """Malformed input file; the message names the row and field."""


@dataclass(frozen=True)
class ChargingSession:
    session_id: str
    car_id: str
    station_id: str
    location: Location
    arrival: datetime
    departure: datetime
    energy_kwh: float
    max_power_kw: float

    @property
    def duration_h(self) -> float:
        return (self.departure - self.arrival).total_seconds() / 3600.0


@dataclass(frozen=True)
class WeatherRecord:
    hour_start: datetime
    temp_c: float
    wind_mps: float
    precip_mm: float


@dataclass(frozen=True)
class CalendarInfo:
    national_holidays: frozenset = frozenset()
    school_holidays: frozenset = frozenset()

    def is_national_holiday(self, day: date) -> bool:
        return day in self.national_holidays

    def is_school_holiday(self, day: date) -> bool:
        return day in self.school_holidays


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text.strip(), TIMESTAMP_FORMAT)


def format_timestamp(ts: datetime) -> str:
    return ts.strftime(TIMESTAMP_FORMAT)


def _field(row, name, lineno, conv):
    try:
        return conv(row[name])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"row {lineno}: bad value for field '{name}': {row.get(name)!r}") from exc


def _check_header(reader, expected, path):
    if reader.fieldnames is None or tuple(h.strip() for h in reader.fieldnames) != expected:
        raise DataFormatError(f"{path}: expected header {','.join(expected)}, got {reader.fieldnames}")


def parse_sessions(path) -> list:
    """Read a sessions CSV into ``ChargingSession`` objects in file order.

    Row numbers in error messages count the header as row 1. Ordering
    problems such as departure before arrival are left for ``clean_sessions``.
    """
    path = Path(path)
    sessions = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader, SESSION_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            loc = row.get("location", "").strip()
            try:
                location = Location(loc)
            except ValueError:
                raise DataFormatError(f"row {lineno}: unknown location tag {loc!r}") from None
            sessions.append(ChargingSession(
                session_id=_field(row, "session_id", lineno, str),
                car_id=_field(row, "car_id", lineno, str),
                station_id=_field(row, "station_id", lineno, str),
                location=location,
                arrival=_field(row, "arrival", lineno, parse_timestamp),
                departure=_field(row, "departure", lineno, parse_timestamp),
                energy_kwh=_field(row, "energy_kwh", lineno, float),
                max_power_kw=_field(row, "max_power_kw", lineno, float),
            ))
    return sessions


def write_sessions(path, sessions) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SESSION_COLUMNS)
        for s in sessions:
            writer.writerow([s.session_id, s.car_id, s.station_id, s.location.value,
                             format_timestamp(s.arrival), format_timestamp(s.departure),
                             repr(float(s.energy_kwh)), repr(float(s.max_power_kw))])


def rejection_reason(session: ChargingSession):
    """First violated cleaning rule, or ``None`` if the session is kept."""
    dur = session.duration_h
    if dur <= 0:
        return RejectReason.NON_POSITIVE_DURATION
    if session.energy_kwh < MIN_ENERGY_KWH:
        return RejectReason.LOW_ENERGY
    if dur < MIN_DURATION_H:
        return RejectReason.SHORT_DURATION
    if session.energy_kwh > session.max_power_kw * dur:
        return RejectReason.INFEASIBLE
    return None


def clean_sessions(sessions):
    """Split sessions into ``(kept, rejected)``.

    ``rejected`` holds ``(session, RejectReason)`` pairs. Thresholds are
    inclusive on the keep side: exactly 1 kWh or exactly 15 minutes is kept.
    """
    kept, rejected = [], []
    for s in sessions:
        reason = rejection_reason(s)
        if reason is None:
            kept.append(s)
        else:
            rejected.append((s, reason))
    return kept, rejected


def load_weather(path) -> dict:
    """Hourly weather keyed by ``hour_start``; duplicate hours are an error."""
    path = Path(path)
    records = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return records
        _check_header(reader, WEATHER_COLUMNS, path)
        for lineno, row in enumerate(reader, start=2):
            hour = _field(row, "hour_start", lineno, parse_timestamp)
            if hour in records:
                raise DataFormatError(f"row {lineno}: duplicate hour_start {row['hour_start']}")
            rec = WeatherRecord(
                hour_start=hour,
                temp_c=_field(row, "temp_c", lineno, float),
                wind_mps=_field(row, "wind_mps", lineno, float),
                precip_mm=_field(row, "precip_mm", lineno, float),
            )
            if rec.wind_mps < 0 or rec.precip_mm < 0:
                raise DataFormatError(f"row {lineno}: negative wind or precipitation")
            records[hour] = rec
    return records


def write_weather(path, records) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WEATHER_COLUMNS)
        for rec in records:
            writer.writerow([format_timestamp(rec.hour_start), repr(float(rec.temp_c)),
                             repr(float(rec.wind_mps)), repr(float(rec.precip_mm))])


def _parse_dates(values, key):
    try:
        return frozenset(date.fromisoformat(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"calendar: bad date in '{key}'") from exc


def load_calendar(path) -> CalendarInfo:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataFormatError(f"{path}: expected a JSON object")
    return CalendarInfo(
        national_holidays=_parse_dates(raw.get("national_holidays", []), "national_holidays"),
        school_holidays=_parse_dates(raw.get("school_holidays", []), "school_holidays"),
    )


def write_calendar(path, calendar: CalendarInfo) -> None:
    payload = {
        "national_holidays": sorted(d.isoformat() for d in calendar.national_holidays),
        "school_holidays": sorted(d.isoformat() for d in calendar.school_holidays),
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
