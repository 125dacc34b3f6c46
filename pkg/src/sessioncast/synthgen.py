"""Seeded synthetic session logs, hourly weather and holiday calendars.

Each car carries a persistent profile (habitual arrival hour, energy level,
duration-mode preferences, weekday rhythm), so per-car history carries real
signal. Distribution targets:

* workplace: arrivals around 07:00-09:00 local, workday-length stays, very
  few weekend sessions, mean energy near 21 kWh;
* residential: evening-heavy arrivals, bimodal stays (short stops around
  3 h, overnight around 16 h), flat weekday profile.
"""

import math
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from datetime import date, datetime, timedelta

import numpy as np
from scipy.special import ndtr, ndtri

from .sessions import CalendarInfo, ChargingSession, Location, WeatherRecord

STATION_MAX_POWER_KW = 22.0
CAR_POWER_LEVELS_KW = (3.7, 7.4, 11.0, 22.0)


@dataclass(frozen=True)
class DurationMode:
    weight: float
    mean_h: float
    sd_h: float
    low_h: float
    high_h: float


@dataclass(frozen=True)
class LocationProfile:
    # (weight, mean local hour, between-car sd) of habitual arrival hours
    arrival_modes: tuple
    arrival_session_sd_h: float
    duration_modes: tuple
    # Dirichlet concentration for per-car mode preferences around the weights
    mode_concentration: float
    # per-car additive shift on every mode mean, sd in hours
    car_duration_shift_sd_h: float
    # per-weekday multiplier on each mode weight, Monday first
    weekday_mode_boost: tuple
    # arrivals at or after this local hour multiply mode weights by evening_mode_boost
    evening_hour: int
    evening_mode_boost: tuple
    energy_median_kwh: float
    energy_between_sigma: float
    energy_within_sigma: float
    daily_rate_range: tuple
    weekday_weights: tuple
    national_holiday_factor: float
    school_holiday_factor: float
    cars_per_station: float
    home_station_share: float
    # when set, the first duration mode ends near a per-car habitual local departure hour
    departure_anchor_h: float = None


WORKPLACE_PROFILE = LocationProfile(
    arrival_modes=((0.85, 8.0, 0.7), (0.15, 12.5, 1.5)),
    arrival_session_sd_h=0.5,
    duration_modes=(
        DurationMode(0.85, 9.2, 0.5, 2.0, 12.5),
        DurationMode(0.15, 3.5, 1.3, 0.5, 6.5),
    ),
    mode_concentration=1.0,
    car_duration_shift_sd_h=0.9,
    weekday_mode_boost=((1, 1),) * 7,
    evening_hour=15,
    evening_mode_boost=(0.3, 1.5),
    energy_median_kwh=17.0,
    energy_between_sigma=0.65,
    energy_within_sigma=0.5,
    daily_rate_range=(0.1, 0.32),
    weekday_weights=(1.0, 1.0, 1.0, 0.95, 0.6, 0.03, 0.02),
    national_holiday_factor=0.1,
    school_holiday_factor=0.8,
    cars_per_station=3.0,
    home_station_share=0.6,
    departure_anchor_h=17.3,
)

RESIDENTIAL_PROFILE = LocationProfile(
    arrival_modes=((0.6, 18.0, 1.4), (0.25, 12.5, 2.0), (0.15, 21.0, 1.0)),
    arrival_session_sd_h=1.6,
    duration_modes=(
        DurationMode(0.39, 3.0, 1.3, 0.5, 7.5),
        DurationMode(0.54, 15.5, 2.2, 8.0, 22.0),
        DurationMode(0.07, 36.0, 10.0, 22.0, 90.0),
    ),
    mode_concentration=3.0,
    car_duration_shift_sd_h=0.7,
    weekday_mode_boost=((1, 1, 1),) * 4 + ((1, 1, 1.6), (1, 1, 1.4), (1, 1, 0.8)),
    evening_hour=17,
    evening_mode_boost=(0.7, 1.4, 1.0),
    energy_median_kwh=21.0,
    energy_between_sigma=0.55,
    energy_within_sigma=0.4,
    daily_rate_range=(0.12, 0.45),
    weekday_weights=(1.0,) * 7,
    national_holiday_factor=1.0,
    school_holiday_factor=1.0,
    cars_per_station=2.0,
    home_station_share=0.85,
)

# fixed-date holidays as (month, day); Easter-relative ones as day offsets
DUTCH_FIXED_HOLIDAYS = ((1, 1), (4, 27), (5, 5), (12, 25), (12, 26))
DUTCH_EASTER_OFFSETS = (-2, 0, 1, 39, 49, 50)
# school breaks as (month, day, length in days)
DUTCH_SCHOOL_BREAKS = ((2, 18, 9), (4, 29, 9), (7, 15, 44), (10, 14, 9), (12, 23, 16))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_cars_workplace: int = 32
    n_cars_residential: int = 120
    start_date: date = date(2022, 1, 1)
    end_date: date = date(2024, 1, 1)
    utc_offset_h: int = 1
    # share of cars whose first session falls in the later part of the range
    late_joiner_fraction: float = 0.25
    late_joiner_start: float = 0.45
    # share of cars that stop charging before the end of the range
    churn_fraction: float = 0.1
    energy_temp_coef: float = 0.012
    # rough ceiling on a car's own energy spread, so big-battery cars stay predictable
    energy_within_cap_kwh: float = 5.0
    energy_power_hours: float = 2.5
    workplace: LocationProfile = WORKPLACE_PROFILE
    residential: LocationProfile = RESIDENTIAL_PROFILE
    fixed_holidays: tuple = DUTCH_FIXED_HOLIDAYS
    easter_offsets: tuple = DUTCH_EASTER_OFFSETS
    school_breaks: tuple = DUTCH_SCHOOL_BREAKS

    def validate(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.end_date <= self.start_date:
            raise ValueError("end_date must be after start_date")
        if self.n_cars_workplace <= 0 and self.n_cars_residential <= 0:
            raise ValueError("need at least one car")
        if self.n_cars_workplace < 0 or self.n_cars_residential < 0:
            raise ValueError("car counts must be non-negative")
        for prof in (self.workplace, self.residential):
            for weights in (
                [m[0] for m in prof.arrival_modes],
                [m.weight for m in prof.duration_modes],
            ):
                if not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
                    raise ValueError("mixture weights must sum to 1")
            spreads = [m[2] for m in prof.arrival_modes] + [m.sd_h for m in prof.duration_modes]
            spreads += [prof.arrival_session_sd_h, prof.energy_between_sigma,
                        prof.energy_within_sigma, self.energy_within_cap_kwh,
                        self.energy_power_hours]
            if min(spreads) <= 0:
                raise ValueError("spreads must be positive")


@dataclass(frozen=True)
class CarProfile:
    car_id: str
    location: Location
    home_station_id: str
    arrival_mean_h: float
    arrival_sd_h: float
    energy_median_kwh: float
    energy_sd_kwh: float
    mode_weights: tuple
    duration_shift_h: float
    weekday_activity: tuple
    onboard_power_kw: float
    first_day: int
    last_day: int


def config_from_dict(raw: dict, base: SynthConfig = None) -> SynthConfig:
    """Apply a (possibly partial, nested) JSON-style dict onto a config."""
    base = base or SynthConfig()
    return _merge(base, raw)


def _merge(obj, raw):
    if not isinstance(raw, dict):
        raise ValueError(f"expected an object for {type(obj).__name__}")
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, val in raw.items():
        if key not in known:
            raise ValueError(f"unknown synth config key {key!r}")
        cur = getattr(obj, key)
        if is_dataclass(cur):
            updates[key] = _merge(cur, val)
        elif isinstance(cur, date):
            updates[key] = date.fromisoformat(val)
        elif key == "duration_modes":
            updates[key] = tuple(DurationMode(**m) if isinstance(m, dict) else DurationMode(*m)
                                 for m in val)
        elif isinstance(cur, tuple):
            updates[key] = _as_tuple(val)
        elif cur is None or val is None:
            updates[key] = None if val is None else float(val)
        else:
            updates[key] = type(cur)(val)
    return replace(obj, **updates)


def _as_tuple(val):
    return tuple(_as_tuple(v) for v in val) if isinstance(val, (list, tuple)) else val


def config_to_dict(cfg: SynthConfig) -> dict:
    def conv(v):
        if isinstance(v, date):
            return v.isoformat()
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v
    return conv(asdict(cfg))


def easter_sunday(year: int) -> date:
    a = year % 19
    b, c = divmod(year, 100)
    d, e = divmod(b, 4)
    f = (b + 8) // 25
    g = (b - f + 1) // 3
    h = (19 * a + b - d - g + 15) % 30
    i, k = divmod(c, 4)
    l = (32 + 2 * e + 2 * i - h - k) % 7
    m = (a + 11 * h + 22 * l) // 451
    month, day = divmod(h + l - 7 * m + 114, 31)
    return date(year, month, day + 1)


def gen_calendar(start: date, end: date, fixed_holidays=DUTCH_FIXED_HOLIDAYS,
                 easter_offsets=DUTCH_EASTER_OFFSETS,
                 school_breaks=DUTCH_SCHOOL_BREAKS) -> CalendarInfo:
    """Holiday sets covering ``[start, end)`` built from yearly rules."""
    if end <= start:
        raise ValueError("empty date range")
    national, school = set(), set()
    for year in range(start.year - 1, end.year + 1):
        for month, day in fixed_holidays:
            national.add(date(year, month, day))
        easter = easter_sunday(year)
        national.update(easter + timedelta(days=off) for off in easter_offsets)
        for month, day, length in school_breaks:
            first = date(year, month, day)
            school.update(first + timedelta(days=k) for k in range(length))
    in_range = lambda d: start <= d < end  # noqa: E731
    return CalendarInfo(national_holidays=frozenset(filter(in_range, national)),
                        school_holidays=frozenset(filter(in_range, school)))


def gen_weather(seed: int, start: date, end: date, utc_offset_h: int = 1) -> list:
    """Hourly UTC weather rows: seasonal + diurnal temperature with AR(1) noise."""
    if end <= start:
        raise ValueError("empty date range")
    rng = np.random.default_rng([seed, 0x57EA])
    n_hours = (end - start).days * 24
    t0 = datetime(start.year, start.month, start.day)
    hours = np.arange(n_hours)
    local = hours + utc_offset_h
    doy = (np.array([(t0 + timedelta(hours=int(h))).timetuple().tm_yday for h in range(0, n_hours, 24)])
           .repeat(24))
    seasonal = 10.5 + 7.5 * np.sin(2 * np.pi * (doy - 110) / 365.25)
    diurnal = 3.0 * np.sin(2 * np.pi * ((local % 24) - 9) / 24)
    noise = np.empty(n_hours)
    eps = rng.normal(0.0, 0.6, n_hours)
    acc = 0.0
    for k in range(n_hours):
        acc = 0.97 * acc + eps[k]
        noise[k] = acc
    temp = seasonal + diurnal + noise
    wind = np.abs(rng.normal(4.5, 2.2, n_hours))
    raining = rng.random(n_hours) < 0.09
    precip = np.where(raining, rng.exponential(0.9, n_hours), 0.0)
    return [WeatherRecord(hour_start=t0 + timedelta(hours=int(h)), temp_c=round(float(temp[h]), 2),
                          wind_mps=round(float(wind[h]), 2), precip_mm=round(float(precip[h]), 2))
            for h in hours]


def _truncnorm(u, mean, sd, low, high):
    # inverse-CDF draw from N(mean, sd) restricted to [low, high]
    lo, hi = ndtr((low - mean) / sd), ndtr((high - mean) / sd)
    return float(np.clip(mean + sd * ndtri(lo + u * (hi - lo)), low, high))


def _make_cars(rng, cfg: SynthConfig, location: Location, n_cars: int, prof: LocationProfile,
               n_days: int, prefix: str) -> list:
    cars = []
    n_stations = max(1, int(round(n_cars / prof.cars_per_station)))
    base_w = np.array([m.weight for m in prof.duration_modes])
    arr_w = np.array([m[0] for m in prof.arrival_modes])
    for c in range(n_cars):
        mode = prof.arrival_modes[rng.choice(len(arr_w), p=arr_w)]
        arrival_mean = float(np.clip(rng.normal(mode[1], mode[2]), 0.0, 23.5))
        lo_rate, hi_rate = prof.daily_rate_range
        rate = rng.uniform(lo_rate, hi_rate)
        weekday = tuple(float(min(1.0, rate * w * rng.uniform(0.7, 1.3))) for w in prof.weekday_weights)
        prefs = np.zeros(base_w.size)
        pos = base_w > 0
        prefs[pos] = rng.dirichlet(prof.mode_concentration * base_w[pos])
        if rng.random() < cfg.late_joiner_fraction:
            first = int(rng.integers(int(cfg.late_joiner_start * n_days), n_days))
        else:
            first = int(rng.integers(0, max(1, n_days // 12)))
        last = n_days
        if rng.random() < cfg.churn_fraction:
            last = int(rng.integers(first + 1, n_days + 1))
        power = float(rng.choice(CAR_POWER_LEVELS_KW, p=[0.1, 0.35, 0.45, 0.1]))
        median = float(prof.energy_median_kwh * math.exp(rng.normal(0, prof.energy_between_sigma)))
        # big batteries come with faster onboard chargers
        for level in CAR_POWER_LEVELS_KW:
            if level >= power and 0.92 * level * cfg.energy_power_hours >= median:
                power = level
                break
        else:
            power = CAR_POWER_LEVELS_KW[-1]
            median = 0.92 * power * cfg.energy_power_hours
        cars.append(CarProfile(
            car_id=f"{prefix}{c:04d}",
            location=location,
            home_station_id=f"{prefix}S{int(rng.integers(n_stations)):03d}",
            arrival_mean_h=arrival_mean,
            arrival_sd_h=prof.arrival_session_sd_h,
            energy_median_kwh=median,
            energy_sd_kwh=min(prof.energy_within_sigma * median, cfg.energy_within_cap_kwh),
            mode_weights=tuple(float(p) for p in prefs),
            duration_shift_h=float(rng.normal(0.0, prof.car_duration_shift_sd_h)),
            weekday_activity=weekday,
            onboard_power_kw=power,
            first_day=first,
            last_day=last,
        ))
    return cars, n_stations


def _car_sessions(rng, car: CarProfile, prof: LocationProfile, n_stations: int, prefix: str,
                  days: list, calendar: CalendarInfo, temp_by_hour, cfg: SynthConfig) -> list:
    out = []
    busy_until = None
    offset = timedelta(hours=cfg.utc_offset_h)
    n_modes = len(prof.duration_modes)
    for d in range(car.first_day, car.last_day):
        day = days[d]
        wd = day.weekday()
        p = car.weekday_activity[wd]
        if day in calendar.national_holidays:
            p *= prof.national_holiday_factor
        elif day in calendar.school_holidays:
            p *= prof.school_holiday_factor
        # draw every variate for the day up front so the stream stays aligned
        u_active, u_mode, u_station, u_dur = rng.random(4)
        z_arr, z_energy = rng.normal(size=2)
        station_pick = int(rng.integers(n_stations))
        if u_active >= p:
            continue
        hour = float(np.clip(car.arrival_mean_h + car.arrival_sd_h * z_arr, 0.0, 23.95))
        arrival_local = datetime(day.year, day.month, day.day) + timedelta(seconds=int(round(hour * 3600)))
        arrival = arrival_local - offset
        if busy_until is not None and arrival < busy_until + timedelta(minutes=30):
            continue
        w = np.array(car.mode_weights) * np.array(prof.weekday_mode_boost[wd])
        if hour >= prof.evening_hour:
            w = w * np.array(prof.evening_mode_boost)
        w = w / w.sum()
        k = int(min(np.searchsorted(np.cumsum(w), u_mode, side="right"), n_modes - 1))
        m = prof.duration_modes[k]
        if k == 0 and prof.departure_anchor_h is not None:
            mean = prof.departure_anchor_h + car.duration_shift_h - hour
        else:
            mean = m.mean_h + car.duration_shift_h * (m.mean_h / prof.duration_modes[0].mean_h)
        dur_h = _truncnorm(u_dur, min(max(mean, m.low_h), m.high_h), m.sd_h, m.low_h, m.high_h)
        departure = arrival + timedelta(seconds=int(round(dur_h * 3600)))
        dur_h = (departure - arrival).total_seconds() / 3600.0
        temp = temp_by_hour.get(arrival.replace(minute=0, second=0), 10.0)
        want = max(1.0, car.energy_median_kwh + car.energy_sd_kwh * z_energy)
        want *= 1.0 + cfg.energy_temp_coef * (10.0 - temp)
        energy = min(want, 0.92 * car.onboard_power_kw * dur_h)
        energy = round(max(1.0, energy), 3)
        if energy > STATION_MAX_POWER_KW * dur_h:
            energy = round(STATION_MAX_POWER_KW * dur_h, 3)
        station = car.home_station_id
        if u_station > prof.home_station_share:
            station = f"{prefix}S{station_pick:03d}"
        out.append((arrival, departure, car.car_id, station, car.location, energy))
        busy_until = departure
    return out


def gen_sessions(config: SynthConfig, calendar: CalendarInfo = None, weather=None) -> list:
    """Generate a cleaned-compatible session list sorted by arrival.

    Output is a pure function of ``config``; calendar and weather default to
    the generators' own outputs for the same config.
    """
    config.validate()
    n_days = (config.end_date - config.start_date).days
    days = [config.start_date + timedelta(days=k) for k in range(n_days)]
    if calendar is None:
        calendar = gen_calendar(config.start_date, config.end_date, config.fixed_holidays,
                                config.easter_offsets, config.school_breaks)
    if weather is None:
        weather = gen_weather(config.seed, config.start_date, config.end_date, config.utc_offset_h)
    temp_by_hour = {w.hour_start: w.temp_c for w in weather}
    rows = []
    for loc, n_cars, prof, prefix in (
        (Location.WORKPLACE, config.n_cars_workplace, config.workplace, "W"),
        (Location.RESIDENTIAL, config.n_cars_residential, config.residential, "R"),
    ):
        if n_cars == 0:
            continue
        rng = np.random.default_rng([config.seed, 1 if loc is Location.WORKPLACE else 2])
        cars, n_stations = _make_cars(rng, config, loc, n_cars, prof, n_days, prefix)
        for car in cars:
            car_rng = np.random.default_rng([config.seed, 3, int(car.car_id[1:]), ord(prefix)])
            rows.extend(_car_sessions(car_rng, car, prof, n_stations, prefix, days, calendar,
                                      temp_by_hour, config))
    end = datetime(config.end_date.year, config.end_date.month, config.end_date.day)
    rows = [r for r in rows if r[0] < end - timedelta(hours=config.utc_offset_h)]
    rows.sort(key=lambda r: (r[0], r[2]))
    return [ChargingSession(session_id=f"S{i:07d}", car_id=car_id, station_id=station,
                            location=loc, arrival=arr, departure=dep, energy_kwh=energy,
                            max_power_kw=STATION_MAX_POWER_KW)
            for i, (arr, dep, car_id, station, loc, energy) in enumerate(rows)]


def car_profiles(config: SynthConfig) -> list:
    """The per-car profiles ``gen_sessions`` draws from (for inspection)."""
    n_days = (config.end_date - config.start_date).days
    out = []
    for loc, n_cars, prof, prefix, key in (
        (Location.WORKPLACE, config.n_cars_workplace, config.workplace, "W", 1),
        (Location.RESIDENTIAL, config.n_cars_residential, config.residential, "R", 2),
    ):
        if n_cars:
            rng = np.random.default_rng([config.seed, key])
            out.extend(_make_cars(rng, config, loc, n_cars, prof, n_days, prefix)[0])
    return out
