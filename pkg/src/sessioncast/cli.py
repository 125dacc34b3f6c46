"""Command-line front end: ``synth``, ``run``, ``lookback`` and ``report``.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for runtime
failures (bad input files, too little data). Every file is written under the
chosen output directory.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__, pipeline, reporting, synthgen
from . import sessions as S
from .features import Target
from .pipeline import (DEFAULT_LOOKBACK_WINDOWS, Dataset, Mode, PipelineConfig,
                       WeeklyIterationResult, aggregate_importance, lookback_study, run_horizon)
from .seeding import SEED_ENV, env_seed
from .sessions import Location
from .tuning import GridProfile

logger = logging.getLogger("sessioncast")

SESSIONS_FILE = "sessions.csv"
WEATHER_FILE = "weather.csv"
CALENDAR_FILE = "calendar.json"
MIN_WINDOW_DAYS = 60


class UsageError(ValueError):
    """Bad flags or configuration values (exit code 2)."""


@dataclass(frozen=True)
class RunConfig:
    sessions: str = None
    weather: str = None
    calendar: str = None
    out: str = None
    seed: int = 0
    targets: tuple = ("energy", "duration")
    locations: tuple = ("workplace", "residential")
    n_weeks: int = 4
    initial_window_days: int = 365
    mode: str = "growing"
    replay_cap: int = 5000
    k: int = 5
    profile: str = "full"
    svr_row_cap: int = 5000
    utc_offset_h: float = 1.0
    tune_rows: int = None
    fit_rows: int = None
    retune_every: int = 1
    jobs: int = 1
    # strata with fewer tuning rows use first grid values and skip selection
    min_stratum_rows: int = 50
    windows: tuple = DEFAULT_LOOKBACK_WINDOWS

    def validate(self) -> "RunConfig":
        if self.n_weeks < 1:
            raise UsageError("n_weeks must be >= 1")
        if self.k < 2:
            raise UsageError("k must be >= 2")
        if self.initial_window_days < MIN_WINDOW_DAYS:
            raise UsageError(f"initial window must be >= {MIN_WINDOW_DAYS} days")
        if not self.windows or min(self.windows) < MIN_WINDOW_DAYS:
            raise UsageError(f"lookback windows must be >= {MIN_WINDOW_DAYS} days")
        try:
            [Target(t) for t in self.targets]
            [Location(x) for x in self.locations]
            Mode(self.mode)
            GridProfile(self.profile)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for name in ("replay_cap", "svr_row_cap", "retune_every", "jobs", "min_stratum_rows"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        for name in ("tune_rows", "fit_rows"):
            v = getattr(self, name)
            if v is not None and v < 2 * self.k:
                raise UsageError(f"{name} must be >= 2 * k")
        return self

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            seed=self.seed, targets=tuple(Target(t) for t in self.targets),
            locations=tuple(Location(x) for x in self.locations),
            initial_window_days=self.initial_window_days, mode=Mode(self.mode),
            replay_cap=self.replay_cap, k=self.k, profile=GridProfile(self.profile),
            svr_row_cap=self.svr_row_cap, utc_offset_h=self.utc_offset_h,
            tune_rows=self.tune_rows, fit_rows=self.fit_rows, retune_every=self.retune_every,
            jobs=self.jobs, min_stratum_rows=self.min_stratum_rows).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("targets", "locations", "windows"):
            d[k] = list(d[k])
        return d


_TUPLE_FIELDS = {"targets", "locations", "windows"}


def _coerce(name, value):
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        value = tuple(int(v) for v in value) if name == "windows" else tuple(str(v) for v in value)
    return value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON file, then ``SESSIONCAST_SEED``, then explicit flags."""
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
        unknown = sorted(set(raw) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg = replace(cfg, **{k: _coerce(k, v) for k, v in raw.items()})
    try:
        cfg = replace(cfg, seed=env_seed(cfg.seed))
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer") from None
    data_dir = getattr(args, "data", None)
    if data_dir:
        cfg = replace(cfg, sessions=str(Path(data_dir) / SESSIONS_FILE),
                      weather=str(Path(data_dir) / WEATHER_FILE),
                      calendar=str(Path(data_dir) / CALENDAR_FILE))
    overrides = {}
    for name in known:
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = _coerce(name, val)
    cfg = replace(cfg, **overrides)
    for name in ("sessions", "weather", "calendar", "out"):
        if not getattr(cfg, name):
            raise UsageError(f"missing {name} path (use --{name} or --data)")
    return cfg.validate()


def write_json(path, payload) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=1, allow_nan=True) + "\n", encoding="utf-8")
    return path


def load_dataset(cfg: RunConfig):
    raw = S.parse_sessions(cfg.sessions)
    kept, rejected = S.clean_sessions(raw)
    reasons = {}
    for _, reason in rejected:
        reasons[reason.value] = reasons.get(reason.value, 0) + 1
    logger.info("loaded %d sessions, kept %d", len(raw), len(kept))
    data = Dataset(kept, S.load_weather(cfg.weather), S.load_calendar(cfg.calendar), cfg.utc_offset_h)
    cleaning = {"n_input": len(raw), "n_kept": len(kept), "rejected": dict(sorted(reasons.items()))}
    return data, cleaning


def importance_to_dict(summary) -> dict:
    return {
        "n_iterations": {"/".join(k): v for k, v in sorted(summary.n_iterations.items())},
        "features": {"/".join(k): {fam: {f: list(v) for f, v in per.items()} for fam, per in fams.items()}
                     for k, fams in sorted(summary.features.items())},
        "bases": {"/".join(k): {fam: list(v) for fam, v in per.items()}
                  for k, per in sorted(summary.bases.items())},
    }


def importance_from_dict(d: dict) -> pipeline.ImportanceSummary:
    split = lambda key: tuple(key.split("/"))  # noqa: E731
    return pipeline.ImportanceSummary(
        features={split(k): {fam: {f: tuple(v) for f, v in per.items()} for fam, per in fams.items()}
                  for k, fams in d["features"].items()},
        bases={split(k): {fam: tuple(v) for fam, v in per.items()} for k, per in d["bases"].items()},
        n_iterations={split(k): v for k, v in d["n_iterations"].items()})


def cmd_synth(args) -> int:
    out = Path(args.out)
    base = synthgen.SynthConfig()
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
            base = synthgen.config_from_dict(raw.get("synth", raw), base)
        except (OSError, json.JSONDecodeError, ValueError, TypeError) as exc:
            raise UsageError(f"bad synth config: {exc}") from None
    seed = env_seed(base.seed) if args.seed is None else args.seed
    cfg = replace(base, seed=seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    calendar = synthgen.gen_calendar(cfg.start_date, cfg.end_date, cfg.fixed_holidays,
                                     cfg.easter_offsets, cfg.school_breaks)
    weather = synthgen.gen_weather(cfg.seed, cfg.start_date, cfg.end_date, cfg.utc_offset_h)
    sess = synthgen.gen_sessions(cfg, calendar, weather)
    S.write_sessions(out / SESSIONS_FILE, sess)
    S.write_weather(out / WEATHER_FILE, weather)
    S.write_calendar(out / CALENDAR_FILE, calendar)
    write_json(out / "synth_config.json", synthgen.config_to_dict(cfg))
    print(f"wrote {len(sess)} sessions, {len(weather)} weather hours to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    pcfg = cfg.pipeline_config()
    out = Path(cfg.out)
    data, cleaning = load_dataset(cfg)
    weeks_dir = out / "weeks"
    weeks_dir.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())

    def progress(week):
        path = weeks_dir / f"week_{week.split.iteration:03d}.json"
        payload = week.to_dict()
        payload["run_config"] = cfg.to_dict()
        write_json(path, payload)
        logger.info("week %d done (%d test sessions)", week.split.iteration, week.split.n_test)

    horizon = run_horizon(data, cfg.n_weeks, pcfg, progress)
    summary = aggregate_importance(horizon.weeks)
    write_json(out / "aggregate.json", {
        "run_config": cfg.to_dict(), "pipeline_config": horizon.config, "cleaning": cleaning,
        "n_weeks": len(horizon.weeks), "mode": pcfg.mode.value,
        "replay_cap": pcfg.replay_cap if pcfg.mode is Mode.REPLAY else None,
        "aggregate": horizon.aggregate.to_dict(), "importance": importance_to_dict(summary),
        "flags": [f"week {w.split.iteration}: {f}" for w in horizon.weeks for f in w.flags]})
    reporting.write_metrics_csv(out / "metrics.csv", horizon.aggregate)
    sys.stdout.write(reporting.summary_text(horizon.aggregate))
    return 0


def cmd_lookback(args) -> int:
    cfg = resolve_config(args)
    pcfg = cfg.pipeline_config()
    out = Path(cfg.out)
    data, cleaning = load_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    reports = lookback_study(data, cfg.windows, cfg.n_weeks, pcfg)
    rows = reporting.lookback_rows(reports)
    reporting.write_csv(out / "lookback.csv", reporting.LOOKBACK_COLUMNS, rows)
    write_json(out / "lookback.json", {
        "run_config": cfg.to_dict(), "cleaning": cleaning,
        "windows": {str(w): rep.to_dict() for w, rep in sorted(reports.items())}})
    for row in rows:
        print(f"window {row[0]:>4}  {row[1]:<12}{row[2]:<10} n={row[3]:<5} R2={row[6]:.3f}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory not found: {run_dir}")
    out = Path(args.out) if args.out else run_dir / "report"
    wrote = False
    agg_path = run_dir / "aggregate.json"
    if agg_path.exists():
        agg = json.loads(agg_path.read_text(encoding="utf-8"))
        report = pipeline.MetricsReport.from_dict(agg["aggregate"])
        week_paths = sorted((run_dir / "weeks").glob("week_*.json"))
        if week_paths:
            weeks = [WeeklyIterationResult.from_dict(json.loads(p.read_text(encoding="utf-8")))
                     for p in week_paths]
            summary = aggregate_importance(weeks)
        else:
            summary = importance_from_dict(agg["importance"])
        reporting.write_run_report(out, report, summary)
        sys.stdout.write(reporting.summary_text(report))
        wrote = True
    lb_path = run_dir / "lookback.csv"
    if lb_path.exists():
        rows = [[int(r["window_days"]), r["location"], r["target"], int(r["n"]), float(r["rmse"]),
                 float(r["mae"]), float(r["r2"])] for r in reporting.read_csv(lb_path)]
        out.mkdir(parents=True, exist_ok=True)
        reporting.write_csv(out / "lookback.csv", reporting.LOOKBACK_COLUMNS, rows)
        reporting.plot_lookback(out / "lookback.png", rows)
        wrote = True
    if not wrote:
        raise FileNotFoundError(f"{run_dir} holds neither aggregate.json nor lookback.csv")
    print(f"report written to {out}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--data", help=f"directory holding {SESSIONS_FILE}, {WEATHER_FILE}, {CALENDAR_FILE}")
    p.add_argument("--sessions")
    p.add_argument("--weather")
    p.add_argument("--calendar")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--targets", help="comma-separated: energy,duration")
    p.add_argument("--locations", help="comma-separated: workplace,residential")
    p.add_argument("--weeks", dest="n_weeks", type=int)
    p.add_argument("--initial-window", dest="initial_window_days", type=int)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--replay-cap", dest="replay_cap", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--profile", choices=[g.value for g in GridProfile])
    p.add_argument("--svr-row-cap", dest="svr_row_cap", type=int)
    p.add_argument("--utc-offset", dest="utc_offset_h", type=float)
    p.add_argument("--tune-rows", dest="tune_rows", type=int)
    p.add_argument("--fit-rows", dest="fit_rows", type=int)
    p.add_argument("--retune-every", dest="retune_every", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--min-stratum-rows", dest="min_stratum_rows", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sessioncast",
                                     description="EV charging session energy and duration forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic sessions, weather and calendar")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON synth config (top level or under 'synth')")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="weekly forecasting run over a horizon")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("lookback", help="lookback-window study")
    _add_run_flags(p)
    p.add_argument("--windows", help="comma-separated window sizes in days")
    p.set_defaults(func=cmd_lookback)

    p = sub.add_parser("report", help="tables and figures from a run or lookback directory")
    p.add_argument("run_dir")
    p.add_argument("--out", help="report directory (default RUN_DIR/report)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sessioncast: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"sessioncast: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
