"""CSV tables and matplotlib figures for run and lookback outputs.

Every writer takes plain report objects and a target directory. The figures
are rendered with the Agg backend and without PNG metadata, so reruns on the
same inputs give identical files.
"""

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import features as F  # noqa: E402
from .pipeline import ENSEMBLE, MODEL_NAMES, ImportanceSummary, MetricsReport  # noqa: E402
from .tuning import BASE_FAMILIES  # noqa: E402

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("location", "target", "scope", "model", "n", "rmse", "mae", "r2")
_PNG_META = {"Software": None}


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> list:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def metrics_rows(report: MetricsReport) -> list:
    return [[r.location, r.target, r.scope, r.model, r.n, r.rmse, r.mae, r.r2] for r in report.rows]


def write_metrics_csv(path, report: MetricsReport) -> Path:
    return write_csv(path, METRIC_COLUMNS, metrics_rows(report))


def write_routing_csv(path, report: MetricsReport) -> Path:
    rows = [[loc, variant, n] for loc, counts in sorted(report.routing.items())
            for variant, n in sorted(counts.items())]
    return write_csv(path, ("location", "variant", "n_sessions"), rows)


def write_closest_csv(path, report: MetricsReport) -> Path:
    rows = []
    for cell, shares in sorted(report.closest.items()):
        loc, target = cell.split("/")
        rows.extend([loc, target, fam, pct] for fam, pct in shares.items())
    return write_csv(path, ("location", "target", "family", "percent_closest"), rows)


def feature_frequency_rows(summary: ImportanceSummary, location: str, target: str) -> list:
    """15 rows per variant: selection frequency and mean importance per family.

    Linear and SVR models have no built-in importance, so their importance
    columns stay 0.
    """
    rows = []
    for variant in F.Variant:
        per_fam = summary.features.get((location, target, variant.value), {})
        for feat in F.FEATURES:
            row = [variant.value, feat.value]
            for fam in BASE_FAMILIES:
                freq, imp = per_fam.get(fam.value, {}).get(feat.value, (0.0, 0.0))
                row += [freq, imp]
            rows.append(row)
    return rows


def feature_frequency_header() -> list:
    cols = ["variant", "feature"]
    for fam in BASE_FAMILIES:
        cols += [f"{fam.value}_frequency", f"{fam.value}_importance"]
    return cols


def base_model_rows(summary: ImportanceSummary, location: str, target: str) -> list:
    per = summary.bases.get((location, target), {})
    return [[fam.value, *per.get(fam.value, (0.0, 0.0))] for fam in BASE_FAMILIES]


def _cells(report: MetricsReport) -> list:
    return sorted({(r.location, r.target) for r in report.rows})


def plot_metric_bars(path, report: MetricsReport, scope: str = "combined") -> Path:
    """R^2, RMSE and MAE of every model, one column of panels per (location, target)."""
    cells = _cells(report)
    fig, axes = plt.subplots(3, max(len(cells), 1), figsize=(3.2 * max(len(cells), 1), 7.5),
                             squeeze=False)
    x = np.arange(len(MODEL_NAMES))
    colors = ["tab:red"] + ["tab:blue"] * len(BASE_FAMILIES)
    for c, (loc, target) in enumerate(cells):
        for r, metric in enumerate(("r2", "rmse", "mae")):
            ax = axes[r, c]
            vals = []
            for name in MODEL_NAMES:
                row = report.get(loc, target, name, scope)
                vals.append(getattr(row, metric) if row is not None else np.nan)
            ax.bar(x, vals, color=colors)
            ax.set_xticks(x)
            ax.set_xticklabels(MODEL_NAMES, rotation=45, ha="right", fontsize=7)
            if r == 0:
                ax.set_title(f"{loc} / {target}", fontsize=9)
            if c == 0:
                ax.set_ylabel(metric.upper() if metric != "r2" else "R²")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_feature_frequency(path, rows: list, title: str) -> Path:
    """Heatmap of selection frequency, features by (variant, family)."""
    fams = [f.value for f in BASE_FAMILIES]
    variants = [v.value for v in F.Variant]
    grid = np.zeros((F.N_FEATURES, len(variants) * len(fams)))
    for row in rows:
        v = variants.index(row[0])
        i = F.FEATURE_INDEX[F.FeatureId(row[1])]
        for j in range(len(fams)):
            grid[i, v * len(fams) + j] = row[2 + 2 * j]
    fig, ax = plt.subplots(figsize=(7, 5.5))
    im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis", aspect="auto")
    ax.set_yticks(range(F.N_FEATURES))
    ax.set_yticklabels([f.value for f in F.FEATURES], fontsize=8)
    ax.set_xticks(range(grid.shape[1]))
    ax.set_xticklabels([f"{v[-1]}:{f}" for v in variants for f in fams], rotation=45, ha="right",
                       fontsize=7)
    ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, label="selection frequency")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_base_models(path, rows: list, title: str) -> Path:
    names = [r[0] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 3))
    a1.bar(names, [r[1] for r in rows], color="tab:blue")
    a1.set_ylim(0, 1)
    a1.set_ylabel("frequency")
    a2.bar(names, [r[2] for r in rows], color="tab:orange")
    a2.set_ylabel("meta importance")
    for ax in (a1, a2):
        ax.tick_params(axis="x", labelrotation=45, labelsize=7)
    fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def lookback_rows(reports: dict) -> list:
    """One row per (window, location, target), ensemble on all routed sessions."""
    rows = []
    for window in sorted(reports):
        rep = reports[window]
        for loc, target in _cells(rep):
            r = rep.get(loc, target, ENSEMBLE, "combined")
            if r is not None:
                rows.append([window, loc, target, r.n, r.rmse, r.mae, r.r2])
    return rows


LOOKBACK_COLUMNS = ("window_days", "location", "target", "n", "rmse", "mae", "r2")


def plot_lookback(path, rows: list) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    series = {}
    for row in rows:
        series.setdefault((row[1], row[2]), []).append((float(row[0]), float(row[6])))
    for (loc, target), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{loc} / {target}")
    ax.set_xlabel("lookback window (days)")
    ax.set_ylabel("ensemble R²")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def summary_text(report: MetricsReport, scope: str = "combined") -> str:
    """Fixed-width table of pooled metrics for the console and summary file."""
    lines = [f"{'location':<12}{'target':<10}{'model':<10}{'n':>6}{'RMSE':>10}{'MAE':>10}{'R2':>9}"]
    for loc, target in _cells(report):
        for name in MODEL_NAMES:
            r = report.get(loc, target, name, scope)
            if r is None:
                continue
            lines.append(f"{loc:<12}{target:<10}{name:<10}{r.n:>6}{r.rmse:>10.3f}{r.mae:>10.3f}{r.r2:>9.3f}")
    for loc, counts in sorted(report.routing.items()):
        lines.append(f"routing {loc}: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return "\n".join(lines) + "\n"


def write_run_report(out_dir, aggregate: MetricsReport, summary: ImportanceSummary) -> list:
    """All tables and figures for one run; returns the written paths in order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [write_metrics_csv(out / "metrics_by_model.csv", aggregate),
               plot_metric_bars(out / "metrics_by_model.png", aggregate),
               write_routing_csv(out / "routing.csv", aggregate),
               write_closest_csv(out / "closest_model.csv", aggregate)]
    for loc, target in _cells(aggregate):
        stem = f"{loc}_{target}"
        ff = feature_frequency_rows(summary, loc, target)
        written.append(write_csv(out / f"feature_frequency_{stem}.csv", feature_frequency_header(), ff))
        written.append(plot_feature_frequency(out / f"feature_frequency_{stem}.png", ff,
                                              f"feature selection frequency, {loc} / {target}"))
        bm = base_model_rows(summary, loc, target)
        written.append(write_csv(out / f"base_models_{stem}.csv", ("family", "frequency", "meta_importance"), bm))
        written.append(plot_base_models(out / f"base_models_{stem}.png", bm,
                                        f"base forecasts in the meta model, {loc} / {target}"))
    summary_path = out / "summary.txt"
    summary_path.write_text(summary_text(aggregate), encoding="utf-8")
    written.append(summary_path)
    logger.info("wrote %d report files to %s", len(written), out)
    return written
