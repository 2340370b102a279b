"""SVG figures for study results: log-log scatter with fitted lines, one series per metric."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

from .lab import StudyResult, fit_loglog  # noqa: E402

# 800 x 600 viewBox: SVG output is in points, 72 per inch
FIGSIZE = (800 / 72, 600 / 72)
RC = {"svg.hashsalt": "mixtomo", "svg.fonttype": "none", "font.size": 11}
SCALING_METRICS = ("kl", "classical_infidelity", "energy_error", "infidelity")


def _save(fig: Figure, path: Path) -> Path:
    with matplotlib.rc_context(RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _new_axes(title: str, xlabel: str, ylabel: str):
    with matplotlib.rc_context(RC):
        fig = Figure(figsize=FIGSIZE)
        ax = fig.add_subplot()
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="major", alpha=0.3)
    return fig, ax


def loglog_figure(series: dict, title: str, xlabel: str, ylabel: str = "error"):
    """``series`` maps a label to ``(x, y)``; each gets markers and its least-squares line."""
    fig, ax = _new_axes(title, xlabel, ylabel)
    for i, (label, (x, y)) in enumerate(series.items()):
        pts = [(a, b) for a, b in zip(x, y) if a > 0 and b > 0 and math.isfinite(b)]
        if not pts:
            continue
        xs, ys = zip(*pts)
        color = f"C{i % 10}"
        if len(pts) >= 3:
            fit = fit_loglog(xs, ys)
            lo, hi = min(xs), max(xs)
            ax.plot([lo, hi], [10 ** (fit.intercept + fit.slope * math.log10(v)) for v in (lo, hi)],
                    "--", color=color, lw=1)
            label = f"{label} (slope {fit.slope:.2f}, $r^2$ {fit.r_squared:.3f})"
        ax.plot(xs, ys, "o", color=color, label=label)
    ax.legend(loc="best", fontsize=9)
    return fig


def scaling_figures(result: StudyResult, out_dir: Path) -> list[Path]:
    paths = []
    groups = sorted({(s["scheme"], s["beta_or_p"]) for s in result.summary})
    for scheme, label in groups:
        rows = sorted((s for s in result.summary if s["scheme"] == scheme and s["beta_or_p"] == label),
                      key=lambda s: s["dataset_size"])
        series = {m: ([r["dataset_size"] for r in rows], [r[m] for r in rows]) for m in SCALING_METRICS}
        fig = loglog_figure(series, f"{scheme}, beta_or_p = {label:g}", "dataset size (total shots)")
        paths.append(_save(fig, out_dir / f"scaling_{scheme}_{label:g}.svg"))
    return paths


def cv_figures(result: StudyResult, out_dir: Path) -> list[Path]:
    series = {}
    for m in ("kl", "energy_error", "infidelity"):
        for cv in (False, True):
            rows = sorted((s for s in result.summary if s["cv"] == cv), key=lambda s: s["batch_size"])
            series[f"{m} ({'CV' if cv else 'no CV'})"] = ([r["batch_size"] for r in rows], [r[m] for r in rows])
    fig = loglog_figure(series, "batch-size study", "batch size B")
    return [_save(fig, out_dir / "cv.svg")]


def valley_figures(result: StudyResult, out_dir: Path) -> list[Path]:
    with matplotlib.rc_context(RC):
        fig = Figure(figsize=FIGSIZE)
        ax = fig.add_subplot()
    rows = result.summary
    ax.set_xscale("log")
    ax.errorbar([r["beta"] for r in rows], [r["exponent"] for r in rows],
                yerr=[r.get("exponent_std", 0.0) for r in rows], fmt="o-", capsize=3)
    ax.set_xlabel("beta")
    ax.set_ylabel("infidelity exponent -1/alpha")
    ax.set_title("valley of the infidelity exponent")
    ax.grid(True, alpha=0.3)
    return [_save(fig, out_dir / "valley.svg")]


def orders_figures(result: StudyResult, out_dir: Path) -> list[Path]:
    series = {}
    for target in ("pure", "thermal"):
        rows = [s for s in result.summary if s["target"] == target]
        for m in ("energy_error", "kl"):
            series[f"{target} {m}"] = ([r["delta"] for r in rows], [r[m] for r in rows])
    fig = loglog_figure(series, "perturbative orders", "delta")
    return [_save(fig, out_dir / "orders.svg")]


FIGURES = {"scaling": scaling_figures, "cv": cv_figures, "valley": valley_figures, "orders": orders_figures}


def render(result: StudyResult, out_dir) -> list[Path]:
    """Write the study's SVG files into ``out_dir``; studies without a figure return ``[]``."""
    fn = FIGURES.get(result.study)
    return fn(result, Path(out_dir)) if fn else []
