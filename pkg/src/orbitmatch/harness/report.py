"""Plot-ready column files and PNG figures from series CSVs.

For each ``<kind>_series.csv`` the plot file ``<kind>_plot.csv`` holds
``trial,x,y,fit`` rows in series order:

* lcs: ``(log n, M_n, fitted line)``
* mindist: ``(-log n, log m_n, fitted line)``
* dimension: ``(log r, log C, fitted line)``
* rotation: ``(log n, exponent, nan)``, probes and schedule tagged in ``series``
* entropy: ``(k, h2_hat, nan)``; moments: ``(log r, ratio, nan)``;
  bridge: ``(n, -log m_n, nan)``; duality: ``(log r, log m_n, nan)``
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..errors import MissingSeriesError  # noqa: E402
from . import experiments as ex  # noqa: E402
from .config import ExperimentConfig  # noqa: E402

AXES = {
    "lcs": ("log_n", "M_n", "log n", "M_n"),
    "mindist": ("neg_log_n", "log_m_n", "-log n", "log m_n"),
    "dimension": ("log_r", "log_C", "log r", "log C(r)"),
    "rotation": ("n", "exponent", "log n", "log m_n / -log n"),
    "entropy": ("k", "h2_hat", "block length k", "H2 estimate"),
    "moments": ("r", "ratio", "log r", "second / first^1.5"),
    "bridge": ("n", "neglog_m_n", "n", "-log m_n"),
    "duality": ("r", "m_n", "log r", "log m_n"),
}
LOG_X = {"rotation", "moments", "duality"}
LOG_Y = {"duality"}


def _xy(kind, rows):
    xk, yk, _, _ = AXES[kind]
    x = ex._col(rows, xk)
    y = ex._col(rows, yk)
    if kind in LOG_X:
        x = np.log(x)
    if kind in LOG_Y:
        with np.errstate(divide="ignore"):
            y = np.log(y)
    return x, y


def plot_rows(cfg: ExperimentConfig, rows: list[dict]) -> list[tuple]:
    fits = ex.trial_fits(cfg, rows)
    out = []
    for group in ex._by_trial(rows):
        t = int(group[0]["trial"])
        x, y = _xy(cfg.kind, group)
        f = fits.get(t)
        fit = f.intercept + f.slope * x if f is not None else np.full(x.size, math.nan)
        tags = [r.get("series", "") for r in group]
        out.extend(zip([t] * x.size, tags, x.tolist(), y.tolist(), fit.tolist()))
    return out


def _figure(cfg, rows, summary, path):
    kind = cfg.kind
    _, _, xlabel, ylabel = AXES[kind]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    trials = sorted({r[0] for r in rows})
    cmap = plt.get_cmap("viridis", max(len(trials), 2))
    for i, t in enumerate(trials):
        pts = [r for r in rows if r[0] == t]
        x = np.array([p[2] for p in pts])
        y = np.array([p[3] for p in pts])
        fit = np.array([p[4] for p in pts])
        probe = np.array([p[1] == "probe" for p in pts])
        ok = np.isfinite(y)
        ax.plot(x[ok & ~probe], y[ok & ~probe], "o", ms=3, color=cmap(i), alpha=0.7)
        if probe.any():
            ax.plot(x[ok & probe], y[ok & probe], "x", ms=3, color=cmap(i), alpha=0.5)
        if np.isfinite(fit).any():
            ax.plot(x, fit, "-", lw=0.8, color=cmap(i), alpha=0.6)
    for quantity, target, fitted, _, _, verdict in summary:
        if kind == "rotation" and math.isfinite(target):
            ax.axhline(target, ls="--", lw=0.8, color="grey")
    title = ", ".join(f"{q}: {f:.4g} (target {t:.4g}, {v})" for q, t, f, _, _, v in summary)
    ax.set_title(title, fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_plot_data(cfg: ExperimentConfig, out_dir, figures: bool = True) -> list[Path]:
    """Write ``<kind>_plot.csv`` (and ``<kind>.png`` when ``figures``) next
    to the series file; returns the written paths."""
    out = Path(out_dir)
    series = out / ex.series_name(cfg.kind)
    if not series.is_file():
        raise MissingSeriesError(f"series file not found: {series}")
    rows = ex.read_series(series)
    prows = plot_rows(cfg, rows)
    plot_path = out / f"{cfg.kind}_plot.csv"
    ex._write(plot_path, ex.render_csv(("trial", "series", "x", "y", "fit"), prows))
    written = [plot_path]
    if figures:
        png = out / f"{cfg.kind}.png"
        _figure(cfg, prows, ex.summarize(cfg, rows), png)
        written.append(png)
    return written
