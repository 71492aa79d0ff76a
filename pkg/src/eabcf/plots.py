"""Static SVG figures for the artifact bundle.

Plot emission is best-effort: failures warn instead of failing the numeric
pipeline.
"""

from __future__ import annotations

import functools
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def _best_effort(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:   # plotting must never sink the pipeline
            warnings.warn(f"plot {fn.__name__} failed: {exc}", stacklevel=2)
            return None
    return wrapper


@_best_effort
def plot_loop(loop, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    pts = loop.points
    ax.plot(pts[:, 0], pts[:, 1], "-o", ms=3, lw=1, color="tab:blue")
    ax.plot(*loop.center, "x", color="tab:red", ms=8, label="center")
    ax.annotate("start", pts[0], fontsize=8)
    ax.annotate("end", pts[-1], fontsize=8)
    ax.set_xlabel("density (veh/km)")
    ax.set_ylabel("flow (veh/h)")
    if title:
        ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


@_best_effort
def plot_trace(trace, path, title: str = "") -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    ax1.plot(trace.iterations, trace.gammas, "-o", ms=3, color="tab:blue")
    ax1.set_ylabel("tolerance")
    ax1.set_yscale("log")
    ax2.plot(trace.iterations, trace.rhos, "-o", ms=3, color="tab:orange")
    ax2.set_ylabel("acceptance ratio")
    ax2.set_xlabel("iteration")
    if title:
        ax1.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


@_best_effort
def plot_penetration(curves, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.errorbar(curves["penetration"], curves["mean_magnitude"],
                 yerr=curves["se_magnitude"], fmt="-o", ms=4, capsize=3)
    ax1.set_xlabel("ACC share")
    ax1.set_ylabel("mean hysteresis magnitude")
    ax2.plot(curves["penetration"], curves["mean_sd_k"], "-o", ms=4, label="SD k")
    ax2b = ax2.twinx()
    ax2b.plot(curves["penetration"], curves["mean_sd_q"], "-s", ms=4,
              color="tab:orange", label="SD q")
    ax2.set_xlabel("ACC share")
    ax2.set_ylabel("SD k (veh/km)")
    ax2b.set_ylabel("SD q (veh/h)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


@_best_effort
def plot_eta_series(series, path, theta=None, title: str = "") -> None:
    from .eab import eta_eval
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(series.t, series.eta, lw=1, color="tab:blue", label="measured")
    if theta is not None:
        ax.plot(series.t, eta_eval(theta, series.t - series.t[0]), "--",
                color="tab:red", lw=1, label="profile")
    ax.axhline(1.0, color="gray", lw=0.5)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("deviation")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def emit_all(cfg, artifacts, out: Path) -> None:
    from .hysteresis import build_loop, build_zones
    for key, art in artifacts.items():
        tag = key.replace(":", "_")
        plot_trace(art.trace, out / f"trace_{tag}.svg", title=key)
        pair = art.pairs[0]
        try:
            zones = build_zones([pair.leader, pair.follower], art.newell.params.w,
                                cfg.zone_dt)
            loop = build_loop(zones, art.newell.params.w, smooth=cfg.smooth_loops)
        except Exception as exc:
            warnings.warn(f"loop plot for {key} skipped: {exc}", stacklevel=1)
            continue
        plot_loop(loop, out / f"loop_{tag}.svg", title=f"{key}: {pair.pair_id}")
    curves_path = out / "platoon_curves.csv"
    if curves_path.exists():
        import pandas as pd
        plot_penetration(pd.read_csv(curves_path), out / "platoon_curves.svg")
