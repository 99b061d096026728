"""Figure rendering for the CLI report paths.

Figures are written straight to files next to the delimited outputs via
matplotlib's object API (no pyplot, no interactive backend needed).
"""

from __future__ import annotations

import math

from matplotlib.figure import Figure

from .metrics import CurvePoint, FairnessReport

_GROUP_STYLE = {0: dict(color="tab:blue"), 1: dict(color="tab:orange")}


def save_curve_figure(rows: list[CurvePoint], path, title: str = "") -> None:
    """FAR_a(t) and FRR_a(t) per group over the threshold grid."""
    fig = Figure(figsize=(9, 3.6))
    ax_far, ax_frr = fig.subplots(1, 2)
    for a in sorted({r.group for r in rows}):
        t = [r.threshold for r in rows if r.group == a]
        ax_far.plot(t, [r.far for r in rows if r.group == a],
                    label=f"group {a}", **_GROUP_STYLE.get(a, {}))
        ax_frr.plot(t, [r.frr for r in rows if r.group == a],
                    label=f"group {a}", **_GROUP_STYLE.get(a, {}))
    ax_far.set_xlabel("threshold t")
    ax_far.set_ylabel("FAR(t)")
    ax_far.set_yscale("log")
    ax_frr.set_xlabel("threshold t")
    ax_frr.set_ylabel("FRR(t)")
    for ax in (ax_far, ax_frr):
        ax.legend()
        ax.grid(True, alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)


def save_loss_figure(epoch_losses, path) -> None:
    """Mean training loss per epoch."""
    fig = Figure(figsize=(5.5, 3.6))
    ax = fig.subplots()
    ax.plot(range(len(epoch_losses)), epoch_losses, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)


def save_trend_figure(
    cells: dict[tuple[float, float], FairnessReport],
    baseline: FairnessReport | None,
    path,
    alpha: float,
) -> None:
    """Grid trends at one FAR budget: BFAR, BFRR and FRR@FAR against
    kappa1, one line per kappa0 (the fixed-hyperparameter view)."""
    fig = Figure(figsize=(12, 3.8))
    axes = fig.subplots(1, 3)
    metrics = [
        ("BFAR", lambda r: r.bfar),
        ("BFRR", lambda r: r.bfrr),
        ("FRR@FAR", lambda r: r.frr_at_far),
    ]
    kappa0s = sorted({k0 for k0, _ in cells})
    for ax, (name, getter) in zip(axes, metrics):
        for k0 in kappa0s:
            pts = sorted((k1, getter(rep)) for (c0, k1), rep in cells.items() if c0 == k0)
            xs = [p[0] for p in pts]
            ys = [p[1] if math.isfinite(p[1]) else float("nan") for p in pts]
            ax.plot(xs, ys, marker="o", markersize=3, label=f"$\\kappa_0$={k0:g}")
        if baseline is not None and math.isfinite(getter(baseline)):
            ax.axhline(getter(baseline), color="black", linestyle="--", linewidth=1,
                       label="baseline")
        ax.set_xlabel("$\\kappa_1$")
        ax.set_ylabel(name)
        if name in ("BFAR", "BFRR"):
            ax.set_yscale("log")
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=7)
    fig.suptitle(f"grid trends at FAR budget {alpha:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
