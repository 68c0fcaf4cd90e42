"""Figures written next to the CSV outputs (non-interactive Agg backend)."""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown")
_STYLES = ("-", "--", ":", "-.")
_METADATA = {"Software": None}  # keep PNG bytes independent of the matplotlib version string


def plot_rootsets(
    variants: Mapping[str, Sequence],
    path,
    points: Mapping[str, Sequence[float]] | None = None,
    xlabel: str = "z1",
    ylabel: str = "z2",
    title: str | None = None,
) -> None:
    """Zero curves of the traced functions, one line style per variant.

    ``variants`` maps a name (e.g. ``"unshocked"``) to a list of polylines
    with ``label`` and ``points`` attributes; functions keep one color across
    variants. ``points`` marks named roots.
    """
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    labels = sorted({pl.label for lines in variants.values() for pl in lines})
    color = {lab: _COLORS[i % len(_COLORS)] for i, lab in enumerate(labels)}
    seen = set()
    for k, (variant, lines) in enumerate(variants.items()):
        style = _STYLES[k % len(_STYLES)]
        for pl in lines:
            key = (variant, pl.label)
            ax.plot(
                pl.points[:, 0],
                pl.points[:, 1],
                style,
                color=color[pl.label],
                lw=1.4,
                label=f"{pl.label} = 0 ({variant})" if key not in seen else None,
            )
            seen.add(key)
    for i, (name, (x, y)) in enumerate((points or {}).items()):
        ax.plot([x], [y], "o", color="black", ms=4 + 2 * i, mfc="none", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_xlim(left=0)
    ax.set_ylim(bottom=0)
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_METADATA)
    plt.close(fig)


def plot_convergence(
    n: Sequence[int],
    fraction: Sequence[float],
    theory: float,
    path,
    candidates: Mapping[str, float] | None = None,
    title: str | None = None,
) -> None:
    """Scatter of simulated final fractions against network size with the theory line."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.scatter(np.asarray(n), np.asarray(fraction), s=6, color="tab:blue", alpha=0.5, label="simulation")
    ax.axhline(theory, color="tab:red", lw=1.2, label=f"theory {theory:.4f}")
    for name, value in (candidates or {}).items():
        if abs(value - theory) > 1e-4:
            ax.axhline(value, color="tab:gray", lw=0.8, ls="--", label=f"{name} {value:.4f}")
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("final default fraction")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_METADATA)
    plt.close(fig)
