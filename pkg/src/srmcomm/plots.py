"""Figure rendering for study reports.

Every report command writes figures next to its delimited output; the CSV
files remain the authoritative data and are sufficient to recreate every
figure.  The Agg backend keeps rendering headless-safe.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import math

import matplotlib.pyplot as plt
import numpy as np

from .commutation import CommutationParams, ConventionalCommutation, commutation_profile
from .srm_model import ProbabilisticSrmModel

__all__ = [
    "save_commutation_figure",
    "save_nominal_error_figure",
    "save_ripple_figure",
    "save_study_figure",
]

_DPI = 150


def _tooth_axis(tooth_count: int, points: int = 720) -> np.ndarray:
    pitch = 2.0 * math.pi / tooth_count
    return pitch * np.arange(points) / points


def save_commutation_figure(
    params: CommutationParams,
    conventional: ConventionalCommutation,
    model: ProbabilisticSrmModel,
    path,
) -> None:
    """Designed (solid) vs conventional (dash-dot) per-coil commands over one tooth."""
    phis = _tooth_axis(model.basis.tooth_count)
    teeth = phis / (2.0 * math.pi / model.basis.tooth_count)
    rob_plus, rob_minus = commutation_profile(params, phis)
    conv_plus, conv_minus = conventional.profile(phis)
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for ax, rob, conv, label in (
        (axes[0], rob_plus, conv_plus, "positive torque"),
        (axes[1], rob_minus, conv_minus, "negative torque"),
    ):
        for c in range(model.basis.coil_count):
            color = f"C{c}"
            ax.plot(teeth, rob[:, c], color=color, label=f"coil {c + 1} robust")
            ax.plot(teeth, conv[:, c], color=color, linestyle="-.", alpha=0.7,
                    label=f"coil {c + 1} conventional")
        ax.set_ylabel(f"command / |setpoint| [{label}]")
        ax.grid(alpha=0.3)
    axes[1].set_xlabel("rotor position [teeth]")
    axes[0].legend(ncol=2, fontsize=7)
    fig.suptitle("Commutation functions: robust vs conventional")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_nominal_error_figure(phis: np.ndarray, b_plus: np.ndarray, b_minus: np.ndarray, tooth_count: int, path) -> None:
    """Relative torque error of the design on the nominal model."""
    teeth = phis / (2.0 * math.pi / tooth_count)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(teeth, b_plus - 1.0, label="positive branch ratio - 1")
    ax.plot(teeth, b_minus + 1.0, label="negative branch ratio + 1")
    ax.set_xlabel("rotor position [teeth]")
    ax.set_ylabel("relative torque error")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.suptitle("Nominal relative torque error of the robust design")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_ripple_figure(rows: list, tooth_count: int, path) -> None:
    """Spaghetti plot of per-motor torque ratios; nominal motor in bold."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=False)
    styles = {"robust": "C1", "conventional": "C0"}
    for ax, sign, title in ((axes[0], 1, "positive branch"), (axes[1], -1, "negative branch")):
        for row in rows:
            if row.sign != sign:
                continue
            teeth = row.angles / (2.0 * math.pi / tooth_count)
            if row.srm_index < 0:
                ax.plot(teeth, row.values, color=styles[row.method], linewidth=2.5)
            else:
                ax.plot(teeth, row.values, color=styles[row.method], linewidth=0.5, alpha=0.35)
        ax.axhline(float(sign), color="k", linewidth=0.8, linestyle=":")
        ax.set_title(title)
        ax.set_xlabel("rotor position [teeth]")
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("torque ratio")
    handles = [
        plt.Line2D([], [], color=styles[m], label=m) for m in ("robust", "conventional")
    ]
    axes[0].legend(handles=handles, fontsize=8)
    fig.suptitle("Per-motor torque ripple of both commutation methods")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_study_figure(rows: list, path) -> None:
    """Box plots of the tracking error per variance scale and method."""
    lambdas = sorted({row.variance_scale for row in rows})
    methods = ("robust", "conventional")
    colors = {"robust": "C1", "conventional": "C0"}
    fig, ax = plt.subplots(figsize=(max(5, 1.8 * len(lambdas)), 4.5))
    width = 0.32
    for m_idx, method in enumerate(methods):
        data = []
        for lam in lambdas:
            values = [
                r.e_rms for r in rows
                if r.variance_scale == lam and r.method == method and not r.aborted
            ]
            data.append(values)
        positions = np.arange(len(lambdas)) + (m_idx - 0.5) * width
        box = ax.boxplot(
            data,
            positions=positions,
            widths=width * 0.9,
            patch_artist=True,
            manage_ticks=False,
        )
        for patch in box["boxes"]:
            patch.set_facecolor(colors[method])
            patch.set_alpha(0.6)
        for median in box["medians"]:
            median.set_color("k")
    ax.set_xticks(np.arange(len(lambdas)))
    ax.set_xticklabels([f"{lam:g}" for lam in lambdas])
    ax.set_xlabel("variance scale")
    ax.set_ylabel("e_rms [rad]")
    ax.set_yscale("log")
    ax.grid(alpha=0.3, axis="y")
    handles = [plt.Line2D([], [], color=colors[m], linewidth=6, alpha=0.6, label=m) for m in methods]
    ax.legend(handles=handles)
    fig.suptitle("Tracking error across motors")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
