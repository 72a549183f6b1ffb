"""Figure rendering for the CLI report paths.

Every CLI subcommand that writes CSV/JSON can also drop matplotlib
figures next to those files; figures are rendered headlessly.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .convoy_sim import ConvoyTrace
from .stability import STABLE, StabRegion


def convoy_figures(trace: ConvoyTrace, outdir: Path) -> list[Path]:
    """Ground paths and per-vehicle lateral error / steering histories."""
    outdir = Path(outdir)
    n = trace.n_vehicles
    paths = []

    fig, ax = plt.subplots(figsize=(9, 3.2))
    for i in range(n):
        label = "lead" if i == 0 else f"vehicle {i + 1}"
        ax.plot(trace.series("x", i), trace.series("y", i), lw=1.0, label=label)
    ax.set_xlabel("X [m]")
    ax.set_ylabel("Y [m]")
    ax.legend(fontsize=8, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "paths.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    fig, axes = plt.subplots(2, 1, figsize=(9, 5.4), sharex=True)
    for i in range(n):
        label = "lead" if i == 0 else f"vehicle {i + 1}"
        axes[0].plot(trace.series("t", i), trace.series("e_lat", i), lw=0.9,
                     label=label)
        axes[1].plot(trace.series("t", i), trace.series("delta_c", i), lw=0.9)
    axes[0].set_ylabel("lateral error [m]")
    axes[0].legend(fontsize=8, ncol=2)
    axes[1].set_ylabel("steer command [rad]")
    axes[1].set_xlabel("t [s]")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "lateral_error.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)
    return paths


def stabset_figure(region: StabRegion, outdir: Path,
                   komega_values=None) -> Path:
    """ke-ktheta slices of the classified grid at chosen komega values."""
    outdir = Path(outdir)
    if komega_values is None:
        idxs = sorted({0, len(region.komega) // 2, len(region.komega) - 1})
    else:
        idxs = sorted({int(np.argmin(np.abs(region.komega - v)))
                       for v in komega_values})
    fig, axes = plt.subplots(1, len(idxs), figsize=(3.4 * len(idxs), 3.2),
                             squeeze=False)
    for ax, k in zip(axes[0], idxs):
        ax.pcolormesh(region.ke, region.ktheta, region.classes[:, :, k].T,
                      cmap="RdYlGn", vmin=0, vmax=2, shading="nearest")
        ax.set_title(f"k_omega = {region.komega[k]:.3g}", fontsize=9)
        ax.set_xlabel("k_e")
    axes[0][0].set_ylabel("k_theta")
    fig.suptitle(f"stable fraction {region.count(STABLE) / region.classes.size:.2f}",
                 fontsize=9)
    fig.tight_layout()
    p = outdir / "stabset.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p


def eigsweep_figure(gammas, max_real, outdir: Path) -> Path:
    outdir = Path(outdir)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(1.0 / np.asarray(gammas), max_real, "o-", ms=3)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("speed [m/s]")
    ax.set_ylabel("max Re(eig) [1/s]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "eigsweep.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p


def fit_figure(points, spline, outdir: Path) -> Path:
    """Input points with the fitted segments drawn over them."""
    outdir = Path(outdir)
    fig, ax = plt.subplots(figsize=(6, 4))
    pts = np.asarray(points, dtype=float)
    ax.plot(pts[:, 0], pts[:, 1], "k.", ms=4, label="samples")
    for seg in spline:
        s = np.linspace(0.0, seg.span, 64)
        xy = np.array([seg.point_at(v) for v in s])
        ax.plot(xy[:, 0], xy[:, 1], lw=1.4, label=seg.kind)
    ax.axis("equal")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "fit.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p


def tvcheck_figure(profile_t, profile_v, outdir: Path) -> Path:
    outdir = Path(outdir)
    fig, axes = plt.subplots(2, 1, figsize=(6, 4.4), sharex=True)
    axes[0].plot(profile_t, profile_v, lw=1.2)
    axes[0].set_ylabel("v_x [m/s]")
    accel = np.gradient(np.asarray(profile_v, dtype=float),
                        np.asarray(profile_t, dtype=float))
    axes[1].plot(profile_t, accel, lw=1.2)
    axes[1].set_ylabel("accel [m/s^2]")
    axes[1].set_xlabel("t [s]")
    for ax in axes:
        ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "speed_profile.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p
