"""SVG line plots for reports; output bytes are stable for identical inputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "leaftransfer",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _new_axes(width=6.0):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    fig, ax = plt.subplots(figsize=(width, width * golden))
    return fig, ax


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _positive(values):
    v = np.asarray(values, dtype=float)
    return np.maximum(v, 1e-300)


def plot_transfer(report, path) -> Path:
    """Median training loss against gradient-descent iteration, one line per strategy."""
    with plt.rc_context(STYLE):
        fig, ax = _new_axes()
        iters = report.aggregates.get("curve_iterations", [])
        for name, agg in sorted(report.aggregates.get("strategies", {}).items()):
            ax.plot(iters, _positive(agg["median_curve"]), label=name, lw=1.5)
        if report.aggregates.get("strategies"):
            ax.set_yscale("log")
            ax.legend(frameon=False)
        ax.set_xlabel("iteration")
        ax.set_ylabel("median training loss")
        return _save(fig, path)


def plot_equivariance(report, path) -> Path:
    """Parameter gap per case, sorted, for each group."""
    with plt.rc_context(STYLE):
        fig, ax = _new_axes()
        groups = sorted({r["group"] for r in report.rows})
        for g in groups:
            gaps = sorted(r["param_gap"] for r in report.rows if r["group"] == g)
            ax.plot(range(len(gaps)), _positive(gaps), marker=".", lw=1, label=g)
        tol = report.config.get("tol")
        if tol is not None:
            ax.axhline(tol, color="0.5", ls="--", lw=1, label="tol")
        if groups:
            ax.set_yscale("log")
            ax.legend(frameon=False)
        ax.set_xlabel("case (sorted by gap)")
        ax.set_ylabel("parameter gap")
        return _save(fig, path)


def plot_tasks(grid, curves, labels, path, xlabel="x", ylabel="f(x)") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = _new_axes()
        for y, label in zip(curves, labels):
            ax.plot(grid, y, lw=1.2, label=label)
        if labels:
            ax.legend(frameon=False)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        return _save(fig, path)


def plot_trajectory(traj, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = _new_axes()
        ax.plot(traj.times, traj.theta, lw=1.2, label="theta")
        ax.plot(traj.times, traj.omega, lw=1.2, label="omega")
        ax.legend(frameon=False)
        ax.set_xlabel("t [s]")
        ax.set_ylabel("state [rad, rad/s]")
        return _save(fig, path)


def plot_report(report, path) -> Path:
    if report.kind == "transfer":
        return plot_transfer(report, path)
    if report.kind == "equivariance":
        return plot_equivariance(report, path)
    raise ValueError(f"no plot for report kind {report.kind!r}")
