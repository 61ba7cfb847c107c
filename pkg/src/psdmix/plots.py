"""SVG figures of a SummarySeries: one file per parameter plus a point plot."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .summary import PARAMS, SummarySeries

log = logging.getLogger(__name__)

_LABELS = {"mu": r"$\mu$ (log nm)", "sigma2": r"$\sigma^2$", "lambda": r"$\lambda$"}
_TRUTH_ATTR = {"mu": "mu", "sigma2": "sigma2", "lambda": "lam"}
MAX_RADIUS_PT = 9.0


def marker_radius(lam) -> np.ndarray:
    """Circle radius in points for weight ``lam``: area proportional to the weight."""
    return MAX_RADIUS_PT * np.sqrt(np.clip(np.asarray(lam, dtype=float), 0.0, 1.0))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed ids and no timestamp so reruns give identical files
    matplotlib.rcParams["svg.hashsalt"] = "psdmix"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": "psdmix"})


def emit_plots(summary: SummarySeries, out_dir, truth=None, times=None) -> list:
    """Write ``mu.svg``, ``sigma2.svg``, ``lambda.svg`` and ``points.svg``.

    Each parameter figure has one panel per component with the posterior
    mean (solid), the 95% band (dotted) and, if given, the truth (dashed).
    Inactive components (mean weight <= 0.01) are left out at those times.
    An empty summary writes nothing and logs a warning.
    """
    if summary.T == 0 or summary.k == 0:
        log.warning("empty summary: no plots written")
        return []
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T, k = summary.T, summary.k
    x = np.arange(1, T + 1) if times is None else np.asarray(times)
    paths = []
    for p in PARAMS:
        fig, axes = plt.subplots(1, k, figsize=(3.2 * k, 3.0), squeeze=False, sharey=True)
        for j, ax in enumerate(axes[0]):
            act = summary.active[:, j]
            ax.plot(x, np.where(act, summary.mean[p][:, j], np.nan), color="k", lw=1.2)
            ax.plot(x, np.where(act, summary.lo[p][:, j], np.nan), color="k", lw=0.8, ls=":")
            ax.plot(x, np.where(act, summary.hi[p][:, j], np.nan), color="k", lw=0.8, ls=":")
            if truth is not None and j < truth.k:
                ax.plot(x, getattr(truth, _TRUTH_ATTR[p])[:T, j], color="tab:red", lw=1.0, ls="--")
            ax.set_title(f"component {j + 1}")
            ax.set_xlabel("t")
        axes[0, 0].set_ylabel(_LABELS[p])
        fig.tight_layout()
        path = out / f"{p}.svg"
        _save(fig, path)
        plt.close(fig)
        paths.append(path)

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for j in range(k):
        act = summary.active[:, j]
        r = marker_radius(summary.mean["lambda"][act, j])
        ax.scatter(x[act], summary.mean["mu"][act, j], s=r**2, facecolors="none",
                   edgecolors=f"C{j}", linewidths=0.8, label=f"component {j + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel(_LABELS["mu"])
    ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    path = out / "points.svg"
    _save(fig, path)
    plt.close(fig)
    paths.append(path)
    return paths
