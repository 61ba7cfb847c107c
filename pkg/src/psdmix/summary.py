"""Convergence diagnostics and per-time posterior summaries."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .mixture import ACTIVE_WEIGHT, Trace

PARAMS = ("mu", "sigma2", "lambda")
_ATTR = {"mu": "mu", "sigma2": "sigma2", "lambda": "lam"}


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor for one scalar.

    Parameters
    ----------
    chains : array_like, shape (m, n)
        ``m >= 2`` chains of equal length ``n >= 10``.

    Returns
    -------
    float
        ``sqrt(V / W)`` with ``V = (n-1)/n W + (m+1)/(m n) B``.  Constant
        chains that agree give 1; constant chains that disagree give inf.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("need at least two chains")
    m, n = x.shape
    if n < 10:
        raise ParameterError("need at least 10 retained draws per chain")
    means = x.mean(axis=1)
    B = n * means.var(ddof=1)
    W = x.var(axis=1, ddof=1).mean()
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    V = (n - 1) / n * W + (m + 1) / (m * n) * B
    return float(np.sqrt(V / W))


def gelman_rubin_table(chain_traces):
    """R-hat for every (t, comp, parameter).

    ``chain_traces[c][t]`` is chain ``c``'s trace at time ``t``; chains are
    truncated to their common length.  Returns an array (T, k, 3).
    """
    m = len(chain_traces)
    if m < 2:
        raise ParameterError("need at least two chains")
    T, k = len(chain_traces[0]), chain_traces[0][0].k
    out = np.empty((T, k, len(PARAMS)))
    for t in range(T):
        n = min(ch[t].n for ch in chain_traces)
        for p, name in enumerate(PARAMS):
            x = np.stack([getattr(ch[t], _ATTR[name])[:n] for ch in chain_traces])
            for j in range(k):
                out[t, j, p] = gelman_rubin(x[:, :, j])
    return out


def write_rhat(rhat, path, threshold: float = 1.1) -> bool:
    """``rhat.csv`` rows ``t,comp,param,rhat``; returns the convergence flag."""
    path = Path(path)
    T, k, _ = rhat.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,comp,param,rhat\n")
        for t in range(T):
            for j in range(k):
                for p, name in enumerate(PARAMS):
                    fh.write(f"{t + 1},{j + 1},{name},{rhat[t, j, p]:.6f}\n")
    return bool(np.all(rhat < threshold))


@dataclass
class SummarySeries:
    """Posterior means and central 95% intervals, arrays shaped (T, k).

    ``mean``, ``lo`` and ``hi`` map parameter names (mu, sigma2, lambda)
    to arrays.
    """

    mean: dict
    lo: dict
    hi: dict
    active: np.ndarray
    N: np.ndarray
    times: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.active.shape[0]

    @property
    def k(self) -> int:
        return self.active.shape[1] if self.active.ndim == 2 else 0


def summarize(traces, N=None, level: float = 0.95, times=None) -> SummarySeries:
    """Per-(t, j) posterior mean and equal-tailed interval of each parameter.

    Components with mean weight at or below 0.01 are flagged inactive.
    ``N`` defaults to the mean allocated count total of each trace.
    """
    traces = list(traces)
    if not traces:
        return SummarySeries({p: np.empty((0, 0)) for p in PARAMS},
                             {p: np.empty((0, 0)) for p in PARAMS},
                             {p: np.empty((0, 0)) for p in PARAMS},
                             np.empty((0, 0), dtype=bool), np.empty(0, dtype=np.int64))
    q = ((1 - level) / 2, (1 + level) / 2)
    mean, lo, hi = {}, {}, {}
    for name in PARAMS:
        vals = [getattr(tr, _ATTR[name]) for tr in traces]
        mean[name] = np.stack([v.mean(axis=0) for v in vals])
        qs = np.stack([np.quantile(v, q, axis=0) for v in vals])
        # guard against rounding putting the mean a hair outside a zero-width interval
        lo[name] = np.minimum(qs[:, 0], mean[name])
        hi[name] = np.maximum(qs[:, 1], mean[name])
    active = mean["lambda"] > ACTIVE_WEIGHT
    if N is None:
        N = np.array([int(round(tr.z_counts.sum(axis=1).mean())) for tr in traces])
    return SummarySeries(mean, lo, hi, active, np.asarray(N, dtype=np.int64),
                         None if times is None else np.asarray(times))


SUMMARY_HEADER = ("t,comp,active,N," + ",".join(f"{p}_mean,{p}_lo,{p}_hi" for p in PARAMS))


def write_summary(summary: SummarySeries, path) -> Path:
    """``summary.csv`` with one row per (t, comp); t and comp are 1-based."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for t in range(summary.T):
            for j in range(summary.k):
                vals = []
                for p in PARAMS:
                    vals += [summary.mean[p][t, j], summary.lo[p][t, j], summary.hi[p][t, j]]
                fh.write(f"{t + 1},{j + 1},{int(summary.active[t, j])},{int(summary.N[t])},"
                         + ",".join(f"{v:.8g}" for v in vals) + "\n")
    return path


def read_summary(path) -> SummarySeries:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != SUMMARY_HEADER:
            raise ParameterError(f"{path}: unexpected summary header")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        return summarize([])
    T, k = int(data[:, 0].max()), int(data[:, 1].max())
    if T * k != data.shape[0]:
        raise ParameterError(f"{path}: ragged summary")
    grid = lambda c: data[:, c].reshape(T, k)
    mean, lo, hi = {}, {}, {}
    for i, p in enumerate(PARAMS):
        mean[p], lo[p], hi[p] = grid(4 + 3 * i), grid(5 + 3 * i), grid(6 + 3 * i)
    return SummarySeries(mean, lo, hi, grid(2).astype(bool), data[::k, 3].astype(np.int64))


def switching_fraction(trace: Trace) -> float:
    """Share of draws whose mean ordering differs from the posterior-mean ordering.

    A cheap trace-path check for label switching inside runs that are not
    relabelled.
    """
    ref = np.argsort(trace.mu.mean(axis=0), kind="stable")
    order = np.argsort(trace.mu, axis=1, kind="stable")
    return float(np.mean(np.any(order != ref, axis=1)))


def write_switching_report(traces, path) -> Path:
    """``switching_report.csv`` rows ``t,switch_fraction``."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,switch_fraction\n")
        for t, tr in enumerate(traces, 1):
            fh.write(f"{t},{switching_fraction(tr):.6f}\n")
    return path


def rmse(estimate, truth) -> float:
    """Root mean squared error averaged over every (t, j) entry."""
    e, tr = np.asarray(estimate, float), np.asarray(truth, float)
    return float(np.sqrt(np.mean((e - tr) ** 2)))
