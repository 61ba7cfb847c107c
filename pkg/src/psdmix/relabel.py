"""Post-hoc label-switching correction for per-time-point traces.

Both methods anchor on the maximum a posteriori draw and pick, for every
retained iteration, the permutation of component labels that best matches
it: in standardized parameter space (``relabel_by_distance``) or in
classification-probability space with the iterative KL scheme
(``relabel_by_allocation``).  Permutations are searched exhaustively, so
k is limited to 7.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .binned import BinGrid
from .errors import ParameterError
from .mixture import MixtureState, Trace

log = logging.getLogger(__name__)

MAX_K = 7


@dataclass
class PermutationSeries:
    """Row ``i`` maps new label j to old label ``perms[i, j]``."""

    perms: np.ndarray

    def __post_init__(self):
        self.perms = np.asarray(self.perms, dtype=np.int64)
        k = self.perms.shape[1]
        if np.any(np.sort(self.perms, axis=1) != np.arange(k)):
            raise ParameterError("every row must be a permutation of 0..k-1")

    @property
    def n(self) -> int:
        return self.perms.shape[0]

    @property
    def nonidentity_fraction(self) -> float:
        if self.n == 0:
            return 0.0
        return float(np.mean(np.any(self.perms != np.arange(self.perms.shape[1]), axis=1)))


def all_permutations(k: int) -> np.ndarray:
    """Every permutation of range(k) in lexicographic order."""
    if k > MAX_K:
        raise ParameterError(f"exhaustive relabelling supports k <= {MAX_K}, got {k}")
    return np.array(list(itertools.permutations(range(k))), dtype=np.int64).reshape(-1, k)


def map_anchor(trace: Trace, log_post=None) -> int:
    """Index of the retained draw with the largest log posterior (earliest on ties)."""
    lp = trace.log_post if log_post is None else log_post
    if lp is None:
        raise ParameterError("trace has no log posterior values")
    lp = np.asarray(lp, dtype=float)
    if lp.size == 0:
        raise ParameterError("empty trace")
    return int(np.argmax(np.where(np.isnan(lp), -np.inf, lp)))


def _best_perms(cost_fn, n, perms, chunk=4096):
    out = np.empty(n, dtype=np.int64)
    for s in range(0, n, chunk):
        c = cost_fn(slice(s, min(n, s + chunk)))
        # argmin returns the first minimum, i.e. the lexicographically smallest permutation
        out[s:s + c.shape[0]] = np.argmin(c, axis=1)
    return perms[out]


def relabel_by_distance(trace: Trace, anchor_state: MixtureState | int | None = None,
                        max_passes: int = 20):
    """Align every draw with the anchor in standardized (mu, sigma2, lam) space.

    Each coordinate is divided by its standard deviation across retained
    draws (1 where that is zero).  Spreads measured on a label-switched
    trace mostly reflect the switching, so the scales are re-estimated on
    the relabelled draws and the search repeated until no permutation
    changes.  ``anchor_state`` may be a state, an iteration index or
    ``None`` for the MAP draw.

    Returns ``(relabelled trace, PermutationSeries)``.
    """
    k = trace.k
    if k == 1:
        return trace, PermutationSeries(np.zeros((trace.n, 1), dtype=np.int64))
    if anchor_state is None:
        anchor_state = map_anchor(trace)
    if isinstance(anchor_state, (int, np.integer)):
        anchor_state = trace.state(int(anchor_state))
    X = np.stack([trace.mu, trace.sigma2, trace.lam], axis=-1)
    A = np.stack([anchor_state.mu, anchor_state.sigma2, anchor_state.lam], axis=-1)
    perms = all_permutations(k)
    idx = np.arange(trace.n)[:, None]
    # first pass: one scale per parameter, pooled over components
    S = np.broadcast_to(X.reshape(-1, 3).std(axis=0), (k, 3)).copy()
    best = None
    for _ in range(max_passes):
        S[~(S > 0)] = 1.0

        def cost(sl, S=S):
            d = (X[sl][:, perms, :] - A[None, None]) / S[None, None]
            return np.einsum("npkc,npkc->np", d, d)

        new = _best_perms(cost, trace.n, perms)
        if best is not None and np.array_equal(new, best):
            break
        best = new
        S = X[idx, best].std(axis=0)
    return trace.permute(best), PermutationSeries(best)


def classification_probs(trace: Trace, grid: BinGrid) -> np.ndarray:
    """P(component j | y at bin midpoint r) for every draw: n x bins x k."""
    y = grid.mids[None, :, None]
    mu = trace.mu[:, None, :]
    sd = np.sqrt(trace.sigma2)[:, None, :]
    # truncated-normal normaliser: log(Phi(b) - Phi(a))
    a = (grid.lo - trace.mu) / np.sqrt(trace.sigma2)
    b = (grid.hi - trace.mu) / np.sqrt(trace.sigma2)
    lb, la = log_ndtr(b), log_ndtr(a)
    log_z = lb + np.log1p(-np.exp(np.minimum(la - lb, -1e-300)))
    logw = (np.log(np.maximum(trace.lam, 1e-300))[:, None, :] - np.log(sd)
            - 0.5 * ((y - mu) / sd) ** 2 - log_z[:, None, :])
    return np.exp(logw - logsumexp(logw, axis=2, keepdims=True))


def relabel_by_allocation(trace: Trace, row, grid: BinGrid, anchor: int | None = None,
                          max_passes: int = 100, probs=None):
    """Iterative KL relabelling on classification probabilities.

    Classification matrices are rebuilt from each draw at the bin midpoints
    and weighted by the bin counts.  Labels start from the anchor draw
    (MAP by default, or draw 0 without log posteriors); each pass averages
    the current relabelled matrices and re-picks every draw's permutation.
    Stops when a pass changes nothing.

    Returns ``(relabelled trace, PermutationSeries, converged)``.
    """
    k = trace.k
    if k == 1:
        return trace, PermutationSeries(np.zeros((trace.n, 1), dtype=np.int64)), True
    counts = np.asarray(row, dtype=float)
    P = classification_probs(trace, grid) if probs is None else np.asarray(probs)
    if anchor is None:
        anchor = map_anchor(trace) if trace.log_post is not None else 0
    perms = all_permutations(k)
    cur = np.tile(np.arange(k), (trace.n, 1))
    Q = P[anchor]
    converged = False
    for _ in range(max_passes):
        logQ = np.log(np.maximum(Q, 1e-300))
        # M[i, a, j] = sum_r c_r P[i, r, a] log Q[r, j]
        M = np.einsum("r,nra,rj->naj", counts, P, logQ)

        def cost(sl, M=M):
            m = M[sl]
            return -m[:, perms, np.arange(k)].sum(axis=2)

        new = _best_perms(cost, trace.n, perms)
        if np.array_equal(new, cur):
            converged = True
            break
        cur = new
        Q = np.take_along_axis(P, cur[:, None, :], axis=2).mean(axis=0)
    if not converged:
        log.warning("allocation relabelling did not converge in %d passes", max_passes)
    return trace.permute(cur), PermutationSeries(cur), converged


def write_relabel_report(rows, path) -> Path:
    """``relabel_report.csv`` rows: ``t,method,nonidentity_fraction``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,method,nonidentity_fraction\n")
        for t, method, frac in rows:
            fh.write(f"{t},{method},{frac:.6f}\n")
    return path
