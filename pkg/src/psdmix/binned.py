"""Bin grids, binned count series and the latent imputation step."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import ParameterError
from .rng import as_generator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinGrid:
    """Strictly increasing bin edges on the log-diameter scale."""

    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ParameterError("a grid needs at least two edges")
        if not np.all(np.isfinite(e)) or np.any(np.diff(e) <= 0):
            raise ParameterError("grid edges must be finite and strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n_bins(self) -> int:
        return self.edges.size - 1

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    @property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def __eq__(self, other):
        return isinstance(other, BinGrid) and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash(self.edges.tobytes())


@dataclass
class BinnedSeries:
    """Counts for ``T`` time points on a common grid.

    ``times`` are minutes; ``counts`` is a T x n_bins integer matrix.
    """

    grid: BinGrid
    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        c = np.asarray(self.counts)
        if c.ndim == 1:
            c = c[None, :]
        if not np.issubdtype(c.dtype, np.integer):
            if np.any(c != np.round(c)):
                raise ParameterError("counts must be integers; use round_counts() first")
            c = c.astype(np.int64)
        self.counts = c.astype(np.int64)
        if self.counts.shape[1] != self.grid.n_bins:
            raise ParameterError(
                f"counts have {self.counts.shape[1]} columns, grid has {self.grid.n_bins} bins")
        if self.times.shape[0] != self.counts.shape[0]:
            raise ParameterError("one timestamp per row of counts is required")
        if np.any(self.counts < 0):
            raise ParameterError("counts must be nonnegative")
        if np.any(self.counts.sum(axis=1) < 1):
            raise ParameterError("every time point needs at least one observation")

    @property
    def T(self) -> int:
        return self.counts.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass
class LatentSample:
    """Refined-grid counts drawn for one time point.

    ``values`` holds the individual latent draws when the slice route was used.
    """

    refined_grid: BinGrid
    refined_counts: np.ndarray
    representative: np.ndarray
    values: np.ndarray | None = None
    fallback_bins: int = 0

    @property
    def total(self) -> int:
        return int(self.refined_counts.sum())


def make_log_grid(lo_nm: float, hi_nm: float, n_bins: int) -> BinGrid:
    """``n_bins`` equal-width bins between ln(lo_nm) and ln(hi_nm)."""
    if not (lo_nm > 0 and hi_nm > lo_nm):
        raise ParameterError("need 0 < lo_nm < hi_nm")
    if int(n_bins) < 1:
        raise ParameterError("n_bins must be >= 1")
    edges = np.linspace(math.log(lo_nm), math.log(hi_nm), int(n_bins) + 1)
    edges[0], edges[-1] = math.log(lo_nm), math.log(hi_nm)
    return BinGrid(edges)


def refine_grid(grid: BinGrid, sub_per_bin: int) -> BinGrid:
    """Split every bin into ``sub_per_bin`` equal parts; original edges are kept exactly."""
    s = int(sub_per_bin)
    if s < 1:
        raise ParameterError("sub_per_bin must be >= 1")
    if s == 1:
        return grid
    e = grid.edges
    frac = np.arange(s) / s
    inner = e[:-1, None] + frac[None, :] * np.diff(e)[:, None]
    return BinGrid(np.append(inner.ravel(), e[-1]))


def aggregate_refined(refined_counts, sub_per_bin: int) -> np.ndarray:
    """Sum sub-bin counts back onto the original bins."""
    r = np.asarray(refined_counts)
    return r.reshape(-1, int(sub_per_bin)).sum(axis=1)


def impute_latents(row, grid: BinGrid, state, rng, sub_per_bin: int = 3,
                   method: str = "multinomial") -> LatentSample:
    """Draw latent positions inside each bin from the current mixture.

    Each bin's count is spread over its sub-bins according to the fitted
    mixture truncated to that bin.  ``method="multinomial"`` draws the
    sub-bin counts directly; ``method="slice"`` slice-samples every latent
    point and re-bins it (same distribution, slower, keeps the raw values).

    ``state`` is anything with ``mu``, ``sigma2`` and ``lam`` arrays.
    Bins where the mixture has no numerical mass are split uniformly and a
    warning is logged.
    """
    row = np.asarray(row, dtype=np.int64)
    if row.shape != (grid.n_bins,):
        raise ParameterError("row length does not match the grid")
    mu = np.asarray(state.mu, dtype=float)
    sd = np.sqrt(np.asarray(state.sigma2, dtype=float))
    lam = np.asarray(state.lam, dtype=float)
    fine = refine_grid(grid, sub_per_bin)
    log_z = np.empty(mu.size)
    K.log_support_mass(mu, sd, grid.lo, grid.hi, log_z)
    out = np.zeros(fine.n_bins, dtype=np.int64)
    gen = as_generator(rng)
    values = None
    if method == "multinomial":
        warn = K.impute_multinomial(gen, row, fine.edges, int(sub_per_bin), mu, sd, lam, log_z, out)
    elif method == "slice":
        values = np.empty(int(row.sum()))
        warn = K.impute_slice(gen, row, fine.edges, int(sub_per_bin), mu, sd, lam, log_z, out, values)
    else:
        raise ParameterError(f"unknown imputation method {method!r}")
    if warn:
        log.warning("latent imputation: %d bin(s) had no mixture mass; split uniformly", warn)
    return LatentSample(fine, out, fine.mids, values, int(warn))


# ---------------------------------------------------------------------------
# integer conversion and file formats
# ---------------------------------------------------------------------------

def round_counts(values) -> np.ndarray:
    """Round a row of real concentrations to integers, preserving the total.

    The target total is the half-to-even rounding of the row sum; the
    remaining units after flooring go to the largest fractional parts
    (earlier bins win ties).
    """
    v = np.asarray(values, dtype=float)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ParameterError("concentrations must be finite and nonnegative")
    flat = v.reshape(-1, v.shape[-1]) if v.ndim > 1 else v[None, :]
    out = np.empty(flat.shape, dtype=np.int64)
    for i, r in enumerate(flat):
        target = int(np.round(r.sum()))
        fl = np.floor(r).astype(np.int64)
        short = target - int(fl.sum())
        # sum of floors <= floor(sum) <= round(sum), so short >= 0
        if short > 0:
            order = np.argsort(-(r - fl), kind="stable")
            fl[order[:short]] += 1
        out[i] = fl
    return out.reshape(v.shape)


def rescale_counts(series: BinnedSeries, divisor: float) -> BinnedSeries:
    """Divide counts by ``divisor`` with largest-remainder integer rounding."""
    if not divisor > 0:
        raise ParameterError("rescale divisor must be positive")
    if divisor == 1:
        return series
    return BinnedSeries(series.grid, series.times.copy(), round_counts(series.counts / divisor))


def write_series(series: BinnedSeries, directory) -> tuple[Path, Path]:
    """Write ``grid.csv`` (one edge per line) and ``counts.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    gpath, cpath = d / "grid.csv", d / "counts.csv"
    with open(gpath, "w", encoding="utf-8", newline="\n") as fh:
        for e in series.grid.edges:
            fh.write(f"{float(e)!r}\n")
    with open(cpath, "w", encoding="utf-8", newline="\n") as fh:
        for t, row in zip(series.times, series.counts):
            fh.write(_fmt_time(t) + "," + ",".join(str(int(c)) for c in row) + "\n")
    return gpath, cpath


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def read_series(grid_path, counts_path) -> BinnedSeries:
    """Load a series from the two-file CSV layout.

    Non-integer counts are converted with :func:`round_counts`.
    """
    edges = []
    with open(grid_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                edges.append(float(line))
    grid = BinGrid(np.array(edges))
    times, rows = [], []
    with open(counts_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise ParameterError(f"{counts_path}:{lineno}: not numeric ({exc})") from None
            times.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise ParameterError(f"{counts_path}: no data rows")
    raw = np.array(rows, dtype=float)
    counts = raw.astype(np.int64) if np.all(raw == np.round(raw)) else round_counts(raw)
    return BinnedSeries(grid, np.array(times), counts)
