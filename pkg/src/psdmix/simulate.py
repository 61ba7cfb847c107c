"""Synthetic size-distribution series with known truth.

``simulate_d1``   smooth, strongly correlated trajectories (growth of the
                  smallest mode);
``simulate_d2``   volatile weight for the smallest mode, well separated means;
``simulate_event_day``  a day with a particle-formation burst on top of a
                  two-mode background.

Counts are drawn as Multinomial(N_t, p_t) with p_t the bin masses of the
truncated mixture, which has the same distribution as drawing N_t particles
and binning them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .binned import BinGrid, BinnedSeries, make_log_grid, write_series
from .errors import ParameterError
from .rng import RngStream, as_generator

D1_SIGMA2 = 0.36
EVENT_T = 144
EVENT_CADENCE_MIN = 10.0
EVENT_MEDIAN_N = 6893
EVENT_MAX_N = 17740
EVENT_RAW_FACTOR = 10


@dataclass
class TruthSeries:
    """True parameters per time point (T x k arrays) and sample sizes."""

    grid: BinGrid
    times: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    lam: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), self.mu.shape).copy()
        self.lam = np.asarray(self.lam, dtype=float)
        self.N = np.asarray(self.N, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.abs(self.lam.sum(axis=1) - 1) > 1e-9) or np.any(self.lam < 0):
            raise ParameterError("truth weights must lie on the simplex")

    @property
    def T(self) -> int:
        return self.mu.shape[0]

    @property
    def k(self) -> int:
        return self.mu.shape[1]


def bin_probabilities(grid: BinGrid, mu, sigma2, lam) -> np.ndarray:
    """Bin masses of the mixture with every component truncated to the grid."""
    mu = np.asarray(mu, float)[:, None]
    sd = np.sqrt(np.asarray(sigma2, float))[:, None]
    cdf = ndtr((grid.edges[None, :] - mu) / sd)
    mass = np.diff(cdf, axis=1)
    z = cdf[:, -1] - cdf[:, 0]
    p = (np.asarray(lam, float)[:, None] * mass / z[:, None]).sum(axis=0)
    return p / p.sum()


def draw_counts(grid: BinGrid, truth_mu, truth_s2, truth_lam, N, rng) -> np.ndarray:
    gen = as_generator(rng)
    rows = [gen.multinomial(int(n), bin_probabilities(grid, m, s, l))
            for m, s, l, n in zip(truth_mu, truth_s2, truth_lam, N)]
    return np.array(rows, dtype=np.int64)


def _project_simplex(lam, floor=1e-3):
    lam = np.maximum(lam, floor)
    return lam / lam.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# D1
# ---------------------------------------------------------------------------

def d1_paths(T: int = 100):
    """Noise-free D1 trajectories: mu (T x 3) and lam (T x 3)."""
    if T < 3:
        raise ParameterError("T must be at least 3")
    t = np.arange(T)
    mu = np.column_stack([np.linspace(1.5, 3.0, T), np.full(T, 3.5), np.full(T, 5.0)])
    peak = int(round(0.6 * T)) - 1
    lam1 = np.interp(t, [0, peak, T - 1], [0.1, 0.6, 0.3])
    lam3 = np.linspace(0.1, 0.3, T)
    lam = np.column_stack([lam1, 1.0 - lam1 - lam3, lam3])
    return mu, lam


def simulate_d1(seed, T: int = 100, N: int = 1000, sigma2: float = D1_SIGMA2,
                mu_noise: float = 0.03, lam_noise: float = 0.01, grid: BinGrid | None = None):
    """Highly correlated series: the first mode grows from 1.5 to 3.0.

    Its weight rises 0.1 -> 0.6 over the first 60% of the series and falls
    to 0.3; the third weight rises 0.1 -> 0.3 and the second takes the rest.
    Gaussian noise is added to the mean and weight paths.  The default grid
    is 32 log-spaced bins over 3-650 nm.
    """
    grid = make_log_grid(3, 650, 32) if grid is None else grid
    gen = RngStream(seed, (1,)).generator
    mu, lam = d1_paths(T)
    mu = mu + mu_noise * gen.standard_normal(mu.shape)
    lam = _project_simplex(lam + lam_noise * gen.standard_normal(lam.shape))
    mu = np.clip(mu, grid.lo + 0.05, grid.hi - 0.05)
    s2 = np.full(mu.shape, float(sigma2))
    Ns = np.full(T, int(N), dtype=np.int64)
    times = np.arange(1, T + 1, dtype=float)
    counts = draw_counts(grid, mu, s2, lam, Ns, gen)
    return BinnedSeries(grid, times, counts), TruthSeries(grid, times, mu, s2, lam, Ns)


# ---------------------------------------------------------------------------
# D2
# ---------------------------------------------------------------------------

def find_excursions(path, size: float = 0.2, length: int = 3):
    """Runs where ``path`` sits at least ``size`` away from its value just before the run.

    Returns a list of ``(start, run_length)`` with run_length >= ``length``.
    """
    x = np.asarray(path, dtype=float)
    out = []
    t = 1
    while t < x.size:
        ref = x[t - 1]
        run = 0
        while t + run < x.size and abs(x[t + run] - ref) >= size:
            run += 1
        if run >= length:
            out.append((t, run))
            t += run
        else:
            t += 1
    return out


def simulate_d2(seed, T: int = 100, N: int = 1000, sigma2: float = D1_SIGMA2,
                grid: BinGrid | None = None):
    """Volatile weight for the smallest mode; means well apart.

    The first weight follows a bounded random walk around 0.3 with
    occasional jumps of 0.25-0.35 that persist for 3-8 periods.  At least
    one such excursion is always present.
    """
    grid = make_log_grid(3, 650, 32) if grid is None else grid
    gen = RngStream(seed, (2,)).generator
    t = np.arange(T)
    mu = np.column_stack([1.8 + 0.2 * np.sin(2 * np.pi * t / T), np.full(T, 3.5), np.full(T, 5.0)])
    mu += 0.03 * gen.standard_normal(mu.shape)
    base = np.empty(T)
    base[0] = 0.3
    for i in range(1, T):
        base[i] = np.clip(base[i - 1] + 0.02 * gen.standard_normal(), 0.15, 0.45)
    jump = np.zeros(T)
    i = 1
    while i < T:
        if gen.random() < 0.06:
            dur = int(gen.integers(3, 9))
            jump[i:i + dur] = gen.choice([-1.0, 1.0]) * gen.uniform(0.25, 0.35)
            i += dur + 3
        else:
            i += 1
    lam1 = np.clip(base + jump, 0.02, 0.8)
    if not find_excursions(lam1):
        start = int(gen.integers(T // 4, T // 2))
        lam1[start:start + 5] = np.clip(lam1[start - 1] + 0.3, 0.02, 0.8)
    lam3 = np.clip(0.25 + 0.01 * gen.standard_normal(T), 0.05, None)
    lam3 = np.minimum(lam3, 0.95 - lam1)
    lam = np.column_stack([lam1, 1.0 - lam1 - lam3, lam3])
    s2 = np.full(mu.shape, float(sigma2))
    Ns = np.full(T, int(N), dtype=np.int64)
    times = np.arange(1, T + 1, dtype=float)
    counts = draw_counts(grid, mu, s2, lam, Ns, gen)
    return BinnedSeries(grid, times, counts), TruthSeries(grid, times, mu, s2, lam, Ns)


# ---------------------------------------------------------------------------
# event day
# ---------------------------------------------------------------------------

def event_profile(T: int = EVENT_T, onset: int = 50, tau: float = 20.0):
    """Unscaled total concentration and nucleation share over the day."""
    t = np.arange(T, dtype=float)
    background = 1.0 + 0.15 * np.sin(2 * np.pi * t / T) + 0.05 * np.cos(6 * np.pi * t / T)
    u = np.clip((t - onset) / tau, 0.0, None)
    burst = 3.2 * u * np.exp(1.0 - u)
    return background, burst


def calibrate_totals(profile, median: float = EVENT_MEDIAN_N, maximum: float = EVENT_MAX_N):
    """Affine map a + b * profile hitting the target median and maximum exactly."""
    p = np.asarray(profile, dtype=float)
    pm, px = np.median(p), p.max()
    if not px > pm:
        raise ParameterError("profile maximum must exceed its median")
    b = (maximum - median) / (px - pm)
    a = median - b * pm
    out = a + b * p
    if np.any(out <= 0):
        raise ParameterError("calibration produced nonpositive totals")
    return out


def simulate_event_day(seed, T: int = EVENT_T, onset: int = 50, raw_factor: int = EVENT_RAW_FACTOR):
    """A new-particle-formation day on the 3-650 nm grid at 10-minute cadence.

    Aitken (ln 50 nm) and accumulation (ln 180 nm) modes are present all day.
    From ``onset`` a nucleation mode appears at ln 4 nm and grows to ln 20 nm.
    Totals are calibrated so that, after dividing by ``raw_factor``, the
    daily median is 6893 and the maximum 17740; returned counts are raw.
    """
    grid = make_log_grid(3, 650, 32)
    gen = RngStream(seed, (3,)).generator
    background, burst = event_profile(T, onset)
    total = calibrate_totals(background + burst)
    N_raw = np.round(total * raw_factor).astype(np.int64)
    t = np.arange(T, dtype=float)
    # the affine calibration scales the burst by the same slope as the profile
    slope = (EVENT_MAX_N - EVENT_MEDIAN_N) / ((background + burst).max() - np.median(background + burst))
    nuc_share = np.clip(slope * burst / total, 0.0, 1.0)
    # background split between Aitken and accumulation drifts slowly
    ait_frac = 0.55 + 0.1 * np.sin(2 * np.pi * (t + 20) / T)
    lam = np.column_stack([nuc_share, (1 - nuc_share) * ait_frac, (1 - nuc_share) * (1 - ait_frac)])
    grow = np.clip((t - onset) / (T - 1 - onset), 0.0, 1.0)
    mu_nuc = math.log(4.0) + (3.0 - math.log(4.0)) * grow
    mu = np.column_stack([mu_nuc, np.full(T, math.log(50.0)), np.full(T, math.log(180.0))])
    mu[:, 1:] += 0.02 * gen.standard_normal((T, 2))
    s2 = np.tile([0.25**2, 0.35**2, 0.4**2], (T, 1))
    times = t * EVENT_CADENCE_MIN
    counts = draw_counts(grid, mu, s2, lam, N_raw, gen)
    return BinnedSeries(grid, times, counts), TruthSeries(grid, times, mu, s2, lam, N_raw)


SCENARIOS = {"d1": simulate_d1, "d2": simulate_d2, "event": simulate_event_day}


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_truth(truth: TruthSeries, path) -> Path:
    """``truth.csv`` with rows ``t,comp,mu,sigma2,lambda,N`` (1-based t and comp)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,comp,mu,sigma2,lambda,N\n")
        for t in range(truth.T):
            for j in range(truth.k):
                fh.write(f"{t + 1},{j + 1},{truth.mu[t, j]:.10g},{truth.sigma2[t, j]:.10g},"
                         f"{truth.lam[t, j]:.10g},{int(truth.N[t])}\n")
    return path


def read_truth(path, grid: BinGrid | None = None, times=None) -> TruthSeries:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    T, k = int(data["t"].max()), int(data["comp"].max())
    arr = {}
    for name in ("mu", "sigma2", "lambda"):
        a = np.empty((T, k))
        a[data["t"].astype(int) - 1, data["comp"].astype(int) - 1] = data[name]
        arr[name] = a
    N = np.zeros(T, dtype=np.int64)
    N[data["t"].astype(int) - 1] = data["N"].astype(np.int64)
    times = np.arange(1, T + 1, dtype=float) if times is None else times
    lam = arr["lambda"] / arr["lambda"].sum(axis=1, keepdims=True)
    return TruthSeries(grid, times, arr["mu"], arr["sigma2"], lam, N)


def write_simulation(series: BinnedSeries, truth: TruthSeries, directory):
    d = Path(directory)
    gpath, cpath = write_series(series, d)
    tpath = write_truth(truth, d / "truth.csv")
    return gpath, cpath, tpath
