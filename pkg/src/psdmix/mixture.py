"""Fixed-k Gibbs sampler for a truncated normal mixture at one time point."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .binned import BinGrid, LatentSample, refine_grid
from .errors import NumericalFailure, ParameterError
from .rng import RngStream, as_generator

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 0.001
ACTIVE_WEIGHT = 0.01

# prior settings used for the simulation studies
DEFAULT_XI = (1.5, 3.5, 5.0)
DEFAULT_S2 = 10.0
DEFAULT_V = 10.0 / 0.6**2
DEFAULT_N = 2.0


@dataclass
class MixtureState:
    mu: np.ndarray
    sigma2: np.ndarray
    lam: np.ndarray
    z_counts: np.ndarray | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).copy()
        self.sigma2 = np.asarray(self.sigma2, dtype=float).copy()
        self.lam = np.asarray(self.lam, dtype=float).copy()
        k = self.mu.size
        if self.sigma2.size != k or self.lam.size != k:
            raise ParameterError("mu, sigma2 and lam must have the same length")
        if np.any(~(self.sigma2 > 0)):
            raise ParameterError("sigma2 must be positive")
        if np.any(self.lam < 0) or abs(self.lam.sum() - 1.0) > 1e-9:
            raise ParameterError("lam must lie on the simplex")
        if self.z_counts is None:
            self.z_counts = np.zeros(k, dtype=np.int64)

    @property
    def k(self) -> int:
        return self.mu.size


@dataclass
class Stage2Hyperparams:
    """Conjugate prior: lam ~ Dir(alpha), mu | s2 ~ N(xi, s2/n), s2 ~ IG(v/2, s2prior/2)."""

    alpha: np.ndarray
    xi: np.ndarray
    n: np.ndarray
    v: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.xi, dtype=float).size
        for name in ("alpha", "xi", "n", "v", "s2"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (k,)).copy()
            setattr(self, name, arr)
        for name in ("alpha", "n", "v", "s2"):
            if np.any(~(getattr(self, name) > 0)):
                raise ParameterError(f"{name} must be positive")

    @property
    def k(self) -> int:
        return self.xi.size

    @classmethod
    def study_defaults(cls, k: int = 3, xi=None):
        """Weakly informative simulation-study settings (xi spread if k != 3)."""
        if xi is None:
            xi = DEFAULT_XI if k == 3 else np.linspace(1.5, 5.0, k)
        return cls(alpha=1.0, xi=np.asarray(xi, dtype=float), n=DEFAULT_N, v=DEFAULT_V, s2=DEFAULT_S2)

    def copy(self):
        return replace(self, alpha=self.alpha.copy(), xi=self.xi.copy(), n=self.n.copy(),
                       v=self.v.copy(), s2=self.s2.copy())

    def initial_state(self) -> MixtureState:
        """Prior means for mu, prior centre s2/v for sigma2, equal weights."""
        return MixtureState(self.xi.copy(), self.s2 / self.v, np.full(self.k, 1.0 / self.k))


@dataclass
class ChainConfig:
    iterations: int = 50_000
    burn_in: int = 20_000
    sub_per_bin: int = 3
    seed: int = 0
    floor: float = WEIGHT_FLOOR
    # "augment": exact truncated-likelihood updates; "ignore": plain conjugate updates
    truncation: str = "augment"
    imputation: str = "multinomial"

    def validate(self):
        if self.iterations - self.burn_in < 1 or self.burn_in < 0:
            raise ParameterError("need 0 <= burn_in < iterations (at least one retained draw)")
        if self.sub_per_bin < 1:
            raise ParameterError("sub_per_bin must be >= 1")
        if self.truncation not in ("augment", "ignore"):
            raise ParameterError(f"truncation must be 'augment' or 'ignore', not {self.truncation!r}")
        if self.imputation not in ("multinomial", "slice"):
            raise ParameterError(f"unknown imputation {self.imputation!r}")
        return self

    @property
    def retained(self) -> int:
        return self.iterations - self.burn_in


@dataclass
class Trace:
    """Retained draws for one time point (rows are iterations)."""

    mu: np.ndarray
    sigma2: np.ndarray
    lam: np.ndarray
    z_counts: np.ndarray
    log_post: np.ndarray | None = None
    iterations: int = 0
    burn_in: int = 0
    warnings: int = 0

    def __post_init__(self):
        if self.iterations == 0:
            self.iterations = self.mu.shape[0]

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def k(self) -> int:
        return self.mu.shape[1]

    @property
    def m_bar(self) -> np.ndarray:
        return self.z_counts.mean(axis=0)

    def posterior_means(self):
        return self.mu.mean(axis=0), self.sigma2.mean(axis=0), self.lam.mean(axis=0)

    def state(self, i: int) -> MixtureState:
        return MixtureState(self.mu[i], self.sigma2[i], self.lam[i], self.z_counts[i])

    def permute(self, perms) -> "Trace":
        """Relabel: row ``i`` takes ``new[i, j] = old[i, perms[i, j]]``."""
        perms = np.asarray(perms)
        idx = np.arange(self.n)[:, None]
        return replace(self, mu=self.mu[idx, perms], sigma2=self.sigma2[idx, perms],
                       lam=self.lam[idx, perms], z_counts=self.z_counts[idx, perms])

    def concat(self, other: "Trace") -> "Trace":
        lp = None
        if self.log_post is not None and other.log_post is not None:
            lp = np.concatenate([self.log_post, other.log_post])
        return Trace(np.vstack([self.mu, other.mu]), np.vstack([self.sigma2, other.sigma2]),
                     np.vstack([self.lam, other.lam]), np.vstack([self.z_counts, other.z_counts]),
                     lp, self.iterations + other.iterations, self.burn_in + other.burn_in,
                     self.warnings + other.warnings)

    def split(self, n_parts: int) -> list:
        size = self.n // n_parts
        out = []
        for c in range(n_parts):
            s = slice(c * size, (c + 1) * size)
            lp = None if self.log_post is None else self.log_post[s]
            out.append(Trace(self.mu[s], self.sigma2[s], self.lam[s], self.z_counts[s], lp,
                             self.iterations // n_parts, self.burn_in // n_parts))
        return out


@dataclass
class AllocationStats:
    """Per-component counts and sums from one allocation draw."""

    z_counts: np.ndarray
    sum_y: np.ndarray
    sum_y2: np.ndarray
    alloc: np.ndarray = field(repr=False, default=None)

    @property
    def m(self) -> np.ndarray:
        return self.z_counts.astype(float)


# ---------------------------------------------------------------------------
# single updates
# ---------------------------------------------------------------------------

def sample_allocations(latents: LatentSample, state: MixtureState, rng) -> AllocationStats:
    """Allocate every latent point to a component.

    P(z = j) is proportional to lam_j times the component density truncated
    to the grid support.
    """
    grid = latents.refined_grid
    k = state.k
    sd = np.sqrt(state.sigma2)
    log_z = np.empty(k)
    K.log_support_mass(state.mu, sd, grid.lo, grid.hi, log_z)
    alloc = np.empty((grid.n_bins, k), dtype=np.int64)
    m, sy, syy = np.empty(k), np.empty(k), np.empty(k)
    warn = K.allocate(as_generator(rng), np.asarray(latents.refined_counts, dtype=np.int64),
                      np.asarray(latents.representative, dtype=float), state.mu, sd, state.lam,
                      log_z, False, alloc, m, sy, syy)
    if warn:
        log.warning("allocation: %d bin(s) with zero density under every component", warn)
    return AllocationStats(m.astype(np.int64), sy, syy, alloc)


def augment_for_truncation(stats: AllocationStats, state: MixtureState, grid: BinGrid, rng):
    """Completed-data sums (m, sum y, sum y^2) including the out-of-window draws."""
    m, sy, syy = stats.m.copy(), stats.sum_y.copy(), stats.sum_y2.copy()
    K.augment_truncated(as_generator(rng), m, sy, syy, state.mu, np.sqrt(state.sigma2),
                        grid.lo, grid.hi, 20000)
    return m, sy, syy


def _stats_arrays(stats):
    if isinstance(stats, AllocationStats):
        return stats.m, stats.sum_y, stats.sum_y2
    m, sy, syy = stats
    return np.asarray(m, float), np.asarray(sy, float), np.asarray(syy, float)


def update_sigma2(stats, hyper: Stage2Hyperparams, rng) -> np.ndarray:
    """Draw sigma^2 for every component from IG((v + m)/2, s2/2 + SS/2 + shrinkage term)."""
    m, sy, syy = _stats_arrays(stats)
    gen = as_generator(rng)
    return np.array([K.draw_sigma2_nig(gen, m[j], sy[j], syy[j], hyper.xi[j], hyper.n[j],
                                       hyper.v[j], hyper.s2[j]) for j in range(hyper.k)])


def update_mu(stats, sigma2, hyper: Stage2Hyperparams, rng) -> np.ndarray:
    """mu_j ~ N((n xi + m ybar)/(n + m), sigma2/(n + m))."""
    m, sy, _ = _stats_arrays(stats)
    gen = as_generator(rng)
    return np.array([K.draw_mu_nig(gen, m[j], sy[j], float(sigma2[j]), hyper.xi[j], hyper.n[j])
                     for j in range(hyper.k)])


def apply_weight_floor(lam, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Clamp weights below ``floor`` to exactly ``floor`` and rescale the others."""
    out = np.array(lam, dtype=float)
    K.apply_floor(out, float(floor))
    return out


def update_lambda(z_counts, alpha, rng, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    out = np.empty(len(alpha))
    K.draw_lambda(as_generator(rng), np.asarray(z_counts, float), np.asarray(alpha, float),
                  float(floor), out)
    return out


def log_posterior(row, grid: BinGrid, state: MixtureState, hyper: Stage2Hyperparams) -> float:
    """Binned-data log likelihood plus the conjugate log prior (up to a constant)."""
    sd = np.sqrt(state.sigma2)
    log_z = np.empty(state.k)
    K.log_support_mass(state.mu, sd, grid.lo, grid.hi, log_z)
    ll = K.loglik_binned(np.asarray(row, np.int64), grid.edges, state.mu, sd, state.lam, log_z)
    return ll + K.log_prior_nig(state.mu, state.sigma2, state.lam, hyper.xi, hyper.n, hyper.v,
                                hyper.s2, hyper.alpha)


# ---------------------------------------------------------------------------
# full chain
# ---------------------------------------------------------------------------

def run_chain(row, grid: BinGrid, hyper: Stage2Hyperparams, config: ChainConfig,
              rng=None, init: MixtureState | None = None) -> Trace:
    """Run the fixed-k sampler on one row of bin counts.

    Each sweep imputes latents, allocates them, then draws sigma^2, mu and
    the floored weights.  ``rng`` defaults to ``RngStream(config.seed)``.

    Raises
    ------
    NumericalFailure
        If any parameter becomes non-finite.
    """
    config.validate()
    row = np.asarray(row, dtype=np.int64)
    if row.shape != (grid.n_bins,):
        raise ParameterError("row length does not match the grid")
    gen = as_generator(RngStream(config.seed) if rng is None else rng)
    state = init if init is not None else hyper.initial_state()
    if state.k != hyper.k:
        raise ParameterError("initial state and hyperparameters disagree on k")
    mu, s2, lam = state.mu.copy(), state.sigma2.copy(), state.lam.copy()
    n, k = config.retained, hyper.k
    out_mu, out_s2, out_lam = np.empty((n, k)), np.empty((n, k)), np.empty((n, k))
    out_m = np.empty((n, k), dtype=np.int64)
    out_lp = np.empty(n)
    fine = refine_grid(grid, config.sub_per_bin)
    status, warn = K.stage2_chain(
        gen, row, fine.edges, int(config.sub_per_bin), hyper.xi, hyper.n, hyper.v, hyper.s2,
        hyper.alpha, mu, s2, lam, int(config.iterations), int(config.burn_in), float(config.floor),
        config.truncation == "augment", config.imputation == "slice",
        out_mu, out_s2, out_lam, out_m, out_lp)
    if status != 0:
        raise NumericalFailure("non-finite parameter in fixed-k sampler",
                               {"mu": mu, "sigma2": s2, "lam": lam})
    if warn:
        log.warning("fixed-k sampler: %d zero-mass fallbacks", warn)
    return Trace(out_mu, out_s2, out_lam, out_m, out_lp, config.iterations, config.burn_in, int(warn))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

TRACE_HEADER = "iter,comp,mu,sigma2,lambda,m"


def write_trace(trace: Trace, path):
    """One row per retained iteration and component: ``iter,comp,mu,sigma2,lambda,m``.

    ``iter`` counts sweeps from 1 including burn-in; ``comp`` is 1-based.
    """
    n, k = trace.n, trace.k
    it = np.repeat(np.arange(trace.burn_in + 1, trace.burn_in + n + 1), k)
    comp = np.tile(np.arange(1, k + 1), n)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for row in zip(it, comp, trace.mu.ravel(), trace.sigma2.ravel(), trace.lam.ravel(),
                       trace.z_counts.ravel()):
            fh.write("%d,%d,%.12g,%.12g,%.12g,%d\n" % row)
    return path


def read_trace(path) -> Trace:
    """Inverse of :func:`write_trace` (log posterior values are not stored)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != TRACE_HEADER:
            raise ParameterError(f"{path}: unexpected trace header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ParameterError(f"{path}: empty trace")
    k = int(data[:, 1].max())
    n = data.shape[0] // k
    if n * k != data.shape[0]:
        raise ParameterError(f"{path}: ragged trace")
    cols = [data[:, c].reshape(n, k) for c in range(2, 6)]
    burn = int(data[0, 0]) - 1
    return Trace(cols[0], cols[1], cols[2], cols[3].astype(np.int64), None, burn + n, burn)
