"""Stage 1: reversible-jump MCMC for the number of components at one time point.

Split/combine and birth/death moves follow the usual construction for
univariate normal mixtures (moment-matching splits of adjacent
components, births of empty components), with every component truncated
to the grid support and the mean prior restricted to that support.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rj
from .binned import BinGrid, refine_grid
from .errors import NumericalFailure, ParameterError
from .rng import RngStream, as_generator

log = logging.getLogger(__name__)

K_MAX = 10


@dataclass
class Stage1Hyperparams:
    """mu ~ N(xi, 1/kappa), sigma^2 ~ IG(delta, beta), beta ~ Gamma(g, rate h), lam ~ Dir(alpha)."""

    xi: float
    kappa: float
    delta: float = 2.0
    g: float = 0.2
    h: float = 1.0
    alpha_dir: float = 1.0
    k_min: int = 1
    k_max: int = K_MAX

    def __post_init__(self):
        for name in ("kappa", "delta", "g", "h", "alpha_dir"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.k_min != 1 or not 1 <= self.k_max <= 50:
            raise ParameterError("k range must be [1, k_max] with k_max <= 50")

    @classmethod
    def from_grid(cls, grid: BinGrid, **overrides):
        """Data-range defaults: xi at the midpoint, kappa = 1/R^2, h = 10/R^2."""
        R = grid.hi - grid.lo
        base = dict(xi=0.5 * (grid.lo + grid.hi), kappa=1.0 / R**2, delta=2.0, g=0.2,
                    h=10.0 / R**2, alpha_dir=1.0)
        base.update(overrides)
        return cls(**base)


@dataclass
class RJConfig:
    iterations: int = 200_000
    burn_in: int = 100_000
    seed: int = 0
    sub_per_bin: int = 3
    k_init: int = 1
    ignore_likelihood: bool = False

    def validate(self):
        if self.iterations - self.burn_in < 1 or self.burn_in < 0:
            raise ParameterError("need 0 <= burn_in < iterations")
        return self


@dataclass
class KPosterior:
    """Posterior over k from the retained sweeps."""

    counts: np.ndarray
    k_trace: np.ndarray = field(repr=False, default=None)
    acceptance: dict = field(default_factory=dict)

    @property
    def k_values(self) -> np.ndarray:
        return np.arange(1, self.counts.size + 1)

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def mode(self) -> int:
        """Most visited k (smallest on ties)."""
        return int(np.argmax(self.counts)) + 1

    @property
    def median(self) -> int:
        c = np.cumsum(self.counts)
        return int(np.searchsorted(c, 0.5 * c[-1])) + 1


@dataclass
class KSnapshot:
    """Posterior means of the sorted parameters over sweeps with a given k."""

    k: int
    visits: int
    mu: np.ndarray
    sigma2: np.ndarray
    lam: np.ndarray


def rjmcmc_run(row, grid: BinGrid, hyper: Stage1Hyperparams | None = None,
               config: RJConfig | None = None, rng=None):
    """Sample k together with the mixture parameters for one row of counts.

    Returns ``(KPosterior, {k: KSnapshot})``.

    Raises
    ------
    NumericalFailure
        If a parameter becomes non-finite.
    """
    config = (config or RJConfig()).validate()
    hyper = hyper or Stage1Hyperparams.from_grid(grid)
    row = np.asarray(row, dtype=np.int64)
    if row.shape != (grid.n_bins,):
        raise ParameterError("row length does not match the grid")
    if not 1 <= config.k_init <= hyper.k_max:
        raise ParameterError("k_init outside [1, k_max]")
    gen = as_generator(RngStream(config.seed) if rng is None else rng)
    fine = refine_grid(grid, config.sub_per_bin)
    n = config.iterations - config.burn_in
    km = hyper.k_max
    out_k = np.zeros(n, dtype=np.int64)
    sum_mu, sum_s2, sum_w = (np.zeros((km, km + 1)) for _ in range(3))
    n_at_k = np.zeros(km, dtype=np.int64)
    status, nacc = _rj.rj_chain(
        gen, row, fine.edges, int(config.sub_per_bin), float(hyper.xi), float(hyper.kappa),
        float(hyper.delta), float(hyper.g), float(hyper.h), float(hyper.alpha_dir),
        int(hyper.k_min), km, int(config.k_init), int(config.iterations), int(config.burn_in),
        bool(config.ignore_likelihood), out_k, sum_mu, sum_s2, sum_w, n_at_k)
    if status != 0:
        raise NumericalFailure("reversible-jump sampler reached an invalid state",
                               {"status": int(status)})
    acc = dict(zip(("split", "combine", "birth", "death"), (int(a) for a in nacc)))
    post = KPosterior(n_at_k.astype(float), out_k, acc)
    snaps = {}
    for k in range(1, km + 1):
        v = n_at_k[k - 1]
        if v:
            snaps[k] = KSnapshot(k, int(v), sum_mu[k - 1, :k] / v, sum_s2[k - 1, :k] / v,
                                 sum_w[k - 1, :k] / v)
    return post, snaps


def select_k_for_stage2(k_posteriors) -> int:
    """Largest per-time modal k."""
    modes = [p.mode if isinstance(p, KPosterior) else int(p) for p in k_posteriors]
    if not modes:
        raise ParameterError("need at least one time point")
    return max(modes)


def write_stage1_k(k_posteriors, path, k_max: int = K_MAX) -> Path:
    """``stage1_k.csv``: ``t,mode_k,median_k,p_k1..p_kK``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,mode_k,median_k," + ",".join(f"p_k{k}" for k in range(1, k_max + 1)) + "\n")
        for t, p in enumerate(k_posteriors, 1):
            probs = np.zeros(k_max)
            probs[:p.counts.size] = p.probs[:k_max]
            fh.write(f"{t},{p.mode},{p.median}," + ",".join(f"{x:.6f}" for x in probs) + "\n")
    return path
