"""Random variates and densities used by the samplers.

Only what the mixture samplers need: truncated normals (slice sampled),
Dirichlet, inverse gamma and diagonal multivariate normals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from . import _kernels as K
from .errors import ParameterError
from .rng import as_generator


@dataclass(frozen=True)
class TruncNormalParams:
    """Normal(mu, sigma2) restricted to [lo, hi]; either bound may be infinite."""

    mu: float
    sigma2: float
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if not (self.sigma2 > 0.0) or not math.isfinite(self.sigma2):
            raise ParameterError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if not math.isfinite(self.mu):
            raise ParameterError("mu must be finite")
        if not (self.lo < self.hi):
            raise ParameterError(f"need lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def sd(self) -> float:
        return math.sqrt(self.sigma2)

    def log_mass(self) -> float:
        """log of the untruncated normal's probability of [lo, hi]."""
        return K.log_interval_mass((self.lo - self.mu) / self.sd, (self.hi - self.mu) / self.sd)


def sample_trunc_normal(p: TruncNormalParams, rng, size=None, warmup: int = 10):
    """Slice-sample the truncated normal.

    A single stepping-out/shrinkage slice chain is started at the interval
    midpoint (clipped to mu +/- 6 sd), run ``warmup`` transitions, and then
    one transition is taken per returned value.  This stays well behaved for
    windows deep in a tail where inverse-CDF methods underflow.

    Parameters
    ----------
    p : TruncNormalParams
    rng : RngStream or numpy.random.Generator
    size : int, optional
        Number of draws; ``None`` returns a float.
    warmup : int
        Transitions discarded before the first returned draw.
    """
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    out = np.empty(n)
    K.slice_chain(gen, float(p.mu), p.sd, float(p.lo), float(p.hi), n, int(warmup), out)
    return float(out[0]) if size is None else out


def sample_trunc_normal_exact(p: TruncNormalParams, rng, size=None):
    """Independent draws by accept/reject (normal, uniform or exponential envelope)."""
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    out = np.array([K.trunc_norm_exact(gen, float(p.mu), p.sd, float(p.lo), float(p.hi))
                    for _ in range(n)])
    return float(out[0]) if size is None else out


def log_pdf_trunc_normal(x, p: TruncNormalParams):
    """Log density of the truncated normal.

    Points outside [lo, hi] get ``-inf`` rather than an error, so callers can
    sum log likelihoods without special cases.
    """
    x = np.asarray(x, dtype=float)
    z = (x - p.mu) / p.sd
    out = -0.5 * z * z - K.LOG_SQRT_2PI - 0.5 * math.log(p.sigma2) - p.log_mass()
    out = np.where((x >= p.lo) & (x <= p.hi), out, -np.inf)
    return out[()] if out.ndim == 0 else out


def cdf_trunc_normal(x, p: TruncNormalParams):
    """CDF via the normal CDF ratio; used by tests and diagnostics."""
    a = (p.lo - p.mu) / p.sd
    z = (np.clip(np.asarray(x, dtype=float), p.lo, p.hi) - p.mu) / p.sd
    lm = p.log_mass()
    num = np.where(a > 0, np.exp(log_ndtr(-a)) - np.exp(log_ndtr(-z)), ndtr(z) - ndtr(a))
    return num / math.exp(lm)


def sample_dirichlet(alpha, rng, size=None):
    """Dirichlet draw(s); rows lie on the simplex."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 1 or np.any(~(alpha > 0)):
        raise ParameterError("Dirichlet concentrations must be a positive vector")
    gen = as_generator(rng)
    draws = gen.dirichlet(alpha, size=size)
    return draws / draws.sum(axis=-1, keepdims=True)


def sample_inverse_gamma(shape: float, scale: float, rng, size=None):
    """IG(shape, scale): the reciprocal of a Gamma(shape, rate=scale) variate."""
    if not (shape > 0 and scale > 0):
        raise ParameterError("inverse gamma needs shape > 0 and scale > 0")
    gen = as_generator(rng)
    return scale / gen.standard_gamma(shape, size=size)


def sample_mvn_diag(mean, var, rng):
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if mean.shape != var.shape:
        raise ParameterError(f"mean {mean.shape} and var {var.shape} differ in shape")
    if np.any(~(var > 0)):
        raise ParameterError("variances must be positive")
    gen = as_generator(rng)
    return mean + np.sqrt(var) * gen.standard_normal(mean.shape)
