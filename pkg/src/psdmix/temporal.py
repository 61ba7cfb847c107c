"""Priors that share information across time points.

Three regimes:

* informed: each time point is fitted separately, but its conjugate prior is
  centred on the previous time point's posterior summaries;
* penalised: a joint chain where weights at neighbouring times are tied by a
  squared-difference penalty, updated pairwise by rejection sampling;
* hierarchical: a joint chain with random-walk latent means and latent
  weight logits.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _joint as J
from . import relabel as R
from .binned import BinnedSeries, refine_grid
from .errors import NumericalFailure, ParameterError
from .mixture import ChainConfig, MixtureState, Stage2Hyperparams, Trace, WEIGHT_FLOOR, run_chain
from .rng import RngStream, as_generator

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# informed carry-forward
# ---------------------------------------------------------------------------

@dataclass
class InformedConfig:
    """Carry-forward settings.

    ``theta`` scales the previous mean allocations into Dirichlet
    concentrations; ``n_carry`` is the pseudo-sample size for mu and sigma^2.
    """

    theta: np.ndarray | float = 0.8
    n_carry: float = 25.0
    smooth_mu: bool = True
    smooth_sigma: bool = False
    smooth_lambda: bool = True

    def validate(self, k: int | None = None):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if np.any(~(th > 0)):
            raise ParameterError("theta must be positive")
        if k is not None and th.size not in (1, k):
            raise ParameterError(f"theta has {th.size} entries for k={k}")
        if not self.n_carry > 0:
            raise ParameterError("n_carry must be positive")
        if not (self.smooth_mu or self.smooth_sigma or self.smooth_lambda):
            raise ParameterError("informed prior needs at least one smooth flag")
        return self


def informed_hyper_from_trace(prev: Trace, cfg: InformedConfig,
                              base: Stage2Hyperparams | None = None) -> Stage2Hyperparams:
    """Prior for time t built from the (relabelled) trace at t-1.

    Weights: alpha_j = theta_j * mbar_j.  Means: xi_j = previous posterior
    mean, n_j = n_carry.  Variances: v_j = n_carry / sigma2_hat, s2_j =
    n_carry, which centres the inverse gamma near the previous estimate.
    Anything not smoothed keeps the value in ``base`` (default: the
    simulation-study prior).  An empty component (mbar_j = 0) gets
    alpha_j = 0.001 * theta_j * N.
    """
    k = prev.k
    cfg.validate(k)
    hyper = (Stage2Hyperparams.study_defaults(k) if base is None else base).copy()
    if hyper.k != k:
        raise ParameterError("base hyperparameters and trace disagree on k")
    mu_hat, s2_hat, _ = prev.posterior_means()
    theta = np.broadcast_to(np.asarray(cfg.theta, dtype=float), (k,))
    if cfg.smooth_lambda:
        mbar = prev.m_bar
        alpha = theta * mbar
        empty = mbar <= 0
        if np.any(empty):
            total = float(mbar.sum())
            alpha[empty] = WEIGHT_FLOOR * theta[empty] * total
            log.warning("informed prior: empty component(s) %s, alpha floored",
                        np.flatnonzero(empty).tolist())
        hyper.alpha = alpha
    if cfg.smooth_mu:
        hyper.xi = mu_hat.copy()
        hyper.n = np.full(k, float(cfg.n_carry))
    if cfg.smooth_sigma:
        hyper.v = float(cfg.n_carry) / s2_hat
        hyper.s2 = np.full(k, float(cfg.n_carry))
    Stage2Hyperparams.__post_init__(hyper)
    return hyper


def relabel_trace(trace: Trace, method: str, row=None, grid=None):
    """Relabel one trace with ``"distance"``, ``"allocation"`` or ``"none"``.

    For k above the exhaustive-search limit both methods order each draw
    by its means instead.

    Returns ``(trace, PermutationSeries or None)``.
    """
    if method == "none":
        return trace, None
    if method in ("distance", "allocation") and trace.k > R.MAX_K:
        # exhaustive search is out of reach; fall back to ordering by mean
        log.warning("k=%d exceeds %d: relabelling by ordering the means", trace.k, R.MAX_K)
        perms = R.PermutationSeries(np.argsort(trace.mu, axis=1, kind="stable"))
        return trace.permute(perms.perms), perms
    if method == "distance":
        return R.relabel_by_distance(trace)
    if method == "allocation":
        tr, perms, _ = R.relabel_by_allocation(trace, row, grid)
        return tr, perms
    raise ParameterError(f"unknown relabelling method {method!r}")


def run_informed(series: BinnedSeries, base: Stage2Hyperparams, cfg: InformedConfig,
                 config: ChainConfig, rng: RngStream | None = None, relabel: str = "distance"):
    """Sequential fits where each prior is built from the previous relabelled trace.

    Time 1 uses ``base`` (nothing to carry forward).  Each later chain starts
    at the previous posterior means.  Time ``t`` draws from
    ``rng.child(t)``, so results do not depend on how the loop is scheduled.

    Returns ``(traces, permutation series)``, both already relabelled.
    """
    config.validate()
    cfg.validate(base.k)
    rng = RngStream(config.seed) if rng is None else rng
    traces, perms = [], []
    hyper, init = base, None
    for t in range(series.T):
        tr = run_chain(series.counts[t], series.grid, hyper, config, rng=rng.child(t), init=init)
        tr, p = relabel_trace(tr, relabel, series.counts[t], series.grid)
        traces.append(tr)
        perms.append(p)
        hyper = informed_hyper_from_trace(tr, cfg, base)
        mu, s2, lam = tr.posterior_means()
        init = MixtureState(mu, s2, lam / lam.sum())
    return traces, perms


# ---------------------------------------------------------------------------
# logistic map
# ---------------------------------------------------------------------------

def logits_to_simplex(W) -> np.ndarray:
    """Softmax over (W_1, ..., W_{k-1}, 0); works row-wise on 2-D input."""
    W = np.asarray(W, dtype=float)
    full = np.concatenate([W, np.zeros(W.shape[:-1] + (1,))], axis=-1)
    full -= full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def simplex_to_logits(p) -> np.ndarray:
    """Inverse of :func:`logits_to_simplex`: log(p_j / p_k)."""
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)):
        raise ParameterError("logits need strictly positive weights")
    return np.log(p[..., :-1]) - np.log(p[..., -1:])


# ---------------------------------------------------------------------------
# penalised weights
# ---------------------------------------------------------------------------

@dataclass
class PenalisedConfig:
    """Penalty exp(-phi**-exponent * sum_t ||lam_t - lam_{t-1}||^2).

    Smaller ``phi`` means stronger smoothing.
    """

    phi: float = 0.08
    max_rejects: int = 1000
    exponent: float = 2.0

    def validate(self):
        if not self.phi > 0:
            raise ParameterError("phi must be positive")
        if int(self.max_rejects) < 1:
            raise ParameterError("max_rejects must be >= 1")
        return self

    @property
    def coef(self) -> float:
        return float(self.phi) ** (-float(self.exponent))


def penalty_log_ratio(x, lambda_all, t, j, l, cfg: PenalisedConfig) -> float:
    """log g1(x)/g2(x) for the (j, l) pair at time t; always <= 0."""
    lam = np.asarray(lambda_all, dtype=float)
    s = lam[t, j] + lam[t, l]
    tg = np.empty(4)
    n = J.pen_targets(lam, t, j, l, s, tg)
    ls = J.pen_lambda_star(tg, n, s)
    return -cfg.coef * (J.pen_quad(float(x), tg, n) - J.pen_quad(ls, tg, n))


def penalised_lambda_sweep(lambda_all, m_all, cfg: PenalisedConfig, rng,
                           return_events: bool = False):
    """One pass of pairwise weight updates over every time point.

    For each t and each pair j < l (lexicographic), lam_tj is redrawn with
    s = lam_tj + lam_tl fixed: propose lam_tj/s ~ Beta(m_tj + 1, m_tl + 1)
    and accept with probability exp(-c [Q(x) - Q(lam*)]), where Q is the
    squared distance to the neighbouring weights.  End points use their one
    neighbour.  When ``max_rejects`` proposals fail the old value is kept and
    the event is counted.
    """
    cfg.validate()
    lam = np.array(lambda_all, dtype=float)
    m = np.asarray(m_all, dtype=float)
    if lam.ndim != 2 or m.shape != lam.shape:
        raise ParameterError("lambda_all and m_all must be matching T x k arrays")
    if np.any(lam < 0) or np.any(np.abs(lam.sum(axis=1) - 1) > 1e-9):
        raise ParameterError("every row of lambda_all must lie on the simplex")
    events = J.pen_sweep(as_generator(rng), lam, m, cfg.coef, int(cfg.max_rejects))
    if events:
        log.warning("penalised sweep: %d pair update(s) hit max_rejects", events)
    return (lam, int(events)) if return_events else lam


# ---------------------------------------------------------------------------
# hierarchical prior
# ---------------------------------------------------------------------------

@dataclass
class HierConfig:
    """Variances of the two-level prior.

    ``eps_d_*`` tie data-level parameters to their latent versions,
    ``eps_s_*`` control the latent random walks.  ``proposal_var`` is the
    variance of the logit proposal; ``proposal`` is ``"independence"``
    (centred on X_t) or ``"random_walk"`` (centred on the current W_t).
    """

    eps_d_mu: float = 0.01
    eps_s_phi: float = 0.01
    eps_d_lambda: float = 0.1
    eps_s_gamma: float = 0.1
    proposal_var: float = 0.1
    proposal: str = "independence"

    def validate(self):
        for name in ("eps_d_mu", "eps_s_phi", "eps_d_lambda", "eps_s_gamma", "proposal_var"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.proposal not in ("independence", "random_walk"):
            raise ParameterError(f"unknown proposal {self.proposal!r}")
        return self


@dataclass
class HierState:
    phi_latent: np.ndarray
    X: np.ndarray
    W: np.ndarray
    gamma: np.ndarray = None

    def __post_init__(self):
        self.phi_latent = np.atleast_2d(np.asarray(self.phi_latent, dtype=float))
        T, k = self.phi_latent.shape
        self.X = np.asarray(self.X, dtype=float).reshape(T, k - 1)
        self.W = np.asarray(self.W, dtype=float).reshape(T, k - 1)
        if self.gamma is None:
            self.gamma = logits_to_simplex(self.X)
        if np.any(np.abs(self.gamma.sum(axis=1) - 1) > 1e-12):
            raise ParameterError("gamma rows must sum to 1")

    @property
    def lam(self) -> np.ndarray:
        return logits_to_simplex(self.W)


def hier_phi_moments(mu, phi_prev, eps_d, eps_s):
    mean = (eps_d * np.asarray(phi_prev) + eps_s * np.asarray(mu)) / (eps_d + eps_s)
    return mean, 1.0 / (1.0 / eps_d + 1.0 / eps_s)


def hier_update_phi(mu_row_t, phi_prev, cfg: HierConfig, rng) -> np.ndarray:
    """phi_t | . ~ N((eps_d phi_{t-1} + eps_s mu_t)/(eps_d + eps_s), 1/(1/eps_d + 1/eps_s))."""
    gen = as_generator(rng)
    mu = np.atleast_1d(np.asarray(mu_row_t, dtype=float))
    pp = np.broadcast_to(np.asarray(phi_prev, dtype=float), mu.shape)
    return np.array([J.hier_phi_draw(gen, pp[j], mu[j], cfg.eps_d_mu, cfg.eps_s_phi)
                     for j in range(mu.size)])


def hier_mu_moments(m, sum_y, phi, sigma2, eps_d):
    prec = eps_d * np.asarray(m) / np.asarray(sigma2) + 1.0
    return (np.asarray(phi) + np.asarray(sum_y) * eps_d / np.asarray(sigma2)) / prec, eps_d / prec


def hier_update_mu(m, sum_y, phi, sigma2, cfg: HierConfig, rng) -> np.ndarray:
    """mu | . ~ N((phi + m ybar eps_d/s2)/(eps_d m/s2 + 1), eps_d/(eps_d m/s2 + 1))."""
    gen = as_generator(rng)
    m, sum_y, phi, sigma2 = np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, float))
                                                  for a in (m, sum_y, phi, sigma2)))
    return np.array([J.hier_mu_draw(gen, m[j], sum_y[j], phi[j], sigma2[j], cfg.eps_d_mu)
                     for j in range(m.size)])


def hier_update_X(W_t, X_prev, cfg: HierConfig, rng):
    """Latent logits X_t and the smoothed weights gamma_t."""
    W_t = np.asarray(W_t, dtype=float)
    out = np.empty(W_t.size)
    J.hier_x_draw(as_generator(rng), W_t, np.asarray(X_prev, dtype=float),
                  cfg.eps_d_lambda, cfg.eps_s_gamma, out)
    return out, logits_to_simplex(out)


def hier_mh_update_W(z_counts_t, X_t, W_current, cfg: HierConfig, rng):
    """Metropolis-Hastings step for the data-level logits.

    Target: multinomial allocation likelihood times N(W; X_t, eps_d I).
    Returns ``(W, lam, accepted)``.
    """
    W = np.array(W_current, dtype=float)
    acc = J.hier_w_mh(as_generator(rng), np.asarray(z_counts_t, dtype=float),
                      np.asarray(X_t, dtype=float), W, cfg.eps_d_lambda, cfg.proposal_var,
                      cfg.proposal == "random_walk")
    return W, logits_to_simplex(W), bool(acc)


def t1_initialization(trace_t1: Trace, min_share: float = WEIGHT_FLOOR):
    """Anchor the hierarchical chain on an independent fit of the first period.

    Returns ``(phi_1, X_1, W_init)``: posterior mean mu, logits of the
    posterior mean weights, and log(mbar_j / mbar_k).  A component with no
    mean allocation in the numerator gets ``min_share * N`` instead of zero.

    Raises
    ------
    ParameterError
        If the reference (last) component has mbar = 0.
    """
    mu_hat, _, lam_hat = trace_t1.posterior_means()
    mbar = trace_t1.m_bar.astype(float)
    if trace_t1.k == 1:
        return mu_hat, np.empty(0), np.empty(0)
    if not mbar[-1] > 0:
        raise ParameterError("reference component is empty at t=1; reorder components")
    floor = min_share * mbar.sum()
    num = np.maximum(mbar[:-1], floor)
    W = np.log(num / mbar[-1])
    X = simplex_to_logits(np.maximum(lam_hat, min_share))
    return mu_hat, X, W


def epsilon_from_stage1(mu_means) -> float:
    """Suggested data-level variance: spread of stage-1 posterior means over time.

    ``mu_means`` is a T x k array; returns the average over components of the
    variance of first differences (the random-walk step variance).
    """
    a = np.asarray(mu_means, dtype=float)
    if a.ndim != 2 or a.shape[0] < 3:
        raise ParameterError("need a T x k array with T >= 3")
    return float(np.mean(np.var(np.diff(a, axis=0), axis=0, ddof=1)))


# ---------------------------------------------------------------------------
# joint chains
# ---------------------------------------------------------------------------

@dataclass
class JointTrace:
    """Per-time traces from one joint chain, plus regime-specific extras."""

    traces: list
    phi: np.ndarray | None = None
    gamma: np.ndarray | None = None
    w_acceptance: np.ndarray | None = None
    max_reject_events: int = 0
    warnings: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.traces)


def _split_traces(out_mu, out_s2, out_lam, out_m, config, warn):
    return [Trace(out_mu[t], out_s2[t], out_lam[t], out_m[t], None, config.iterations,
                  config.burn_in, 0) for t in range(out_mu.shape[0])]


def run_penalised(series: BinnedSeries, hyper: Stage2Hyperparams, pcfg: PenalisedConfig,
                  config: ChainConfig, rng=None, init=None) -> JointTrace:
    """Joint chain over all time points with the penalised weight prior.

    mu and sigma^2 use the per-time conjugate prior ``hyper``; weights are
    not floored in this regime.  ``init`` optionally gives T x k starting
    arrays ``(mu, sigma2, lam)``.
    """
    config.validate()
    pcfg.validate()
    T, k = series.T, hyper.k
    gen = as_generator(RngStream(config.seed) if rng is None else rng)
    if init is None:
        s0 = hyper.initial_state()
        mu = np.tile(s0.mu, (T, 1))
        s2 = np.tile(s0.sigma2, (T, 1))
        lam = np.tile(s0.lam, (T, 1))
    else:
        mu, s2, lam = (np.array(a, dtype=float).reshape(T, k) for a in init)
    n = config.retained
    out_mu, out_s2, out_lam = (np.empty((T, n, k)) for _ in range(3))
    out_m = np.empty((T, n, k), dtype=np.int64)
    fine = refine_grid(series.grid, config.sub_per_bin)
    status, warn, events = J.penalised_chain(
        gen, series.counts, fine.edges, int(config.sub_per_bin), hyper.xi, hyper.n, hyper.v,
        hyper.s2, mu, s2, lam, pcfg.coef, int(pcfg.max_rejects), int(config.iterations),
        int(config.burn_in), config.truncation == "augment", out_mu, out_s2, out_lam, out_m)
    if status != 0:
        raise NumericalFailure("non-finite parameter in penalised chain",
                               {"mu": mu, "sigma2": s2, "lam": lam})
    if events:
        log.warning("penalised chain: %d pair update(s) hit max_rejects", events)
    return JointTrace(_split_traces(out_mu, out_s2, out_lam, out_m, config, warn),
                      max_reject_events=int(events), warnings=int(warn))


def _aligned_warm_start(series, hyper, config, trace_t1, warm_iterations, gen):
    """Posterior means from short independent fits, labels matched to the previous t.

    Each fit starts from the previous time point's estimate.
    """
    T, k = series.T, hyper.k
    mu_prev, _, _ = trace_t1.posterior_means()
    mu = np.empty((T, k))
    s2 = np.empty((T, k))
    mbar = np.empty((T, k))
    mu[0], s2[0], _ = trace_t1.posterior_means()
    mbar[0] = trace_t1.m_bar
    perms = [np.array(p) for p in itertools.permutations(range(k))] if k <= 7 else None
    cfg = ChainConfig(iterations=warm_iterations, burn_in=warm_iterations // 2,
                      sub_per_bin=config.sub_per_bin, truncation=config.truncation)
    for t in range(1, T):
        lam0 = np.maximum(mbar[t - 1], WEIGHT_FLOOR * mbar[t - 1].sum())
        init = MixtureState(mu[t - 1], s2[t - 1], lam0 / lam0.sum())
        tr = run_chain(series.counts[t], series.grid, hyper, cfg, rng=gen, init=init)
        m, v, _ = tr.posterior_means()
        mb = tr.m_bar
        if perms is not None:
            best = min(perms, key=lambda p: (float(np.sum((m[p] - mu[t - 1]) ** 2)), tuple(p)))
        else:
            best = np.argsort(m)
        mu[t], s2[t], mbar[t] = m[best], v[best], mb[best]
    return mu, s2, mbar


def run_hierarchical(series: BinnedSeries, hyper: Stage2Hyperparams, hcfg: HierConfig,
                     config: ChainConfig, trace_t1: Trace, rng=None,
                     warm_start: int = 300) -> JointTrace:
    """Joint chain over all time points with the two-level prior.

    ``hyper`` supplies the inverse-gamma prior on sigma^2 (v, s2).  The
    first period is anchored by :func:`t1_initialization` on ``trace_t1``
    (an independent fit of t=1): phi_1 and X_1 stay fixed.

    With ``warm_start > 0`` every later time point starts from a short
    independent fit of that many iterations (labels matched to the previous
    time point); with 0 all time points start from the t=1 values.  Only
    the starting state is affected.
    """
    config.validate()
    hcfg.validate()
    T, k = series.T, hyper.k
    if trace_t1.k != k:
        raise ParameterError("t=1 trace and hyperparameters disagree on k")
    gen = as_generator(RngStream(config.seed) if rng is None else rng)
    phi1, X1, W0 = t1_initialization(trace_t1)
    _, s2_hat, _ = trace_t1.posterior_means()
    if warm_start > 0 and T > 1:
        mu, s2, mbar = _aligned_warm_start(series, hyper, config, trace_t1, int(warm_start), gen)
        floor = WEIGHT_FLOOR * mbar.sum(axis=1, keepdims=True)
        if k > 1:
            W = np.log(np.maximum(mbar[:, :-1], floor) / np.maximum(mbar[:, -1:], floor))
        else:
            W = np.empty((T, 0))
        W[0] = W0
        X = W.copy()
        X[0] = X1
        phi = mu.copy()
        phi[0] = phi1
        mu[0] = phi1
    else:
        mu = np.tile(phi1, (T, 1))
        s2 = np.tile(s2_hat, (T, 1))
        phi = np.tile(phi1, (T, 1))
        X = np.tile(X1, (T, 1)).reshape(T, k - 1)
        W = np.tile(W0, (T, 1)).reshape(T, k - 1)
    n = config.retained
    out_mu, out_s2, out_lam, out_phi, out_gam = (np.empty((T, n, k)) for _ in range(5))
    out_m = np.empty((T, n, k), dtype=np.int64)
    out_acc = np.zeros(T, dtype=np.int64)
    fine = refine_grid(series.grid, config.sub_per_bin)
    status, warn = J.hier_chain(
        gen, series.counts, fine.edges, int(config.sub_per_bin), hyper.v, hyper.s2,
        float(hcfg.eps_d_mu), float(hcfg.eps_s_phi), float(hcfg.eps_d_lambda),
        float(hcfg.eps_s_gamma), float(hcfg.proposal_var), hcfg.proposal == "random_walk",
        mu, s2, W, X, phi, int(config.iterations), int(config.burn_in),
        config.truncation == "augment", out_mu, out_s2, out_lam, out_m, out_phi, out_gam, out_acc)
    if status != 0:
        raise NumericalFailure("non-finite parameter in hierarchical chain",
                               {"mu": mu, "sigma2": s2, "W": W})
    return JointTrace(_split_traces(out_mu, out_s2, out_lam, out_m, config, warn),
                      phi=out_phi, gamma=out_gam, w_acceptance=out_acc / n, warnings=int(warn),
                      extras={"state": HierState(phi, X, W)})
