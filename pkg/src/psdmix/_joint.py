"""Compiled kernels for the priors that couple time points."""
import math

import numpy as np
from numba import njit

from . import _kernels as K


# ---------------------------------------------------------------------------
# penalised weights: pairwise rejection sampler
# ---------------------------------------------------------------------------

@njit(cache=True)
def pen_targets(lam_all, t, j, l, s, out):
    """Points the penalty pulls lam[t, j] towards; returns how many exist."""
    T = lam_all.shape[0]
    n = 0
    if t > 0:
        out[n] = lam_all[t - 1, j]
        out[n + 1] = s - lam_all[t - 1, l]
        n += 2
    if t < T - 1:
        out[n] = lam_all[t + 1, j]
        out[n + 1] = s - lam_all[t + 1, l]
        n += 2
    return n


@njit(cache=True)
def pen_quad(x, targets, n):
    q = 0.0
    for i in range(n):
        q += (x - targets[i]) ** 2
    return q


@njit(cache=True)
def pen_lambda_star(targets, n, s):
    if n == 0:
        return 0.5 * s
    c = 0.0
    for i in range(n):
        c += targets[i]
    c /= n
    return max(0.0, min(c, s))


@njit(cache=True)
def pen_pair_update(rng, lam_all, m_all, t, j, l, coef, max_rejects):
    """Redraw lam[t, j] with lam[t, j] + lam[t, l] held fixed.

    Proposes lam[t, j]/s ~ Beta(m_tj + 1, m_tl + 1) and accepts with
    probability g1/g2 = exp(-coef * (Q(x) - Q(lam*))).  Returns the number
    of rejections; ``max_rejects`` means the current value was kept.
    """
    s = lam_all[t, j] + lam_all[t, l]
    if s <= 0.0:
        return 0
    targets = np.empty(4)
    n = pen_targets(lam_all, t, j, l, s, targets)
    lstar = pen_lambda_star(targets, n, s)
    qstar = pen_quad(lstar, targets, n)
    a = m_all[t, j] + 1.0
    b = m_all[t, l] + 1.0
    for r in range(max_rejects):
        x = s * rng.beta(a, b)
        log_ratio = -coef * (pen_quad(x, targets, n) - qstar)
        if log_ratio > 1e-9 * (1.0 + coef):
            raise AssertionError("penalised sampler envelope violated (g1 > g2)")
        if math.log(rng.random()) <= log_ratio:
            lam_all[t, j] = x
            lam_all[t, l] = s - x
            return r
    return max_rejects


@njit(cache=True)
def pen_sweep(rng, lam_all, m_all, coef, max_rejects):
    """All time points, all unordered pairs in lexicographic order."""
    T, k = lam_all.shape
    events = 0
    for t in range(T):
        for j in range(k - 1):
            for l in range(j + 1, k):
                if pen_pair_update(rng, lam_all, m_all, t, j, l, coef, max_rejects) >= max_rejects:
                    events += 1
    return events


# ---------------------------------------------------------------------------
# hierarchical conditionals
# ---------------------------------------------------------------------------

@njit(cache=True)
def hier_phi_draw(rng, phi_prev, mu, eps_d, eps_s):
    mean = (eps_d * phi_prev + eps_s * mu) / (eps_d + eps_s)
    var = 1.0 / (1.0 / eps_d + 1.0 / eps_s)
    return mean + math.sqrt(var) * rng.standard_normal()


@njit(cache=True)
def hier_mu_draw(rng, m, sy, phi, sigma2, eps_d):
    prec = eps_d * m / sigma2 + 1.0
    mean = (phi + sy * eps_d / sigma2) / prec
    return mean + math.sqrt(eps_d / prec) * rng.standard_normal()


@njit(cache=True)
def hier_x_draw(rng, W, X_prev, eps_d, eps_s, out):
    var = 1.0 / (1.0 / eps_d + 1.0 / eps_s)
    for i in range(W.shape[0]):
        mean = (W[i] / eps_d + X_prev[i] / eps_s) * var
        out[i] = mean + math.sqrt(var) * rng.standard_normal()


@njit(cache=True)
def logistic(W, out):
    """Weights from k-1 logits with the last logit fixed at 0."""
    km1 = W.shape[0]
    mx = 0.0
    for i in range(km1):
        if W[i] > mx:
            mx = W[i]
    tot = math.exp(-mx)
    for i in range(km1):
        out[i] = math.exp(W[i] - mx)
        tot += out[i]
    for i in range(km1):
        out[i] /= tot
    out[km1] = math.exp(-mx) / tot


@njit(cache=True)
def log_softmax_last0(W, j):
    km1 = W.shape[0]
    mx = 0.0
    for i in range(km1):
        if W[i] > mx:
            mx = W[i]
    tot = math.exp(-mx)
    for i in range(km1):
        tot += math.exp(W[i] - mx)
    wj = W[j] if j < km1 else 0.0
    return wj - mx - math.log(tot)


@njit(cache=True)
def w_log_target(W, m, X, eps_d):
    lt = 0.0
    for j in range(m.shape[0]):
        if m[j] > 0:
            lt += m[j] * log_softmax_last0(W, j)
    for i in range(W.shape[0]):
        lt -= 0.5 * (W[i] - X[i]) ** 2 / eps_d
    return lt


@njit(cache=True)
def w_log_proposal(W, X, prop_var):
    lq = 0.0
    for i in range(W.shape[0]):
        lq -= 0.5 * (W[i] - X[i]) ** 2 / prop_var
    return lq


@njit(cache=True)
def hier_w_mh(rng, m, X, W, eps_d, prop_var, random_walk):
    """Metropolis-Hastings update of the data-level logits (in place).

    Independence proposal W' ~ N(X, prop_var I) unless ``random_walk``.
    """
    km1 = W.shape[0]
    if km1 == 0:
        return True
    Wp = np.empty(km1)
    sdp = math.sqrt(prop_var)
    for i in range(km1):
        centre = W[i] if random_walk else X[i]
        Wp[i] = centre + sdp * rng.standard_normal()
    log_a = w_log_target(Wp, m, X, eps_d) - w_log_target(W, m, X, eps_d)
    if not random_walk:
        log_a += w_log_proposal(W, X, prop_var) - w_log_proposal(Wp, X, prop_var)
    if math.log(rng.random()) <= log_a:
        for i in range(km1):
            W[i] = Wp[i]
        return True
    return False


# ---------------------------------------------------------------------------
# joint chains
# ---------------------------------------------------------------------------

@njit(cache=True)
def _data_step(rng, counts_t, ref_edges, sub, mu, sigma2, lam, augment,
               ref, alloc, m, sy, syy, m_in, sd, log_z, mids):
    k = mu.shape[0]
    nref = ref_edges.shape[0] - 1
    lo = ref_edges[0]
    hi = ref_edges[nref]
    for j in range(k):
        sd[j] = math.sqrt(sigma2[j])
    K.log_support_mass(mu, sd, lo, hi, log_z)
    warn = K.impute_multinomial(rng, counts_t, ref_edges, sub, mu, sd, lam, log_z, ref)
    warn += K.allocate(rng, ref, mids, mu, sd, lam, log_z, False, alloc, m, sy, syy)
    for j in range(k):
        m_in[j] = m[j]
    if augment:
        K.augment_truncated(rng, m, sy, syy, mu, sd, lo, hi, 20000)
    return warn


@njit(cache=True)
def penalised_chain(rng, counts, ref_edges, sub, xi, nprior, v, s2,
                    mu, sigma2, lam, coef, max_rejects, n_iter, burn_in, augment,
                    out_mu, out_s2, out_lam, out_m):
    """Joint chain; mu/sigma2 per time point as in the independent model, weights penalised.

    Returns (status, warnings, max-reject events).
    """
    T, k = mu.shape
    nref = ref_edges.shape[0] - 1
    mids = 0.5 * (ref_edges[1:] + ref_edges[:-1])
    ref = np.empty(nref, dtype=np.int64)
    alloc = np.empty((nref, k), dtype=np.int64)
    m = np.empty(k)
    sy = np.empty(k)
    syy = np.empty(k)
    m_in = np.empty(k)
    sd = np.empty(k)
    log_z = np.empty(k)
    m_all = np.zeros((T, k))
    warn = 0
    events = 0
    for it in range(n_iter):
        for t in range(T):
            warn += _data_step(rng, counts[t], ref_edges, sub, mu[t], sigma2[t], lam[t], augment,
                               ref, alloc, m, sy, syy, m_in, sd, log_z, mids)
            for j in range(k):
                m_all[t, j] = m_in[j]
                sigma2[t, j] = K.draw_sigma2_nig(rng, m[j], sy[j], syy[j], xi[j], nprior[j], v[j], s2[j])
                mu[t, j] = K.draw_mu_nig(rng, m[j], sy[j], sigma2[t, j], xi[j], nprior[j])
                if not (math.isfinite(mu[t, j]) and sigma2[t, j] > 0.0 and math.isfinite(sigma2[t, j])):
                    return 1, warn, events
        events += pen_sweep(rng, lam, m_all, coef, max_rejects)
        if it >= burn_in:
            r = it - burn_in
            for t in range(T):
                for j in range(k):
                    out_mu[t, r, j] = mu[t, j]
                    out_s2[t, r, j] = sigma2[t, j]
                    out_lam[t, r, j] = lam[t, j]
                    out_m[t, r, j] = int(m_all[t, j])
    return 0, warn, events


@njit(cache=True)
def hier_chain(rng, counts, ref_edges, sub, v, s2,
               eps_d_mu, eps_s_phi, eps_d_lam, eps_s_gam, prop_var, random_walk,
               mu, sigma2, W, X, phi, n_iter, burn_in, augment,
               out_mu, out_s2, out_lam, out_m, out_phi, out_gamma, out_acc):
    """Joint chain for the two-level prior on means and weight logits.

    Row 0 of ``phi`` and ``X`` is the fixed first-period anchor.  Returns
    (status, warnings).
    """
    T, k = mu.shape
    nref = ref_edges.shape[0] - 1
    mids = 0.5 * (ref_edges[1:] + ref_edges[:-1])
    ref = np.empty(nref, dtype=np.int64)
    alloc = np.empty((nref, k), dtype=np.int64)
    m = np.empty(k)
    sy = np.empty(k)
    syy = np.empty(k)
    m_in = np.empty(k)
    sd = np.empty(k)
    log_z = np.empty(k)
    lam = np.empty(k)
    gam = np.empty(k)
    xnew = np.empty(k - 1)
    warn = 0
    for it in range(n_iter):
        for t in range(T):
            logistic(W[t], lam)
            warn += _data_step(rng, counts[t], ref_edges, sub, mu[t], sigma2[t], lam, augment,
                               ref, alloc, m, sy, syy, m_in, sd, log_z, mids)
            for j in range(k):
                sigma2[t, j] = K.draw_sigma2_given_mu(rng, m[j], sy[j], syy[j], mu[t, j],
                                                      0.5 * v[j], 0.5 * s2[j])
                if t > 0:
                    phi[t, j] = hier_phi_draw(rng, phi[t - 1, j], mu[t, j], eps_d_mu, eps_s_phi)
                mu[t, j] = hier_mu_draw(rng, m[j], sy[j], phi[t, j], sigma2[t, j], eps_d_mu)
                if not (math.isfinite(mu[t, j]) and sigma2[t, j] > 0.0 and math.isfinite(sigma2[t, j])):
                    return 1, warn
            if t > 0 and k > 1:
                hier_x_draw(rng, W[t], X[t - 1], eps_d_lam, eps_s_gam, xnew)
                for i in range(k - 1):
                    X[t, i] = xnew[i]
            acc = hier_w_mh(rng, m_in, X[t], W[t], eps_d_lam, prop_var, random_walk)
            if it >= burn_in:
                r = it - burn_in
                logistic(W[t], lam)
                logistic(X[t], gam)
                if acc:
                    out_acc[t] += 1
                for j in range(k):
                    out_mu[t, r, j] = mu[t, j]
                    out_s2[t, r, j] = sigma2[t, j]
                    out_lam[t, r, j] = lam[j]
                    out_m[t, r, j] = int(m_in[j])
                    out_phi[t, r, j] = phi[t, j]
                    out_gamma[t, r, j] = gam[j]
    return 0, warn
