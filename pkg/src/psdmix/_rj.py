"""Compiled reversible-jump sampler for the number of components."""
import math

import numpy as np
from numba import njit

from . import _kernels as K

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True, error_model="numpy")
def _lbeta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


@njit(cache=True, error_model="numpy")
def _log_beta_pdf(x, a, b):
    return (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - _lbeta(a, b)


@njit(cache=True, error_model="numpy")
def _log_tdens(y, mu, s2, log_z):
    """Log density of N(mu, s2) truncated to the grid support."""
    return -0.5 * LOG_2PI - 0.5 * math.log(s2) - 0.5 * (y - mu) ** 2 / s2 - log_z


@njit(cache=True, error_model="numpy")
def _log_z(mu, s2, lo, hi):
    sd = math.sqrt(s2)
    return K.log_interval_mass((lo - mu) / sd, (hi - mu) / sd)


@njit(cache=True, error_model="numpy")
def move_probs(k, kmax):
    """(b_k, d_k): birth/split and death/combine probabilities."""
    if k <= 1:
        return 1.0, 0.0
    if k >= kmax:
        return 0.0, 1.0
    return 0.5, 0.5


@njit(cache=True, error_model="numpy")
def split_params(w, mu, s2, u1, u2, u3):
    """Moment-matching split of one component into two."""
    w1 = w * u1
    w2 = w * (1.0 - u1)
    sd = math.sqrt(s2)
    mu1 = mu - u2 * sd * math.sqrt(w2 / w1)
    mu2 = mu + u2 * sd * math.sqrt(w1 / w2)
    s21 = u3 * (1.0 - u2 * u2) * s2 * w / w1
    s22 = (1.0 - u3) * (1.0 - u2 * u2) * s2 * w / w2
    return w1, mu1, s21, w2, mu2, s22


@njit(cache=True, error_model="numpy")
def combine_params(w1, mu1, s21, w2, mu2, s22):
    """Inverse of :func:`split_params`: merged (w, mu, s2) and (u1, u2, u3)."""
    w = w1 + w2
    mu = (w1 * mu1 + w2 * mu2) / w
    s2 = (w1 * (mu1 * mu1 + s21) + w2 * (mu2 * mu2 + s22)) / w - mu * mu
    u1 = w1 / w
    sd = math.sqrt(s2)
    u2 = (mu2 - mu1) / (sd * (math.sqrt(w2 / w1) + math.sqrt(w1 / w2)))
    u3 = s21 * w1 / (s2 * w * (1.0 - u2 * u2))
    return w, mu, s2, u1, u2, u3


@njit(cache=True, error_model="numpy")
def log_split_ratio(k, n_pts1, n_pts2, loglik_ratio, log_palloc,
                    w, mu, s2, w1, mu1, s21, w2, mu2, s22, u1, u2, u3,
                    xi, kappa, log_zmu, delta, beta, alpha, kmax):
    """log acceptance ratio for splitting one of ``k`` components into two."""
    bk, _ = move_probs(k, kmax)
    _, dk1 = move_probs(k + 1, kmax)
    la = loglik_ratio + math.log(k + 1.0)
    la += ((alpha - 1.0 + n_pts1) * math.log(w1) + (alpha - 1.0 + n_pts2) * math.log(w2)
           - (alpha - 1.0 + n_pts1 + n_pts2) * math.log(w) - _lbeta(alpha, k * alpha))
    la += (0.5 * math.log(kappa) - 0.5 * LOG_2PI - log_zmu
           - 0.5 * kappa * ((mu1 - xi) ** 2 + (mu2 - xi) ** 2 - (mu - xi) ** 2))
    la += (delta * math.log(beta) - math.lgamma(delta)
           - (delta + 1.0) * (math.log(s21) + math.log(s22) - math.log(s2))
           - beta * (1.0 / s21 + 1.0 / s22 - 1.0 / s2))
    la += math.log(dk1) - math.log(bk) - log_palloc
    la -= _log_beta_pdf(u1, 2.0, 2.0) + _log_beta_pdf(u2, 2.0, 2.0) + _log_beta_pdf(u3, 1.0, 1.0)
    la += (math.log(w) + math.log(abs(mu1 - mu2)) + math.log(s21) + math.log(s22)
           - math.log(u2) - math.log(1.0 - u2 * u2) - math.log(u3) - math.log(1.0 - u3)
           - math.log(s2))
    return la


@njit(cache=True, error_model="numpy")
def log_birth_ratio(k, k0, n_total, wstar, alpha, kmax):
    """log acceptance ratio for adding an empty component to ``k`` (``k0`` empty)."""
    bk, _ = move_probs(k, kmax)
    _, dk1 = move_probs(k + 1, kmax)
    la = ((alpha - 1.0) * math.log(wstar) + (n_total + k * alpha - k) * math.log1p(-wstar)
          - _lbeta(k * alpha, alpha))
    la += math.log(k + 1.0) + math.log(dk1) - math.log(k0 + 1.0) - math.log(bk)
    # the Beta(1, k) proposal density k (1 - w*)^(k - 1) cancels the
    # Jacobian (1 - w*)^(k - 1) up to the factor k
    la -= math.log(k)
    return la


# ---------------------------------------------------------------------------
# state helpers
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def _sort_state(k, w, mu, s2, alloc, m):
    order = np.argsort(mu[:k])
    tw = w[:k][order].copy()
    tmu = mu[:k][order].copy()
    ts2 = s2[:k][order].copy()
    tm = m[:k][order].copy()
    ta = alloc[:, :k][:, order].copy()
    for j in range(k):
        w[j] = tw[j]
        mu[j] = tmu[j]
        s2[j] = ts2[j]
        m[j] = tm[j]
        for r in range(alloc.shape[0]):
            alloc[r, j] = ta[r, j]


@njit(cache=True, error_model="numpy")
def _remove(k, j, w, mu, s2, alloc, m):
    for i in range(j, k - 1):
        w[i] = w[i + 1]
        mu[i] = mu[i + 1]
        s2[i] = s2[i + 1]
        m[i] = m[i + 1]
        for r in range(alloc.shape[0]):
            alloc[r, i] = alloc[r, i + 1]


@njit(cache=True, error_model="numpy")
def _insert(k, j, wj, muj, s2j, w, mu, s2, alloc, m):
    for i in range(k, j, -1):
        w[i] = w[i - 1]
        mu[i] = mu[i - 1]
        s2[i] = s2[i - 1]
        m[i] = m[i - 1]
        for r in range(alloc.shape[0]):
            alloc[r, i] = alloc[r, i - 1]
    w[j] = wj
    mu[j] = muj
    s2[j] = s2j
    m[j] = 0.0
    for r in range(alloc.shape[0]):
        alloc[r, j] = 0


@njit(cache=True, error_model="numpy")
def _draw_mu_prior(rng, xi, kappa, lo, hi):
    return K.trunc_norm_exact(rng, xi, 1.0 / math.sqrt(kappa), lo, hi)


# ---------------------------------------------------------------------------
# moves
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def split_move(rng, k, w, mu, s2, alloc, m, mids, lo, hi,
               xi, kappa, log_zmu, delta, beta, alpha, kmax, ignore_lik):
    """Try to split a random component; returns the new k."""
    j = int(rng.integers(0, k))
    u1 = rng.beta(2.0, 2.0)
    u2 = rng.beta(2.0, 2.0)
    u3 = rng.beta(1.0, 1.0)
    if u1 <= 0.0 or u1 >= 1.0 or u2 <= 0.0 or u2 >= 1.0 or u3 <= 0.0 or u3 >= 1.0:
        return k
    w1, mu1, s21, w2, mu2, s22 = split_params(w[j], mu[j], s2[j], u1, u2, u3)
    if not (lo < mu1 and mu2 < hi) or s21 <= 0.0 or s22 <= 0.0:
        return k
    for i in range(k):
        if i != j and mu1 <= mu[i] <= mu2:
            return k
    nref = alloc.shape[0]
    a1 = np.zeros(nref, dtype=np.int64)
    lz = _log_z(mu[j], s2[j], lo, hi)
    lz1 = _log_z(mu1, s21, lo, hi)
    lz2 = _log_z(mu2, s22, lo, hi)
    llr = 0.0
    lpa = 0.0
    n1 = 0.0
    n2 = 0.0
    if not ignore_lik:
        for r in range(nref):
            a = alloc[r, j]
            if a == 0:
                continue
            y = mids[r]
            l1 = math.log(w1) + _log_tdens(y, mu1, s21, lz1)
            l2 = math.log(w2) + _log_tdens(y, mu2, s22, lz2)
            mx = max(l1, l2)
            lp1 = l1 - (mx + math.log(math.exp(l1 - mx) + math.exp(l2 - mx)))
            lp2 = l2 - (mx + math.log(math.exp(l1 - mx) + math.exp(l2 - mx)))
            c1 = rng.binomial(a, math.exp(lp1))
            c2 = a - c1
            a1[r] = c1
            lpa += c1 * lp1 + c2 * lp2
            llr += (c1 * _log_tdens(y, mu1, s21, lz1) + c2 * _log_tdens(y, mu2, s22, lz2)
                    - a * _log_tdens(y, mu[j], s2[j], lz))
            n1 += c1
            n2 += c2
    la = log_split_ratio(k, n1, n2, llr, lpa, w[j], mu[j], s2[j], w1, mu1, s21, w2, mu2, s22,
                         u1, u2, u3, xi, kappa, log_zmu, delta, beta, alpha, kmax)
    if not math.isfinite(la) or math.log(rng.random()) > la:
        return k
    # accept: j becomes component 1, the new one goes right after it
    _insert(k, j + 1, w2, mu2, s22, w, mu, s2, alloc, m)
    w[j] = w1
    mu[j] = mu1
    s2[j] = s21
    m[j] = n1
    m[j + 1] = n2
    for r in range(nref):
        a = alloc[r, j]
        alloc[r, j] = a1[r]
        alloc[r, j + 1] = a - a1[r]
    return k + 1


@njit(cache=True, error_model="numpy")
def combine_move(rng, k, w, mu, s2, alloc, m, mids, lo, hi,
                 xi, kappa, log_zmu, delta, beta, alpha, kmax, ignore_lik):
    """Try to merge a random adjacent pair; returns the new k."""
    j1 = int(rng.integers(0, k - 1))
    j2 = j1 + 1
    wm, mum, s2m, u1, u2, u3 = combine_params(w[j1], mu[j1], s2[j1], w[j2], mu[j2], s2[j2])
    if not (0.0 < u1 < 1.0 and 0.0 < u2 < 1.0 and 0.0 < u3 < 1.0) or s2m <= 0.0:
        return k
    lz = _log_z(mum, s2m, lo, hi)
    lz1 = _log_z(mu[j1], s2[j1], lo, hi)
    lz2 = _log_z(mu[j2], s2[j2], lo, hi)
    llr = 0.0
    lpa = 0.0
    n1 = 0.0
    n2 = 0.0
    nref = alloc.shape[0]
    if not ignore_lik:
        for r in range(nref):
            c1 = alloc[r, j1]
            c2 = alloc[r, j2]
            if c1 + c2 == 0:
                continue
            y = mids[r]
            l1 = math.log(w[j1]) + _log_tdens(y, mu[j1], s2[j1], lz1)
            l2 = math.log(w[j2]) + _log_tdens(y, mu[j2], s2[j2], lz2)
            mx = max(l1, l2)
            lse = mx + math.log(math.exp(l1 - mx) + math.exp(l2 - mx))
            lpa += c1 * (l1 - lse) + c2 * (l2 - lse)
            llr += (c1 * _log_tdens(y, mu[j1], s2[j1], lz1) + c2 * _log_tdens(y, mu[j2], s2[j2], lz2)
                    - (c1 + c2) * _log_tdens(y, mum, s2m, lz))
            n1 += c1
            n2 += c2
    la = -log_split_ratio(k - 1, n1, n2, llr, lpa, wm, mum, s2m, w[j1], mu[j1], s2[j1],
                          w[j2], mu[j2], s2[j2], u1, u2, u3, xi, kappa, log_zmu, delta, beta,
                          alpha, kmax)
    if not math.isfinite(la) or math.log(rng.random()) > la:
        return k
    w[j1] = wm
    mu[j1] = mum
    s2[j1] = s2m
    m[j1] = m[j1] + m[j2]
    for r in range(nref):
        alloc[r, j1] += alloc[r, j2]
    _remove(k, j2, w, mu, s2, alloc, m)
    return k - 1


@njit(cache=True, error_model="numpy")
def birth_move(rng, k, w, mu, s2, alloc, m, lo, hi, xi, kappa, delta, beta, alpha, kmax,
               n_total):
    k0 = 0
    for j in range(k):
        if m[j] == 0:
            k0 += 1
    wstar = rng.beta(1.0, float(k))
    if wstar <= 0.0 or wstar >= 1.0:
        return k
    la = log_birth_ratio(k, k0, n_total, wstar, alpha, kmax)
    if not math.isfinite(la) or math.log(rng.random()) > la:
        return k
    mus = _draw_mu_prior(rng, xi, kappa, lo, hi)
    s2s = beta / rng.standard_gamma(delta)
    for j in range(k):
        w[j] *= 1.0 - wstar
    pos = 0
    while pos < k and mu[pos] < mus:
        pos += 1
    _insert(k, pos, wstar, mus, s2s, w, mu, s2, alloc, m)
    return k + 1


@njit(cache=True, error_model="numpy")
def death_move(rng, k, w, mu, s2, alloc, m, alpha, kmax, n_total):
    k0 = 0
    for j in range(k):
        if m[j] == 0:
            k0 += 1
    if k0 == 0:
        return k
    pick = int(rng.integers(0, k0))
    j = -1
    c = 0
    for i in range(k):
        if m[i] == 0:
            if c == pick:
                j = i
                break
            c += 1
    wstar = w[j]
    if wstar >= 1.0:
        return k
    la = -log_birth_ratio(k - 1, k0 - 1, n_total, wstar, alpha, kmax)
    if not math.isfinite(la) or math.log(rng.random()) > la:
        return k
    _remove(k, j, w, mu, s2, alloc, m)
    for i in range(k - 1):
        w[i] /= 1.0 - wstar
    return k - 1


# ---------------------------------------------------------------------------
# chain
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def rj_chain(rng, counts, ref_edges, sub, xi, kappa, delta, g, h, alpha, kmin, kmax,
             k_init, n_iter, burn_in, ignore_lik, out_k, sum_mu, sum_s2, sum_w, n_at_k):
    """Run the sampler; records k per retained sweep and per-k running sums.

    ``sum_*`` are kmax x kmax arrays (row k-1 holds sums of sorted parameters
    over the retained sweeps with k components).  Returns (status, n_split,
    n_combine, n_birth, n_death) acceptance counts; status 1 = non-finite state.
    """
    nref = ref_edges.shape[0] - 1
    lo = ref_edges[0]
    hi = ref_edges[nref]
    mids = 0.5 * (ref_edges[1:] + ref_edges[:-1])
    w = np.zeros(kmax + 1)
    mu = np.zeros(kmax + 1)
    s2 = np.zeros(kmax + 1)
    m = np.zeros(kmax + 1)
    alloc = np.zeros((nref, kmax + 1), dtype=np.int64)
    ref = np.zeros(nref, dtype=np.int64)
    sy = np.zeros(kmax + 1)
    syy = np.zeros(kmax + 1)
    sd = np.zeros(kmax + 1)
    log_z = np.zeros(kmax + 1)
    R = hi - lo
    log_zmu = K.log_interval_mass((lo - xi) * math.sqrt(kappa), (hi - xi) * math.sqrt(kappa))
    k = k_init
    beta = g / h
    for j in range(k):
        w[j] = 1.0 / k
        mu[j] = lo + R * (j + 0.5) / k
        s2[j] = (R / k) ** 2 / 4.0
    nacc = np.zeros(4, dtype=np.int64)
    zero_counts = np.zeros(counts.shape[0], dtype=np.int64)
    data = zero_counts if ignore_lik else counts
    for it in range(n_iter):
        # latents and allocations
        for j in range(k):
            sd[j] = math.sqrt(s2[j])
        K.log_support_mass(mu[:k], sd[:k], lo, hi, log_z[:k])
        K.impute_multinomial(rng, data, ref_edges, sub, mu[:k], sd[:k], w[:k], log_z[:k], ref)
        ak = np.zeros((nref, k), dtype=np.int64)
        K.allocate(rng, ref, mids, mu[:k], sd[:k], w[:k], log_z[:k], False, ak,
                   m[:k], sy[:k], syy[:k])
        for r in range(nref):
            for j in range(k):
                alloc[r, j] = ak[r, j]
        n_total = 0.0
        for j in range(k):
            n_total += m[j]
        # weights
        a = np.empty(k)
        for j in range(k):
            a[j] = alpha + m[j]
        K.dirichlet(rng, a, w[:k])
        for j in range(k):
            if w[j] < 1e-300:
                w[j] = 1e-300
        # means and variances on the tail-completed data
        mc = m[:k].copy()
        syc = sy[:k].copy()
        syyc = syy[:k].copy()
        K.augment_truncated(rng, mc, syc, syyc, mu[:k], sd[:k], lo, hi, 20000)
        for j in range(k):
            prec = mc[j] / s2[j] + kappa
            mean = (syc[j] / s2[j] + kappa * xi) / prec
            mu[j] = K.trunc_norm_exact(rng, mean, 1.0 / math.sqrt(prec), lo, hi)
        for j in range(k):
            s2[j] = K.draw_sigma2_given_mu(rng, mc[j], syc[j], syyc[j], mu[j], delta, beta)
        _sort_state(k, w, mu, s2, alloc, m)
        # hyperparameter
        inv = 0.0
        for j in range(k):
            inv += 1.0 / s2[j]
        beta = rng.gamma(g + k * delta, 1.0 / (h + inv))
        # split or combine
        bk, _ = move_probs(k, kmax)
        if rng.random() < bk:
            k2 = split_move(rng, k, w, mu, s2, alloc, m, mids, lo, hi,
                            xi, kappa, log_zmu, delta, beta, alpha, kmax, ignore_lik)
            nacc[0] += k2 - k
        else:
            k2 = combine_move(rng, k, w, mu, s2, alloc, m, mids, lo, hi,
                              xi, kappa, log_zmu, delta, beta, alpha, kmax, ignore_lik)
            nacc[1] += k - k2
        k = k2
        # birth or death
        bk, _ = move_probs(k, kmax)
        if rng.random() < bk:
            k2 = birth_move(rng, k, w, mu, s2, alloc, m, lo, hi, xi, kappa, delta, beta,
                            alpha, kmax, n_total)
            nacc[2] += k2 - k
        else:
            k2 = death_move(rng, k, w, mu, s2, alloc, m, alpha, kmax, n_total)
            nacc[3] += k - k2
        k = k2
        if k < kmin or k > kmax:
            return 2, nacc
        for j in range(k):
            if not (math.isfinite(mu[j]) and math.isfinite(s2[j]) and s2[j] > 0.0):
                return 1, nacc
        if it >= burn_in:
            out_k[it - burn_in] = k
            n_at_k[k - 1] += 1
            for j in range(k):
                sum_mu[k - 1, j] += mu[j]
                sum_s2[k - 1, j] += s2[j]
                sum_w[k - 1, j] += w[j]
    return 0, nacc
