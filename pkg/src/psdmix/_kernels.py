"""Compiled inner loops shared by the samplers.

Everything here works on plain float/int arrays and a numpy Generator so that
numba can compile it.  Public, validated entry points live in the other
modules; these functions assume their inputs are already sane.
"""
import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)
LOG_2PI = math.log(2.0 * math.pi)
LOG_SQRT_2PI = 0.5 * LOG_2PI


# ---------------------------------------------------------------------------
# standard normal pieces
# ---------------------------------------------------------------------------

@njit(cache=True)
def phi_q(z):
    """(P(Z < z), P(Z > z)) each computed on its accurate side."""
    if z < 0.0:
        p = 0.5 * math.erfc(-z / SQRT2)
        return p, 1.0 - p
    q = 0.5 * math.erfc(z / SQRT2)
    return 1.0 - q, q


@njit(cache=True)
def imass(za, pa, qa, zb, pb, qb):
    """P(za < Z < zb) from precomputed phi_q values at both ends."""
    if za > 0.0:
        return qa - qb
    if zb < 0.0:
        return pb - pa
    return 1.0 - pa - qb


@njit(cache=True)
def log_q_tail(z):
    """log P(Z > z); asymptotic series once erfc underflows."""
    if z < 25.0:
        return math.log(0.5 * math.erfc(z / SQRT2))
    z2 = z * z
    return -0.5 * z2 - math.log(z) - LOG_SQRT_2PI + math.log1p(-1.0 / z2 + 3.0 / (z2 * z2))


@njit(cache=True)
def log_interval_mass(a, b):
    """log P(a < Z < b) for a standard normal, stable in both tails."""
    pa, qa = phi_q(a)
    pb, qb = phi_q(b)
    m = imass(a, pa, qa, b, pb, qb)
    if m > 1e-280:
        return math.log(m)
    if a > 0.0:
        la = log_q_tail(a)
        if b == np.inf:
            return la
        lb = log_q_tail(b)
        return la + math.log1p(-math.exp(lb - la)) if lb < la else -np.inf
    if b < 0.0:
        lb = log_q_tail(-b)
        if a == -np.inf:
            return lb
        la = log_q_tail(-a)
        return lb + math.log1p(-math.exp(la - lb)) if la < lb else -np.inf
    return -np.inf


# ---------------------------------------------------------------------------
# truncated normal draws
# ---------------------------------------------------------------------------

@njit(cache=True)
def std_trunc_exact(rng, a, b):
    """Exact draw of Z ~ N(0, 1) restricted to [a, b] (Robert 1995 rejection)."""
    if b < 0.0:
        return -std_trunc_exact(rng, -b, -a)
    if a <= 0.0:
        if b - a < 2.5:
            while True:
                z = a + (b - a) * rng.random()
                if rng.random() <= math.exp(-0.5 * z * z):
                    return z
        while True:
            z = rng.standard_normal()
            if a <= z <= b:
                return z
    # 0 < a < b
    if a < 0.5 and b - a > 1.0:
        while True:
            z = abs(rng.standard_normal())
            if a <= z <= b:
                return z
    if a * (b - a) < 1.0:
        while True:
            z = a + (b - a) * rng.random()
            if rng.random() <= math.exp(0.5 * (a * a - z * z)):
                return z
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential(1.0 / alpha)
        if z <= b and rng.random() <= math.exp(-0.5 * (z - alpha) ** 2):
            return z


@njit(cache=True)
def trunc_norm_exact(rng, mu, sd, lo, hi):
    return mu + sd * std_trunc_exact(rng, (lo - mu) / sd, (hi - mu) / sd)


@njit(cache=True)
def slice_start(mu, sd, lo, hi):
    """Interval midpoint clipped to [mu - 6 sd, mu + 6 sd] and to [lo, hi]."""
    if math.isinf(lo) and math.isinf(hi):
        x = mu
    elif math.isinf(lo):
        x = hi - sd
    elif math.isinf(hi):
        x = lo + sd
    else:
        x = 0.5 * (lo + hi)
    x = min(max(x, mu - 6.0 * sd), mu + 6.0 * sd)
    return min(max(x, lo), hi)


@njit(cache=True)
def slice_step(rng, x, mu, sd, lo, hi):
    """One stepping-out / shrinkage slice transition for N(mu, sd^2) on [lo, hi]."""
    w = sd
    if hi - lo < w:
        w = hi - lo
    h0 = -0.5 * ((x - mu) / sd) ** 2
    logy = h0 - rng.exponential(1.0)
    left = x - w * rng.random()
    right = left + w
    while left > lo and -0.5 * ((left - mu) / sd) ** 2 > logy:
        left -= w
    while right < hi and -0.5 * ((right - mu) / sd) ** 2 > logy:
        right += w
    if left < lo:
        left = lo
    if right > hi:
        right = hi
    while True:
        x1 = left + rng.random() * (right - left)
        if -0.5 * ((x1 - mu) / sd) ** 2 >= logy:
            return x1
        if x1 < x:
            left = x1
        else:
            right = x1


@njit(cache=True)
def slice_chain(rng, mu, sd, lo, hi, n, warmup, out):
    x = slice_start(mu, sd, lo, hi)
    for _ in range(warmup):
        x = slice_step(rng, x, mu, sd, lo, hi)
    for i in range(n):
        x = slice_step(rng, x, mu, sd, lo, hi)
        out[i] = x


# ---------------------------------------------------------------------------
# discrete helpers
# ---------------------------------------------------------------------------

@njit(cache=True)
def multinomial(rng, n, p, out):
    """Multinomial(n, p) by conditional binomials; ``p`` need not be normalised."""
    k = p.shape[0]
    total = 0.0
    for j in range(k):
        total += p[j]
    rem = n
    rem_p = total
    for j in range(k - 1):
        if rem == 0 or rem_p <= 0.0:
            out[j] = 0
            continue
        q = p[j] / rem_p
        if q >= 1.0:
            x = rem
        elif q <= 0.0:
            x = 0
        else:
            x = rng.binomial(rem, q)
        out[j] = x
        rem -= x
        rem_p -= p[j]
    out[k - 1] = rem


@njit(cache=True)
def dirichlet(rng, alpha, out):
    s = 0.0
    for j in range(alpha.shape[0]):
        g = rng.standard_gamma(alpha[j])
        out[j] = g
        s += g
    if s <= 0.0:
        # every gamma underflowed (tiny alphas): pick a vertex in proportion to alpha
        a0 = 0.0
        for j in range(alpha.shape[0]):
            a0 += alpha[j]
        u = rng.random() * a0
        c = 0.0
        for j in range(alpha.shape[0]):
            out[j] = 0.0
        for j in range(alpha.shape[0]):
            c += alpha[j]
            if u <= c:
                out[j] = 1.0
                return
        out[alpha.shape[0] - 1] = 1.0
        return
    for j in range(alpha.shape[0]):
        out[j] /= s


@njit(cache=True)
def apply_floor(lam, floor):
    """Clamp weights below ``floor`` to exactly ``floor``; rescale the rest to sum 1."""
    k = lam.shape[0]
    if floor <= 0.0 or floor * k >= 1.0:
        return
    clamped = np.zeros(k, dtype=np.bool_)
    while True:
        changed = False
        n_c = 0
        free = 0.0
        for j in range(k):
            if clamped[j]:
                n_c += 1
            else:
                free += lam[j]
        target = 1.0 - floor * n_c
        for j in range(k):
            if not clamped[j]:
                v = lam[j] * target / free
                if v < floor:
                    clamped[j] = True
                    changed = True
        if not changed:
            for j in range(k):
                if clamped[j]:
                    lam[j] = floor
                else:
                    lam[j] = lam[j] * target / free
            return


# ---------------------------------------------------------------------------
# mixture pieces on a bin grid
# ---------------------------------------------------------------------------

@njit(cache=True)
def log_support_mass(mu, sd, lo, hi, out):
    for j in range(mu.shape[0]):
        out[j] = log_interval_mass((lo - mu[j]) / sd[j], (hi - mu[j]) / sd[j])


@njit(cache=True)
def edge_table(edges, mu, sd, z, p, q):
    for j in range(mu.shape[0]):
        for e in range(edges.shape[0]):
            zz = (edges[e] - mu[j]) / sd[j]
            z[j, e] = zz
            p[j, e], q[j, e] = phi_q(zz)


@njit(cache=True)
def _bin_mass(z, p, q, j, e0, e1):
    return imass(z[j, e0], p[j, e0], q[j, e0], z[j, e1], p[j, e1], q[j, e1])


@njit(cache=True)
def impute_multinomial(rng, counts, ref_edges, sub, mu, sd, lam, log_z, out):
    """Refined counts: each bin's count split over its sub-bins by mixture mass.

    Equivalent in distribution to drawing every latent point from the
    mixture truncated to its bin and re-binning it.  Returns the number of
    bins that fell back to a uniform split.
    """
    k = mu.shape[0]
    ne = ref_edges.shape[0]
    z = np.empty((k, ne))
    p = np.empty((k, ne))
    q = np.empty((k, ne))
    edge_table(ref_edges, mu, sd, z, p, q)
    w = np.empty(k)
    for j in range(k):
        w[j] = lam[j] * math.exp(-log_z[j]) if log_z[j] > -700.0 else 0.0
    probs = np.empty(sub)
    draw = np.empty(sub, dtype=np.int64)
    warn = 0
    for b in range(counts.shape[0]):
        c = counts[b]
        base = b * sub
        if c == 0:
            for s in range(sub):
                out[base + s] = 0
            continue
        tot = 0.0
        for s in range(sub):
            ps = 0.0
            for j in range(k):
                ps += w[j] * _bin_mass(z, p, q, j, base + s, base + s + 1)
            probs[s] = ps
            tot += ps
        if not (tot > 0.0) or not math.isfinite(tot):
            warn += 1
            for s in range(sub):
                probs[s] = 1.0
        multinomial(rng, c, probs, draw)
        for s in range(sub):
            out[base + s] = draw[s]
    return warn


@njit(cache=True)
def impute_slice(rng, counts, ref_edges, sub, mu, sd, lam, log_z, out, values):
    """Latent route that draws each point by slice sampling inside its bin.

    ``values`` receives every latent draw (length sum(counts)).
    """
    k = mu.shape[0]
    nb = counts.shape[0]
    for i in range(out.shape[0]):
        out[i] = 0
    wcomp = np.empty(k)
    ncomp = np.empty(k, dtype=np.int64)
    warn = 0
    pos = 0
    for b in range(nb):
        c = counts[b]
        if c == 0:
            continue
        lo = ref_edges[b * sub]
        hi = ref_edges[(b + 1) * sub]
        tot = 0.0
        for j in range(k):
            if log_z[j] > -700.0:
                m = math.exp(log_interval_mass((lo - mu[j]) / sd[j], (hi - mu[j]) / sd[j]) - log_z[j])
            else:
                m = 0.0
            wcomp[j] = lam[j] * m
            tot += wcomp[j]
        width = (hi - lo) / sub
        if not (tot > 0.0) or not math.isfinite(tot):
            warn += 1
            for i in range(c):
                x = lo + (hi - lo) * rng.random()
                s = min(int((x - lo) / width), sub - 1)
                out[b * sub + s] += 1
                values[pos] = x
                pos += 1
            continue
        multinomial(rng, c, wcomp, ncomp)
        for j in range(k):
            if ncomp[j] == 0:
                continue
            x = slice_start(mu[j], sd[j], lo, hi)
            for _ in range(5):
                x = slice_step(rng, x, mu[j], sd[j], lo, hi)
            for i in range(ncomp[j]):
                x = slice_step(rng, x, mu[j], sd[j], lo, hi)
                x = slice_step(rng, x, mu[j], sd[j], lo, hi)
                s = min(int((x - lo) / width), sub - 1)
                out[b * sub + s] += 1
                values[pos] = x
                pos += 1
    return warn


@njit(cache=True)
def allocate(rng, ref_counts, mids, mu, sd, lam, log_z, ignore_lik, alloc, m, sy, syy):
    """Multinomial allocation of every refined bin's points to components.

    Fills ``alloc`` (n_ref x k) and the per-component sufficient statistics.
    Returns the number of bins where every component density vanished.
    """
    k = mu.shape[0]
    for j in range(k):
        m[j] = 0.0
        sy[j] = 0.0
        syy[j] = 0.0
    logw = np.empty(k)
    pr = np.empty(k)
    draw = np.empty(k, dtype=np.int64)
    llam = np.empty(k)
    for j in range(k):
        llam[j] = math.log(lam[j]) if lam[j] > 0.0 else -np.inf
    warn = 0
    for r in range(ref_counts.shape[0]):
        n = ref_counts[r]
        if n == 0:
            for j in range(k):
                alloc[r, j] = 0
            continue
        y = mids[r]
        mx = -np.inf
        for j in range(k):
            if ignore_lik:
                lw = llam[j]
            else:
                zz = (y - mu[j]) / sd[j]
                lw = llam[j] - math.log(sd[j]) - 0.5 * zz * zz - log_z[j]
            logw[j] = lw
            if lw > mx:
                mx = lw
        if mx == -np.inf or not math.isfinite(mx):
            warn += 1
            for j in range(k):
                pr[j] = 1.0
        else:
            for j in range(k):
                pr[j] = math.exp(logw[j] - mx)
        multinomial(rng, n, pr, draw)
        for j in range(k):
            a = draw[j]
            alloc[r, j] = a
            m[j] += a
            sy[j] += a * y
            syy[j] += a * y * y
    return warn


@njit(cache=True)
def augment_truncated(rng, m, sy, syy, mu, sd, lo, hi, cap):
    """Add the unobserved out-of-window draws implied by truncation.

    For a component with ``m`` points inside [lo, hi] the number of draws that
    fell outside is NegBin(m, P_in); their values come from the two normal
    tails.  Conditioning the conjugate updates on the completed sample makes
    them exact for the truncated likelihood.  Above ``cap`` missing points a
    ``cap``-sized sample is scaled up.
    """
    for j in range(mu.shape[0]):
        nj = int(m[j] + 0.5)
        if nj == 0:
            continue
        a = (lo - mu[j]) / sd[j]
        b = (hi - mu[j]) / sd[j]
        pa, qa = phi_q(a)
        pb, qb = phi_q(b)
        p_in = imass(a, pa, qa, b, pb, qb)
        if p_in >= 1.0:
            continue
        p_left = pa
        p_right = qb
        if p_in < 1e-12:
            p_in = 1e-12
        n_out = rng.negative_binomial(nj, p_in)
        if n_out == 0:
            continue
        n_draw = n_out if n_out <= cap else cap
        s1 = 0.0
        s2 = 0.0
        frac_left = p_left / (p_left + p_right)
        for _ in range(n_draw):
            if rng.random() < frac_left:
                zz = -std_trunc_exact(rng, -a, np.inf)
            else:
                zz = std_trunc_exact(rng, b, np.inf)
            x = mu[j] + sd[j] * zz
            s1 += x
            s2 += x * x
        scale = n_out / n_draw
        m[j] += n_out
        sy[j] += s1 * scale
        syy[j] += s2 * scale


@njit(cache=True)
def draw_sigma2_nig(rng, m, sy, syy, xi, nprior, v, s2):
    """sigma^2 from its normal-inverse-gamma conditional with mu integrated out."""
    shape = 0.5 * (v + m)
    scale = 0.5 * s2
    if m > 0.0:
        ybar = sy / m
        ss = syy - sy * ybar
        if ss < 0.0:
            ss = 0.0
        scale += 0.5 * (ss + nprior * m / (nprior + m) * (ybar - xi) ** 2)
    return scale / rng.standard_gamma(shape)


@njit(cache=True)
def draw_mu_nig(rng, m, sy, sigma2, xi, nprior):
    mean = (nprior * xi + sy) / (nprior + m)
    return mean + math.sqrt(sigma2 / (nprior + m)) * rng.standard_normal()


@njit(cache=True)
def draw_sigma2_given_mu(rng, m, sy, syy, mu, shape0, scale0):
    """sigma^2 | mu from an IG(shape0, scale0) prior."""
    ss = syy - 2.0 * mu * sy + m * mu * mu
    if ss < 0.0:
        ss = 0.0
    return (scale0 + 0.5 * ss) / rng.standard_gamma(shape0 + 0.5 * m)


@njit(cache=True)
def draw_lambda(rng, m_in, alpha, floor, out):
    a = np.empty(alpha.shape[0])
    for j in range(alpha.shape[0]):
        a[j] = alpha[j] + m_in[j]
    dirichlet(rng, a, out)
    apply_floor(out, floor)


@njit(cache=True)
def loglik_binned(counts, edges, mu, sd, lam, log_z):
    """Observed-data log likelihood of bin counts under the truncated mixture."""
    k = mu.shape[0]
    ne = edges.shape[0]
    z = np.empty((k, ne))
    p = np.empty((k, ne))
    q = np.empty((k, ne))
    edge_table(edges, mu, sd, z, p, q)
    ll = 0.0
    for b in range(counts.shape[0]):
        c = counts[b]
        if c == 0:
            continue
        pb = 0.0
        for j in range(k):
            if log_z[j] > -700.0:
                pb += lam[j] * _bin_mass(z, p, q, j, b, b + 1) * math.exp(-log_z[j])
        if pb <= 0.0:
            return -np.inf
        ll += c * math.log(pb)
    return ll


@njit(cache=True)
def log_prior_nig(mu, sigma2, lam, xi, nprior, v, s2, alpha):
    lp = 0.0
    a0 = 0.0
    for j in range(mu.shape[0]):
        var = sigma2[j] / nprior[j]
        lp += -0.5 * (LOG_2PI + math.log(var)) - 0.5 * (mu[j] - xi[j]) ** 2 / var
        sh = 0.5 * v[j]
        sc = 0.5 * s2[j]
        lp += sh * math.log(sc) - math.lgamma(sh) - (sh + 1.0) * math.log(sigma2[j]) - sc / sigma2[j]
        lp += (alpha[j] - 1.0) * math.log(lam[j]) - math.lgamma(alpha[j])
        a0 += alpha[j]
    lp += math.lgamma(a0)
    return lp


@njit(cache=True)
def stage2_chain(rng, counts, ref_edges, sub, xi, nprior, v, s2, alpha,
                 mu, sigma2, lam, n_iter, burn_in, floor, augment, use_slice,
                 out_mu, out_s2, out_lam, out_m, out_lp):
    """Fixed-k Gibbs chain for one time point under the conjugate prior.

    ``mu``, ``sigma2``, ``lam`` hold the initial state and are updated in
    place.  Returns (status, warnings); status 1 means a non-finite state.
    """
    k = mu.shape[0]
    nref = ref_edges.shape[0] - 1
    lo = ref_edges[0]
    hi = ref_edges[nref]
    edges = ref_edges[::sub].copy()
    mids = 0.5 * (ref_edges[1:] + ref_edges[:-1])
    ref = np.empty(nref, dtype=np.int64)
    alloc = np.empty((nref, k), dtype=np.int64)
    m = np.empty(k)
    sy = np.empty(k)
    syy = np.empty(k)
    m_in = np.empty(k)
    sd = np.empty(k)
    log_z = np.empty(k)
    n_tot = 0
    for b in range(counts.shape[0]):
        n_tot += counts[b]
    values = np.empty(n_tot if use_slice else 1)
    warn = 0
    for it in range(n_iter):
        for j in range(k):
            sd[j] = math.sqrt(sigma2[j])
        log_support_mass(mu, sd, lo, hi, log_z)
        if use_slice:
            warn += impute_slice(rng, counts, ref_edges, sub, mu, sd, lam, log_z, ref, values)
        else:
            warn += impute_multinomial(rng, counts, ref_edges, sub, mu, sd, lam, log_z, ref)
        warn += allocate(rng, ref, mids, mu, sd, lam, log_z, False, alloc, m, sy, syy)
        for j in range(k):
            m_in[j] = m[j]
        if augment:
            augment_truncated(rng, m, sy, syy, mu, sd, lo, hi, 20000)
        for j in range(k):
            sigma2[j] = draw_sigma2_nig(rng, m[j], sy[j], syy[j], xi[j], nprior[j], v[j], s2[j])
            mu[j] = draw_mu_nig(rng, m[j], sy[j], sigma2[j], xi[j], nprior[j])
        draw_lambda(rng, m_in, alpha, floor, lam)
        for j in range(k):
            if not (math.isfinite(mu[j]) and math.isfinite(sigma2[j]) and sigma2[j] > 0.0
                    and math.isfinite(lam[j])):
                return 1, warn
        if it >= burn_in:
            r = it - burn_in
            for j in range(k):
                out_mu[r, j] = mu[j]
                out_s2[r, j] = sigma2[j]
                out_lam[r, j] = lam[j]
                out_m[r, j] = int(m_in[j])
                sd[j] = math.sqrt(sigma2[j])
            log_support_mass(mu, sd, lo, hi, log_z)
            out_lp[r] = loglik_binned(counts, edges, mu, sd, lam, log_z) + \
                log_prior_nig(mu, sigma2, lam, xi, nprior, v, s2, alpha)
    return 0, warn
