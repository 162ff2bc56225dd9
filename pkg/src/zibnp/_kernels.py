"""Compiled inner loops of the sampler.

All kernels take a ``numpy.random.Generator`` and draw from it sequentially, so
a chain is a deterministic function of its seed.  Cluster 0 is the pinned
reference cluster and taxon 0 the reference taxon throughout.
"""
import math

import numpy as np
from numba import njit

# log-concave density families understood by ``ars``
ETA = 0        # Y*x - Lt*log(Nrest + m*e^x) - (x - mean)^2 / (2 var)
LOGISTIC = 1   # d0*log(sig(x)) + d1*log(1 - sig(x)) - x^2 / (2 var)
GAUSS = 2      # -(x - mean)^2 / (2 var)

ARS_CAP = 64


class ARSError(RuntimeError):
    pass


@njit(cache=True)
def softplus(t):
    if t > 0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


@njit(cache=True)
def sigmoid(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def logdens(kind, x, prm):
    """Return (h, h', h'') for the density family ``kind`` at ``x``."""
    if kind == ETA:
        Y, Lt, logNr, logm, mean, var = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
        t = logm + x - logNr
        w = sigmoid(t)
        h = Y * x - Lt * (logNr + softplus(t)) - (x - mean) ** 2 / (2.0 * var)
        d = Y - Lt * w - (x - mean) / var
        d2 = -Lt * w * (1.0 - w) - 1.0 / var
        return h, d, d2
    elif kind == LOGISTIC:
        d0, d1, var = prm[0], prm[1], prm[2]
        s = sigmoid(x)
        h = -d0 * softplus(-x) - d1 * softplus(x) - x * x / (2.0 * var)
        d = d0 * (1.0 - s) - d1 * s - x / var
        d2 = -(d0 + d1) * s * (1.0 - s) - 1.0 / var
        return h, d, d2
    else:
        mean, var = prm[0], prm[1]
        return -(x - mean) ** 2 / (2.0 * var), -(x - mean) / var, -1.0 / var


@njit(cache=True)
def find_mode(kind, prm, x0):
    """Safeguarded Newton iteration for the mode of a strictly concave h."""
    lo = -np.inf
    hi = np.inf
    x = x0
    for _ in range(200):
        h, d, d2 = logdens(kind, x, prm)
        if d > 0:
            lo = x
        else:
            hi = x
        step = -d / d2
        if abs(step) * math.sqrt(-d2) < 1e-9:
            break
        xn = x + step
        if xn <= lo or xn >= hi:
            if np.isfinite(lo) and np.isfinite(hi):
                xn = 0.5 * (lo + hi)
        x = xn
    return x


@njit(cache=True)
def _log_piece_mass(h, d, xj, l, r):
    # log of the integral of exp(h + d (x - xj)) over [l, r]
    if abs(d) < 1e-12:
        return h + math.log(r - l)
    if d > 0:
        ur = h + d * (r - xj)
        return ur - math.log(d) + math.log1p(-math.exp(-d * (r - l)))
    ul = h + d * (l - xj)
    return ul - math.log(-d) + math.log1p(-math.exp(d * (r - l)))


@njit(cache=True)
def _sample_piece(d, l, r, U):
    if abs(d) < 1e-12:
        return l + U * (r - l)
    if d > 0:
        return r + math.log(math.exp(-d * (r - l)) + U * (1.0 - math.exp(-d * (r - l)))) / d
    return l + math.log(1.0 - U * (1.0 - math.exp(d * (r - l)))) / d


@njit(cache=True)
def ars(kind, prm, x0, rng, stats):
    """Draw one exact sample from the log-concave density ``kind``.

    The hull starts from three abscissae at the mode and one curvature scale
    either side.  ``stats[0]`` accumulates density evaluations, ``stats[1]``
    rejections.
    """
    xs = np.empty(ARS_CAP)
    hs = np.empty(ARS_CAP)
    ds = np.empty(ARS_CAP)
    z = np.empty(ARS_CAP + 1)
    lm = np.empty(ARS_CAP)

    mode = find_mode(kind, prm, x0)
    h, d, d2 = logdens(kind, mode, prm)
    sd = 1.0 / math.sqrt(-d2)
    stats[0] += 1

    step = sd
    for it in range(51):
        xl = mode - step
        hl, dl, _ = logdens(kind, xl, prm)
        if dl > 0:
            break
        step *= 2.0
        if it == 50:
            raise ARSError
    step = sd
    for it in range(51):
        xr = mode + step
        hr, dr, _ = logdens(kind, xr, prm)
        if dr < 0:
            break
        step *= 2.0
        if it == 50:
            raise ARSError
    k = 3
    xs[0], hs[0], ds[0] = xl, hl, dl
    xs[1], hs[1], ds[1] = mode, h, d
    xs[2], hs[2], ds[2] = xr, hr, dr
    stats[0] += 2

    for _ in range(10000):
        # upper hull breakpoints
        z[0] = -np.inf
        z[k] = np.inf
        for j in range(k - 1):
            dd = ds[j] - ds[j + 1]
            if dd > 1e-12 * (abs(ds[j]) + abs(ds[j + 1]) + 1e-300):
                zj = xs[j] + (hs[j + 1] - hs[j] - ds[j + 1] * (xs[j + 1] - xs[j])) / dd
                if zj < xs[j]:
                    zj = xs[j]
                elif zj > xs[j + 1]:
                    zj = xs[j + 1]
            else:
                zj = 0.5 * (xs[j] + xs[j + 1])
            z[j + 1] = zj
        lmax = -np.inf
        for j in range(k):
            lm[j] = _log_piece_mass(hs[j], ds[j], xs[j], z[j], z[j + 1])
            if lm[j] > lmax:
                lmax = lm[j]
        tot = 0.0
        for j in range(k):
            lm[j] = math.exp(lm[j] - lmax)
            tot += lm[j]
        U = rng.random() * tot
        j = 0
        acc = lm[0]
        while acc < U and j < k - 1:
            j += 1
            acc += lm[j]
        xstar = _sample_piece(ds[j], z[j], z[j + 1], rng.random())
        upper = hs[j] + ds[j] * (xstar - xs[j])
        logu = math.log(rng.random())
        # squeeze: chord between neighbouring abscissae
        if xstar > xs[0] and xstar < xs[k - 1]:
            i = 0
            while xs[i + 1] < xstar:
                i += 1
            lower = ((xs[i + 1] - xstar) * hs[i] + (xstar - xs[i]) * hs[i + 1]) / (xs[i + 1] - xs[i])
            if logu <= lower - upper:
                return xstar
        hx, dx, _ = logdens(kind, xstar, prm)
        stats[0] += 1
        if logu <= hx - upper:
            return xstar
        stats[1] += 1
        if k < ARS_CAP:
            pos = 0
            while pos < k and xs[pos] < xstar:
                pos += 1
            if pos < k and xs[pos] == xstar:
                continue
            for q in range(k, pos, -1):
                xs[q] = xs[q - 1]
                hs[q] = hs[q - 1]
                ds[q] = ds[q - 1]
            xs[pos], hs[pos], ds[pos] = xstar, hx, dx
            k += 1
    raise ARSError


# ---------------------------------------------------------------- zero model

@njit(cache=True)
def technical_zero_prob(r, q, L):
    """P(technical zero | observed zero) for one cell."""
    if r <= 0.0:
        return 0.0
    samp = (1.0 - r) * math.exp(L * math.log1p(-q)) if q < 1.0 else 0.0
    return r / (r + samp)


@njit(cache=True)
def sample_censoring(Z, c, q, r, L, delta, rng):
    """Sequential Gibbs sweep over the censoring indicators of zero cells.

    For a zero cell, the share of the remaining (uncensored) mass held by its
    cluster is used as the sampling-zero probability; with no other censored
    cells in the row this is the cell's own motif value.
    """
    n, p = Z.shape
    for i in range(n):
        a = 0.0
        for j in range(1, p):
            if delta[i, j] == 0:
                a += q[i, c[j]]
        for j in range(1, p):
            if Z[i, j] > 0:
                delta[i, j] = 1
                continue
            qj = q[i, c[j]]
            if delta[i, j] == 0:
                a -= qj
            qeff = qj / (1.0 - a)
            if qeff > 1.0:
                qeff = 1.0
            pt = technical_zero_prob(r[i, c[j]], qeff, L[i])
            if rng.random() < pt:
                delta[i, j] = 0
                a += qj
            else:
                delta[i, j] = 1


@njit(cache=True)
def multinomial_split(S, w, out, rng):
    """Multinomial(S, w) via sequential conditional binomials (w sums to 1)."""
    rem = S
    mass = 1.0
    k = w.shape[0]
    for t in range(k - 1):
        if rem == 0:
            out[t] = 0
            continue
        pr = w[t] / mass if mass > 0 else 0.0
        if pr >= 1.0:
            x = rem
        elif pr <= 0.0:
            x = 0
        else:
            x = rng.binomial(rem, pr)
        out[t] = x
        rem -= x
        mass -= w[t]
    if k > 0:
        out[k - 1] = rem


@njit(cache=True)
def impute_latent(Z, c, q, delta, L, Zt, S, rng):
    """Draw latent depths and censored counts row by row (two-stage draw)."""
    n, p = Z.shape
    idx = np.empty(p, dtype=np.int64)
    w = np.empty(p)
    out = np.empty(p, dtype=np.int64)
    for i in range(n):
        nJ = 0
        qt = 0.0
        for j in range(p):
            if delta[i, j] == 0:
                idx[nJ] = j
                w[nJ] = q[i, c[j]]
                qt += w[nJ]
                nJ += 1
            else:
                Zt[i, j] = Z[i, j]
        if nJ == 0:
            S[i] = 0
            continue
        if qt >= 1.0:
            raise ValueError("censored motif mass reached 1")
        s = rng.negative_binomial(L[i], 1.0 - qt)
        S[i] = s
        for t in range(nJ):
            w[t] /= qt
        multinomial_split(s, w[:nJ], out[:nJ], rng)
        for t in range(nJ):
            Zt[i, idx[t]] = out[t]


# ------------------------------------------------------------ allocation

@njit(cache=True)
def _draw_aux(Xdag, groups, znorm, mu, cumpi, sig_e, tau_l, eta_a, s_a, v_a, rng):
    K = v_a.shape[0]
    M = cumpi.shape[0]
    for k in range(K):
        U = rng.random() * cumpi[M - 1]
        m = 0
        while cumpi[m] < U and m < M - 1:
            m += 1
        v_a[k] = m
    n = eta_a.shape[0]
    for i in range(n):
        mm = v_a[groups[i]]
        mean = 0.0
        for t in range(Xdag.shape[1]):
            mean += Xdag[i, t] * mu[mm, t]
        eta_a[i] = mean + sig_e * rng.standard_normal()
        s_a[i] = tau_l * znorm[i] * rng.standard_normal()


@njit(cache=True)
def _lambda_given_s(zf, znorm2, s, tau_l, out, rng):
    # N(0, tau_l^2 I) conditioned on zf . lambda = s
    T2 = zf.shape[0]
    dot = 0.0
    for t in range(T2):
        out[t] = tau_l * rng.standard_normal()
        dot += zf[t] * out[t]
    adj = (s - dot) / znorm2
    for t in range(T2):
        out[t] += zf[t] * adj


@njit(cache=True)
def _col_loglik(i_n, j, Zt, delta, Lt, N, eta_col, ee_col, s_col):
    tot = 0.0
    for i in range(i_n):
        tot += Zt[i, j] * eta_col[i] - Lt[i] * math.log(N[i] + ee_col[i])
        if delta[i, j] == 1:
            tot -= softplus(s_col[i])
        else:
            tot -= softplus(-s_col[i])
    return tot


@njit(cache=True)
def _swap_delete(u, C, c, m, eta, ee, s, v, lam, Y):
    # move cluster C-1 into slot u; returns new C
    last = C - 1
    if u != last:
        for j in range(c.shape[0]):
            if c[j] == last:
                c[j] = u
        m[u] = m[last]
        eta[:, u] = eta[:, last]
        ee[:, u] = ee[:, last]
        s[:, u] = s[:, last]
        v[:, u] = v[:, last]
        lam[u, :, :] = lam[last, :, :]
        Y[:, u] = Y[:, last]
    m[last] = 0
    Y[:, last] = 0
    return C - 1


@njit(cache=True)
def allocation_sweep(order, Zt, delta, Lt, c, m, C, eta, s, v, lam, Y, groups, Xdag,
                     zfeat, znorm2, mu, pi, sig_e, tau_l, alpha_c, rng):
    """One Gibbs sweep over non-reference allocations (single auxiliary cluster).

    Returns the updated cluster count.
    """
    n = Zt.shape[0]
    K = v.shape[0]
    M = pi.shape[0]
    cumpi = np.cumsum(pi)
    znorm = np.sqrt(znorm2)
    ee = np.zeros(eta.shape)
    ee[:, :C] = np.exp(eta[:, :C])
    N = np.zeros(n)
    for i in range(n):
        for u in range(C):
            N[i] += m[u] * ee[i, u]
    eta_a = np.empty(n)
    ee_a = np.empty(n)
    s_a = np.empty(n)
    v_a = np.empty(K, dtype=np.int64)
    lw = np.empty(eta.shape[1] + 1)
    for j in order:
        u0 = c[j]
        m[u0] -= 1
        for i in range(n):
            Y[i, u0] -= Zt[i, j]
            N[i] -= ee[i, u0]
        single = m[u0] == 0
        if not single:
            _draw_aux(Xdag, groups, znorm, mu, cumpi, sig_e, tau_l, eta_a, s_a, v_a, rng)
            for i in range(n):
                ee_a[i] = math.exp(eta_a[i])
        lmax = -np.inf
        for u in range(1, C):
            if u == u0 and single:
                lw[u] = math.log(alpha_c)
            else:
                lw[u] = math.log(m[u])
            lw[u] += _col_loglik(n, j, Zt, delta, Lt, N, eta[:, u], ee[:, u], s[:, u])
            if lw[u] > lmax:
                lmax = lw[u]
        if not single:
            lw[C] = math.log(alpha_c) + _col_loglik(n, j, Zt, delta, Lt, N, eta_a, ee_a, s_a)
            if lw[C] > lmax:
                lmax = lw[C]
            ncand = C + 1
        else:
            ncand = C
        tot = 0.0
        for u in range(1, ncand):
            lw[u] = math.exp(lw[u] - lmax)
            tot += lw[u]
        U = rng.random() * tot
        unew = 1
        acc = lw[1]
        while acc < U and unew < ncand - 1:
            unew += 1
            acc += lw[unew]
        if (not single) and unew == C:
            eta[:, C] = eta_a
            ee[:, C] = ee_a
            s[:, C] = s_a
            v[:, C] = v_a
            for i in range(n):
                _lambda_given_s(zfeat[i], znorm2[i], s_a[i], tau_l, lam[C, i], rng)
            C += 1
        c[j] = unew
        m[unew] += 1
        for i in range(n):
            Y[i, unew] += Zt[i, j]
            N[i] += ee[i, unew]
        if single and unew != u0:
            C = _swap_delete(u0, C, c, m, eta, ee, s, v, lam, Y)
    return C


@njit(cache=True)
def taxon_nonda(Zt, delta, Lt, c, m, C, eta, s, groups, Xdag, znorm2, mu, pi,
                sig_e, tau_l, alpha_c, ph, new_nonda, rng):
    """Per-taxon conditional non-DA probability, mixing cluster statuses by
    the allocation full conditional.  Does not modify the state."""
    n, p = Zt.shape
    K = groups.max() + 1
    cumpi = np.cumsum(pi)
    znorm = np.sqrt(znorm2)
    ee = np.exp(eta[:, :C].copy())
    N = np.zeros(n)
    for i in range(n):
        for u in range(C):
            N[i] += m[u] * ee[i, u]
    Nj = np.empty(n)
    eta_a = np.empty(n)
    ee_a = np.empty(n)
    s_a = np.empty(n)
    v_a = np.empty(K, dtype=np.int64)
    lw = np.empty(C + 1)
    out = np.ones(p)
    for j in range(1, p):
        u0 = c[j]
        for i in range(n):
            Nj[i] = N[i] - ee[i, u0]
        single = m[u0] == 1
        lmax = -np.inf
        for u in range(1, C):
            if u == u0 and single:
                lw[u] = math.log(alpha_c)
            elif u == u0:
                lw[u] = math.log(m[u] - 1)
            else:
                lw[u] = math.log(m[u])
            lw[u] += _col_loglik(n, j, Zt, delta, Lt, Nj, eta[:, u], ee[:, u], s[:, u])
            if lw[u] > lmax:
                lmax = lw[u]
        ncand = C
        if not single:
            _draw_aux(Xdag, groups, znorm, mu, cumpi, sig_e, tau_l, eta_a, s_a, v_a, rng)
            for i in range(n):
                ee_a[i] = math.exp(eta_a[i])
            lw[C] = math.log(alpha_c) + _col_loglik(n, j, Zt, delta, Lt, Nj, eta_a, ee_a, s_a)
            if lw[C] > lmax:
                lmax = lw[C]
            ncand = C + 1
        tot = 0.0
        acc = 0.0
        for u in range(1, ncand):
            w = math.exp(lw[u] - lmax)
            tot += w
            acc += w * (ph[u] if u < C else new_nonda)
        out[j] = acc / tot
    return out


# ------------------------------------------------------------ eta / lambda

@njit(cache=True)
def update_eta(Y, Lt, m, C, eta, groups, v, Xmu, sig2, rng, stats):
    """ARS update of every eta[i, u], u >= 1, then an exact common-shift move
    per sample along the direction (0, 1, ..., 1)."""
    n = Y.shape[0]
    prm = np.empty(6)
    logmv = np.empty(C)
    for u in range(C):
        logmv[u] = math.log(m[u])
    for i in range(n):
        g = groups[i]
        for u in range(1, C):
            # log of the normaliser without cluster u
            mx = -np.inf
            for w in range(C):
                if w != u:
                    t = logmv[w] + eta[i, w]
                    if t > mx:
                        mx = t
            acc = 0.0
            for w in range(C):
                if w != u:
                    acc += math.exp(logmv[w] + eta[i, w] - mx)
            prm[0] = Y[i, u]
            prm[1] = Lt[i]
            prm[2] = mx + math.log(acc)
            prm[3] = logmv[u]
            prm[4] = Xmu[i, v[g, u]]
            prm[5] = sig2
            eta[i, u] = ars(ETA, prm, eta[i, u], rng, stats)
        if C > 1:
            mx = -np.inf
            for w in range(1, C):
                t = logmv[w] + eta[i, w]
                if t > mx:
                    mx = t
            acc = 0.0
            ysum = 0.0
            cbar = 0.0
            for w in range(1, C):
                acc += math.exp(logmv[w] + eta[i, w] - mx)
                ysum += Y[i, w]
                cbar += Xmu[i, v[g, w]] - eta[i, w]
            prm[0] = ysum
            prm[1] = Lt[i]
            prm[2] = 0.0  # reference mass m_0 e^0 = 1
            prm[3] = mx + math.log(acc)
            prm[4] = cbar / (C - 1)
            prm[5] = sig2 / (C - 1)
            shift = ars(ETA, prm, 0.0, rng, stats)
            for w in range(1, C):
                eta[i, w] += shift


@njit(cache=True)
def update_lambda(delta, c, m, C, s, lam, zfeat, znorm2, tau_l, rng, stats):
    """Gibbs update of the technical-zero random effects.

    The Bernoulli likelihood for (i, u) depends on lambda only through
    s = z_i . lambda, so s is drawn exactly by ARS and lambda from its prior
    conditioned on s.
    """
    n, p = delta.shape
    D0 = np.zeros((n, C))
    for j in range(1, p):
        u = c[j]
        for i in range(n):
            if delta[i, j] == 0:
                D0[i, u] += 1.0
    prm = np.empty(3)
    tau2 = tau_l * tau_l
    for u in range(C):
        for i in range(n):
            if u == 0:
                # reference taxon is never censored: prior draw
                _lambda_given_s(zfeat[i], znorm2[i],
                                math.sqrt(tau2 * znorm2[i]) * rng.standard_normal(),
                                tau_l, lam[u, i], rng)
            else:
                prm[0] = D0[i, u]
                prm[1] = m[u] - D0[i, u]
                prm[2] = tau2 * znorm2[i]
                snew = ars(LOGISTIC, prm, s[i, u], rng, stats)
                _lambda_given_s(zfeat[i], znorm2[i], snew, tau_l, lam[u, i], rng)
            acc = 0.0
            for t in range(zfeat.shape[1]):
                acc += zfeat[i, t] * lam[u, i, t]
            s[i, u] = acc
