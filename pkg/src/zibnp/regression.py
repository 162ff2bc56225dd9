"""Finite-mixture prior over group/cluster regression vectors."""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp


def cluster_status(v, u) -> int:
    """1 (non-DA) if every group shares cluster ``u``'s mixture component, else 2.

    Cluster index 0 is the reference and always non-DA.  Memberships are
    compared as integers, never through the regression vectors themselves.
    """
    if u == 0:
        return 1
    col = np.asarray(v)[:, u]
    return 1 if np.all(col == col[0]) else 2


def cluster_status_vector(v) -> np.ndarray:
    v = np.asarray(v)
    h = np.where(np.all(v == v[:1], axis=0), 1, 2)
    h[0] = 1
    return h


def membership_logweights(state, design) -> np.ndarray:
    """Unnormalised log P(v_ku = m | .) as a (K, C, M) array (column 0 unused)."""
    C, M, K = state.C, state.mu.shape[0], design.K
    Xmu = design.Xdag @ state.mu.T                               # (n, M)
    resid2 = (state.eta[:, :C, None] - Xmu[:, None, :]) ** 2     # (n, C, M)
    out = np.empty((K, C, M))
    for k in range(K):
        rows = design.groups == k
        out[k] = -resid2[rows].sum(axis=0) / (2.0 * state.sigma_e2)
    with np.errstate(divide="ignore"):
        out += np.log(state.pi)[None, None, :]
    return out


def membership_probs(state, design) -> np.ndarray:
    lw = membership_logweights(state, design)
    norm = logsumexp(lw, axis=2, keepdims=True)
    if not np.all(np.isfinite(norm[:, 1:])):
        raise FloatingPointError("membership weights vanished")
    return np.exp(lw - norm)


def update_memberships(state, design, rng) -> np.ndarray:
    """Draw every v_ku (u >= 1) from its categorical full conditional.

    Returns the (K, C, M) probabilities used for the draw.
    """
    P = membership_probs(state, design)
    C = state.C
    cum = np.cumsum(P[:, 1:C], axis=2)
    U = rng.random(cum.shape[:2])[..., None] * cum[..., -1:]
    draw = (cum < U).sum(axis=2)
    state.v[:, 1:C] = np.minimum(draw, P.shape[2] - 1)
    return P


def _atom_score(prior_prec, P, B, sig2):
    """0.5 B' L^-1 B / sig2^2 - 0.5 log|L| with L = prior_prec + P / sig2, batched
    over the leading axis; the remaining marginal-likelihood terms cancel
    between the candidate atoms."""
    Lam = prior_prec + P / sig2
    ch = np.linalg.cholesky(Lam)
    w = np.linalg.solve(ch, (B / sig2)[..., None])[..., 0]
    logdet = 2.0 * np.log(np.diagonal(ch, axis1=-2, axis2=-1)).sum(axis=-1)
    return 0.5 * (w ** 2).sum(axis=-1) - 0.5 * logdet


def _block_logweights(P, B, Gk, bku, prior_prec, sig2, logpi):
    return logpi + (_atom_score(prior_prec, P + Gk, B + bku, sig2)
                    - _atom_score(prior_prec, P, B, sig2))


def _block_stats(state, design):
    C = state.C
    b = np.empty((design.K, C, design.Tp1))
    for k in range(design.K):
        rows = design.groups == k
        b[k] = (design.Xdag[rows].T @ state.eta[rows, :C]).T
    return b


def collapsed_membership_probs(state, design, k, u) -> np.ndarray:
    """P(v_ku = m | v_-ku, eta, ...) with the atoms integrated out."""
    M = state.mu.shape[0]
    b = _block_stats(state, design)
    P = np.zeros((M, design.Tp1, design.Tp1))
    B = np.zeros((M, design.Tp1))
    for kk in range(design.K):
        for uu in range(1, state.C):
            if (kk, uu) != (k, u):
                P[state.v[kk, uu]] += design.G[kk]
                B[state.v[kk, uu]] += b[kk, uu]
    with np.errstate(divide="ignore"):
        logpi = np.log(state.pi)
    lw = _block_logweights(P, B, design.G[k], b[k, u], design.S / state.tau2,
                           state.sigma_e2, logpi)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def update_memberships_collapsed(state, design, rng) -> np.ndarray:
    """Sequential draw of every v_ku with the atoms integrated out.

    Given eta, sigma_e^2, tau^2 and pi, each atom's regression is conjugate,
    so P(v_ku = m | v_-ku, .) is proportional to pi_m times the Gaussian
    predictive density of eta's (group k, cluster u) block under atom m's
    posterior from the other blocks.  The atoms must be redrawn afterwards
    (update_atoms), as they are in the sampler schedule.  Returns v.
    """
    C, M, K = state.C, state.mu.shape[0], design.K
    if C < 2:
        return state.v
    sig2 = state.sigma_e2
    prior_prec = design.S / state.tau2
    with np.errstate(divide="ignore"):
        logpi = np.log(state.pi)
    b = _block_stats(state, design)     # X_k' eta_{k,u}
    v = state.v
    P = np.zeros((M, design.Tp1, design.Tp1))
    B = np.zeros((M, design.Tp1))
    for k in range(K):
        for u in range(1, C):
            P[v[k, u]] += design.G[k]
            B[v[k, u]] += b[k, u]
    for u in range(1, C):
        for k in range(K):
            m0 = v[k, u]
            P[m0] -= design.G[k]
            B[m0] -= b[k, u]
            lw = _block_logweights(P, B, design.G[k], b[k, u], prior_prec, sig2, logpi)
            w = np.exp(lw - lw.max())
            m1 = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
            m1 = min(m1, M - 1)
            v[k, u] = m1
            P[m1] += design.G[k]
            B[m1] += b[k, u]
    return v


def update_atoms(state, design, rng) -> np.ndarray:
    """Gaussian full conditional for every mixture location."""
    C, M = state.C, state.mu.shape[0]
    prior_prec = design.S / state.tau2
    for mm in range(M):
        prec = prior_prec.copy()
        rhs = np.zeros(design.Tp1)
        for k in range(design.K):
            us = np.flatnonzero(state.v[k, 1:C] == mm) + 1
            if us.size == 0:
                continue
            rows = design.groups == k
            prec += us.size * design.G[k] / state.sigma_e2
            rhs += design.Xdag[rows].T @ state.eta[np.ix_(rows, us)].sum(axis=1) / state.sigma_e2
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, rhs)
        z = rng.standard_normal(design.Tp1)
        state.mu[mm] = mean + np.linalg.solve(chol.T, z)
    return state.mu


def membership_counts(state) -> np.ndarray:
    M = state.mu.shape[0]
    return np.bincount(state.v[:, 1:state.C].ravel(), minlength=M)


def update_pi(state, alpha_0, rng) -> np.ndarray:
    M = state.pi.shape[0]
    a = alpha_0 / M + membership_counts(state)
    state.pi = dirichlet(a, rng)
    return state.pi


def dirichlet(a, rng) -> np.ndarray:
    # gamma-normalisation keeps tiny concentrations from collapsing to NaN
    g = rng.gamma(np.asarray(a, dtype=float))
    tot = g.sum()
    if tot <= 0 or not np.isfinite(tot):
        out = np.zeros(len(a))
        out[np.argmax(a)] = 1.0
        return out
    return g / tot


def update_tau2(state, design, a_tau, b_tau, rng) -> float:
    M = state.mu.shape[0]
    quad = np.einsum("mi,ij,mj->", state.mu, design.S, state.mu)
    shape = a_tau + M * design.Tp1 / 2.0
    rate = b_tau + 0.5 * quad
    state.tau2 = rate / rng.gamma(shape)
    return state.tau2


def cluster_nonda_probs(P) -> np.ndarray:
    """P*[h_u = 1] = sum_m prod_k P*[v_ku = m]; entry 0 (reference) is 1."""
    out = np.prod(P, axis=0).sum(axis=1)
    out[0] = 1.0
    return np.clip(out, 0.0, 1.0)
