"""Log-ratio parameterisation of the cluster motifs.

Each sample's motif row is determined by its log ratios against the reference
cluster together with the cluster sizes, through ``sum_u m_u q*_u = 1``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from . import _kernels as K


def qstar_from_eta(eta_row, m) -> np.ndarray:
    """Motif vector for one sample.

    >>> qstar_from_eta([0.0, np.log(3.0)], [1, 1])
    array([0.25, 0.75])
    """
    eta_row = np.asarray(eta_row, dtype=float)
    logm = np.log(np.asarray(m, dtype=float))
    lognorm = logsumexp(logm + eta_row)
    return np.exp(eta_row - lognorm)


def qstar_matrix(eta, m) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    logm = np.log(np.asarray(m, dtype=float))
    lognorm = logsumexp(eta + logm[None, :], axis=1)
    return np.exp(eta - lognorm[:, None])


def log_normaliser(eta_row, m) -> float:
    return float(logsumexp(np.log(np.asarray(m, dtype=float)) + np.asarray(eta_row, dtype=float)))


def eta_params(i, u, state, design) -> np.ndarray:
    """Parameters of the log-concave full conditional of eta[i, u]."""
    C = state.C
    logm = np.log(state.m[:C].astype(float))
    others = np.delete(np.arange(C), u)
    lognr = logsumexp(logm[others] + state.eta[i, others])
    g = design.groups[i]
    mean = design.Xdag[i] @ state.mu[state.v[g, u]]
    return np.array([state.Y[i, u], state.Y[i, :C].sum(), lognr, logm[u], mean,
                     state.sigma_e2])


def eta_logdensity(i, u, value, state, design) -> float:
    """Unnormalised log full conditional of eta[i, u] (u >= 1)."""
    if u < 1:
        raise ValueError("the reference log ratio is fixed at zero")
    prm = eta_params(i, u, state, design)
    return K.logdens(K.ETA, float(value), prm)[0]


def ars_sample_eta(i, u, state, design, rng, stats=None) -> float:
    """Exact draw of eta[i, u] from its full conditional.  Updates the state."""
    prm = eta_params(i, u, state, design)
    stats = np.zeros(2, dtype=np.int64) if stats is None else stats
    x = K.ars(K.ETA, prm, float(state.eta[i, u]), rng, stats)
    state.eta[i, u] = x
    return x


def ars_draws(kind, prm, size, rng, x0=0.0) -> np.ndarray:
    """Repeated independent ARS draws for a fixed density (diagnostics/tests)."""
    prm = np.asarray(prm, dtype=float)
    stats = np.zeros(2, dtype=np.int64)
    return np.array([K.ars(kind, prm, x0, rng, stats) for _ in range(size)])


def eta_residuals(state, design) -> np.ndarray:
    C = state.C
    if C < 2:
        return np.zeros((design.n, 0))
    Xmu = design.Xdag @ state.mu.T                       # (n, M)
    mean = Xmu[np.arange(design.n)[:, None], state.v[design.groups][:, 1:C]]
    return state.eta[:, 1:C] - mean


def update_sigma_e2(state, design, a_e, b_e, rng) -> float:
    """Conjugate inverse-gamma draw for the log-ratio residual variance."""
    r = eta_residuals(state, design)
    shape = a_e + r.size / 2.0
    rate = b_e + 0.5 * float((r ** 2).sum())
    state.sigma_e2 = rate / rng.gamma(shape)
    return state.sigma_e2
