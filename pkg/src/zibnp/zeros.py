"""Technical-zero model, censoring indicators and latent-count reconstruction."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import _kernels as K


class ModelInconsistency(RuntimeError):
    pass


def compute_rstar(lam_u, X, L) -> np.ndarray:
    """Technical-zero probabilities of one cluster for every sample.

    ``lam_u`` is (n, T+2): intercept, covariate effects, log-depth effect.
    """
    lam_u = np.asarray(lam_u, dtype=float)
    X = np.asarray(X, dtype=float).reshape(lam_u.shape[0], -1)
    feats = np.column_stack([np.ones(lam_u.shape[0]), X, np.log(np.asarray(L, dtype=float))])
    return expit((lam_u * feats).sum(axis=1))


def technical_zero_probability(r, q, L) -> float:
    """P(technical zero | zero observed) for one cell with motif q and depth L."""
    return K.technical_zero_prob(float(r), float(q), float(L))


def nonbiological_zero_probability(r, q, L) -> float:
    return r + (1.0 - r) * (1.0 - q) ** L


def sample_censoring_indicators(state, design, rng):
    q = state.qstar()
    r = state.rstar()
    K.sample_censoring(design.Z, state.c, np.ascontiguousarray(q), np.ascontiguousarray(r),
                       design.L, state.delta, rng)
    return state.delta


def censored_sets(delta) -> list[np.ndarray]:
    return [np.flatnonzero(row == 0) for row in delta]


def sample_latent_depth(L, qtilde, rng) -> int:
    """Number of censored reads accompanying ``L`` observed reads.

    Mass C(s+L-1, s) qtilde^s (1-qtilde)^L.
    """
    if qtilde >= 1.0:
        raise ModelInconsistency(f"censored motif mass {qtilde} >= 1")
    if qtilde <= 0.0:
        return 0
    return int(rng.negative_binomial(L, 1.0 - qtilde))


def impute_censored_counts(S, w, rng) -> np.ndarray:
    """Split ``S`` latent reads over the censored taxa with probabilities ``w``."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(len(w), dtype=np.int64)
    if len(w):
        K.multinomial_split(int(S), w / w.sum(), out, rng)
    return out


def impute_latent(state, design, rng):
    """Two-stage reconstruction of the latent count matrix for every sample."""
    q = np.ascontiguousarray(state.qstar())
    K.impute_latent(design.Z, state.c, q, state.delta, design.L, state.Zt, state.S_lat, rng)
    refresh_aggregates(state, design)


def refresh_aggregates(state, design):
    C = state.C
    state.Y[:] = 0
    for u in range(C):
        state.Y[:, u] = state.Zt[:, state.c == u].sum(axis=1)


def update_lambda(state, design, rng, stats=None):
    stats = np.zeros(2, dtype=np.int64) if stats is None else stats
    K.update_lambda(state.delta, state.c, state.m, state.C, state.s, state.lam,
                    design.zfeat, design.znorm2, np.sqrt(state.tau_lambda2), rng, stats)
    return stats


def update_tau_lambda2(state, design, a_l, b_l, rng) -> float:
    lam = state.lam[:state.C]
    shape = a_l + lam.size / 2.0
    rate = b_l + 0.5 * float((lam ** 2).sum())
    state.tau_lambda2 = rate / rng.gamma(shape)
    return state.tau_lambda2
