"""Chinese restaurant process prior on taxon-to-cluster allocations.

The reference taxon is a pinned singleton, so the prior acts on the
remaining taxa only.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from . import _kernels as K


def crp_log_prior(c, alpha_c) -> float:
    """log[ G(a) a^C / G(a + p) * prod_u G(m_u) ] for the labelling ``c``."""
    c = np.asarray(c)
    p = c.size
    _, m = np.unique(c, return_counts=True)
    C = m.size
    return float(gammaln(alpha_c) + C * np.log(alpha_c) - gammaln(alpha_c + p)
                 + gammaln(m).sum())


def allocation_log_prior(c, alpha_c) -> float:
    """CRP log prior over the non-reference taxa of a full allocation vector."""
    return crp_log_prior(np.asarray(c)[1:], alpha_c)


def sample_crp(p, alpha_c, rng) -> np.ndarray:
    """Sequential seating draw of a partition of ``p`` items (labels 0..C-1)."""
    c = np.zeros(p, dtype=np.int64)
    sizes = [1]
    for i in range(1, p):
        w = np.array(sizes + [alpha_c], dtype=float)
        k = int(rng.choice(len(w), p=w / w.sum()))
        if k == len(sizes):
            sizes.append(1)
        else:
            sizes[k] += 1
        c[i] = k
    return c


def gibbs_update_allocations(state, design, alpha_c, rng):
    """Random-scan Gibbs sweep over every non-reference allocation."""
    order = rng.permutation(np.arange(1, design.p))
    state.C = K.allocation_sweep(
        order, state.Zt, state.delta, state.Zt.sum(axis=1).astype(float), state.c,
        state.m, state.C, state.eta, state.s, state.v, state.lam, state.Y,
        design.groups, design.Xdag, design.zfeat, design.znorm2, state.mu, state.pi,
        np.sqrt(state.sigma_e2), np.sqrt(state.tau_lambda2), float(alpha_c), rng,
    )
    return state
