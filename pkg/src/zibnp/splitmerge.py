"""Split-merge Metropolis-Hastings moves for the taxon allocations.

Single-site Gibbs updates cannot merge two large clusters with near-identical
profiles: moving one taxon at a time passes through states with very low
density when read depths are high.  A split proposes to cut one cluster in two
with a data-guided assignment of its members; a merge proposes to fuse two
clusters.  Parameters of the newly created cluster (log ratios, memberships,
zero-model effects) are drawn from Laplace approximations of their full
conditionals, and the same densities are evaluated for the reverse move.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, gammaln, log_expit, logsumexp

from . import _kernels as K
from .crp import allocation_log_prior
from .model import ModelState

_FAR = 10.0          # squared distance used when two taxa share no positive sample
_SHARED = ("delta", "S_lat")


def _light_copy(st: ModelState) -> ModelState:
    # the censoring indicators and latent depths are untouched by the move
    kw = {}
    for name in st.__dataclass_fields__:
        val = getattr(st, name)
        if isinstance(val, np.ndarray) and name not in _SHARED:
            val = val.copy()
        kw[name] = val
    return ModelState(**kw)


def _norm_logpdf(x, mean, var):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * np.log(2 * np.pi * var)


class SplitMerge:
    """Holds the data summaries used to guide splits for one design."""

    def __init__(self, design, alpha_c, attempts=5):
        Z = design.Z.astype(float)
        self.W = (Z > 0).astype(float)
        with np.errstate(divide="ignore"):
            self.A = np.where(Z > 0, np.log(Z / design.L[:, None]), 0.0)
        self.design = design
        self.alpha_c = alpha_c
        self.attempts = attempts
        self.accepted = np.zeros(2, dtype=np.int64)      # splits, merges

    # -- proposal pieces --------------------------------------------------
    def _d2(self, idx, a):
        Wk = self.W[:, idx] * self.W[:, [a]]
        cnt = Wk.sum(axis=0)
        ss = ((self.A[:, idx] - self.A[:, [a]]) ** 2 * Wk).sum(axis=0)
        return np.where(cnt > 0, ss / np.maximum(cnt, 1.0), _FAR)

    def side_weights(self, S, a, b):
        """Probability that each taxon in S joins b's side of a split."""
        if len(S) == 0:
            return np.zeros(0)
        dab = float(self._d2(np.array([b]), a)[0])
        h = 0.02 + 0.25 * dab
        w = expit((self._d2(S, a) - self._d2(S, b)) / h)
        return np.clip(w, 0.01, 0.99)

    def _params(self, st, t, Xmu, rng=None):
        """Draw (or, with rng=None, evaluate) eta, v and lambda of cluster t.
        Returns the log proposal density.

        The log-ratio proposal uses only the observed cells, which are the
        same before and after the move; latent counts are not consulted.
        """
        ds = self.design
        C = st.C
        onehot = np.zeros((ds.p, C))
        onehot[np.arange(ds.p), st.c] = 1.0
        mo = st.delta @ onehot                                # observed taxa per cluster
        Yo = (ds.Z * st.delta) @ onehot[:, t]
        Lo = (ds.Z * st.delta).sum(axis=1).astype(float)
        mt = mo[:, t]
        live = np.ones(C, dtype=bool)
        live[t] = False
        with np.errstate(divide="ignore"):
            logNr = logsumexp(st.eta[:, :C][:, live], b=mo[:, live], axis=1)
        has = mt > 0
        se2 = st.sigma_e2
        lq = 0.0
        # memberships from a rough per-sample estimate of the log ratio
        mts = np.where(has, mt, 1.0)
        xh = np.log((Yo + 0.5) / (Lo - Yo + 0.5)) + logNr - np.log(mts)
        vh = 1.0 / (Yo + 0.5) + 1.0 / (Lo - Yo + 0.5) + se2
        with np.errstate(divide="ignore"):
            logpi = np.log(st.pi)
        for k in range(ds.K):
            rows = (ds.groups == k) & has
            lw = logpi + _norm_logpdf(xh[rows, None], Xmu[rows], vh[rows, None]).sum(axis=0)
            lw -= logsumexp(lw)
            if rng is not None:
                cw = np.cumsum(np.exp(lw))
                st.v[k, t] = min(int(np.searchsorted(cw, rng.random() * cw[-1], side="right")),
                                 len(lw) - 1)
            lq += lw[st.v[k, t]]
        mean = Xmu[np.arange(ds.n), st.v[ds.groups, t]]
        # log ratios
        prm = np.zeros(6)
        for i in range(ds.n):
            if has[i]:
                prm[:] = (Yo[i], Lo[i], logNr[i], math.log(mt[i]), mean[i], se2)
                x0 = min(max(xh[i], mean[i] - 20.0), mean[i] + 20.0)
                mode = K.find_mode(K.ETA, prm, x0)
                var = -1.0 / K.logdens(K.ETA, mode, prm)[2]
            else:
                mode, var = mean[i], se2
            if rng is not None:
                st.eta[i, t] = mode + math.sqrt(var) * rng.standard_normal()
            lq += float(_norm_logpdf(st.eta[i, t], mode, var))
        mt = float(st.m[t])
        # zero-model linear predictors, then lambda given s
        members = st.c == t
        d0 = (st.delta[:, members] == 0).sum(axis=1).astype(float)
        tl2 = st.tau_lambda2
        prm = np.zeros(3)
        for i in range(ds.n):
            pv = tl2 * ds.znorm2[i]
            prm[:] = (d0[i], mt - d0[i], pv)
            mode = K.find_mode(K.LOGISTIC, prm, 0.0)
            var = -1.0 / K.logdens(K.LOGISTIC, mode, prm)[2]
            if rng is not None:
                s_new = mode + math.sqrt(var) * rng.standard_normal()
                K._lambda_given_s(ds.zfeat[i], ds.znorm2[i], s_new, math.sqrt(tl2),
                                  st.lam[t, i], rng)
                st.s[i, t] = s_new
            lam = st.lam[t, i]
            lq += float(_norm_logpdf(st.s[i, t], mode, var)
                        + _norm_logpdf(lam, 0.0, tl2).sum() - _norm_logpdf(st.s[i, t], 0.0, pv))
        return lq

    def _resplit(self, st, taxa, rng=None):
        """Redistribute (or, with rng=None, score) the latent counts of the
        censored cells among ``taxa``, keeping each row's total over those
        cells fixed.  Returns the log multinomial probability."""
        cens = st.delta[:, taxa] == 0
        x = st.Zt[:, taxa]
        R = (x * cens).sum(axis=1)
        e = st.eta[:, st.c[taxa]]
        w = np.where(cens, np.exp(e - e.max(axis=1, keepdims=True)), 0.0)
        tot = w.sum(axis=1, keepdims=True)
        pv = np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), 1.0 / len(taxa))
        if rng is not None:
            draw = rng.multinomial(R, pv)
            x = np.where(cens, draw, x)
            st.Zt[:, taxa] = x
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.where(cens & (x > 0), x * np.log(pv), 0.0).sum()
        lp += gammaln(R + 1.0).sum() - np.where(cens, gammaln(x + 1.0), 0.0).sum()
        return float(lp)

    def _refresh(self, st, cols):
        for u in cols:
            st.Y[:, u] = st.Zt[:, st.c == u].sum(axis=1)

    # -- target ------------------------------------------------------------
    def _local(self, st, cols, taxa, Lt, Xmu):
        """Terms of the joint log density that a split or merge can change."""
        ds = self.design
        C = st.C
        live = st.m[:C] > 0
        logm = np.log(st.m[:C][live].astype(float))
        eta = st.eta[:, :C][:, live]
        lp = allocation_log_prior(st.c, self.alpha_c)
        lp += float((st.Y[:, :C][:, live] * eta).sum()
                    - (Lt * logsumexp(eta + logm, axis=1)).sum())
        lp -= float(gammaln(st.Zt[:, taxa] + 1.0).sum())
        sj = st.s[:, st.c[taxa]]
        d = st.delta[:, taxa]
        lp += float(np.where(d == 0, log_expit(sj), log_expit(-sj)).sum())
        with np.errstate(divide="ignore"):
            logpi = np.log(st.pi)
        rows = np.arange(ds.n)
        for u in cols:
            mean = Xmu[rows, st.v[ds.groups, u]]
            lp += float(_norm_logpdf(st.eta[:, u], mean, st.sigma_e2).sum())
            lp += float(logpi[st.v[:, u]].sum())
            lp += float(_norm_logpdf(st.lam[u], 0.0, st.tau_lambda2).sum())
        return lp

    # -- moves -------------------------------------------------------------
    def attempt(self, st: ModelState, rng) -> ModelState:
        """One split or merge proposal; returns the (possibly new) state."""
        ds = self.design
        p = ds.p
        if p < 3:
            return st
        a, b = rng.choice(np.arange(1, p), size=2, replace=False)
        Lt = st.Zt.sum(axis=1).astype(float)
        Xmu = ds.Xdag @ st.mu.T
        u, t = int(st.c[a]), int(st.c[b])
        if u == t:
            taxa = np.flatnonzero(st.c == u)
            S = taxa[(taxa != a) & (taxa != b)]
            w = self.side_weights(S, a, b)
            side = rng.random(len(S)) < w
            lq = float(np.log(np.where(side, w, 1.0 - w)).sum())
            new = _light_copy(st)
            t = new.C
            moved = np.concatenate([[b], S[side]])
            new.c[moved] = t
            new.C += 1
            new.m[t] = len(moved)
            new.m[u] -= len(moved)
            self._refresh(new, [u, t])
            lq += self._params(new, t, Xmu, rng)
            lq += self._resplit(new, taxa, rng)
            self._refresh(new, [u, t])
            lq_rev = self._resplit(st, taxa)
            lr = (self._local(new, [u, t], taxa, Lt, Xmu) - self._local(st, [u], taxa, Lt, Xmu)
                  + lq_rev - lq)
            if math.log(rng.random()) < lr:
                self.accepted[0] += 1
                return new
            return st
        if u == 0 or t == 0:
            return st
        both = np.flatnonzero((st.c == u) | (st.c == t))
        S = both[(both != a) & (both != b)]
        new = _light_copy(st)
        new.c[both] = u
        new.m[u] += new.m[t]
        new.m[t] = 0
        lq = self._resplit(new, both, rng)
        self._refresh(new, [u])
        new.Y[:, t] = 0
        # reverse split: allocations, cluster t's parameters, latent counts
        w = self.side_weights(S, a, b)
        side = st.c[S] == t
        lq_rev = float(np.log(np.where(side, w, 1.0 - w)).sum())
        lq_rev += self._params(st, t, Xmu, None)
        lq_rev += self._resplit(st, both)
        lr = (self._local(new, [u], both, Lt, Xmu) - self._local(st, [u, t], both, Lt, Xmu)
              + lq_rev - lq)
        if math.log(rng.random()) < lr:
            ee = np.empty_like(new.eta)
            new.C = K._swap_delete(t, new.C, new.c, new.m, new.eta, ee, new.s, new.v,
                                   new.lam, new.Y)
            self.accepted[1] += 1
            return new
        return st

    def sweep(self, st: ModelState, rng) -> ModelState:
        for _ in range(self.attempts):
            st = self.attempt(st, rng)
        return st
