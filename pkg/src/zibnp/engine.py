"""Initialization, the per-iteration update schedule and chain execution."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.cluster.vq import kmeans2
from scipy.special import gammaln, log_expit

from . import _kernels as K
from . import composition, crp, regression, zeros
from .splitmerge import SplitMerge
from .model import ConfigError, Design, FitConfig, InvariantError, ModelState, check_invariants
from .trace import Trace, TraceRecord

log = logging.getLogger(__name__)


def _ig_prior_mean(a, b):
    return b / (a - 1.0) if a > 1.0 else b


def default_init_clusters(p, alpha_c) -> int:
    """Starting cluster count (non-reference clusters)."""
    return max(math.ceil(alpha_c * math.log(p)), math.ceil(math.sqrt(p)))


def positive_log_distance(Z, L) -> np.ndarray:
    """Condensed distance between columns: root mean squared difference of
    log relative abundances over the samples where both columns are positive.

    Zeros are skipped rather than pseudo-counted: most of them are censoring
    and a pseudo-count turns them into outliers that swamp the distance.
    Pairs with no common positive sample get the largest observed distance.
    """
    W = (Z > 0).astype(float)
    with np.errstate(divide="ignore"):
        A = np.where(Z > 0, np.log(np.maximum(Z, 1) / L[:, None]), 0.0)
    A2 = A * A
    cnt = W.T @ W
    ss = A2.T @ W + W.T @ A2 - 2.0 * (A.T @ A)
    with np.errstate(invalid="ignore", divide="ignore"):
        D = np.sqrt(np.maximum(ss, 0.0) / cnt)
    finite = np.isfinite(D)
    D[~finite] = D[finite].max() if finite.any() else 1.0
    np.fill_diagonal(D, 0.0)
    D = 0.5 * (D + D.T)
    iu = np.triu_indices(D.shape[0], 1)
    return D[iu]


def initial_allocation(Z, L, k) -> np.ndarray:
    """Agglomerative clustering of the non-reference columns.

    Average linkage on positive_log_distance, cut to ``k`` clusters.
    Returns labels 1..C-1 for columns 1..p-1; column 0 gets label 0.
    """
    p = Z.shape[1]
    c = np.zeros(p, dtype=np.int64)
    cols = p - 1
    if cols == 0:
        return c
    k = int(min(max(k, 1), cols))
    if cols == 1 or k == 1:
        c[1:] = 1
        return c
    d = positive_log_distance(Z[:, 1:], L.astype(float))
    labels = fcluster(linkage(d, method="average"), t=k, criterion="maxclust")
    # relabel by first appearance so labels are contiguous 1..C-1
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels)[order]] = np.arange(1, order.size + 1)
    c[1:] = remap[labels]
    return c


def initial_log_ratios(Z, c, C) -> np.ndarray:
    """Empirical cluster-mean log ratios against the reference column.

    Zeros are skipped when a cluster has positive counts in the sample (most
    zeros in a row are censoring, and a 0.5 pseudo-count there would plant an
    outlier the imputation step then reinforces); a cluster with no positive
    count in a sample borrows its median over the other samples.
    """
    n, p = Z.shape
    eta = np.zeros((n, p))
    ref = np.log(Z[:, 0] + 0.5)
    for u in range(1, C):
        block = Z[:, c == u].astype(float)
        pos = (block > 0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            col = np.log(block.sum(axis=1) / pos + 0.5)
        bad = pos == 0
        if bad.all():
            col[:] = np.log(0.5)
        elif bad.any():
            col[bad] = np.median(col[~bad])
        eta[:, u] = col - ref
    return eta


def initial_regression(design: Design, eta, M, tau2, rng):
    """Atoms and memberships from per-(group, cluster) least squares.

    The fitted coefficient vectors are grouped by k-means in the metric of
    the fitted values; atoms not hit by any vector are drawn from the prior.
    """
    Kg, C, Tp1 = design.K, eta.shape[1], design.Tp1
    v = np.zeros((Kg, C), dtype=np.int64)
    chol = np.linalg.cholesky(design.S_inv)
    mu = (chol @ rng.standard_normal((Tp1, M))).T * math.sqrt(tau2)
    if C < 2:
        return mu, v
    coefs = []
    for k in range(Kg):
        rows = design.groups == k
        b, *_ = np.linalg.lstsq(design.Xdag[rows], eta[rows, 1:], rcond=None)
        coefs.append(b.T)
    B = np.concatenate(coefs)                      # (K*(C-1), T+1)
    R = np.linalg.cholesky(design.S / design.n).T  # |R b|^2 = mean squared fitted value
    F = B @ R.T
    k = min(M, len(np.unique(F.round(12), axis=0)))
    if k > 1:
        cent, lab = kmeans2(F, k, minit="++", seed=rng)
    else:
        cent, lab = F.mean(axis=0, keepdims=True), np.zeros(len(F), dtype=int)
    for m in range(k):
        if np.any(lab == m):
            mu[m] = np.linalg.solve(R, cent[m])
    v[:, 1:] = lab.reshape(Kg, C - 1)
    return mu, v


def check_design(design: Design):
    if design.p < 2:
        raise ConfigError("need at least one taxon besides the reference")
    if design.n < design.K:
        raise ConfigError("fewer samples than groups")
    counts = np.bincount(design.groups, minlength=design.K)
    if np.any(counts < 2):
        bad = int(np.flatnonzero(counts < 2)[0]) + 1
        raise ConfigError(f"group {bad} has fewer than 2 samples")


def initialize(design: Design, config: FitConfig, rng) -> ModelState:
    check_design(design)
    n, p, Kg, M, Tp1 = design.n, design.p, design.K, config.M, design.Tp1
    Z, L = design.Z, design.L
    k0 = config.init_clusters or default_init_clusters(p, config.alpha_c)
    c = initial_allocation(Z, L, k0)
    C = int(c.max()) + 1
    m = np.zeros(p, dtype=np.int64)
    m[:C] = np.bincount(c, minlength=C)

    eta = initial_log_ratios(Z, c, C)

    tau2 = _ig_prior_mean(config.a_tau, config.b_tau)
    tau_l2 = _ig_prior_mean(config.a_lambda, config.b_lambda)
    mu, v = initial_regression(design, eta[:, :C], M, tau2, rng)
    vfull = np.zeros((Kg, p), dtype=np.int64)
    vfull[:, :C] = v
    v = vfull
    pi = np.full(M, 1.0 / M)

    delta = np.ones((n, p), dtype=np.int8)
    zero = Z == 0
    zero[:, 0] = False
    delta[zero] = (rng.random(int(zero.sum())) >= 0.5).astype(np.int8)

    state = ModelState(
        c=c, C=C, m=m, eta=eta, v=v, mu=mu, pi=pi, tau2=tau2, sigma_e2=0.1,
        lam=np.zeros((p, n, Tp1 + 1)), s=np.zeros((n, p)), tau_lambda2=tau_l2,
        delta=delta, Zt=Z.copy(), S_lat=np.zeros(n, dtype=np.int64),
        Y=np.zeros((n, p), dtype=np.int64),
    )
    zeros.impute_latent(state, design, rng)
    return state


def joint_log_density(state: ModelState, design: Design, config: FitConfig) -> float:
    """Log joint density of all latent and observed quantities."""
    C = state.C
    Zt = state.Zt
    Lt = Zt.sum(axis=1)
    logm = np.log(state.m[:C].astype(float))
    eta = state.eta[:, :C]
    lognorm = np.logaddexp.reduce(eta + logm, axis=1)
    lp = crp.allocation_log_prior(state.c, config.alpha_c)
    # multinomial likelihood of the latent counts
    lp += float(gammaln(Lt + 1.0).sum() - gammaln(Zt + 1.0).sum())
    lp += float((state.Y[:, :C] * eta).sum() - (Lt * lognorm).sum())
    # censoring indicators (reference column excluded: never censored)
    sj = state.s[:, state.c[1:]]
    d = state.delta[:, 1:]
    lp += float(np.where(d == 0, log_expit(sj), log_expit(-sj)).sum())
    # log ratios
    r = composition.eta_residuals(state, design)
    se2 = state.sigma_e2
    lp += float(-0.5 * (r ** 2).sum() / se2 - 0.5 * r.size * math.log(2 * math.pi * se2))
    # memberships and atoms
    if C > 1:
        with np.errstate(divide="ignore"):
            lp += float(np.log(state.pi)[state.v[:, 1:C]].sum())
    Tp1 = design.Tp1
    M = state.mu.shape[0]
    quad = float(np.einsum("mi,ij,mj->", state.mu, design.S, state.mu))
    _, logdetS = np.linalg.slogdet(design.S)
    lp += (-0.5 * quad / state.tau2 - 0.5 * M * Tp1 * math.log(2 * math.pi * state.tau2)
           + 0.5 * M * logdetS)
    a = np.full(M, config.alpha_0 / M)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp += float(gammaln(a.sum()) - gammaln(a).sum()
                    + np.sum(np.where(a == 1, 0.0, (a - 1) * np.log(state.pi))))
    # zero-model random effects
    lam = state.lam[:C]
    tl2 = state.tau_lambda2
    lp += float(-0.5 * (lam ** 2).sum() / tl2 - 0.5 * lam.size * math.log(2 * math.pi * tl2))
    for val, a_, b_ in ((state.tau2, config.a_tau, config.b_tau),
                        (se2, config.a_e, config.b_e),
                        (tl2, config.a_lambda, config.b_lambda)):
        lp += a_ * math.log(b_) - math.lgamma(a_) - (a_ + 1) * math.log(val) - b_ / val
    return lp


class Sampler:
    """One chain: holds the state and applies the update schedule."""

    def __init__(self, design: Design, config: FitConfig, rng):
        self.design = design
        self.config = config
        self.rng = rng
        self.state = initialize(design, config, rng)
        self.stats = np.zeros(2, dtype=np.int64)
        self.iteration = 0
        self.splitmerge = SplitMerge(design, config.alpha_c, config.split_merge)
        self.max_residual = 0.0          # worst constraint residual seen at checkpoints

    def step(self):
        st, ds, cf, rng = self.state, self.design, self.config, self.rng
        self.stats[:] = 0
        zeros.sample_censoring_indicators(st, ds, rng)                      # (1)
        zeros.impute_latent(st, ds, rng)                                    # (2)
        crp.gibbs_update_allocations(st, ds, cf.alpha_c, rng)               # (3)
        st = self.state = self.splitmerge.sweep(st, rng)
        Xmu = ds.Xdag @ st.mu.T
        K.update_eta(st.Y, st.Zt.sum(axis=1).astype(float), st.m, st.C, st.eta,
                     ds.groups, st.v, Xmu, st.sigma_e2, rng, self.stats)    # (4)
        regression.update_memberships_collapsed(st, ds, rng)                # (5)
        regression.update_atoms(st, ds, rng)                                # (6)
        regression.update_pi(st, cf.alpha_0, rng)                           # (7)
        regression.update_tau2(st, ds, cf.a_tau, cf.b_tau, rng)             # (8)
        composition.update_sigma_e2(st, ds, cf.a_e, cf.b_e, rng)
        zeros.update_lambda(st, ds, rng, self.stats)                        # (9)
        zeros.update_tau_lambda2(st, ds, cf.a_lambda, cf.b_lambda, rng)
        self.iteration += 1
        if cf.debug and self.iteration % 100 == 0:
            self.check()

    def check(self):
        try:
            resid = check_invariants(self.state, self.design)
        except InvariantError as e:
            raise InvariantError(f"iteration {self.iteration}: {e}") from None
        self.max_residual = max(self.max_residual, resid)
        return resid

    def cluster_nonda(self):
        P = regression.membership_probs(self.state, self.design)
        return regression.cluster_nonda_probs(P)

    def taxon_nonda(self, ph=None):
        st, ds = self.state, self.design
        ph = self.cluster_nonda() if ph is None else ph
        new_nonda = float(np.sum(st.pi ** ds.K))
        return K.taxon_nonda(
            st.Zt, st.delta, st.Zt.sum(axis=1).astype(float), st.c, st.m, st.C, st.eta,
            st.s, ds.groups, ds.Xdag, ds.znorm2, st.mu, st.pi, math.sqrt(st.sigma_e2),
            math.sqrt(st.tau_lambda2), float(self.config.alpha_c), ph, new_nonda, self.rng)

    def record(self, log_joint) -> TraceRecord:
        st = self.state
        ph = self.cluster_nonda()
        tn = self.taxon_nonda(ph)
        return TraceRecord(
            iteration=self.iteration, C=st.C, log_joint=log_joint, sigma_e2=st.sigma_e2,
            tau2=st.tau2, tau_lambda2=st.tau_lambda2, ars_evals=int(self.stats[0]),
            ars_rejections=int(self.stats[1]), c=st.c.copy(), taxon_nonda=tn,
            cluster_nonda=ph, status=st.status())


def run_chain(design: Design, config: FitConfig, rng, writer=None, progress=None,
              progress_every=100) -> Trace:
    """Run one chain.  Stored records go to ``writer`` (if given) and the
    returned Trace."""
    sampler = Sampler(design, config, rng)
    if config.debug:
        sampler.check()
    trace = Trace(p=design.p)
    for it in range(1, config.iterations + 1):
        try:
            sampler.step()
            lj = joint_log_density(sampler.state, design, config)
        except (K.ARSError, ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
            raise InvariantError(f"iteration {it}: {type(e).__name__}: {e}") from e
        if not np.isfinite(lj):
            raise InvariantError(f"iteration {it}: non-finite log joint")
        trace.log_joint_history.append(lj)
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            rec = sampler.record(lj)
            trace.records.append(rec)
            if writer is not None:
                writer.append(rec)
        if progress is not None and (it % progress_every == 0 or it == config.iterations):
            progress(it, sampler.state.C, lj)
    if config.debug:
        sampler.check()
        trace.meta["max_constraint_residual"] = sampler.max_residual
    return trace


def chain_seeds(seed, chains) -> list:
    """Per-chain generators from a fixed splitting of the root seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(chains)]


def _chain_job(args):
    design, config, idx = args
    rng = chain_seeds(config.seed, config.chains)[idx]
    return run_chain(design, config, rng)


def worker_count(tasks) -> int:
    env = os.environ.get("ZIBNP_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"ZIBNP_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, tasks))


def run_chains(design: Design, config: FitConfig, progress=None) -> list:
    """Run ``config.chains`` independent chains, in parallel when allowed.

    Chain ``k`` always uses the ``k``-th spawned seed, so results do not
    depend on the worker count.
    """
    workers = worker_count(config.chains)
    if workers == 1 or config.chains == 1:
        rngs = chain_seeds(config.seed, config.chains)
        return [run_chain(design, config, r, progress=progress if k == 0 else None)
                for k, r in enumerate(rngs)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_chain_job, [(design, config, k) for k in range(config.chains)]))
