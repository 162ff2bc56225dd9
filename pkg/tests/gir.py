"""Getting-it-right harness: prior draws, data generation and the two
simulation schemes (marginal-conditional and successive-conditional)."""
import numpy as np
from scipy.special import expit

from zibnp import regression
from zibnp.crp import sample_crp
from zibnp.engine import Sampler
from zibnp.model import Design, FitConfig, ModelState, check_invariants
from zibnp.splitmerge import SplitMerge


def _ig(a, b, rng):
    return b / rng.gamma(a)


def prior_state(X, groups, L, p, config: FitConfig, rng) -> ModelState:
    """Draw every parameter from the prior; data-dependent fields are left
    empty (see ``generate_data``)."""
    n = len(L)
    Xdag = np.column_stack([np.ones(n), X])
    Tp1 = Xdag.shape[1]
    Kg = int(groups.max())
    M = config.M
    c = np.zeros(p, dtype=np.int64)
    c[1:] = sample_crp(p - 1, config.alpha_c, rng) + 1
    C = int(c.max()) + 1
    m = np.zeros(p, dtype=np.int64)
    m[:C] = np.bincount(c, minlength=C)
    tau2 = _ig(config.a_tau, config.b_tau, rng)
    se2 = _ig(config.a_e, config.b_e, rng)
    tl2 = _ig(config.a_lambda, config.b_lambda, rng)
    pi = regression.dirichlet(np.full(M, config.alpha_0 / M), rng)
    S_inv = np.linalg.inv(Xdag.T @ Xdag)
    mu = rng.multivariate_normal(np.zeros(Tp1), tau2 * S_inv, size=M)
    v = np.zeros((Kg, p), dtype=np.int64)
    v[:, 1:C] = rng.choice(M, size=(Kg, C - 1), p=pi)
    mean = (Xdag @ mu.T)[np.arange(n)[:, None], v[groups - 1][:, 1:C]]
    eta = np.zeros((n, p))
    eta[:, 1:C] = mean + np.sqrt(se2) * rng.standard_normal(mean.shape)
    zfeat = np.column_stack([Xdag, np.log(L)])
    lam = np.zeros((p, n, Tp1 + 1))
    lam[:C] = np.sqrt(tl2) * rng.standard_normal((C, n, Tp1 + 1))
    s = np.zeros((n, p))
    s[:, :C] = np.einsum("it,uit->iu", zfeat, lam[:C])
    return ModelState(c=c, C=C, m=m, eta=eta, v=v, mu=mu, pi=pi, tau2=tau2, sigma_e2=se2,
                      lam=lam, s=s, tau_lambda2=tl2, delta=np.ones((n, p), dtype=np.int8),
                      Zt=np.zeros((n, p), dtype=np.int64), S_lat=np.zeros(n, dtype=np.int64),
                      Y=np.zeros((n, p), dtype=np.int64))


def generate_data(st: ModelState, X, groups, L, rng) -> Design:
    """Censoring indicators, observed counts and latent counts given the
    parameters.  Reads are drawn until ``L_i`` uncensored reads are seen,
    so the censored total is negative binomial."""
    n, p = st.Zt.shape
    q = st.qstar()[:, st.c]
    r = expit(st.s[:, st.c])
    delta = (rng.random((n, p)) >= r).astype(np.int8)
    delta[:, 0] = 1
    Z = np.zeros((n, p), dtype=np.int64)
    Zt = np.zeros((n, p), dtype=np.int64)
    for i in range(n):
        obs = delta[i] == 1
        qc = q[i, ~obs].sum()
        Z[i, obs] = rng.multinomial(L[i], q[i, obs] / q[i, obs].sum())
        S = rng.negative_binomial(L[i], 1.0 - qc) if qc > 0 else 0
        Zt[i] = Z[i]
        if S:
            Zt[i, ~obs] = rng.multinomial(S, q[i, ~obs] / qc)
        st.S_lat[i] = S
    st.delta[:] = delta
    st.Zt[:] = Zt
    design = Design.from_arrays(Z, groups, X, K=int(groups.max()))
    st.Y[:] = 0
    for u in range(st.C):
        st.Y[:, u] = Zt[:, st.c == u].sum(axis=1)
    return design


def statistics(st: ModelState, design: Design) -> np.ndarray:
    """(C, mean cluster non-DA probability over non-reference clusters)."""
    P = regression.membership_probs(st, design)
    ph = regression.cluster_nonda_probs(P)
    return np.array([st.C, ph[1:st.C].mean() if st.C > 1 else 1.0])


def toy_setup(n=6, p=8, T=1, depth=20, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    x0 = rng.normal(size=(half, T))
    X = np.vstack([x0, x0])
    groups = np.repeat([1, 2], half)
    L = np.full(n, depth, dtype=np.int64)
    return X, groups, L, p


def marginal_conditional(rounds, config, seed=1, **kw):
    X, groups, L, p = toy_setup(**kw)
    rng = np.random.default_rng(seed)
    out = np.empty((rounds, 2))
    for k in range(rounds):
        st = prior_state(X, groups, L, p, config, rng)
        ds = generate_data(st, X, groups, L, rng)
        out[k] = statistics(st, ds)
    return out


def successive_conditional(rounds, config, seed=2, residuals=None, check_every=100, **kw):
    X, groups, L, p = toy_setup(**kw)
    rng = np.random.default_rng(seed)
    st = prior_state(X, groups, L, p, config, rng)
    ds = generate_data(st, X, groups, L, rng)
    sampler = Sampler(ds, config, rng)
    sampler.state = st
    out = np.empty((rounds, 2))
    for k in range(rounds):
        ds = generate_data(sampler.state, X, groups, L, rng)
        sampler.design = ds
        sampler.splitmerge = SplitMerge(ds, config.alpha_c, config.split_merge)
        sampler.step()
        if residuals is not None and k % check_every == 0:
            residuals.append(check_invariants(sampler.state, ds))
        out[k] = statistics(sampler.state, ds)
    return out


def batch_se(x, batches=50):
    """Standard error of the mean of an autocorrelated series (batch means)."""
    b = np.array_split(np.asarray(x, dtype=float), batches)
    means = np.array([bb.mean() for bb in b])
    return means.std(ddof=1) / np.sqrt(batches)


def z_scores(mc, sc, batches=50):
    se_mc = mc.std(axis=0, ddof=1) / np.sqrt(len(mc))
    se_sc = np.array([batch_se(sc[:, j], batches) for j in range(sc.shape[1])])
    return (mc.mean(axis=0) - sc.mean(axis=0)) / np.sqrt(se_mc ** 2 + se_sc ** 2)
