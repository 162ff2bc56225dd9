import numpy as np
import pytest
from scipy import stats
from scipy.special import log_expit

from zibnp import _kernels as K
from zibnp import zeros
from zibnp.zeros import (ModelInconsistency, compute_rstar, impute_censored_counts,
                         nonbiological_zero_probability, sample_latent_depth,
                         technical_zero_probability, update_lambda, update_tau_lambda2)

from helpers import quad_cdf, toy_state


def test_rstar_examples():
    L = np.array([np.e ** 2, 5.0])
    assert compute_rstar(np.zeros((2, 3)), np.zeros((2, 1)), L) == pytest.approx([0.5, 0.5])
    lam = np.array([[1.0, 0.0, 0.5], [1.0, 0.0, 0.5]])
    assert compute_rstar(lam, np.zeros((2, 1)), L)[0] == pytest.approx(0.8808, abs=1e-4)
    lam0 = np.array([[-800.0, 0.0, 0.0]])
    assert compute_rstar(lam0, np.zeros((1, 1)), [10.0])[0] < 1e-300


def test_technical_probability_examples():
    L = 20
    q = 1 - 0.1 ** (1 / L)
    assert technical_zero_probability(0.2, q, L) == pytest.approx(0.2 / 0.28, abs=1e-12)
    assert technical_zero_probability(0.2, q, L) == pytest.approx(0.7143, abs=1e-4)
    assert technical_zero_probability(0.0, 0.3, 50) == 0.0
    assert technical_zero_probability(0.1, 1.0, 50) == 1.0
    assert technical_zero_probability(0.1, 1 - 1e-12, 50) == pytest.approx(1.0)


@pytest.mark.parametrize("r,q,L", [(0.2, 0.01, 30), (0.7, 0.2, 5), (0.05, 0.001, 1000)])
def test_nonbiological_identity(r, q, L):
    pt = technical_zero_probability(r, q, L)
    total = nonbiological_zero_probability(r, q, L)
    samp = (1 - r) * (1 - q) ** L
    assert total == pytest.approx(r + samp, rel=1e-12)
    assert pt == pytest.approx(r / total, rel=1e-12)


def test_censoring_respects_positive_counts(tiny_sim, tiny_design):
    from zibnp.engine import initialize
    from zibnp.model import FitConfig
    st = initialize(tiny_design, FitConfig(seed=1), np.random.default_rng(1))
    st.lam[:] = 3.0
    st.s[:] = 0.0
    for s in range(5):
        zeros.sample_censoring_indicators(st, tiny_design, np.random.default_rng(s))
        assert np.all(st.delta[tiny_design.Z > 0] == 1)
        assert np.all(st.delta[:, 0] == 1)


def test_censoring_frequency_single_zero():
    # one zero cell; q_eff = q when no other cell is censored
    Z = np.array([[5, 0, 7]])
    c = np.array([0, 1, 2])
    q = np.array([[0.5, 0.01, 0.49]])
    r = np.full((1, 3), 0.2)
    L = np.array([12.0])
    pt = technical_zero_probability(0.2, 0.01, 12)
    rng = np.random.default_rng(0)
    delta = np.ones((1, 3), dtype=np.int8)
    hits = 0
    N = 20_000
    for _ in range(N):
        delta[0, 1] = 1
        K.sample_censoring(Z, c, q, r, L, delta, rng)
        hits += delta[0, 1] == 0
    assert abs(hits / N - pt) < 4 * np.sqrt(pt * (1 - pt) / N)


def test_latent_depth_examples(rng):
    assert sample_latent_depth(100, 0.0, rng) == 0
    d = np.array([sample_latent_depth(1000, 0.2, rng) for _ in range(100_000)])
    assert d.mean() == pytest.approx(250.0, rel=0.01)
    g = np.array([sample_latent_depth(1, 0.5, rng) for _ in range(100_000)])
    assert (g == 0).mean() == pytest.approx(0.5, abs=0.01)
    # geometric mass 0.5^(s+1)
    assert (g == 2).mean() == pytest.approx(0.125, abs=0.005)
    with pytest.raises(ModelInconsistency):
        sample_latent_depth(10, 1.0, rng)


def test_censored_count_split(rng):
    assert impute_censored_counts(0, [0.3, 0.7], rng).tolist() == [0, 0]
    assert impute_censored_counts(17, [1.0], rng).tolist() == [17]
    tot = np.zeros(2)
    for _ in range(2000):
        tot += impute_censored_counts(50, [0.3, 0.1], rng)
    assert tot[0] / tot[1] == pytest.approx(3.0, rel=0.02)


def test_two_stage_moment_oracle():
    """E[S] = L q~/(1-q~) and E[Z~_j] = L q*_j/(1-q~) at L=1000, q~=0.2."""
    N = 100_000
    q_row = np.array([0.3, 0.5, 0.15, 0.05])
    Z = np.tile([300, 700, 0, 0], (N, 1)).astype(np.int64)
    q = np.tile(q_row, (N, 1))
    c = np.arange(4)
    delta = np.tile(np.array([1, 1, 0, 0], dtype=np.int8), (N, 1))
    L = np.full(N, 1000.0)
    Zt = np.zeros_like(Z)
    S = np.zeros(N, dtype=np.int64)
    K.impute_latent(Z, c, q, delta, L.astype(np.int64), Zt, S, np.random.default_rng(8))
    assert S.mean() == pytest.approx(250.0, rel=0.02)
    assert Zt[:, 2].mean() == pytest.approx(1000 * 0.15 / 0.8, rel=0.02)
    assert Zt[:, 3].mean() == pytest.approx(1000 * 0.05 / 0.8, rel=0.02)
    np.testing.assert_array_equal(Zt[:, :2], Z[:, :2])
    np.testing.assert_array_equal(Zt[:, 2:].sum(axis=1), S)


def test_depth_accounting(tiny_design):
    from zibnp.engine import initialize
    from zibnp.model import FitConfig
    st = initialize(tiny_design, FitConfig(seed=2), np.random.default_rng(2))
    for s in range(3):
        zeros.sample_censoring_indicators(st, tiny_design, np.random.default_rng(s))
        zeros.impute_latent(st, tiny_design, np.random.default_rng(s))
        np.testing.assert_array_equal(st.Zt.sum(axis=1), tiny_design.L + st.S_lat)
        np.testing.assert_array_equal(st.Zt[st.delta == 1], tiny_design.Z[st.delta == 1])
        np.testing.assert_array_equal(st.Y.sum(axis=1), st.Zt.sum(axis=1))


def _one_cell(n_zero):
    st, ds = toy_state(n=1, C=2)
    st.delta[0, 1] = 0 if n_zero else 1
    st.tau_lambda2 = 1.0
    return st, ds


def test_lambda_pulled_negative_without_zeros():
    st, ds = _one_cell(False)
    rng = np.random.default_rng(0)
    s = np.empty(20_000)
    for k in range(s.size):
        update_lambda(st, ds, rng)
        s[k] = st.s[0, 1]
    assert s.mean() < -0.1
    assert s.mean() + 4 * s.std() / np.sqrt(s.size) < 0


def test_lambda_single_cell_matches_grid():
    st, ds = _one_cell(True)
    v = st.tau_lambda2 * ds.znorm2[0]
    logf = lambda x: log_expit(x) - 0.5 * x * x / v  # noqa: E731
    grid = np.linspace(-12, 12, 240_001)
    lf = log_expit(grid) - 0.5 * grid ** 2 / v
    mode = grid[np.argmax(lf)]
    rng = np.random.default_rng(1)
    s = np.empty(40_000)
    for k in range(s.size):
        update_lambda(st, ds, rng)
        s[k] = st.s[0, 1]
    # compare smoothed modes: the exact density is smoothed with the same kernel
    kde = stats.gaussian_kde(s, bw_method=0.15)
    bw = np.sqrt(kde.covariance[0, 0])
    xs = np.linspace(mode - 3, mode + 3, 1201)
    dens = np.exp(lf - lf.max())
    smooth = [np.sum(dens * stats.norm.pdf(x, grid, bw)) for x in xs]
    assert xs[np.argmax(smooth)] == pytest.approx(mode, abs=0.05 + bw ** 2 / v)
    assert xs[np.argmax(kde(xs))] == pytest.approx(xs[np.argmax(smooth)], abs=0.05 * np.sqrt(v))
    xq, cdf, _ = quad_cdf(logf, -12, 12)
    ks = np.max(np.abs(np.searchsorted(np.sort(s), xq) / s.size - cdf))
    assert ks < 0.02
    # the recomputed linear predictor agrees with the stored effects
    assert st.s[0, 1] == pytest.approx(ds.zfeat[0] @ st.lam[1, 0], abs=1e-10)


def test_lambda_given_s_prior_consistency():
    # with no data the pair (s, lambda) is a draw from the prior
    st, ds = toy_state(n=1, C=1)
    st.tau_lambda2 = 2.0
    rng = np.random.default_rng(3)
    lam = np.array([update_lambda(st, ds, rng) is not None and st.lam[0, 0].copy()
                    for _ in range(20_000)])
    assert lam.var(axis=0) == pytest.approx(np.full(lam.shape[1], 2.0), rel=0.05)


def test_tau_lambda2_conjugate():
    st, ds = toy_state(n=3, C=2)
    st.lam[:] = 0.0
    shape = 2.0 + 3 * 2 * ds.zfeat.shape[1] / 2
    a = update_tau_lambda2(st, ds, 2.0, 1.0, np.random.default_rng(4))
    assert a == pytest.approx(1.0 / np.random.default_rng(4).gamma(shape), rel=1e-12)

