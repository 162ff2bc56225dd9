import numpy as np
import pytest
from scipy import stats

from zibnp.engine import Sampler
from zibnp.model import Design, FitConfig, check_invariants
from zibnp.simulate import SimConfig, simulate
from zibnp.splitmerge import SplitMerge, _light_copy


@pytest.fixture(scope="module")
def one_cluster():
    ds = simulate(SimConfig(n=20, p=25, C_range=(2, 2), seed=2))
    d = ds.data
    return Design.from_arrays(d.Z, d.groups, d.X)


def test_resplit_keeps_row_totals_and_scores_multinomial(one_cluster):
    s = Sampler(one_cluster, FitConfig(seed=1), np.random.default_rng(1))
    st = _light_copy(s.state)
    sm = s.splitmerge
    taxa = np.arange(1, one_cluster.p)
    before = (st.Zt[:, taxa] * (st.delta[:, taxa] == 0)).sum(axis=1)
    obs = st.Zt[:, taxa][st.delta[:, taxa] == 1].copy()
    lp = sm._resplit(st, taxa, np.random.default_rng(5))
    after = (st.Zt[:, taxa] * (st.delta[:, taxa] == 0)).sum(axis=1)
    np.testing.assert_array_equal(before, after)
    np.testing.assert_array_equal(st.Zt[:, taxa][st.delta[:, taxa] == 1], obs)
    # the returned log probability is the multinomial pmf, row by row
    ref = 0.0
    for i in range(one_cluster.n):
        cens = st.delta[i, taxa] == 0
        if not cens.any():
            continue
        w = np.exp(st.eta[i, st.c[taxa[cens]]])
        ref += stats.multinomial.logpmf(st.Zt[i, taxa[cens]], before[i], w / w.sum())
    assert lp == pytest.approx(ref, rel=1e-10, abs=1e-8)
    assert sm._resplit(st, taxa) == pytest.approx(lp, rel=1e-9)


def test_side_weights_follow_profiles(one_cluster):
    sm = SplitMerge(one_cluster, 1.0)
    S = np.arange(3, 10)
    w = sm.side_weights(S, 1, 2)
    assert w.shape == S.shape and np.all((w >= 0.01) & (w <= 0.99))
    # a taxon identical to b's profile leans towards b
    assert sm.side_weights(np.array([2]), 1, 2)[0] >= 0.5
    assert sm.side_weights(np.array([1]), 1, 2)[0] <= 0.5


def test_moves_keep_invariants_and_merge_identical_clusters(one_cluster):
    s = Sampler(one_cluster, FitConfig(seed=2), np.random.default_rng(2))
    C0 = s.state.C
    for _ in range(100):
        s.step()
        check_invariants(s.state, one_cluster)
    assert s.splitmerge.accepted[1] >= 1
    assert s.state.C < C0


def test_disabled_moves_change_nothing(one_cluster):
    rng = np.random.default_rng(3)
    s = Sampler(one_cluster, FitConfig(seed=3, split_merge=0), rng)
    st = s.state
    assert s.splitmerge.sweep(st, rng) is st


def test_rejected_proposal_leaves_state_untouched(one_cluster):
    s = Sampler(one_cluster, FitConfig(seed=4), np.random.default_rng(4))
    st = s.state
    snap = {k: np.copy(getattr(st, k)) for k in ("c", "m", "eta", "v", "Zt", "Y", "lam", "s")}
    rng = np.random.default_rng(0)
    for _ in range(20):
        out = s.splitmerge.attempt(st, rng)
        if out is st:
            for k, val in snap.items():
                np.testing.assert_array_equal(getattr(st, k), val)
        else:
            check_invariants(out, one_cluster)
