import numpy as np
import pytest
from scipy.spatial.distance import squareform

from zibnp.engine import (Sampler, chain_seeds, default_init_clusters, initial_allocation,
                          initialize, joint_log_density, positive_log_distance, run_chain,
                          run_chains, worker_count)
from zibnp.model import ConfigError, Design, FitConfig, InvariantError, check_invariants
from zibnp.simulate import SimConfig, simulate


def test_initial_state_is_valid(tiny_design):
    st = initialize(tiny_design, FitConfig(seed=0), np.random.default_rng(0))
    check_invariants(st, tiny_design)
    assert np.all(st.delta[tiny_design.Z > 0] == 1)
    assert st.sigma_e2 == 0.1 and np.all(st.lam == 0)
    assert st.tau2 == pytest.approx(2.0) and st.tau_lambda2 == pytest.approx(1.0)
    assert np.isfinite(joint_log_density(st, tiny_design, FitConfig()))


def test_duplicate_columns_cluster_together(rng):
    Z = rng.poisson(50, size=(12, 9))
    Z[:, 0] = 1
    Z[:, 5] = Z[:, 2]
    Z[:, 7] = Z[:, 2]
    c = initial_allocation(Z, Z.sum(axis=1), 4)
    assert c[0] == 0 and c[2] == c[5] == c[7]
    assert set(c[1:]) == set(range(1, c.max() + 1))


def test_distance_skips_zeros():
    Z = np.array([[10, 10, 0], [20, 0, 20], [5, 5, 5]])
    D = squareform(positive_log_distance(Z, Z.sum(axis=1).astype(float)))
    assert D[0, 1] == pytest.approx(0.0) and D[0, 2] == pytest.approx(0.0)
    assert np.all(np.isfinite(D))


def test_two_taxa_forces_two_clusters():
    Z = np.column_stack([np.ones(6, int), np.arange(3, 9)])
    ds = Design.from_arrays(Z, [1, 1, 1, 2, 2, 2], np.zeros((6, 0)))
    st = initialize(ds, FitConfig(seed=1), np.random.default_rng(1))
    assert st.C == 2 and st.c.tolist() == [0, 1]
    tr = run_chain(ds, FitConfig(iterations=20, burn_in=10, thin=1, seed=1),
                   np.random.default_rng(1))
    assert all(r.C == 2 for r in tr.records)


def test_default_cluster_count():
    assert default_init_clusters(1002, 1.0) == 32
    assert default_init_clusters(8, 1.0) == 3


@pytest.mark.parametrize("groups,p,err", [([1, 1, 2, 2], 1, "taxon"),
                                          ([1, 2, 2, 2], 3, "group 1")])
def test_bad_designs(groups, p, err):
    Z = np.ones((4, p), dtype=int) * 5
    ds = Design.from_arrays(Z, groups, np.zeros((4, 0)))
    with pytest.raises(ConfigError, match=err):
        initialize(ds, FitConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ConfigError):
        FitConfig(iterations=10, burn_in=10)
    with pytest.raises(ConfigError):
        FitConfig(thin=0)
    with pytest.raises(ConfigError):
        FitConfig(chains=0)
    assert FitConfig(iterations=4000, burn_in=2000, thin=2).n_stored == 1000


def test_single_stored_record(tiny_design):
    cfg = FitConfig(iterations=6, burn_in=5, thin=1, seed=3)
    tr = run_chain(tiny_design, cfg, np.random.default_rng(3))
    assert len(tr) == 1 and tr.records[0].iteration == 6
    assert len(tr.log_joint_history) == 6


def test_stored_count_and_record_consistency(tiny_design, short_config):
    tr = run_chain(tiny_design, short_config, np.random.default_rng(0))
    assert len(tr) == short_config.n_stored == 10
    for r in tr.records:
        assert np.bincount(r.c).sum() == tiny_design.p and r.c.max() == r.C - 1
        assert r.cluster_nonda[0] == 1.0 and r.taxon_nonda[0] == 1.0
        assert np.all((r.taxon_nonda >= 0) & (r.taxon_nonda <= 1))
    assert np.all(np.isfinite(tr.log_joint_history))


def test_bit_identical_runs(tiny_design, short_config):
    a = run_chains(tiny_design, short_config)[0]
    b = run_chains(tiny_design, short_config)[0]
    assert [r.pack() for r in a.records] == [r.pack() for r in b.records]
    assert a.log_joint_history == b.log_joint_history


def test_chain_seeds_fixed_split():
    a = [g.integers(1 << 30) for g in chain_seeds(7, 3)]
    b = [g.integers(1 << 30) for g in chain_seeds(7, 3)]
    assert a == b and len(set(a)) == 3


def test_worker_count(monkeypatch):
    monkeypatch.setenv("ZIBNP_THREADS", "3")
    assert worker_count(2) == 2 and worker_count(8) == 3
    monkeypatch.setenv("ZIBNP_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count(2)


def test_parallel_chains_match_sequential(tiny_design, monkeypatch):
    cfg = FitConfig(iterations=8, burn_in=4, thin=2, seed=5, chains=2)
    monkeypatch.setenv("ZIBNP_THREADS", "1")
    seq = run_chains(tiny_design, cfg)
    monkeypatch.setenv("ZIBNP_THREADS", "2")
    par = run_chains(tiny_design, cfg)
    for a, b in zip(seq, par):
        assert [r.pack() for r in a.records] == [r.pack() for r in b.records]
    assert [r.pack() for r in seq[0].records] != [r.pack() for r in seq[1].records]


def test_density_prefers_matching_counts(tiny_design):
    cfg = FitConfig()
    st = initialize(tiny_design, cfg, np.random.default_rng(6))
    from zibnp import zeros
    q = st.qstar()[:, st.c]
    Lt = st.Zt.sum(axis=1)
    st.Zt = np.floor(q * Lt[:, None]).astype(np.int64)
    zeros.refresh_aggregates(st, tiny_design)
    good = joint_log_density(st, tiny_design, cfg)
    # move half of every row's reads from the largest to the smallest non-reference taxon
    j_big, j_small = np.argmax(st.Zt[:, 1:], axis=1) + 1, np.argmin(st.Zt[:, 1:], axis=1) + 1
    for i in range(st.Zt.shape[0]):
        h = st.Zt[i, j_big[i]] // 2
        st.Zt[i, j_big[i]] -= h
        st.Zt[i, j_small[i]] += h
    zeros.refresh_aggregates(st, tiny_design)
    assert joint_log_density(st, tiny_design, cfg) < good


def test_invariant_failure_names_iteration(tiny_design):
    s = Sampler(tiny_design, FitConfig(seed=0, debug=True), np.random.default_rng(0))
    s.step()
    s.state.m[1] += 1
    with pytest.raises(InvariantError, match="iteration 1"):
        s.check()


def test_single_cluster_data_gives_few_clusters():
    ds = simulate(SimConfig(n=20, p=25, C_range=(2, 2), seed=2))
    d = ds.data
    design = Design.from_arrays(d.Z, d.groups, d.X)
    cfg = FitConfig(iterations=300, burn_in=150, thin=5, seed=2)
    tr = run_chain(design, cfg, np.random.default_rng(2))
    C = tr.scalar("C")
    assert np.median(C) <= 4
