"""Synthetic datasets with known differential-abundance status."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .data import AbundanceData, write_counts, write_covariates
from .regression import cluster_status_vector, dirichlet

log = logging.getLogger(__name__)


@dataclass
class SimConfig:
    n: int = 100
    p: int = 1002            # includes the reference taxon
    K: int = 2
    n_binary: int = 3
    n_continuous: int = 1
    C_range: tuple = (8, 20)
    M_gen: int = 7
    tau2_gen: float = 1.0
    A: float = 200.0
    lambda0: float = -0.1
    depth_means: tuple = (10000.0, 100.0)
    r2: float = 0.99
    seed: int = 0

    def __post_init__(self):
        self.C_range = tuple(int(x) for x in self.C_range)
        self.depth_means = tuple(float(x) for x in self.depth_means)
        if self.n % 2 or self.n < 4:
            raise ValueError("n must be even and >= 4")
        if self.n // 2 <= self.T:
            raise ValueError("n/2 must exceed the number of covariates")
        if self.K != 2:
            raise ValueError("the generator duplicates covariates across exactly 2 groups")
        lo, hi = self.C_range
        if not 2 <= lo <= hi:
            raise ValueError("C_range must satisfy 2 <= lo <= hi")
        if self.p < hi + 1:
            raise ValueError("p must be >= C_max + 1")
        if not self.A > 0:
            raise ValueError("A must be positive")
        if self.M_gen < 1:
            raise ValueError("M_gen must be >= 1")
        if self.M_gen == 1:
            log.warning("M_gen=1: every cluster is non-DA")

    @property
    def T(self):
        return self.n_binary + self.n_continuous


@dataclass
class SimulatedDataset:
    data: AbundanceData                  # observed counts, reference column included
    truth: dict = field(default_factory=dict)


def generate_covariates(cfg: SimConfig, rng):
    half = cfg.n // 2
    probs = rng.uniform(0.2, 0.8, size=cfg.n_binary)
    # small n can give a rank-deficient design (e.g. a constant indicator); redraw
    for _ in range(1000):
        B = (rng.random((half, cfg.n_binary)) < probs).astype(float)
        Cc = rng.normal(25.0, 4.0, size=(half, cfg.n_continuous))
        Cc = (Cc - Cc.mean(axis=0)) / Cc.std(axis=0)
        X0 = np.column_stack([B, Cc])
        if np.linalg.matrix_rank(np.column_stack([np.ones(half), X0])) == cfg.T + 1:
            break
    else:
        raise ValueError("could not draw a full-rank covariate design; increase n")
    X = np.vstack([X0, X0])
    groups = np.repeat([1, 2], half)
    return X, groups


def random_partition(p_eff, C, rng) -> np.ndarray:
    """Uniform random composition of ``p_eff`` items into ``C`` nonempty parts,
    labels 0..C-1, item order shuffled."""
    if C > p_eff or C < 1:
        raise ValueError(f"cannot split {p_eff} items into {C} parts")
    cuts = np.sort(rng.choice(p_eff - 1, size=C - 1, replace=False)) + 1
    sizes = np.diff(np.concatenate([[0], cuts, [p_eff]]))
    labels = np.repeat(np.arange(C), sizes)
    return rng.permutation(labels)


def generate_truth_regression(cfg: SimConfig, C, X, rng):
    """Mixture atoms, memberships and cluster statuses for C clusters
    (cluster 0 is the reference)."""
    Xdag = np.column_stack([np.ones(len(X)), X])
    S_inv = np.linalg.inv(Xdag.T @ Xdag)
    chol = np.linalg.cholesky(cfg.tau2_gen * S_inv)
    mu = (chol @ rng.standard_normal((Xdag.shape[1], cfg.M_gen))).T
    pi = dirichlet(np.full(cfg.M_gen, 1.0 / cfg.M_gen), rng)
    v = np.zeros((cfg.K, C), dtype=np.int64)
    v[:, 1:] = rng.choice(cfg.M_gen, size=(cfg.K, C - 1), p=pi)
    h = cluster_status_vector(v)
    beta = mu[v]
    beta[:, 0] = 0.0
    return beta, v, h, mu, pi


def generate_eta_and_Q(cfg: SimConfig, X, groups, c, beta, h, rng):
    n = len(X)
    C = beta.shape[1]
    Xdag = np.column_stack([np.ones(n), X])
    lin = np.einsum("it,iut->iu", Xdag, beta[groups - 1])
    sig2 = np.var(lin[:, 1:]) * (1.0 / cfg.r2 - 1.0)
    eta = lin + np.sqrt(sig2) * rng.standard_normal((n, C))
    eta[:, 0] = 0.0
    m = np.bincount(c, minlength=C)
    rho1 = rng.beta(cfg.A / 2, cfg.A / 2, size=n)
    rho = np.column_stack([rho1, 1.0 - rho1])
    da = h == 2
    if not da.any():
        rho[:] = [1.0, 0.0]
    mass = np.column_stack([(m * np.exp(eta) * ~da).sum(axis=1),
                            (m * np.exp(eta) * da).sum(axis=1)])
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(mass > 0, rho / mass, 0.0)
    qstar = alpha[:, h - 1] * np.exp(eta)
    Q = qstar[:, c]
    return eta, qstar, Q, sig2


def generate_counts(cfg: SimConfig, X, Q, rng):
    n = Q.shape[0]
    a, b = cfg.depth_means
    Lt = rng.poisson(a, size=n) * rng.poisson(b, size=n)
    Lt = np.maximum(Lt, 1)
    Zt = np.vstack([rng.multinomial(Lt[i], Q[i] / Q[i].sum()) for i in range(n)])
    logit = cfg.lambda0 * (1.0 + X.sum(axis=1) + np.log(Lt))
    r = expit(logit)
    delta = (rng.random(Zt.shape) >= r[:, None]).astype(np.int8)
    delta[:, 0] = 1
    Z = Zt * delta
    Z[:, 0] = 1
    return Lt, Zt, delta, Z, r


def covariates_from_table(X0):
    """Stack user covariate rows (one per sample of group 1) for both groups;
    non-binary columns are standardized."""
    X0 = np.asarray(X0, dtype=float).copy()
    for t in range(X0.shape[1]):
        col = X0[:, t]
        if not set(np.unique(col)) <= {0.0, 1.0}:
            X0[:, t] = (col - col.mean()) / col.std()
    half = X0.shape[0]
    return np.vstack([X0, X0]), np.repeat([1, 2], half)


def simulate(cfg: SimConfig, covariates=None) -> SimulatedDataset:
    """Draw one dataset.  ``covariates`` optionally replaces the synthetic
    covariate rows (n/2 rows, duplicated across the two groups)."""
    rng = np.random.default_rng(cfg.seed)
    if covariates is None:
        X, groups = generate_covariates(cfg, rng)
        xnames = ([f"bin{t + 1}" for t in range(cfg.n_binary)]
                  + [f"cont{t + 1}" for t in range(cfg.n_continuous)])
    else:
        X, groups = covariates_from_table(covariates)
        xnames = [f"x{t + 1}" for t in range(X.shape[1])]
    lo, hi = cfg.C_range
    C = int(rng.integers(lo, hi + 1))
    c = np.zeros(cfg.p, dtype=np.int64)
    c[1:] = random_partition(cfg.p - 1, C - 1, rng) + 1
    beta, v, h, mu, pi = generate_truth_regression(cfg, C, X, rng)
    eta, qstar, Q, sig2 = generate_eta_and_Q(cfg, X, groups, c, beta, h, rng)
    Lt, Zt, delta, Z, r = generate_counts(cfg, X, Q, rng)
    width = len(str(cfg.p - 1))
    names = ("__reference__",) + tuple(f"taxon_{j:0{width}d}" for j in range(1, cfg.p))
    data = AbundanceData(
        Z=Z, groups=groups, X=X, taxon_names=names,
        sample_ids=tuple(f"s{i + 1:03d}" for i in range(len(X))),
        covariate_names=tuple(xnames),
        group_labels=("1", "2"), reference_index=0, augmented=True,
    )
    htilde = h[c]
    truth = dict(
        c=c, C=C, h=h, htilde=htilde, v=v, beta=beta, mu=mu, pi=pi, eta=eta,
        qstar=qstar, Q=Q, Zt=Zt, delta=delta, Ltilde=Lt, r=r, sigma_e2=sig2,
        lambda0=cfg.lambda0, seed=cfg.seed,
    )
    return SimulatedDataset(data=data, truth=truth)


def zero_fraction(ds: SimulatedDataset) -> float:
    """Fraction of zero cells among the written (non-reference) taxa."""
    return float((ds.data.Z[:, 1:] == 0).mean())


def truth_json(ds: SimulatedDataset, cfg: SimConfig) -> dict:
    t = ds.truth
    names = list(ds.data.taxon_names[1:])
    return {
        "taxa": names,
        "c": t["c"][1:].tolist(),
        "C": int(t["C"]),
        "h": t["h"].tolist(),
        "htilde": t["htilde"][1:].tolist(),
        "da_taxa": [nm for nm, s in zip(names, t["htilde"][1:]) if s == 2],
        "lambda0": cfg.lambda0,
        "seed": cfg.seed,
        "zero_fraction": zero_fraction(ds),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
    }


def write_dataset(ds: SimulatedDataset, cfg: SimConfig, outdir) -> dict:
    """Write counts.tsv, covariates.tsv and truth.json; the artificial
    reference column is left out (fitting re-adds it)."""
    os.makedirs(outdir, exist_ok=True)
    d = ds.data
    paths = {
        "counts": os.path.join(outdir, "counts.tsv"),
        "covariates": os.path.join(outdir, "covariates.tsv"),
        "truth": os.path.join(outdir, "truth.json"),
    }
    write_counts(paths["counts"], d.Z[:, 1:], d.sample_ids, d.taxon_names[1:])
    write_covariates(paths["covariates"], d.X, d.groups, d.sample_ids, d.covariate_names)
    with open(paths["truth"], "w") as fh:
        json.dump(truth_json(ds, cfg), fh, indent=1)
        fh.write("\n")
    return paths
