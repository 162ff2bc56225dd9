"""Sampler configuration, design context and the full MCMC state."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import AbundanceData


class ConfigError(ValueError):
    pass


class InvariantError(RuntimeError):
    pass


@dataclass
class FitConfig:
    iterations: int = 4000
    burn_in: int = 2000
    thin: int = 2
    seed: int = 0
    chains: int = 1
    reference_mode: str = "augment"     # or "min_variance"
    alpha_c: float = 1.0
    M: int = 7
    alpha_0: float = 1.0
    a_tau: float = 2.0
    b_tau: float = 2.0
    a_e: float = 2.0
    b_e: float = 0.05
    a_lambda: float = 2.0
    b_lambda: float = 1.0
    init_clusters: int | None = None    # None: max(ceil(alpha_c log p), ceil(sqrt p))
    max_zero_frac: float | None = 0.9
    split_merge: int = 5                # split-merge proposals per iteration
    debug: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need 0 <= burn_in < iterations")
        if self.reference_mode not in ("augment", "min_variance"):
            raise ConfigError(f"unknown reference_mode {self.reference_mode!r}")
        if self.split_merge < 0:
            raise ConfigError("split_merge must be >= 0")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        for name in ("alpha_c", "alpha_0", "a_tau", "b_tau", "a_e", "b_e",
                     "a_lambda", "b_lambda"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Design:
    """Fixed quantities derived from the preprocessed data."""
    Z: np.ndarray          # (n, p) int64, column 0 is the reference
    L: np.ndarray          # (n,) observed depths
    groups: np.ndarray     # (n,) 0-based
    K: int
    Xdag: np.ndarray       # (n, T+1)
    zfeat: np.ndarray      # (n, T+2) zero-model predictors [1, x, log L]
    znorm2: np.ndarray     # (n,) squared norms of zfeat rows
    S: np.ndarray          # Xdag' Xdag
    S_inv: np.ndarray
    G: np.ndarray          # (K, T+1, T+1) per-group Xdag' Xdag

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def p(self):
        return self.Z.shape[1]

    @property
    def Tp1(self):
        return self.Xdag.shape[1]

    @classmethod
    def from_arrays(cls, Z, groups, X, K=None) -> "Design":
        Z = np.ascontiguousarray(Z, dtype=np.int64)
        L = Z.sum(axis=1)
        if np.any(L <= 0):
            raise ConfigError("every sample needs a positive depth")
        g = np.asarray(groups, dtype=np.int64) - 1
        K = int(g.max()) + 1 if K is None else K
        X = np.asarray(X, dtype=float).reshape(Z.shape[0], -1)
        Xdag = np.column_stack([np.ones(Z.shape[0]), X])
        zfeat = np.column_stack([Xdag, np.log(L)])
        S = Xdag.T @ Xdag
        G = np.stack([Xdag[g == k].T @ Xdag[g == k] for k in range(K)])
        return cls(Z=Z, L=L, groups=g, K=K, Xdag=Xdag, zfeat=np.ascontiguousarray(zfeat),
                   znorm2=(zfeat ** 2).sum(axis=1), S=S, S_inv=np.linalg.inv(S), G=G)

    @classmethod
    def from_data(cls, data: AbundanceData) -> "Design":
        if data.reference_index != 0:
            raise ConfigError("reference taxon must sit in column 0")
        return cls.from_arrays(data.Z, data.groups, data.X, K=data.K)


@dataclass
class ModelState:
    """Complete sampler state.  Cluster-indexed arrays have capacity p;
    only the first ``C`` columns are live."""
    c: np.ndarray            # (p,) allocations, c[0] == 0
    C: int
    m: np.ndarray            # (cap,) sizes
    eta: np.ndarray          # (n, cap) log ratios, eta[:, 0] == 0
    v: np.ndarray            # (K, cap) memberships in 0..M-1 (column 0 unused)
    mu: np.ndarray           # (M, T+1)
    pi: np.ndarray           # (M,)
    tau2: float
    sigma_e2: float
    lam: np.ndarray          # (cap, n, T+2)
    s: np.ndarray            # (n, cap) zero-model linear predictors
    tau_lambda2: float
    delta: np.ndarray        # (n, p) int8 censoring indicators (1 = observed)
    Zt: np.ndarray           # (n, p) latent counts
    S_lat: np.ndarray        # (n,) latent depths
    Y: np.ndarray            # (n, cap) cluster-aggregated latent counts

    def copy(self) -> "ModelState":
        kw = {}
        for f in fields(self):
            val = getattr(self, f.name)
            kw[f.name] = val.copy() if isinstance(val, np.ndarray) else val
        return ModelState(**kw)

    @property
    def Ltilde(self) -> np.ndarray:
        return self.Zt.sum(axis=1)

    def qstar(self) -> np.ndarray:
        """(n, C) motif matrix implied by eta and the cluster sizes."""
        from .composition import qstar_matrix
        return qstar_matrix(self.eta[:, :self.C], self.m[:self.C])

    def rstar(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.s[:, :self.C]))

    def beta(self) -> np.ndarray:
        """(K, C, T+1) regression vectors; reference slot is zero."""
        b = self.mu[self.v[:, :self.C]]
        b[:, 0] = 0.0
        return b

    def status(self) -> np.ndarray:
        from .regression import cluster_status_vector
        return cluster_status_vector(self.v[:, :self.C])


def check_invariants(state: ModelState, design: Design, tol=1e-10):
    """Raise ``InvariantError`` naming the first violated invariant."""
    C, p = state.C, design.p
    c, m = state.c, state.m

    def fail(name):
        raise InvariantError(name)

    if c[0] != 0 or m[0] != 1 or np.any(c[1:] == 0):
        fail("reference pinned singleton")
    if c.max() != C - 1 or np.any(np.bincount(c, minlength=C)[:C] != m[:C]):
        fail("cluster sizes match allocations")
    if m[:C].sum() != p or np.any(m[:C] < 1):
        fail("partition sizes")
    if np.any(state.eta[:, 0] != 0):
        fail("reference log ratio is zero")
    q = state.qstar()
    resid = np.abs((q * m[:C]).sum(axis=1) - 1.0).max()
    if resid > tol:
        fail(f"row-stochastic constraint (residual {resid:.3g})")
    if np.any(q <= 0):
        fail("positive motifs")
    pos = design.Z > 0
    if np.any(state.delta[pos] != 1):
        fail("delta = 1 on positive counts")
    if np.any(state.Zt[state.delta == 1] != design.Z[state.delta == 1]):
        fail("latent counts equal observed counts when uncensored")
    if np.any(state.Zt.sum(axis=1) != design.L + state.S_lat):
        fail("depth accounting")
    Y = np.zeros((design.n, C), dtype=np.int64)
    for u in range(C):
        Y[:, u] = state.Zt[:, c == u].sum(axis=1)
    if np.any(Y != state.Y[:, :C]):
        fail("cluster aggregates consistent")
    if abs(state.pi.sum() - 1.0) > 1e-9 or np.any(state.pi < 0):
        fail("mixture weights on the simplex")
    return resid
