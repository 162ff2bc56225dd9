import numpy as np
from scipy import integrate

from zibnp import zeros
from zibnp.model import Design, ModelState


def toy_state(n=1, C=2, seed=0, X=None, groups=None, counts=(1, 40), M=2):
    """A small consistent state with one taxon per cluster (no group checks)."""
    rng = np.random.default_rng(seed)
    groups = np.asarray(groups if groups is not None else [1] * n)
    Z = np.column_stack([np.full(n, counts[0])] + [np.full(n, counts[1]) + rng.poisson(3, n)
                                                    for _ in range(C - 1)])
    X = np.zeros((n, 0)) if X is None else X
    ds = Design.from_arrays(Z, groups, X)
    p, Kg, Tp1 = ds.p, ds.K, ds.Tp1
    c = np.arange(p)
    m = np.zeros(p, dtype=np.int64)
    m[:C] = 1
    eta = np.zeros((n, p))
    eta[:, 1:C] = np.log(Z[:, 1:C] / Z[:, [0]])
    v = np.zeros((Kg, p), dtype=np.int64)
    v[:, 1:C] = rng.integers(0, M, size=(Kg, C - 1))
    st = ModelState(
        c=c, C=C, m=m, eta=eta, v=v, mu=rng.normal(0, 0.5, (M, Tp1)), pi=np.full(M, 1 / M),
        tau2=1.0, sigma_e2=0.5, lam=np.zeros((p, n, Tp1 + 1)), s=np.zeros((n, p)),
        tau_lambda2=1.0, delta=np.ones((n, p), dtype=np.int8), Zt=Z.copy(),
        S_lat=np.zeros(n, dtype=np.int64), Y=np.zeros((n, p), dtype=np.int64),
    )
    zeros.refresh_aggregates(st, ds)
    return st, ds


def quad_cdf(logf, lo, hi, grid=4001):
    xs = np.linspace(lo, hi, grid)
    lf = np.array([logf(x) for x in xs])
    f = np.exp(lf - lf.max())
    cdf = integrate.cumulative_trapezoid(f, xs, initial=0.0)
    return xs, cdf / cdf[-1], f / cdf[-1]


def set_partitions(n):
    """All restricted-growth label vectors of length n."""
    if n == 0:
        yield []
        return
    def rec(prefix, k):
        if len(prefix) == n:
            yield list(prefix)
            return
        for lab in range(k + 1):
            yield from rec(prefix + [lab], max(k, lab + 1))
    yield from rec([0], 1)
