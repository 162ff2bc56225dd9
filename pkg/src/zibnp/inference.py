"""Posterior DA probabilities, the Bayesian FDR calling rule and DA reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import regression


class InferenceError(ValueError):
    pass


@dataclass
class DAResult:
    taxa: list                       # names, in report order
    prob_da: np.ndarray              # NaN for forced taxa
    called: np.ndarray               # bool
    source: list                     # "model" or "forced"
    kappa: float
    nominal_fdr: float
    achieved: float = 0.0            # posterior expected FDR of the model calls
    meta: dict = field(default_factory=dict)

    @property
    def called_names(self) -> list:
        return [t for t, c in zip(self.taxa, self.called) if c]

    def summary(self) -> dict:
        return {
            "kappa": self.kappa,
            "nominal_fdr": self.nominal_fdr,
            "expected_fdr": self.achieved,
            "n_taxa": len(self.taxa),
            "n_called": int(np.sum(self.called)),
            "n_called_model": int(sum(c and s == "model" for c, s in zip(self.called, self.source))),
            "n_forced": int(sum(s == "forced" for s in self.source)),
            **self.meta,
        }


def per_iter_cluster_nonda(P) -> np.ndarray:
    """P*[h_u = 1] from the (K, C, M) membership probabilities."""
    return regression.cluster_nonda_probs(np.asarray(P, dtype=float))


def per_iter_taxon_nonda(alloc_probs, cluster_probs) -> np.ndarray:
    """P*[h~_j = 1] = sum_u P*[h_u = 1] P*[c_j = u] for a (p, C) allocation
    probability matrix; row 0 is the reference and gets 1."""
    A = np.asarray(alloc_probs, dtype=float)
    out = A @ np.asarray(cluster_probs, dtype=float)
    out[0] = 1.0
    return np.clip(out, 0.0, 1.0)


def posterior_da_probability(trace_or_matrix) -> np.ndarray:
    """1 - (stored-draw average of the per-iteration taxon non-DA probability)."""
    if hasattr(trace_or_matrix, "records"):
        if len(trace_or_matrix) == 0:
            raise InferenceError("trace has no stored iterations")
        mat = trace_or_matrix.taxon_nonda()
    else:
        mat = np.atleast_2d(np.asarray(trace_or_matrix, dtype=float))
        if mat.size == 0:
            raise InferenceError("no stored iterations")
    return np.clip(1.0 - mat.mean(axis=0), 0.0, 1.0)


def pooled_da_probability(traces) -> np.ndarray:
    mats = [t.taxon_nonda() for t in traces if len(t)]
    if not mats:
        raise InferenceError("no stored iterations")
    return posterior_da_probability(np.vstack(mats))


def bayesian_fdr_threshold(prob_da, nominal):
    """Direct posterior probability rule.

    Returns ``(kappa, called_mask, expected_fdr)``: the largest set of
    top-ranked taxa whose mean posterior non-DA probability is at most
    ``nominal``; tied probabilities enter or leave together.
    """
    if not 0.0 < nominal < 1.0:
        raise InferenceError("nominal FDR must lie in (0, 1)")
    p = np.asarray(prob_da, dtype=float)
    called = np.zeros(p.shape, dtype=bool)
    ok = ~np.isnan(p)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return 1.0, called, 0.0
    order = idx[np.argsort(-p[idx], kind="stable")]
    ps = p[order]
    cum = np.cumsum(1.0 - ps)
    k = np.arange(1, ps.size + 1)
    # only prefixes ending at a tie-block boundary are admissible
    boundary = np.append(ps[1:] != ps[:-1], True)
    good = (cum / k <= nominal + 1e-12) & boundary
    if not good.any():
        return 1.0, called, 0.0
    last = int(np.flatnonzero(good).max())
    called[order[: last + 1]] = True
    return float(ps[last]), called, float(cum[last] / (last + 1))


def make_result(taxa, prob_da, nominal, forced=()) -> DAResult:
    """Combine model probabilities for ``taxa`` with forced-DA taxa (appended,
    unless already present)."""
    taxa = list(taxa)
    prob = np.asarray(prob_da, dtype=float)
    kappa, called, achieved = bayesian_fdr_threshold(prob, nominal)
    source = ["model"] * len(taxa)
    forced = [f for f in forced]
    for f in forced:
        if f in taxa:
            j = taxa.index(f)
            prob[j] = np.nan
            called[j] = True
            source[j] = "forced"
        else:
            taxa.append(f)
            prob = np.append(prob, np.nan)
            called = np.append(called, True)
            source.append("forced")
    return DAResult(taxa=taxa, prob_da=prob, called=called, source=source, kappa=kappa,
                    nominal_fdr=nominal, achieved=achieved)


def write_da_report(result: DAResult, path, summary_path=None):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["taxon", "prob_da", "called", "source"])
            for t, pr, c, s in zip(result.taxa, result.prob_da, result.called, result.source):
                w.writerow([t, "NA" if np.isnan(pr) else repr(float(pr)), int(c), s])
        if summary_path is not None:
            with open(summary_path, "w") as fh:
                json.dump(result.summary(), fh, indent=1, sort_keys=True)
                fh.write("\n")
    except OSError as e:
        raise OSError(f"cannot write DA report to {e.filename}: {e.strerror}") from e


def read_da_report(path, summary_path=None) -> DAResult:
    taxa, prob, called, source = [], [], [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh, delimiter="\t")
        header = next(rows, None)
        if header is None or [h.lower() for h in header[:2]] != ["taxon", "prob_da"]:
            raise InferenceError(f"{path}: expected columns taxon, prob_da, called, source")
        for row in rows:
            if not row:
                continue
            taxa.append(row[0])
            prob.append(math.nan if row[1] in ("NA", "") else float(row[1]))
            called.append(bool(int(row[2])) if len(row) > 2 else False)
            source.append(row[3] if len(row) > 3 else "model")
    meta = {}
    kappa, nominal, achieved = math.nan, math.nan, math.nan
    if summary_path is not None:
        with open(summary_path) as fh:
            meta = json.load(fh)
        kappa = meta.get("kappa", math.nan)
        nominal = meta.get("nominal_fdr", math.nan)
        achieved = meta.get("expected_fdr", math.nan)
    return DAResult(taxa=taxa, prob_da=np.array(prob), called=np.array(called, dtype=bool),
                    source=source, kappa=kappa, nominal_fdr=nominal, achieved=achieved)
