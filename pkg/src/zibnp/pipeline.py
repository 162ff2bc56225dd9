"""End-to-end fitting: preprocessing, chains, trace output."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .data import (REFERENCE_NAME, AbundanceData, DataError, augment_reference, filter_rare, move_to_front,
                   screen_biological_zeros, select_reference_min_variance, subset_taxa)
from .engine import run_chains
from .inference import make_result, pooled_da_probability
from .model import Design, FitConfig
from .trace import Trace, write_trace, write_trace_csv

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    data: AbundanceData              # reference in column 0
    forced_da: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    filtered: list = field(default_factory=list)
    screen_rows: list = field(default_factory=list)


def prepare(data: AbundanceData, config: FitConfig) -> Prepared:
    """Screen biological zeros, drop rare taxa and put the reference first.

    Taxa absent from a whole group are forced DA and left out of the fit.
    """
    if data.augmented:
        body = subset_taxa(data, range(1, data.p))
        body = AbundanceData(Z=body.Z, groups=data.groups, X=data.X,
                             taxon_names=body.taxon_names, sample_ids=data.sample_ids,
                             covariate_names=data.covariate_names,
                             group_labels=data.group_labels)
    else:
        body = data
    names = list(body.taxon_names)
    rep = screen_biological_zeros(body) if body.K >= 2 else None
    forced = [names[j] for j in rep.forced_da] if rep else []
    dropped = [names[j] for j in rep.dropped] if rep else []
    keep = rep.retained if rep else list(range(body.p))
    body = subset_taxa(body, keep)
    filtered = []
    if config.max_zero_frac is not None and body.p:
        rare = set(filter_rare(body, config.max_zero_frac))
        filtered = [body.taxon_names[j] for j in sorted(rare)]
        body = subset_taxa(body, [j for j in range(body.p) if j not in rare])
    if body.p == 0:
        raise DataError("no taxa left after screening and filtering")
    if np.any(body.L <= 0):
        bad = body.sample_ids[int(np.argmax(body.L <= 0))] if body.sample_ids else "?"
        raise DataError(f"sample {bad!r} has no reads after filtering")
    if config.reference_mode == "augment":
        fitted = augment_reference(body)
    else:
        j = select_reference_min_variance(body)
        fitted = move_to_front(body, j)
    rows = ([(n, "forced_da") for n in forced] + [(n, "dropped_all_zero") for n in dropped]
            + [(n, "filtered_rare") for n in filtered])
    rows += [(n, "reference" if i == 0 else "fitted") for i, n in enumerate(fitted.taxon_names)]
    return Prepared(data=fitted, forced_da=forced, dropped=dropped, filtered=filtered,
                    screen_rows=rows)


def trace_paths(outdir, chains) -> list:
    if chains == 1:
        return [os.path.join(outdir, "trace.zbt")]
    return [os.path.join(outdir, f"trace.chain{k + 1}.zbt") for k in range(chains)]


def fit(data: AbundanceData, config: FitConfig, outdir=None, trace_csv=False, progress=None):
    """Fit the model; returns (prepared, traces, DA probabilities per fitted taxon).

    When ``outdir`` is given, traces (with JSON sidecars) are written there.
    """
    prep = prepare(data, config)
    design = Design.from_data(prep.data)
    traces = run_chains(design, config, progress=progress)
    meta = {
        "version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "taxa": list(prep.data.taxon_names),
        "reference": prep.data.taxon_names[0],
        "forced_da": prep.forced_da,
        "dropped": prep.dropped,
        "filtered": prep.filtered,
    }
    for k, tr in enumerate(traces):
        tr.meta = dict(tr.meta, **meta, chain=k + 1, chains=config.chains)
    if outdir is not None:
        for tr, path in zip(traces, trace_paths(outdir, config.chains)):
            write_trace(tr, path)
            if trace_csv:
                write_trace_csv(tr, path[:-4] + ".csv")
    return prep, traces, pooled_da_probability(traces)


def call_from_traces(traces: list[Trace], nominal):
    """DA report for the non-reference fitted taxa plus forced-DA taxa."""
    meta = traces[0].meta
    for t in traces[1:]:
        if t.meta.get("taxa") != meta.get("taxa"):
            raise DataError("traces were fitted on different taxa")
    taxa = meta.get("taxa") or [f"taxon_{j}" for j in range(traces[0].p)]
    prob = pooled_da_probability(traces)
    ref = meta.get("reference", taxa[0])
    # the artificial reference is not a real taxon; a chosen real reference
    # stays in the report with probability 0
    start = 1 if ref == REFERENCE_NAME else 0
    names, probs = list(taxa[start:]), prob[start:]
    res = make_result(names, probs, nominal, forced=meta.get("forced_da", []))
    res.meta = {"config_digest": meta.get("config_digest"), "seed": meta.get("seed"),
                "chains": len(traces), "stored_draws": int(sum(len(t) for t in traces)),
                "reference": ref}
    return res

