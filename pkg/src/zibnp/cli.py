"""Command-line entry point: ``zibnp simulate | fit | call | evaluate | rerun``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys

import numpy as np

from . import __version__
from .data import DataError, load_abundance
from .model import ConfigError, FitConfig, InvariantError

log = logging.getLogger("zibnp")

EXIT_INPUT, EXIT_CONFIG, EXIT_RUNTIME = 2, 3, 4

# flag name -> FitConfig field
FIT_FLAGS = {
    "iterations": "iterations", "burn_in": "burn_in", "thin": "thin", "seed": "seed",
    "chains": "chains", "reference_mode": "reference_mode", "alpha_c": "alpha_c", "M": "M",
    "alpha_0": "alpha_0", "max_zero_frac": "max_zero_frac", "init_clusters": "init_clusters",
    "split_merge": "split_merge", "debug": "debug",
}


class JsonFormatter(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "logger": record.name,
               "message": record.getMessage()}
        out.update(getattr(record, "fields", {}))
        return json.dumps(out, sort_keys=True)


def setup_logging(verbose=0, quiet=False, json_logs=False):
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("zibnp")
    root.handlers[:] = [handler]
    root.propagate = False
    level = logging.WARNING if quiet else (logging.DEBUG if verbose > 1 else logging.INFO)
    root.setLevel(level)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Outputs:
    """Tracks files written under the output directory so a failed run can
    remove them."""

    def __init__(self, outdir):
        self.outdir = outdir
        self.created_dir = not os.path.isdir(outdir)
        os.makedirs(outdir, exist_ok=True)
        self.before = set(os.listdir(outdir))

    def path(self, name):
        return os.path.join(self.outdir, name)

    def cleanup(self):
        if self.created_dir:
            shutil.rmtree(self.outdir, ignore_errors=True)
            return
        for name in set(os.listdir(self.outdir)) - self.before:
            p = os.path.join(self.outdir, name)
            if os.path.isdir(p):
                shutil.rmtree(p, ignore_errors=True)
            else:
                os.remove(p)


def write_manifest(out: Outputs, command, args: dict, inputs, config=None, seed=None):
    man = {
        "tool": "zibnp",
        "version": __version__,
        "command": command,
        "args": args,
        "config": config,
        "seed": seed,
        "inputs": {p: sha256(p) for p in inputs},
    }
    with open(out.path("manifest.json"), "w") as fh:
        json.dump(man, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return man


def _require(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")


def load_config_file(path) -> dict:
    if path is None:
        return {}
    _require(path, "config file")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d


def resolve_fit_config(args) -> FitConfig:
    """flag > config file > default."""
    d = load_config_file(args.config)
    for flag, key in FIT_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None and val is not False:
            d[key] = val
    try:
        return FitConfig.from_dict(d)
    except TypeError as e:
        raise ConfigError(str(e)) from None


# ------------------------------------------------------------------ commands

def cmd_simulate(args, out: Outputs):
    from .simulate import SimConfig, simulate, write_dataset, zero_fraction
    d = load_config_file(args.config)
    for key in ("n", "p", "A", "lambda0", "seed", "M_gen", "tau2_gen"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    try:
        base = SimConfig(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"simulation config: {e}") from None
    X0 = None
    inputs = []
    if args.covariates_file:
        _require(args.covariates_file, "covariates file")
        inputs.append(args.covariates_file)
        X0 = _read_sim_covariates(args.covariates_file, base.n)
    summary = []
    for r in range(args.replicates):
        seed = base.seed + r
        cfg = SimConfig(**{**base.__dict__, "seed": seed})
        ds = simulate(cfg, covariates=X0)
        sub = out.outdir if args.replicates == 1 else out.path(f"rep{r + 1:03d}")
        write_dataset(ds, cfg, sub)
        summary.append({"replicate": r + 1, "seed": seed, "dir": os.path.relpath(sub, out.outdir),
                        "zero_fraction": zero_fraction(ds), "C": int(ds.truth["C"])})
        log.info("replicate %d: seed %d, zero fraction %.3f", r + 1, seed, zero_fraction(ds))
    with open(out.path("simulation.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    cfgd = {k: (list(v) if isinstance(v, tuple) else v) for k, v in base.__dict__.items()}
    write_manifest(out, "simulate", vars_for_manifest(args), inputs, cfgd, base.seed)


def _read_sim_covariates(path, n):
    import pandas as pd
    sep = "," if path.lower().endswith(".csv") else "\t"
    df = pd.read_csv(path, sep=sep, index_col=0)
    try:
        X0 = df.to_numpy(dtype=float)
    except ValueError:
        raise DataError(f"{path}: covariates must be numeric") from None
    if X0.shape[0] != n // 2:
        raise DataError(f"{path}: expected {n // 2} rows (one per sample of group 1), "
                        f"got {X0.shape[0]}")
    return X0


def cmd_fit(args, out: Outputs):
    from .pipeline import fit
    config = resolve_fit_config(args)
    log.info("resolved config: %s", json.dumps(config.to_dict(), sort_keys=True))
    for p, what in ((args.counts, "counts file"), (args.covariates, "covariates file")):
        _require(p, what)
    data = load_abundance(args.counts, args.covariates, args.group, transpose=args.transpose)

    def progress(it, C, lj):
        log.info("iteration %d/%d  C=%d  log-joint=%.3f", it, config.iterations, C, lj,
                 extra={"fields": {"iteration": it, "C": C, "log_joint": lj}})

    prep, traces, _ = fit(data, config, outdir=out.outdir, trace_csv=args.trace_csv,
                          progress=progress)
    with open(out.path("screen_report.tsv"), "w") as fh:
        fh.write("taxon\tstatus\n")
        for name, status in prep.screen_rows:
            fh.write(f"{name}\t{status}\n")
    inputs = [args.counts, args.covariates] + ([args.config] if args.config else [])
    write_manifest(out, "fit", vars_for_manifest(args), inputs, config.to_dict(), config.seed)


def cmd_call(args, out: Outputs):
    from .inference import write_da_report
    from .pipeline import call_from_traces
    from .trace import TraceFormatError, read_trace
    if not 0 < args.nominal_fdr < 1:
        raise ConfigError("--nominal-fdr must lie in (0, 1)")
    traces = []
    for p in args.trace:
        _require(p, "trace file")
        try:
            traces.append(read_trace(p))
        except (TraceFormatError, OSError) as e:
            raise DataError(str(e)) from None
    res = call_from_traces(traces, args.nominal_fdr)
    write_da_report(res, out.path("da_report.tsv"), out.path("da_summary.json"))
    log.info("called %d taxa (kappa=%.4f)", int(res.called.sum()), res.kappa)
    write_manifest(out, "call", vars_for_manifest(args), list(args.trace),
                   {"nominal_fdr": args.nominal_fdr}, None)


def cmd_evaluate(args, out: Outputs):
    from .evaluation import benchmark_summary, evaluate_calls, write_metrics_csv, write_svg
    from .inference import read_da_report
    if len(args.truth) != len(args.result):
        raise ConfigError("--truth and --result must be given the same number of times")
    results, labels = [], []
    for k, (tp, rp) in enumerate(zip(args.truth, args.result)):
        _require(tp, "truth file")
        _require(rp, "result file")
        with open(tp) as fh:
            truth = json.load(fh)
        status = dict(zip(truth["taxa"], truth["htilde"]))
        rep = read_da_report(rp)
        names = [t for t in rep.taxa if t in status]
        if not names:
            raise DataError(f"{rp}: no taxa in common with {tp}")
        idx = {t: i for i, t in enumerate(rep.taxa)}
        score = np.array([rep.prob_da[idx[t]] for t in names])
        score = np.where(np.isnan(score), 1.0, score)       # forced DA rank first
        called = np.array([rep.called[idx[t]] for t in names])
        y = np.array([status[t] == 2 for t in names])
        results.append(evaluate_calls(score, called, y))
        labels.append(str(k + 1))
    write_metrics_csv(out.path("metrics.csv"), results, labels)
    summ = benchmark_summary(results)
    summ["interval"] = "percentile 2.5-97.5 across replicates"
    with open(out.path("summary.json"), "w") as fh:
        json.dump(summ, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if args.svg:
        write_svg(args.svg if os.path.isabs(args.svg) or os.path.dirname(args.svg)
                  else out.path(args.svg), results, labels)
    log.info("mean AUC %.3f over %d replicate(s)", summ["auc"]["mean"], len(results))
    write_manifest(out, "evaluate", vars_for_manifest(args),
                   list(args.truth) + list(args.result), None, None)


def cmd_rerun(args, out: Outputs):
    _require(args.manifest, "manifest")
    with open(args.manifest) as fh:
        man = json.load(fh)
    argv = man.get("args", {}).get("argv")
    if not argv:
        raise ConfigError(f"{args.manifest}: no recorded invocation")
    argv = [a for a in argv if not a.startswith("--out=")]
    if "--out" in argv:
        i = argv.index("--out")
        del argv[i:i + 2]
    argv += ["--out", out.outdir]
    for p, digest in man.get("inputs", {}).items():
        if os.path.exists(p) and sha256(p) != digest:
            log.warning("input %s changed since the recorded run", p)
    ns = build_parser().parse_args(argv)
    ns._argv = argv
    return ns.func(ns, out)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "call": cmd_call,
            "evaluate": cmd_evaluate, "rerun": cmd_rerun}


def vars_for_manifest(args) -> dict:
    return {"argv": list(args._argv)}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    common.add_argument("--json-logs", action="store_true", help="JSON lines on stderr")

    ap = argparse.ArgumentParser(prog="zibnp", description=__doc__)
    ap.add_argument("--version", action="version", version=f"zibnp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate synthetic datasets")
    s.add_argument("--lambda0", type=float, help="technical-zero sparsity knob")
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--n", type=int)
    s.add_argument("--p", type=int, help="taxa including the reference")
    s.add_argument("--A", type=float, help="Beta concentration of the DA mass split")
    s.add_argument("--M-gen", dest="M_gen", type=int)
    s.add_argument("--tau2-gen", dest="tau2_gen", type=float)
    s.add_argument("--covariates-file", help="numeric covariates for the first group's samples")
    s.add_argument("--config", help="JSON simulation config")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", parents=[common], help="run the sampler")
    f.add_argument("--counts", required=True)
    f.add_argument("--covariates", required=True)
    f.add_argument("--group", required=True, help="group column in the covariate table")
    f.add_argument("--config", help="JSON fit config")
    f.add_argument("--transpose", action="store_true", help="counts are taxa x samples")
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--reference-mode", dest="reference_mode", choices=["augment", "min_variance"])
    f.add_argument("--alpha-c", dest="alpha_c", type=float)
    f.add_argument("--M", type=int)
    f.add_argument("--alpha-0", dest="alpha_0", type=float)
    f.add_argument("--max-zero-frac", dest="max_zero_frac", type=float)
    f.add_argument("--init-clusters", dest="init_clusters", type=int)
    f.add_argument("--split-merge", dest="split_merge", type=int,
                   help="split-merge proposals per iteration (0 disables)")
    f.add_argument("--debug", action="store_true", help="check invariants every 100 iterations")
    f.add_argument("--trace-csv", action="store_true", help="also write scalar trace CSV")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("call", parents=[common], help="DA calls from traces")
    c.add_argument("--trace", required=True, action="append", help="trace file (repeatable)")
    c.add_argument("--nominal-fdr", dest="nominal_fdr", type=float, default=0.05)
    c.set_defaults(func=cmd_call)

    e = sub.add_parser("evaluate", parents=[common], help="score calls against truth")
    e.add_argument("--truth", required=True, action="append")
    e.add_argument("--result", required=True, action="append")
    e.add_argument("--svg", help="ROC/AUC figure path")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("rerun", parents=[common], help="repeat a run from its manifest")
    r.add_argument("--manifest", required=True)
    r.set_defaults(func=cmd_rerun)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args._argv = argv
    setup_logging(args.verbose, args.quiet, args.json_logs)
    try:
        out = Outputs(args.out)
    except OSError as e:
        log.error("cannot create output directory %s: %s", args.out, e.strerror)
        return EXIT_INPUT
    try:
        args.func(args, out)
    except BaseException as e:
        out.cleanup()
        if isinstance(e, (DataError, FileNotFoundError)):
            log.error("%s", e)
            return EXIT_INPUT
        if isinstance(e, ConfigError):
            log.error("%s", e)
            return EXIT_CONFIG
        if isinstance(e, (InvariantError, RuntimeError, ValueError, FloatingPointError)):
            log.error("%s: %s", type(e).__name__, e)
            return EXIT_RUNTIME
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
