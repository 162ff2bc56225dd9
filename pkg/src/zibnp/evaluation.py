"""Scoring DA calls against known truth, plus simple SVG figures."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass
class EvalResult:
    auc: float
    roc: list                         # (fpr, tpr) points
    achieved_fdr: float = 0.0
    sensitivity: float = 0.0
    specificity: float = 0.0
    counts: dict = field(default_factory=dict)


def roc_curve(scores, truth):
    """ROC points over all distinct score thresholds (ties form one step)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(truth).astype(bool)
    if s.shape != y.shape:
        raise EvaluationError("scores and truth differ in length")
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise EvaluationError("truth must contain both DA and non-DA taxa")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.append(np.flatnonzero(s[1:] != s[:-1]), s.size - 1)
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    fpr = np.concatenate([[0.0], fp / N])
    tpr = np.concatenate([[0.0], tp / P])
    return fpr, tpr


def roc_auc(scores, truth) -> EvalResult:
    fpr, tpr = roc_curve(scores, truth)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return EvalResult(auc=auc, roc=list(zip(fpr.tolist(), tpr.tolist())))


def mann_whitney_auc(scores, truth) -> float:
    """Pairwise-comparison AUC (ties count one half)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(truth).astype(bool)
    pos, neg = s[y], s[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (pos.size * neg.size))


def fdr_sensitivity(called, truth):
    """(FDR, sensitivity) of a called set; both indicator vectors."""
    c = np.asarray(called).astype(bool)
    y = np.asarray(truth).astype(bool)
    tp = int((c & y).sum())
    fp = int((c & ~y).sum())
    fdr = fp / max(tp + fp, 1)
    sens = tp / y.sum() if y.sum() else 0.0
    return float(fdr), float(sens)


def confusion(called, truth) -> dict:
    c = np.asarray(called).astype(bool)
    y = np.asarray(truth).astype(bool)
    return {"TP": int((c & y).sum()), "FP": int((c & ~y).sum()),
            "TN": int((~c & ~y).sum()), "FN": int((~c & y).sum())}


def evaluate_calls(scores, called, truth) -> EvalResult:
    res = roc_auc(scores, truth)
    cnt = confusion(called, truth)
    res.counts = cnt
    res.achieved_fdr, res.sensitivity = fdr_sensitivity(called, truth)
    neg = cnt["TN"] + cnt["FP"]
    res.specificity = cnt["TN"] / neg if neg else 0.0
    return res


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def benchmark_summary(results) -> dict:
    """Means and percentile 95% intervals across replicate EvalResults."""
    if not results:
        raise EvaluationError("no replicate results")
    out = {"replicates": len(results)}
    for key in ("auc", "achieved_fdr", "sensitivity"):
        vals = np.array([getattr(r, key) for r in results], dtype=float)
        lo, hi = np.percentile(vals, [2.5, 97.5])
        out[key] = {"mean": float(vals.mean()), "lo95": float(lo), "hi95": float(hi)}
    return out


def write_metrics_csv(path, results, labels=None):
    labels = labels or [str(i + 1) for i in range(len(results))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replicate", "auc", "fdr", "sensitivity"])
        for lab, r in zip(labels, results):
            w.writerow([lab, repr(r.auc), repr(r.achieved_fdr), repr(r.sensitivity)])
        if len(results) > 1:
            s = benchmark_summary(results)
            w.writerow(["mean", s["auc"]["mean"], s["achieved_fdr"]["mean"],
                        s["sensitivity"]["mean"]])
            w.writerow(["pct2.5", s["auc"]["lo95"], s["achieved_fdr"]["lo95"],
                        s["sensitivity"]["lo95"]])
            w.writerow(["pct97.5", s["auc"]["hi95"], s["achieved_fdr"]["hi95"],
                        s["sensitivity"]["hi95"]])


def write_svg(path, results, labels=None, size=320):
    """ROC overlay (left) and an AUC box glyph (right) as a static SVG."""
    labels = labels or [str(i + 1) for i in range(len(results))]
    pad = 30
    W, H = 2 * size + 3 * pad, size + 2 * pad
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="#000"/>',
             f'<line x1="{pad}" y1="{pad + size}" x2="{pad + size}" y2="{pad}" '
             f'stroke="#aaa" stroke-dasharray="4 3"/>']
    for lab, r in zip(labels, results):
        pts = " ".join(f"{pad + x * size:.2f},{pad + (1 - y) * size:.2f}" for x, y in r.roc)
        parts.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-opacity="0.7" '
                     f'points="{pts}"><title>{escape(str(lab))}: AUC {r.auc:.3f}</title></polyline>')
    parts.append(f'<text x="{pad + size / 2}" y="{H - 8}" text-anchor="middle">FPR</text>')
    parts.append(f'<text x="10" y="{pad + size / 2}" transform="rotate(-90 10 {pad + size / 2})" '
                 f'text-anchor="middle">TPR</text>')
    # box glyph of AUCs on [0, 1]
    x0 = 2 * pad + size
    parts.append(f'<rect x="{x0}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="#000"/>')
    aucs = np.array([r.auc for r in results])
    q0, q1, q2, q3, q4 = np.percentile(aucs, [0, 25, 50, 75, 100])
    ypos = lambda v: pad + (1 - v) * size  # noqa: E731
    cx = x0 + size / 2
    parts.append(f'<line x1="{cx}" y1="{ypos(q0):.2f}" x2="{cx}" y2="{ypos(q4):.2f}" stroke="#000"/>')
    parts.append(f'<rect x="{cx - 30}" y="{ypos(q3):.2f}" width="60" '
                 f'height="{max(ypos(q1) - ypos(q3), 0.5):.2f}" fill="#cfe0f3" stroke="#000"/>')
    parts.append(f'<line x1="{cx - 30}" y1="{ypos(q2):.2f}" x2="{cx + 30}" y2="{ypos(q2):.2f}" '
                 f'stroke="#000" stroke-width="2"/>')
    parts.append(f'<text x="{cx}" y="{H - 8}" text-anchor="middle">AUC (mean {aucs.mean():.3f})</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
