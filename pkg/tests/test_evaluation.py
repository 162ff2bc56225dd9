import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zibnp.evaluation import (EvalResult, EvaluationError, benchmark_summary, confusion,
                              evaluate_calls, fdr_sensitivity, jaccard, mann_whitney_auc,
                              roc_auc, write_metrics_csv, write_svg)


def test_auc_examples():
    y = np.array([1, 0, 1, 0, 0])
    assert roc_auc(y.astype(float), y).auc == 1.0
    assert roc_auc(np.full(5, 0.3), y).auc == 0.5
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]).auc == pytest.approx(0.75)


def test_auc_one_class_errors():
    with pytest.raises(EvaluationError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(EvaluationError):
        roc_auc([0.1, 0.2], [1, 0, 1])


def test_roc_endpoints():
    r = roc_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
    assert r.roc[0] == (0.0, 0.0) and r.roc[-1] == (1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_equals_mann_whitney(pairs):
    s = np.array([a for a, _ in pairs], dtype=float)
    y = np.array([b for _, b in pairs])
    if y.all() or not y.any():
        return
    assert roc_auc(s, y).auc == pytest.approx(mann_whitney_auc(s, y), abs=1e-12)


def test_fdr_sensitivity_examples():
    truth = np.array([1, 1, 0, 0, 1], bool)
    assert fdr_sensitivity(truth, truth) == (0.0, 1.0)
    assert fdr_sensitivity(np.zeros(5, bool), truth) == (0.0, 0.0)
    truth = np.zeros(20, bool)
    truth[:12] = True
    called = np.zeros(20, bool)
    called[:9] = True
    called[15] = True
    fdr, sens = fdr_sensitivity(called, truth)
    assert fdr == pytest.approx(0.1) and sens == pytest.approx(9 / 12)
    assert confusion(called, truth) == {"TP": 9, "FP": 1, "TN": 7, "FN": 3}


def test_evaluate_calls():
    r = evaluate_calls([0.9, 0.8, 0.3, 0.1], [True, True, False, False], [1, 0, 1, 0])
    assert r.auc == pytest.approx(0.75) and r.achieved_fdr == 0.5
    assert r.sensitivity == 0.5 and r.specificity == 0.5


def test_jaccard():
    assert jaccard({"a"}, {"a"}) == 1.0
    assert jaccard({"a"}, {"b"}) == 0.0
    assert jaccard("abc", "bcd") == 0.5
    assert jaccard([], []) == 1.0


def test_summary_intervals():
    one = benchmark_summary([EvalResult(auc=0.7, roc=[])])
    assert one["auc"] == {"mean": 0.7, "lo95": 0.7, "hi95": 0.7}
    many = benchmark_summary([EvalResult(auc=0.8, roc=[]) for _ in range(25)])
    assert many["auc"]["mean"] == pytest.approx(0.8)
    assert many["auc"]["lo95"] == pytest.approx(0.8) and many["auc"]["hi95"] == pytest.approx(0.8)
    vals = np.linspace(0, 1, 41)
    s = benchmark_summary([EvalResult(auc=v, roc=[]) for v in vals])
    assert s["auc"]["lo95"] == pytest.approx(0.025) and s["auc"]["hi95"] == pytest.approx(0.975)
    with pytest.raises(EvaluationError):
        benchmark_summary([])


def test_outputs(tmp_path):
    res = [evaluate_calls([0.9, 0.2, 0.4], [1, 0, 0], [1, 0, 1]) for _ in range(3)]
    write_metrics_csv(tmp_path / "m.csv", res)
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "replicate,auc,fdr,sensitivity"
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "2", "3", "mean", "pct2.5", "pct97.5"]
    write_svg(tmp_path / "f.svg", res, labels=["a<b", "c", "d"])
    txt = (tmp_path / "f.svg").read_text()
    assert txt.startswith("<svg") and txt.count("<polyline") == 3 and "a&lt;b" in txt
