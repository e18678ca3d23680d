import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snorehpss.evalstat import (ConfusionMatrix, DegenerateSampleError, MetricsReport,
                                confusion, metrics, roc_auc, summarize_boxplot,
                                wilcoxon_signed_rank)

from oracles import auc_pairs, metrics_from_pairs, wilcoxon_enumeration


# --------------------------------------------------------------------------- confusion

def test_confusion_enumerates_four_pairs():
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionMatrix(tp=1, tn=1, fp=1, fn=1)


def test_confusion_identity_and_complement():
    assert confusion([1] * 5, [1] * 5) == ConfusionMatrix(5, 0, 0, 0)
    c = confusion([0, 1, 0], [1, 0, 1])
    assert c.tp == 0 and c.tn == 0


def test_confusion_length_mismatch():
    with pytest.raises(ValueError):
        confusion([1, 0], [1])


def test_confusion_rejects_nonbinary():
    with pytest.raises(ValueError):
        confusion([2, 0], [1, 0])


# --------------------------------------------------------------------------- metrics

def test_worked_example_full_precision():
    m = metrics(ConfusionMatrix(tp=92, tn=95, fp=5, fn=8))
    assert m.acc == 0.935 and m.sen == 0.92 and m.spe == 0.95 and m.sco == 0.935
    assert m.prec == pytest.approx(0.9485, abs=5e-5)
    assert m.f1 == pytest.approx(0.9340, abs=5e-5)


def test_perfect_classifier():
    m = metrics(ConfusionMatrix(3, 4, 0, 0))
    assert (m.acc, m.sen, m.spe, m.prec, m.sco, m.f1) == (1, 1, 1, 1, 1, 1)


def test_undefined_sensitivity():
    m = metrics(ConfusionMatrix(tp=0, tn=5, fp=0, fn=0))
    assert m.sen is None and m.spe == 1.0 and m.f1 is None and m.sco is None and m.prec is None


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(0, 0, 0, 0))


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metrics_match_pair_recount(pairs):
    m = metrics(confusion([p for p, _ in pairs], [y for _, y in pairs]))
    ref = metrics_from_pairs(pairs)
    for key, value in ref.items():
        assert getattr(m, key) == value


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_score_and_f1_identities(tp, tn, fp, fn):
    if tp + tn + fp + fn == 0:
        return
    m = metrics(ConfusionMatrix(tp, tn, fp, fn))
    if m.sen is not None and m.spe is not None:
        assert m.sco == (m.sen + m.spe) / 2
    if m.f1 is not None:
        assert m.f1 == 2 * m.prec * m.sen / (m.prec + m.sen)
    for v in (m.acc, m.sen, m.spe, m.prec, m.sco, m.f1):
        assert v is None or 0.0 <= v <= 1.0


def test_metrics_report_json_round_trip():
    m = metrics(ConfusionMatrix(1, 2, 3, 0)).with_auc(0.5)
    assert MetricsReport.from_json(m.to_json()) == m
    assert json.loads(m.to_json())["prec"] == 0.25


# --------------------------------------------------------------------------- ROC

def test_auc_example():
    curve, auc = roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert auc == 0.75
    assert len(curve.thresholds) == 4 + 2


def test_auc_perfect_and_tied():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])[1] == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0])[1] == 0.5


def test_auc_single_class_rejected():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


scores_labels = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 8).map(lambda v: v / 8), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=200)
@given(scores_labels)
def test_auc_matches_pair_count_and_trapezoid(data):
    scores, labels = data
    if len(set(labels)) < 2:
        return
    curve, auc = roc_auc(scores, labels)
    assert auc == pytest.approx(auc_pairs(scores, labels), abs=1e-12)
    area = float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2))
    assert auc == pytest.approx(area, abs=1e-12)
    assert len(curve.thresholds) == len(set(scores)) + 2
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)


@given(scores_labels)
def test_auc_invariant_under_increasing_transform(data):
    scores, labels = data
    if len(set(labels)) < 2:
        return
    s = np.array(scores)
    assert roc_auc(np.exp(3 * s) - 7, labels)[1] == roc_auc(s, labels)[1]


def test_roc_csv_shape():
    curve, _ = roc_auc([0.2, 0.2, 0.7], [0, 1, 1])
    lines = curve.to_csv().strip().split("\n")
    assert lines[0] == "threshold,fpr,tpr" and len(lines) == 1 + 2 + 2


# --------------------------------------------------------------------------- Wilcoxon

def test_wilcoxon_five_positive():
    r = wilcoxon_signed_rank([1, 2, 3, 4, 5], [0] * 5)
    assert r.statistic == 15 and r.n_effective == 5 and r.method == "exact"
    assert r.p_value == 0.0625 and not r.significant_at_0_05


def test_wilcoxon_tied_pair():
    r = wilcoxon_signed_rank([1, -1], [0, 0])
    assert r.statistic == 1.5 and r.p_value == 1.0


def test_wilcoxon_degenerate():
    with pytest.raises(DegenerateSampleError):
        wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])


def test_wilcoxon_twelve_wins():
    r = wilcoxon_signed_rank(np.arange(12) + 1.0, np.zeros(12))
    assert r.p_value == 2 / 4096 and r.significant_at_0_05


def test_wilcoxon_needs_pairs():
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1], [0])
    with pytest.raises(ValueError):
        wilcoxon_signed_rank([1, 2], [0])


@pytest.mark.parametrize("n", range(2, 11))
def test_exact_p_equals_enumeration_for_every_sign_pattern(n):
    # magnitudes with a tie so average ranks are exercised
    mags = np.array([1, 2, 2, 3, 4, 5, 5, 6, 7, 8][:n], dtype=float)
    for code in range(2 ** n):
        signs = np.array([1 if code >> i & 1 else -1 for i in range(n)])
        d = signs * mags
        for alt in ("two-sided", "greater", "less"):
            w, p = wilcoxon_enumeration(d.tolist(), alt)
            r = wilcoxon_signed_rank(d, np.zeros(n), alternative=alt)
            assert r.statistic == w
            assert abs(r.p_value - p) <= 1e-12


@settings(max_examples=100)
@given(st.lists(st.integers(-4, 4), min_size=2, max_size=9))
def test_exact_p_random_with_zeros_and_symmetry(d):
    if not any(d):
        return
    _, p = wilcoxon_enumeration(d)
    r = wilcoxon_signed_rank(d, [0] * len(d))
    assert abs(r.p_value - p) <= 1e-12
    swapped = wilcoxon_signed_rank([0] * len(d), d)
    assert swapped.p_value == pytest.approx(r.p_value, abs=1e-15)
    assert 0.0 <= r.p_value <= 1.0


def test_normal_approximation_above_cutoff():
    rng = np.random.default_rng(0)
    a = rng.normal(size=40) + 0.3
    r = wilcoxon_signed_rank(a, np.zeros(40))
    assert r.method == "normal_approx" and r.n_effective == 40
    # frozen from an independent tie-corrected, continuity-corrected computation
    assert r.p_value == pytest.approx(0.06265671766832528, rel=1e-12)


def test_cutoff_is_inclusive_at_25():
    d = np.arange(1, 26, dtype=float)
    assert wilcoxon_signed_rank(d, np.zeros(25)).method == "exact"
    assert wilcoxon_signed_rank(np.arange(1, 27.0), np.zeros(26)).method == "normal_approx"


def test_exact_and_normal_agree_roughly_at_25():
    rng = np.random.default_rng(4)
    d = rng.normal(size=25) + 0.4
    exact = wilcoxon_signed_rank(d, np.zeros(25)).p_value
    approx = wilcoxon_signed_rank(d, np.zeros(25), exact_max_n=0).p_value
    assert abs(exact - approx) < 0.01


def test_one_sided_directions():
    a = [3.0, 4.0, 5.0, 6.0, -1.0]
    greater = wilcoxon_signed_rank(a, [0] * 5, alternative="greater").p_value
    less = wilcoxon_signed_rank(a, [0] * 5, alternative="less").p_value
    assert greater < 0.5 < less


# --------------------------------------------------------------------------- box plots

def test_boxplot_five_points():
    b = summarize_boxplot([1, 2, 3, 4, 5])
    assert (b.median, b.q1, b.q3, b.mean) == (3, 1.5, 4.5, 3)
    assert b.outliers == () and (b.whisker_low, b.whisker_high) == (1, 5)


def test_boxplot_constant():
    b = summarize_boxplot([2.0] * 6)
    assert b.q1 == b.median == b.q3 == 2.0 and b.outliers == ()


def test_boxplot_far_point_is_outlier():
    b = summarize_boxplot([1, 1, 1, 1, 1, 1, 100])
    assert b.outliers == (100.0,) and b.whisker_high == 1.0


def test_boxplot_five_point_spike_under_halves_convention():
    # with only five points the upper half is (1, 100), so q3 = 50.5 and the
    # upper fence 124.75 keeps 100 inside
    b = summarize_boxplot([1, 1, 1, 1, 100])
    assert b.q3 == 50.5 and b.outliers == ()


def test_boxplot_needs_four_points():
    with pytest.raises(ValueError):
        summarize_boxplot([1, 2, 3])


@given(st.lists(st.integers(-100, 100), min_size=4, max_size=40))
def test_boxplot_outlier_iff_strictly_beyond_fences(data):
    b = summarize_boxplot(data)
    iqr = b.q3 - b.q1
    lo, hi = b.q1 - 1.5 * iqr, b.q3 + 1.5 * iqr
    expected = sorted(float(v) for v in data if v < lo or v > hi)
    assert list(b.outliers) == expected
    inside = [v for v in data if lo <= v <= hi]
    assert b.whisker_low == min(inside) and b.whisker_high == max(inside)
    assert b.q1 <= b.median <= b.q3
