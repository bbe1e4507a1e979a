import math
import statistics

import pytest
from hypothesis import given, strategies as st

from activetext.evaluation import (
    ConfusionCounts,
    EvaluationError,
    RESULTS_CSV_HEADER,
    aggregate_runs,
    confusion,
    effectiveness,
    evaluation_schedule,
    f_measure,
    precision,
    recall,
    results_csv_row,
)


def test_confusion_perfect_and_inverted():
    truth = {"a": True, "b": False, "c": True}
    same = confusion(truth, truth)
    assert (same.fp, same.fn) == (0, 0)
    flipped = confusion({k: not v for k, v in truth.items()}, truth)
    assert (flipped.tp, flipped.tn) == (0, 0)


def test_confusion_hand_case():
    # 6 docs: 2 tp, 1 fp, 1 fn, 2 tn, enumerated by hand
    truth = {"a": True, "b": True, "c": True, "d": False, "e": False, "f": False}
    decisions = {"a": True, "b": True, "c": False, "d": True, "e": False, "f": False}
    c = confusion(decisions, truth)
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 2)
    assert c.total == 6


def test_confusion_key_mismatch_is_error():
    with pytest.raises(EvaluationError):
        confusion({"a": True}, {"a": True, "b": False})


def test_recall_precision_basics():
    assert recall(ConfusionCounts(tp=5, fp=0, fn=5, tn=0)) == 0.5
    assert precision(ConfusionCounts(tp=0, fp=0, fn=3, tn=4)) == 0.0  # convention
    c = ConfusionCounts(tp=2, fp=1, fn=1, tn=0)
    assert recall(c) == pytest.approx(2 / 3)
    assert precision(c) == pytest.approx(2 / 3)


def test_recall_when_no_positives_exist():
    assert recall(ConfusionCounts(tp=0, fp=2, fn=0, tn=5)) == 0.0


@given(st.integers(0, 100), st.integers(0, 100), st.integers(0, 100), st.integers(0, 100), st.integers(0, 1000))
def test_recall_precision_ignore_true_negatives(tp, fp, fn, tn, extra):
    a = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)
    b = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn + extra)
    assert recall(a) == recall(b)
    assert precision(a) == precision(b)


def test_f_measure_hand_cases():
    assert f_measure(0.5, 1.0, 1.0) == pytest.approx(2 / 3)
    assert f_measure(0.3, 0.6, 1.0) == pytest.approx(0.4)
    assert f_measure(0.0, 0.0, 1.0) == 0.0


@given(st.floats(0.01, 1.0), st.floats(0.1, 10.0))
def test_f_measure_equal_inputs_fixed_point(x, beta):
    assert f_measure(x, x, beta) == pytest.approx(x, rel=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_f_measure_beta_one_is_harmonic_mean(r, p):
    f = f_measure(r, p, 1.0)
    if p + r > 0:
        assert abs(f - 2 * p * r / (p + r)) <= 1e-12
    else:
        assert f == 0.0


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_f_measure_monotone(r, p, r2):
    lo, hi = sorted([r, r2])
    assert f_measure(lo, p, 1.0) <= f_measure(hi, p, 1.0) + 1e-15
    assert f_measure(p, lo, 1.0) <= f_measure(p, hi, 1.0) + 1e-15


def test_f_measure_rejects_bad_beta():
    with pytest.raises(EvaluationError):
        f_measure(0.5, 0.5, 0.0)


def test_effectiveness_report_consistent():
    truth = {"a": True, "b": False, "c": True, "d": False}
    decisions = {"a": True, "b": True, "c": False, "d": False}
    rep = effectiveness(decisions, truth)
    assert rep.counts.tp == 1 and rep.counts.fp == 1 and rep.counts.fn == 1
    assert rep.f_beta == pytest.approx(f_measure(rep.recall, rep.precision, 1.0))


def test_aggregate_constant_runs():
    agg = aggregate_runs([0.5, 0.5, 0.5])
    assert (agg.mean, agg.sd) == (0.5, 0.0)


def test_aggregate_two_runs_hand_case():
    agg = aggregate_runs([0.4, 0.6])
    assert agg.mean == pytest.approx(0.5)
    assert agg.sd == pytest.approx(0.1414, abs=1e-4)  # sqrt(0.02), n-1 denominator


def test_aggregate_matches_statistics_module():
    values = [0.41, 0.52, 0.38, 0.61, 0.47, 0.55, 0.49, 0.44, 0.58, 0.51]
    agg = aggregate_runs(values)
    assert agg.mean == pytest.approx(statistics.fmean(values))
    assert agg.sd == pytest.approx(statistics.stdev(values))


def test_aggregate_single_run_flagged():
    agg = aggregate_runs([0.7])
    assert agg.sd == 0.0 and agg.single_run


def test_aggregate_empty_is_error():
    with pytest.raises(EvaluationError):
        aggregate_runs([])


def test_schedule_standard_run():
    sched = evaluation_schedule(249)
    for k in range(11):
        assert k in sched
    assert 15 in sched and 245 in sched and 249 in sched
    assert 11 not in sched and 247 not in sched
    assert sched == sorted(sched)


def test_schedule_small_runs():
    assert evaluation_schedule(3) == [0, 1, 2, 3]
    assert evaluation_schedule(0) == [0]
    assert evaluation_schedule(12) == [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12]


def test_results_csv_row_format():
    rep = effectiveness({"a": True, "b": False}, {"a": True, "b": True})
    row = results_csv_row("bonds", "uncertainty", 3, 999, 249, rep)
    fields = row.split(",")
    assert len(fields) == len(RESULTS_CSV_HEADER.split(","))
    assert fields[:5] == ["bonds", "uncertainty", "3", "999", "249"]
    # floats carry full precision via repr
    assert fields[9] == repr(rep.recall)
