import math

import numpy as np
import pytest

from activetext.corpus import CategorySpec, LabeledExample, assign_labels, tokenize, write_corpus_tsv
from activetext.evaluation import RESULTS_CSV_HEADER
from activetext.harness import (
    ExperimentPlan,
    GuardedLabelMap,
    HarnessError,
    LeakageError,
    STARTING_SIZE,
    SyntheticCorpusSpec,
    derive_seed,
    draw_starting_subsample,
    generate_synthetic_corpus,
    prepare_experiment,
    random_size_schedule,
    run_experiment,
    run_single,
    synthetic_category_spec,
)


def test_derive_seed_stable_and_distinct():
    a = derive_seed(42, "bonds", "uncertainty", 0)
    assert a == derive_seed(42, "bonds", "uncertainty", 0)
    assert a != derive_seed(42, "bonds", "uncertainty", 1)
    assert a != derive_seed(43, "bonds", "uncertainty", 0)
    assert 0 <= a < 2**64


# ---------------------------------------------------------------------------
# starting subsample


def _positives(n):
    return [
        LabeledExample(f"p{i:03d}", (f"w{i % 9}", "bond"), True) for i in range(n)
    ]


def test_starting_subsample_exactly_three():
    pos = _positives(3)
    chosen, words = draw_starting_subsample(pos, seed=1)
    assert sorted(e.doc_id for e in chosen) == ["p000", "p001", "p002"]
    assert "bond" in words


def test_starting_subsample_deterministic():
    pos = _positives(50)
    a, _ = draw_starting_subsample(pos, seed=7)
    b, _ = draw_starting_subsample(pos, seed=7)
    assert [e.doc_id for e in a] == [e.doc_id for e in b]


def test_starting_subsamples_mostly_distinct_across_seeds():
    pos = _positives(100)
    draws = {tuple(e.doc_id for e in draw_starting_subsample(pos, seed=s)[0]) for s in range(10)}
    assert len(draws) >= 9


def test_starting_subsample_needs_three_positives():
    with pytest.raises(HarnessError):
        draw_starting_subsample(_positives(2), seed=0)


# ---------------------------------------------------------------------------
# random size schedule


def test_schedule_first_entries():
    assert random_size_schedule()[:5] == [3, 6, 10, 20, 40]


def test_schedule_tail_expansion():
    sizes = random_size_schedule()
    assert 80000 in sizes and 100000 in sizes and 300000 in sizes
    assert 90000 not in sizes


def test_schedule_clipped_to_pool():
    sizes = random_size_schedule(5000)
    assert sizes[-1] == 5000
    assert sizes[-2] == 4000
    assert all(a < b for a, b in zip(sizes, sizes[1:]))


def test_schedule_tiny_pool():
    assert random_size_schedule(7) == [3, 6, 7]


# ---------------------------------------------------------------------------
# synthetic corpus


def test_synthetic_prior_within_binomial_bound():
    spec = SyntheticCorpusSpec(corpus_size=100_000, class_prior=0.002, seed=11)
    _, oracle = generate_synthetic_corpus(spec)
    n_pos = sum(oracle.values())
    expected = 100_000 * 0.002
    sd = math.sqrt(100_000 * 0.002 * 0.998)
    assert abs(n_pos - expected) <= 3 * sd


def test_synthetic_deterministic_bytes():
    spec = SyntheticCorpusSpec(corpus_size=3000, class_prior=0.01, seed=5)
    docs_a, _ = generate_synthetic_corpus(spec)
    docs_b, _ = generate_synthetic_corpus(spec)
    assert write_corpus_tsv(docs_a) == write_corpus_tsv(docs_b)
    docs_c, _ = generate_synthetic_corpus(SyntheticCorpusSpec(corpus_size=3000, class_prior=0.01, seed=6))
    assert write_corpus_tsv(docs_a) != write_corpus_tsv(docs_c)


def test_synthetic_keyword_encodes_label():
    spec = SyntheticCorpusSpec(corpus_size=5000, class_prior=0.02, seed=3)
    docs, oracle = generate_synthetic_corpus(spec)
    assert assign_labels(docs, synthetic_category_spec()) == oracle


def test_synthetic_titles_tokenize_cleanly():
    spec = SyntheticCorpusSpec(corpus_size=200, class_prior=0.05, seed=1)
    docs, _ = generate_synthetic_corpus(spec)
    for d in docs:
        toks = tokenize(d.title)
        assert len(toks) >= 1
        assert toks == d.title.split()


def test_synthetic_rejects_bad_prior():
    with pytest.raises(HarnessError):
        SyntheticCorpusSpec(corpus_size=10, class_prior=0.0)
    with pytest.raises(HarnessError):
        SyntheticCorpusSpec(corpus_size=10, class_prior=0.7)


def test_synthetic_disjoint_vocab_full_data_ceiling():
    # With no topic leak into negatives the classes are separable and a
    # classifier trained on the full training set should be near-perfect.
    from activetext.classifier import train
    from activetext.corpus import split
    from activetext.evaluation import effectiveness

    spec = SyntheticCorpusSpec(
        corpus_size=6000, class_prior=0.01, neg_topic_rate=0.0, seed=13
    )
    docs, oracle = generate_synthetic_corpus(spec)
    train_docs, test_docs = split(docs, 1 / 6, seed=0)
    labeled = [
        LabeledExample(d.doc_id, tuple(tokenize(d.title)), oracle[d.doc_id]) for d in train_docs
    ]
    clf = train(labeled, fraction=0.7)
    decisions = {d.doc_id: clf.decide_tokens(tokenize(d.title)) for d in test_docs}
    truth = {d.doc_id: oracle[d.doc_id] for d in test_docs}
    rep = effectiveness(decisions, truth)
    assert rep.f_beta > 0.9


# ---------------------------------------------------------------------------
# guard


def test_guard_blocks_reads_outside_evaluation():
    guard = GuardedLabelMap({"a": True})
    with pytest.raises(LeakageError):
        guard["a"]
    with pytest.raises(LeakageError):
        guard.labels_array(["a"])
    with guard.evaluation():
        assert guard["a"] is True
        assert guard.labels_array(["a"]).tolist() == [True]
    assert guard.reads == 2
    with pytest.raises(LeakageError):
        guard["a"]


# ---------------------------------------------------------------------------
# experiments


def _tiny_plan(**overrides):
    defaults = dict(
        categories=[synthetic_category_spec()],
        strategies=["uncertainty", "relevance", "random"],
        starts=2,
        random_runs_per_start=1,
        batch_size=4,
        iterations=5,
        selection_fraction=0.7,
        master_seed=77,
        test_fraction=0.25,
        random_sizes=[10, 25],
    )
    defaults.update(overrides)
    return ExperimentPlan(**defaults)


def _tiny_corpus():
    spec = SyntheticCorpusSpec(corpus_size=400, class_prior=0.1, seed=21)
    docs, _ = generate_synthetic_corpus(spec)
    return docs


def test_plan_json_round_trip(tmp_path):
    plan = _tiny_plan()
    path = tmp_path / "plan.json"
    plan.save(path)
    loaded = ExperimentPlan.load(path)
    assert loaded == plan


def test_plan_schedule_override():
    plan = _tiny_plan(eval_iterations=[0, 5])
    assert plan.schedule() == [0, 5]
    assert _tiny_plan().schedule() == [0, 1, 2, 3, 4, 5]


def test_plan_rejects_bad_names():
    with pytest.raises(HarnessError):
        ExperimentPlan(categories=[CategorySpec(name="bad,name", substrings=("x",))])
    with pytest.raises(HarnessError):
        ExperimentPlan(categories=[synthetic_category_spec()], strategies=["qbc"])


def test_prepare_experiment_rejects_thin_categories():
    plan = _tiny_plan(categories=[CategorySpec(name="none", substrings=("zzz-no-match",))])
    with pytest.raises(HarnessError, match="positive training docs"):
        prepare_experiment(plan, _tiny_corpus())


def test_run_experiment_row_counts(tmp_path):
    plan = _tiny_plan()
    summary = run_experiment(plan, _tiny_corpus(), tmp_path / "results.csv")
    # 2 runs x 6 schedule points per loop strategy, 2 random runs x 2 sizes
    assert len(summary.rows) == 2 * 6 + 2 * 6 + 2 * 2
    text = (tmp_path / "results.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == RESULTS_CSV_HEADER
    assert len(lines) == 1 + len(summary.rows)


def test_run_experiment_labeled_counts(tmp_path):
    plan = _tiny_plan()
    summary = run_experiment(plan, _tiny_corpus(), tmp_path / "results.csv")
    unc = [r.split(",") for r in summary.rows if r.split(",")[1] == "uncertainty"]
    assert [int(r[3]) for r in unc if r[2] == "0"] == [3, 7, 11, 15, 19, 23]
    rnd = [r.split(",") for r in summary.rows if r.split(",")[1] == "random"]
    assert sorted({int(r[3]) for r in rnd}) == [13, 28]  # 3 starts + 10, 25


def test_run_single_reproduces_rows(tmp_path):
    plan = _tiny_plan()
    docs = _tiny_corpus()
    summary = run_experiment(plan, docs, tmp_path / "results.csv")
    data = prepare_experiment(plan, docs)
    for triple in [("topic", "uncertainty", 1), ("topic", "random", 0)]:
        rows, _ = run_single(data, plan, *triple)
        expected = [r for r in summary.rows if tuple(r.split(",")[:2]) == triple[:2] and r.split(",")[2] == str(triple[2])]
        assert rows == expected


def test_run_experiment_resumes_to_identical_csv(tmp_path, monkeypatch):
    plan = _tiny_plan()
    docs = _tiny_corpus()
    full_csv = tmp_path / "full.csv"
    run_experiment(plan, docs, full_csv)
    reference = full_csv.read_bytes()

    import activetext.harness as harness

    real_run_single = harness.run_single
    calls = {"n": 0}

    def crashing(data, plan_, category, strategy, run):
        calls["n"] += 1
        if calls["n"] > 3:
            raise KeyboardInterrupt("simulated crash")
        return real_run_single(data, plan_, category, strategy, run)

    resumed_csv = tmp_path / "resumed.csv"
    monkeypatch.setattr(harness, "run_single", crashing)
    with pytest.raises(KeyboardInterrupt):
        run_experiment(plan, docs, resumed_csv)
    monkeypatch.setattr(harness, "run_single", real_run_single)

    partial = resumed_csv.read_bytes()
    assert partial != reference and len(partial) < len(reference)
    summary = run_experiment(plan, docs, resumed_csv)
    assert resumed_csv.read_bytes() == reference
    assert len(summary.skipped) == 3


def test_run_experiment_rerun_is_noop(tmp_path):
    plan = _tiny_plan()
    docs = _tiny_corpus()
    csv = tmp_path / "results.csv"
    run_experiment(plan, docs, csv)
    first = csv.read_bytes()
    summary = run_experiment(plan, docs, csv)
    assert csv.read_bytes() == first
    assert summary.completed and not summary.rows == []


def test_run_experiment_counts_guarded_reads(tmp_path):
    plan = _tiny_plan()
    docs = _tiny_corpus()
    summary = run_experiment(plan, docs, tmp_path / "results.csv")
    n_test = round(0.25 * len(docs))
    assert summary.test_label_reads == len(summary.rows) * n_test


def test_run_experiment_parallel_matches_serial(tmp_path):
    plan = _tiny_plan(starts=2)
    docs = _tiny_corpus()
    serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
    run_experiment(plan, docs, serial, jobs=1)
    run_experiment(plan, docs, parallel, jobs=2)
    assert serial.read_bytes() == parallel.read_bytes()
