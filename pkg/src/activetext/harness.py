"""Simulated-teacher experiment harness.

Runs the full protocol on a labeled corpus: draw small starting
subsamples of positives, run the sampling loop per strategy, train on a
nested schedule of random samples as the baseline, and evaluate every
scheduled snapshot on a held-out test set.  Results land in one CSV.

Every run's seed is derived from (master seed, category, strategy, run),
so any single triple can be reproduced in isolation, and test-set labels
sit behind a guard that only the evaluation step may open.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .classifier import (
    Classifier,
    LossMatrix,
    decide_many,
    min_error_loss,
    train,
)
from .corpus import CategorySpec, Document, LabeledExample, assign_labels, split, tokenize
from .evaluation import (
    ConfusionCounts,
    EffectivenessReport,
    RESULTS_CSV_HEADER,
    evaluation_schedule,
    f_measure,
    precision,
    recall,
    results_csv_row,
)
from .sampling import Pool, SamplingConfig, _sigmoid_array, run_active_loop, select_random

__all__ = [
    "ExperimentPlan",
    "SyntheticCorpusSpec",
    "HarnessError",
    "LeakageError",
    "GuardedLabelMap",
    "derive_seed",
    "draw_starting_subsample",
    "random_size_schedule",
    "generate_synthetic_corpus",
    "synthetic_category_spec",
    "prepare_experiment",
    "run_single",
    "run_experiment",
    "STARTING_SIZE",
]

STARTING_SIZE = 3


class HarnessError(Exception):
    pass


class LeakageError(Exception):
    """Test-set labels were read outside an evaluation step."""


def derive_seed(master_seed: int, *parts: object) -> int:
    """Stable 64-bit seed from the master seed and a component path."""
    key = "|".join([str(master_seed), *(str(p) for p in parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class GuardedLabelMap:
    """Label map that refuses reads unless an evaluation step armed it."""

    def __init__(self, labels: Mapping[str, bool]):
        self._labels = dict(labels)
        self._armed = False
        self.reads = 0

    @contextmanager
    def evaluation(self):
        self._armed = True
        try:
            yield self
        finally:
            self._armed = False

    def _check(self) -> None:
        if not self._armed:
            raise LeakageError("test labels read outside an evaluation step")

    def __getitem__(self, doc_id: str) -> bool:
        self._check()
        self.reads += 1
        return self._labels[doc_id]

    def labels_array(self, doc_ids: Sequence[str]) -> np.ndarray:
        self._check()
        self.reads += len(doc_ids)
        return np.array([self._labels[d] for d in doc_ids], dtype=bool)


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Recipe for a synthetic title corpus with a known rare category.

    Positive titles mix topic and background vocabulary with a per-title
    topic weight; negatives draw mostly background with a small topic
    leak, which is what makes the decision boundary non-trivial.  The
    keyword slug encodes the true label, so the normal keyword-substring
    oracle applies unchanged.
    """

    corpus_size: int
    class_prior: float = 0.002
    topic_vocab: int = 150
    background_vocab: int = 3000
    mean_title_len: float = 8.0
    min_title_len: int = 4
    max_title_len: int = 16
    pos_topic_low: float = 0.35
    pos_topic_high: float = 0.85
    neg_topic_rate: float = 0.02
    zipf_exponent: float = 1.1
    # Within-title burstiness: chance that a token repeats an earlier token
    # of the same title instead of a fresh draw (word burstiness).
    repeat_rate: float = 0.0
    # Story clustering: chance that a positive title is a near-copy of an
    # earlier positive (newswire updates re-file the same story).
    duplicate_rate: float = 0.0
    # Category heterogeneity: fraction of positives drawn from a second
    # strand of the category with its own vocabulary.  Strand-two words
    # never leak into negatives, but strand-two titles share only the
    # small core vocabulary with strand one, so classifiers seeded on
    # strand-one examples start out nearly blind to them.
    subtopic_fraction: float = 0.0
    subtopic_vocab: int = 120
    core_vocab: int = 20
    # Decoys: related non-member stories that use the topic vocabulary at
    # a rate overlapping the weakest members, so the decision cut lands
    # inside a dense mixed band and its placement dominates effectiveness.
    decoy_rate: float = 0.0
    decoy_low: float = 0.25
    decoy_high: float = 0.45
    # When positive, decoys draw most topical tokens from an adjacent
    # vocabulary of this size (and members use it lightly), so telling
    # members from decoys takes word knowledge, not just token counts.
    decoy_vocab: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.class_prior <= 0.5):
            raise HarnessError("class prior must be in (0, 0.5]")
        if self.corpus_size < 1 or self.topic_vocab < 1 or self.background_vocab < 1:
            raise HarnessError("corpus and vocabulary sizes must be positive")
        if not (1 <= self.min_title_len <= self.max_title_len):
            raise HarnessError("bad title length bounds")
        if not (0.0 <= self.repeat_rate < 1.0 and 0.0 <= self.duplicate_rate < 1.0):
            raise HarnessError("rates must be in [0, 1)")


def synthetic_category_spec() -> CategorySpec:
    """The category matching every synthetic positive title."""
    return CategorySpec(name="topic", substrings=("topic",))


def directional_benchmark_spec(corpus_size: int = 60_000, seed: int = 202) -> "SyntheticCorpusSpec":
    """The frozen corpus profile for the desk-scale strategy comparison.

    Calibrated by pilot runs: a heavy-headed topic vocabulary keeps the
    starting subsamples connected to the positive mass, and an
    adjacent-vocabulary decoy band makes boundary placement matter, which
    is where balanced boundary sampling earns its margin.
    """
    return SyntheticCorpusSpec(
        corpus_size=corpus_size,
        class_prior=0.002,
        topic_vocab=200,
        zipf_exponent=1.25,
        neg_topic_rate=0.01,
        pos_topic_low=0.25,
        pos_topic_high=0.75,
        decoy_rate=0.12,
        decoy_low=0.25,
        decoy_high=0.45,
        decoy_vocab=200,
        seed=seed,
    )


def _zipf_cdf(n: int, exponent: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** exponent
    return np.cumsum(weights / weights.sum())


def generate_synthetic_corpus(spec: SyntheticCorpusSpec) -> tuple[list[Document], dict[str, bool]]:
    """Deterministically generate (documents, label oracle) per the spec."""
    rng = np.random.default_rng(spec.seed)
    n = spec.corpus_size
    positive = rng.random(n) < spec.class_prior
    lengths = np.clip(
        rng.poisson(spec.mean_title_len, n), spec.min_title_len, spec.max_title_len
    ).astype(np.int64)
    topic_weight = np.full(n, spec.neg_topic_rate, dtype=np.float64)
    n_pos = int(positive.sum())
    if n_pos:
        topic_weight[positive] = rng.uniform(spec.pos_topic_low, spec.pos_topic_high, n_pos)
    decoy = np.zeros(n, dtype=bool)
    if spec.decoy_rate > 0.0:
        decoy = ~positive & (rng.random(n) < spec.decoy_rate)
        n_decoy = int(decoy.sum())
        if n_decoy:
            topic_weight[decoy] = rng.uniform(spec.decoy_low, spec.decoy_high, n_decoy)

    total = int(lengths.sum())
    doc_of_token = np.repeat(np.arange(n), lengths)
    is_topic = rng.random(total) < topic_weight[doc_of_token]
    u = rng.random(total)
    bg_cdf = _zipf_cdf(spec.background_vocab, spec.zipf_exponent)
    bg_words = np.array([f"bg{i:04d}" for i in range(spec.background_vocab)])
    words = bg_words[
        np.minimum(np.searchsorted(bg_cdf, u, side="right"), spec.background_vocab - 1)
    ]

    if spec.subtopic_fraction > 0.0:
        if spec.topic_vocab <= spec.core_vocab:
            raise HarnessError("topic vocabulary must exceed the core block")
        strand_two = np.zeros(n, dtype=bool)
        if n_pos:
            strand_two[positive] = rng.random(n_pos) < spec.subtopic_fraction
        in_core = rng.random(total) < 0.25
        core_words = np.array([f"tw{i:03d}" for i in range(spec.core_vocab)])
        one_words = np.array([f"tw{i:03d}" for i in range(spec.core_vocab, spec.topic_vocab)])
        two_words = np.array([f"sw{i:03d}" for i in range(spec.subtopic_vocab)])
        for mask, vocab in (
            (is_topic & in_core, core_words),
            (is_topic & ~in_core & ~strand_two[doc_of_token], one_words),
            (is_topic & ~in_core & strand_two[doc_of_token], two_words),
        ):
            cdf = _zipf_cdf(len(vocab), spec.zipf_exponent)
            words[mask] = vocab[
                np.minimum(np.searchsorted(cdf, u[mask], side="right"), len(vocab) - 1)
            ]
    else:
        topic_cdf = _zipf_cdf(spec.topic_vocab, spec.zipf_exponent)
        topic_words = np.array([f"tw{i:03d}" for i in range(spec.topic_vocab)])
        words[is_topic] = topic_words[
            np.minimum(np.searchsorted(topic_cdf, u[is_topic], side="right"), spec.topic_vocab - 1)
        ]
        if spec.decoy_vocab > 0 and spec.decoy_rate > 0.0:
            # Decoys speak mostly the adjacent vocabulary; members dip into
            # it occasionally.
            adj_words = np.array([f"aw{i:03d}" for i in range(spec.decoy_vocab)])
            adj_cdf = _zipf_cdf(spec.decoy_vocab, spec.zipf_exponent)
            adj_prob = np.zeros(n)
            adj_prob[decoy] = 0.75
            adj_prob[positive] = 0.10
            use_adj = is_topic & (rng.random(total) < adj_prob[doc_of_token])
            words[use_adj] = adj_words[
                np.minimum(
                    np.searchsorted(adj_cdf, u[use_adj], side="right"), spec.decoy_vocab - 1
                )
            ]
    offsets = np.concatenate([[0], np.cumsum(lengths)])

    if spec.repeat_rate > 0.0:
        # Word burstiness: token j may copy one of its title's earlier
        # tokens.  Resolved column by column so copies of copies work.
        position = np.arange(total) - np.repeat(offsets[:-1], lengths)
        repeats = rng.random(total) < spec.repeat_rate
        prev_u = rng.random(total)
        for j in range(1, int(lengths.max())):
            here = np.flatnonzero((position == j) & repeats)
            if len(here) == 0:
                continue
            prev = here - j + np.floor(prev_u[here] * j).astype(np.int64)
            words[here] = words[prev]

    titles = [" ".join(words[offsets[i] : offsets[i + 1]]) for i in range(n)]

    if spec.duplicate_rate > 0.0:
        # Story clustering: a positive title may re-file an earlier
        # positive story verbatim.
        pos_idx = np.flatnonzero(positive)
        for k in range(1, len(pos_idx)):
            if rng.random() < spec.duplicate_rate:
                source = pos_idx[int(rng.integers(0, k))]
                titles[pos_idx[k]] = titles[source]

    docs: list[Document] = []
    oracle: dict[str, bool] = {}
    for i in range(n):
        doc_id = f"s{i:06d}"
        keyword = f"TopicWire{i % 7}" if positive[i] else f"GenWire{i % 11}"
        docs.append(Document(doc_id=doc_id, keyword=keyword, title=titles[i]))
        oracle[doc_id] = bool(positive[i])
    return docs, oracle


def draw_starting_subsample(
    positives: Sequence[LabeledExample], seed: int
) -> tuple[list[LabeledExample], set[str]]:
    """Uniform draw of the starting positives, plus their word set.

    The words of the starting examples become required features for every
    classifier trained during the run.
    """
    if len(positives) < STARTING_SIZE:
        raise HarnessError(
            f"need at least {STARTING_SIZE} positive training documents, have {len(positives)}"
        )
    ordered = sorted(positives, key=lambda ex: ex.doc_id)
    rng = np.random.default_rng(seed)
    chosen_idx = rng.choice(len(ordered), size=STARTING_SIZE, replace=False)
    chosen = [ordered[i] for i in sorted(chosen_idx.tolist())]
    words = {t for ex in chosen for t in ex.tokens}
    return chosen, words


_SCHEDULE_BASE = [
    3, 6, 10, 20, 40, 80, 160, 320, 640, 1000, 2500, 4000, 6000, 8000, 10000,
    15000, 20000, 30000, 40000, 50000, 60000, 70000, 80000,
]


def random_size_schedule(pool_size: int | None = None) -> list[int]:
    """Random-sample sizes, nested by construction when drawn as a prefix.

    Without a pool size, the canonical open-ended list.  With one, sizes
    are clipped to the pool, the full pool is appended, and duplicates
    from clipping collapse, so the result is strictly increasing.
    """
    sizes = _SCHEDULE_BASE + list(range(100000, 300001, 20000))
    if pool_size is None:
        return sizes
    clipped = sorted({min(s, pool_size) for s in sizes} | {pool_size})
    return clipped


@dataclass
class ExperimentPlan:
    """Everything a full experiment needs except the corpus itself."""

    categories: list[CategorySpec]
    strategies: list[str] = field(default_factory=lambda: ["uncertainty", "relevance", "random"])
    starts: int = 10
    random_runs_per_start: int = 2
    batch_size: int = 4
    iterations: int = 249
    selection_fraction: float = 0.7
    loss: LossMatrix = field(default_factory=min_error_loss)
    master_seed: int = 0
    test_fraction: float = 0.14
    eval_iterations: list[int] | None = None
    random_sizes: list[int] | None = None

    def __post_init__(self):
        for spec in self.categories:
            if any(c in spec.name for c in ",\t\n"):
                raise HarnessError(f"category name {spec.name!r} contains a delimiter")
        for s in self.strategies:
            if s not in ("uncertainty", "relevance", "random"):
                raise HarnessError(f"unknown strategy {s!r}")

    def runs_for(self, strategy: str) -> int:
        if strategy == "random":
            return self.starts * self.random_runs_per_start
        return self.starts

    def triples(self) -> list[tuple[str, str, int]]:
        return [
            (spec.name, strategy, run)
            for spec in self.categories
            for strategy in self.strategies
            for run in range(self.runs_for(strategy))
        ]

    def schedule(self) -> list[int]:
        if self.eval_iterations is not None:
            return sorted(set(self.eval_iterations))
        return evaluation_schedule(self.iterations)

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"name": s.name, "substrings": list(s.substrings)} for s in self.categories
            ],
            "strategies": list(self.strategies),
            "starts": self.starts,
            "random_runs_per_start": self.random_runs_per_start,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "selection_fraction": self.selection_fraction,
            "loss": {"tp": self.loss.tp, "fp": self.loss.fp, "fn": self.loss.fn, "tn": self.loss.tn},
            "master_seed": self.master_seed,
            "test_fraction": self.test_fraction,
            "eval_iterations": self.eval_iterations,
            "random_sizes": self.random_sizes,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentPlan":
        known = {
            "starts", "random_runs_per_start", "batch_size", "iterations",
            "selection_fraction", "master_seed", "test_fraction",
            "eval_iterations", "random_sizes", "strategies",
        }
        kwargs = {k: d[k] for k in known if k in d}
        categories = [
            CategorySpec(name=c["name"], substrings=tuple(c["substrings"]))
            for c in d["categories"]
        ]
        loss = min_error_loss() if "loss" not in d else LossMatrix(**d["loss"])
        return cls(categories=categories, loss=loss, **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass
class ExperimentData:
    """Split, tokenized corpus plus per-category oracles, built once."""

    train_docs: list[Document]
    test_docs: list[Document]
    tokens: dict[str, tuple[str, ...]]
    label_maps: dict[str, dict[str, bool]]
    train_pool_template: Pool
    test_pool: Pool


def prepare_experiment(plan: ExperimentPlan, documents: Sequence[Document]) -> ExperimentData:
    """Split, tokenize, and label the corpus; fail fast on thin categories."""
    train_docs, test_docs = split(list(documents), plan.test_fraction, derive_seed(plan.master_seed, "split"))
    tokens = {d.doc_id: tuple(tokenize(d.title)) for d in documents}
    label_maps = {}
    for spec in plan.categories:
        label_map = assign_labels(documents, spec)
        n_pos_train = sum(label_map[d.doc_id] for d in train_docs)
        if n_pos_train < STARTING_SIZE:
            raise HarnessError(
                f"category {spec.name!r} has only {n_pos_train} positive training docs"
            )
        label_maps[spec.name] = label_map
    train_pool = Pool((d.doc_id, tokens[d.doc_id]) for d in train_docs)
    test_pool = Pool((d.doc_id, tokens[d.doc_id]) for d in test_docs)
    return ExperimentData(
        train_docs=train_docs,
        test_docs=test_docs,
        tokens=tokens,
        label_maps=label_maps,
        train_pool_template=train_pool,
        test_pool=test_pool,
    )


def _evaluate_on_pool(
    classifier: Classifier, pool: Pool, guard: GuardedLabelMap
) -> EffectivenessReport:
    """Score the whole held-out pool and compare decisions to the truth.

    Evaluation always uses minimum-error-rate losses, whatever the loop
    trained with.
    """
    s = pool.scores(classifier)
    eta = classifier.logistic.intercept + classifier.logistic.slope * s
    decided = decide_many(_sigmoid_array(eta), min_error_loss())
    with guard.evaluation():
        actual = guard.labels_array(pool.ids)
    tp = int(np.count_nonzero(decided & actual))
    fp = int(np.count_nonzero(decided & ~actual))
    fn = int(np.count_nonzero(~decided & actual))
    tn = int(np.count_nonzero(~decided & ~actual))
    counts = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)
    r = recall(counts)
    p = precision(counts)
    return EffectivenessReport(recall=r, precision=p, f_beta=f_measure(r, p, 1.0), beta=1.0, counts=counts)


def _starting_examples(
    data: ExperimentData, category: str, master_seed: int, start_index: int
) -> tuple[list[LabeledExample], set[str]]:
    label_map = data.label_maps[category]
    positives = [
        LabeledExample(doc_id=d.doc_id, tokens=data.tokens[d.doc_id], positive=True)
        for d in data.train_docs
        if label_map[d.doc_id]
    ]
    seed = derive_seed(master_seed, category, "start", start_index)
    return draw_starting_subsample(positives, seed)


def run_single(
    data: ExperimentData, plan: ExperimentPlan, category: str, strategy: str, run: int
) -> tuple[list[str], int]:
    """Execute one (category, strategy, run) triple.

    Returns the triple's CSV rows in evaluation order plus the number of
    guarded test-label reads it performed.
    """
    label_map = data.label_maps[category]
    train_oracle = {d.doc_id: label_map[d.doc_id] for d in data.train_docs}
    guard = GuardedLabelMap({d.doc_id: label_map[d.doc_id] for d in data.test_docs})
    schedule = set(plan.schedule())
    rows: list[str] = []

    if strategy in ("uncertainty", "relevance"):
        starting, _words = _starting_examples(data, category, plan.master_seed, run)
        pool = data.train_pool_template.fresh_copy()
        config = SamplingConfig(
            batch_size=plan.batch_size,
            iterations=plan.iterations,
            strategy=strategy,
            seed=derive_seed(plan.master_seed, category, strategy, run),
            selection_fraction=plan.selection_fraction,
            loss=plan.loss,
        )
        pool_start = len(data.train_docs) - len(starting)
        evaluated: set[int] = set()

        def on_classifier(iteration: int, clf: Classifier) -> None:
            if iteration in schedule:
                labeled_count = len(starting) + min(iteration * plan.batch_size, pool_start)
                report = _evaluate_on_pool(clf, data.test_pool, guard)
                rows.append(results_csv_row(category, strategy, run, labeled_count, iteration, report))
                evaluated.add(iteration)

        result = run_active_loop(pool, train_oracle, starting, config, on_classifier)
        last = result.logs[-1].iteration if result.logs else 0
        if last not in evaluated:
            # The pool ran out before a scheduled point; still evaluate the
            # final classifier.
            report = _evaluate_on_pool(result.final_classifier, data.test_pool, guard)
            rows.append(
                results_csv_row(category, strategy, run, result.logs[-1].labeled_size if result.logs else len(starting), last, report)
            )
        return rows, guard.reads

    if strategy == "random":
        start_index, rep = divmod(run, plan.random_runs_per_start)
        starting, words = _starting_examples(data, category, plan.master_seed, start_index)
        starting_ids = {ex.doc_id for ex in starting}
        pool_ids = [d.doc_id for d in data.train_docs if d.doc_id not in starting_ids]
        sample_seed = derive_seed(plan.master_seed, category, "random", start_index, rep)
        permutation = select_random(pool_ids, len(pool_ids), sample_seed)
        sizes = plan.random_sizes if plan.random_sizes is not None else random_size_schedule(len(data.train_docs))
        seen_portions: set[int] = set()
        for sched_index, size in enumerate(sizes):
            portion = min(size, len(pool_ids))
            if portion in seen_portions:
                continue
            seen_portions.add(portion)
            sample = permutation[:portion]
            labeled = list(starting) + [
                LabeledExample(doc_id=d, tokens=data.tokens[d], positive=train_oracle[d])
                for d in sample
            ]
            clf = train(labeled, required=sorted(words), fraction=plan.selection_fraction, loss=plan.loss)
            report = _evaluate_on_pool(clf, data.test_pool, guard)
            rows.append(
                results_csv_row(category, strategy, run, len(labeled), sched_index, report)
            )
        return rows, guard.reads

    raise HarnessError(f"unknown strategy {strategy!r}")


def _read_manifest(path: Path) -> list[tuple[str, str, int]]:
    if not path.exists():
        return []
    triples = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        cat, strat, run = line.split("\t")
        triples.append((cat, strat, int(run)))
    return triples


def _triple_of_row(row: str) -> tuple[str, str, int]:
    cat, strat, run = row.split(",")[:3]
    return cat, strat, int(run)


@dataclass
class ExperimentSummary:
    csv_path: Path
    rows: list[str]
    completed: list[tuple[str, str, int]]
    skipped: list[tuple[str, str, int]]
    test_label_reads: int


def run_experiment(
    plan: ExperimentPlan,
    documents: Sequence[Document],
    out_csv: str | Path,
    manifest_path: str | Path | None = None,
    jobs: int = 1,
) -> ExperimentSummary:
    """Run (or resume) every triple in the plan, appending to one CSV.

    A triple is the unit of resumability: rows of half-finished triples
    found on disk are discarded, finished ones are kept verbatim, and the
    final file is rewritten in canonical triple order so an interrupted
    and resumed experiment is byte-identical to an uninterrupted one.
    """
    out_csv = Path(out_csv)
    manifest = Path(manifest_path) if manifest_path else out_csv.with_suffix(".manifest")
    data = prepare_experiment(plan, documents)

    completed = _read_manifest(manifest)
    completed_set = set(completed)
    kept_rows: dict[tuple[str, str, int], list[str]] = {t: [] for t in completed}
    if out_csv.exists():
        lines = out_csv.read_text(encoding="utf-8").splitlines()
        for row in lines[1:]:
            triple = _triple_of_row(row)
            if triple in completed_set:
                kept_rows[triple].append(row)

    todo = [t for t in plan.triples() if t not in completed_set]
    results: dict[tuple[str, str, int], list[str]] = dict(kept_rows)
    reads = 0

    if jobs > 1 and todo:
        from concurrent.futures import ProcessPoolExecutor

        plan_dict = plan.to_dict()
        doc_tuples = [(d.doc_id, d.keyword, d.title) for d in documents]
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_worker_init, initargs=(plan_dict, doc_tuples)
        ) as pool:
            for triple, (rows, triple_reads) in zip(todo, pool.map(_worker_run, todo)):
                results[triple] = rows
                reads += triple_reads
                _flush(out_csv, manifest, plan, results)
    else:
        for triple in todo:
            rows, triple_reads = run_single(data, plan, *triple)
            results[triple] = rows
            reads += triple_reads
            _flush(out_csv, manifest, plan, results)

    if not todo and not out_csv.exists():
        _flush(out_csv, manifest, plan, results)
    all_rows = [row for t in plan.triples() if t in results for row in results[t]]
    return ExperimentSummary(
        csv_path=out_csv,
        rows=all_rows,
        completed=[t for t in plan.triples() if t in results],
        skipped=completed,
        test_label_reads=reads,
    )


def _flush(
    out_csv: Path,
    manifest: Path,
    plan: ExperimentPlan,
    results: dict[tuple[str, str, int], list[str]],
) -> None:
    """Rewrite CSV and manifest atomically-enough in canonical order."""
    ordered = [t for t in plan.triples() if t in results]
    body = "\n".join(row for t in ordered for row in results[t])
    text = RESULTS_CSV_HEADER + ("\n" + body if body else "") + "\n"
    tmp = out_csv.with_suffix(".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(out_csv)
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text("".join(f"{c}\t{s}\t{r}\n" for c, s, r in ordered), encoding="utf-8")


_WORKER: dict = {}


def _worker_init(plan_dict: dict, doc_tuples: list[tuple[str, str, str]]) -> None:
    plan = ExperimentPlan.from_dict(plan_dict)
    documents = [Document(doc_id=a, keyword=b, title=c) for a, b, c in doc_tuples]
    _WORKER["plan"] = plan
    _WORKER["data"] = prepare_experiment(plan, documents)


def _worker_run(triple: tuple[str, str, int]) -> tuple[list[str], int]:
    return run_single(_WORKER["data"], _WORKER["plan"], *triple)
