"""Sequential sampling loop and its three selection strategies.

Each iteration scores every unlabeled title with the current classifier,
picks a small batch (least certain, most relevant, or random), asks the
oracle for labels, and retrains from scratch on everything labeled so
far.  Pool scoring is vectorized but bit-identical to scoring titles one
at a time, so batch size and worker layout never change a run's outcome.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .classifier import (
    Classifier,
    LossMatrix,
    classifier_hash,
    min_error_loss,
    train,
)
from .corpus import LabeledExample

__all__ = [
    "Strategy",
    "SamplingConfig",
    "Pool",
    "IterationLog",
    "ActiveRunResult",
    "SamplingError",
    "OracleFailure",
    "select_uncertain",
    "select_relevant",
    "select_random",
    "run_active_loop",
]

STRATEGIES = ("uncertainty", "relevance", "random")


class SamplingError(Exception):
    pass


class OracleFailure(Exception):
    """Oracle raised mid-run; carries the iteration logs produced so far."""

    def __init__(self, cause: Exception, logs: list["IterationLog"]):
        super().__init__(f"oracle failed: {cause}")
        self.cause = cause
        self.logs = logs


@dataclass(frozen=True)
class SamplingConfig:
    batch_size: int = 4
    iterations: int = 249
    strategy: str = "uncertainty"
    seed: int = 0
    selection_fraction: float = 0.7
    loss: LossMatrix = field(default_factory=min_error_loss)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SamplingError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "uncertainty":
            # The selection rule splits the batch across both sides of 0.5.
            if self.batch_size < 2 or self.batch_size % 2 != 0:
                raise SamplingError("uncertainty strategy needs an even batch size >= 2")
        elif self.batch_size < 1:
            raise SamplingError("batch size must be positive")
        if self.iterations < 0:
            raise SamplingError("iterations must be non-negative")


@dataclass
class IterationLog:
    """Audit record for one loop iteration."""

    iteration: int
    selected_ids: list[str]
    labels: dict[str, bool]
    labeled_size: int
    snapshot_hash: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "selected_ids": self.selected_ids,
                "labels": {k: bool(v) for k, v in self.labels.items()},
                "labeled_size": self.labeled_size,
                "snapshot_hash": self.snapshot_hash,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "IterationLog":
        d = json.loads(line)
        return cls(
            iteration=d["iteration"],
            selected_ids=list(d["selected_ids"]),
            labels={k: bool(v) for k, v in d["labels"].items()},
            labeled_size=d["labeled_size"],
            snapshot_hash=d["snapshot_hash"],
        )


class Pool:
    """Unlabeled titles, kept in doc_id order, with vectorized scoring.

    Documents are encoded once into a padded token-id matrix; scoring a
    classifier is then a weight gather plus a left-to-right column sum,
    which reproduces the scalar per-title score bit for bit.
    """

    def __init__(self, docs: Iterable[tuple[str, Sequence[str]]]):
        items = sorted(docs, key=lambda d: d[0])
        self.ids: list[str] = [doc_id for doc_id, _ in items]
        if len(set(self.ids)) != len(self.ids):
            raise SamplingError("duplicate doc_id in pool")
        self.tokens_by_id: dict[str, tuple[str, ...]] = {
            doc_id: tuple(toks) for doc_id, toks in items
        }
        self._index = {doc_id: i for i, doc_id in enumerate(self.ids)}
        self._active = np.ones(len(self.ids), dtype=bool)

        vocab: dict[str, int] = {}
        for _, toks in items:
            for t in toks:
                if t not in vocab:
                    vocab[t] = len(vocab) + 1  # id 0 is the padding slot
        self._vocab = vocab
        max_len = max((len(t) for _, t in items), default=0)
        padded = np.zeros((len(items), max_len), dtype=np.int32)
        for i, (_, toks) in enumerate(items):
            if toks:
                padded[i, : len(toks)] = [vocab[t] for t in toks]
        self._padded = padded

    def fresh_copy(self) -> "Pool":
        """New pool over the same documents with every doc unlabeled.

        The encoded matrices are immutable after construction, so clones
        share them; only the active mask is per-clone.
        """
        clone = object.__new__(Pool)
        clone.ids = self.ids
        clone.tokens_by_id = self.tokens_by_id
        clone._index = self._index
        clone._vocab = self._vocab
        clone._padded = self._padded
        clone._active = np.ones(len(self.ids), dtype=bool)
        return clone

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_active(self) -> int:
        return int(self._active.sum())

    def active_ids(self) -> list[str]:
        return [self.ids[i] for i in np.flatnonzero(self._active)]

    def is_active(self, doc_id: str) -> bool:
        return bool(self._active[self._index[doc_id]])

    def mark_labeled(self, doc_ids: Iterable[str]) -> None:
        for doc_id in doc_ids:
            i = self._index.get(doc_id)
            if i is None:
                raise SamplingError(f"doc_id {doc_id!r} not in pool")
            if not self._active[i]:
                raise SamplingError(f"doc_id {doc_id!r} selected twice")
            self._active[i] = False

    def _weight_vector(self, classifier: Classifier) -> np.ndarray:
        vec = np.zeros(len(self._vocab) + 1, dtype=np.float64)
        vocab = self._vocab
        for feat, w in classifier.weights.items():
            idx = vocab.get(feat)
            if idx is not None:
                vec[idx] = w
        return vec

    def scores(self, classifier: Classifier) -> np.ndarray:
        """Scores for every pool document (active or not), in id order."""
        vec = self._weight_vector(classifier)
        gathered = vec[self._padded]
        acc = np.zeros(len(self.ids), dtype=np.float64)
        for j in range(gathered.shape[1]):
            acc += gathered[:, j]
        return acc

    def posteriors(self, classifier: Classifier) -> tuple[np.ndarray, np.ndarray]:
        """(active positions, posterior per active doc), in doc_id order."""
        idx = np.flatnonzero(self._active)
        s = self.scores(classifier)[idx]
        eta = classifier.logistic.intercept + classifier.logistic.slope * s
        return idx, _sigmoid_array(eta)


def _sigmoid_array(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=np.float64)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _select_uncertain_positions(p: np.ndarray, b: int) -> np.ndarray:
    """Positions of the batch, assuming positional order == doc_id ascending.

    Half the batch comes from each side of 0.5 (p == 0.5 counts as the
    upper side); a short side's deficit is filled from the other side.
    Stable sorts give the doc_id tie break for free.
    """
    above = np.flatnonzero(p >= 0.5)
    below = np.flatnonzero(p < 0.5)
    above_order = above[np.argsort(p[above] - 0.5, kind="stable")]
    below_order = below[np.argsort(0.5 - p[below], kind="stable")]
    half = b // 2
    take_above = min(half, len(above_order))
    take_below = min(half, len(below_order))
    shortfall = b - take_above - take_below
    if shortfall > 0:
        extra = min(shortfall, len(above_order) - take_above)
        take_above += extra
        shortfall -= extra
    if shortfall > 0:
        take_below += min(shortfall, len(below_order) - take_below)
    return np.concatenate([above_order[:take_above], below_order[:take_below]])


def _select_relevant_positions(p: np.ndarray, b: int) -> np.ndarray:
    order = np.argsort(-p, kind="stable")
    return order[: min(b, len(order))]


def select_uncertain(posteriors: Sequence[tuple[str, float]], b: int) -> list[str]:
    """Pick the b docs whose posteriors straddle 0.5 most closely."""
    if b < 2 or b % 2 != 0:
        raise SamplingError(f"batch size must be even and >= 2, got {b}")
    if not posteriors:
        raise SamplingError("empty pool")
    pairs = sorted(posteriors, key=lambda t: t[0])
    ids = [doc_id for doc_id, _ in pairs]
    p = np.array([v for _, v in pairs], dtype=np.float64)
    return [ids[i] for i in _select_uncertain_positions(p, b)]


def select_relevant(posteriors: Sequence[tuple[str, float]], b: int) -> list[str]:
    """Pick the b docs the classifier is most confident are members."""
    if b < 1:
        raise SamplingError(f"batch size must be positive, got {b}")
    pairs = sorted(posteriors, key=lambda t: t[0])
    ids = [doc_id for doc_id, _ in pairs]
    p = np.array([v for _, v in pairs], dtype=np.float64)
    return [ids[i] for i in _select_relevant_positions(p, b)]


def select_random(pool_ids: Sequence[str], n: int, seed: int) -> list[str]:
    """Seeded permutation prefix: samples of growing n nest exactly."""
    ids = sorted(pool_ids)
    if n > len(ids):
        raise SamplingError(f"requested {n} docs from a pool of {len(ids)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    return [ids[i] for i in perm[:n]]


@dataclass
class ActiveRunResult:
    initial_classifier: Classifier
    final_classifier: Classifier
    logs: list[IterationLog]
    labeled: list[LabeledExample]


def run_active_loop(
    pool: Pool,
    oracle: Callable[[str], bool] | Mapping[str, bool],
    starting: Sequence[LabeledExample],
    config: SamplingConfig,
    on_classifier: Callable[[int, Classifier], None] | None = None,
) -> ActiveRunResult:
    """Run the sampling loop until iterations or the pool run out.

    `on_classifier(iteration, clf)` fires for the initial classifier
    (iteration 0) and after every retrain; evaluation hangs off that hook
    so the loop itself never touches test data.
    """
    if not starting:
        raise SamplingError("starting labeled set must be non-empty")
    ask = oracle.__getitem__ if isinstance(oracle, Mapping) else oracle

    labeled = sorted(starting, key=lambda ex: ex.doc_id)
    for ex in labeled:
        if ex.doc_id in pool.tokens_by_id and pool.is_active(ex.doc_id):
            pool.mark_labeled([ex.doc_id])
    required = sorted({t for ex in labeled for t in ex.tokens})

    def retrain() -> Classifier:
        return train(labeled, required=required, fraction=config.selection_fraction, loss=config.loss)

    clf = retrain()
    initial = clf
    if on_classifier is not None:
        on_classifier(0, clf)

    random_order: list[str] | None = None
    if config.strategy == "random":
        random_order = select_random(pool.active_ids(), pool.n_active, config.seed)
    random_cursor = 0

    logs: list[IterationLog] = []
    for k in range(1, config.iterations + 1):
        if pool.n_active == 0:
            break
        if config.strategy == "random":
            end = min(random_cursor + config.batch_size, len(random_order))
            selected = random_order[random_cursor:end]
            random_cursor = end
        else:
            idx, p = pool.posteriors(clf)
            if config.strategy == "uncertainty":
                positions = _select_uncertain_positions(p, config.batch_size)
            else:
                positions = _select_relevant_positions(p, config.batch_size)
            selected = [pool.ids[idx[i]] for i in positions]

        labels: dict[str, bool] = {}
        for doc_id in selected:
            try:
                labels[doc_id] = bool(ask(doc_id))
            except Exception as exc:  # noqa: BLE001 - partial log must survive
                raise OracleFailure(exc, logs) from exc
        pool.mark_labeled(selected)
        labeled.extend(
            LabeledExample(doc_id=d, tokens=pool.tokens_by_id[d], positive=labels[d])
            for d in selected
        )
        clf = retrain()
        if on_classifier is not None:
            on_classifier(k, clf)
        logs.append(
            IterationLog(
                iteration=k,
                selected_ids=list(selected),
                labels=labels,
                labeled_size=len(labeled),
                snapshot_hash=classifier_hash(clf),
            )
        )
    return ActiveRunResult(
        initial_classifier=initial, final_classifier=clf, logs=logs, labeled=labeled
    )
