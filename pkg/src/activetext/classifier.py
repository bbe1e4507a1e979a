"""Probabilistic title classifier: smoothed log likelihood ratios plus
a one-predictor logistic calibration.

Training runs in four steps: estimate a smoothed per-word log likelihood
ratio from token counts, keep the highest-quality words per sign group,
score every training title by summing the kept ratios, then fit a
two-parameter logistic curve mapping score to class probability.  The
smoothing keeps every ratio finite even when one class has no tokens at
all, which is the normal state right after seeding with a few positives.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import LabeledExample

__all__ = [
    "FeatureCounts",
    "LikelihoodTable",
    "FeatureSet",
    "LogisticParams",
    "LossMatrix",
    "Classifier",
    "ClassifierError",
    "likelihood_ratio",
    "estimate_ratios",
    "feature_quality",
    "select_features",
    "score",
    "fit_logistic",
    "sigmoid",
    "posterior",
    "decide",
    "decide_many",
    "train",
    "min_error_loss",
    "export_classifier",
    "load_classifier",
    "classifier_hash",
]

RIDGE_LAMBDA = 1e-6
GRAD_TOL = 1e-8
MAX_NEWTON_ITER = 100


class ClassifierError(Exception):
    pass


@dataclass(frozen=True)
class FeatureCounts:
    """Token counts backing the ratio estimates.

    pos_counts/neg_counts hold occurrences of each candidate word in the
    positive/negative training titles; pos_total/neg_total are the token
    totals of each side; n_features is the number of distinct candidates.
    """

    pos_counts: dict[str, int]
    neg_counts: dict[str, int]
    pos_total: int
    neg_total: int
    n_features: int

    def quality(self, feature: str, log_ratio: float) -> float:
        return (self.pos_counts.get(feature, 0) + self.neg_counts.get(feature, 0)) * log_ratio


@dataclass(frozen=True)
class LikelihoodTable:
    """Per-word log likelihood ratios plus the counts that produced them."""

    log_ratios: dict[str, float]
    provenance: FeatureCounts | None = None

    def __contains__(self, feature: str) -> bool:
        return feature in self.log_ratios


@dataclass(frozen=True)
class FeatureSet:
    """Selected scoring vocabulary; required words are always kept."""

    selected: frozenset[str]
    required: frozenset[str]
    selection_fraction: float = 0.7

    def __post_init__(self):
        if not self.required <= self.selected:
            raise ClassifierError("required features must be a subset of selected")


@dataclass(frozen=True)
class LogisticParams:
    intercept: float
    slope: float

    def __post_init__(self):
        if not (math.isfinite(self.intercept) and math.isfinite(self.slope)):
            raise ClassifierError("logistic parameters must be finite")


@dataclass(frozen=True)
class LossMatrix:
    """Decision losses: fp = accept a non-member, fn = reject a member."""

    tp: float = 0.0
    fp: float = 1.0
    fn: float = 1.0
    tn: float = 0.0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ClassifierError("losses must be non-negative")
        # A wrong decision may never be cheaper than the matching right one,
        # otherwise the expected-loss rule degenerates.
        if self.fn < self.tp or self.fp < self.tn:
            raise ClassifierError("wrong decisions must cost at least as much as right ones")


def min_error_loss() -> LossMatrix:
    """Losses for minimum error rate: both mistakes cost 1."""
    return LossMatrix(tp=0.0, fp=1.0, fn=1.0, tn=0.0)


@dataclass(frozen=True)
class Classifier:
    feature_set: FeatureSet
    table: LikelihoodTable
    logistic: LogisticParams
    loss: LossMatrix
    # log_ratios restricted to the selected vocabulary; this is the only
    # table scoring ever consults.
    weights: dict[str, float] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        missing = [f for f in self.feature_set.selected if f not in self.table.log_ratios]
        if missing:
            raise ClassifierError(f"selected features missing from table: {missing[:5]}")
        if not self.weights:
            object.__setattr__(
                self,
                "weights",
                {f: self.table.log_ratios[f] for f in self.feature_set.selected},
            )

    def score(self, tokens: Sequence[str]) -> float:
        return score(tokens, self)

    def posterior(self, tokens: Sequence[str]) -> float:
        return posterior(tokens, self)

    def decide_tokens(self, tokens: Sequence[str]) -> bool:
        return decide(self.posterior(tokens), self.loss)


def likelihood_ratio(c_p: int, c_n: int, n_p: int, n_n: int, d: int) -> float:
    """Smoothed estimate of P(word|member) / P(word|non-member).

    The additive term (n+0.5)/(total+1) per class keeps the ratio strictly
    positive and finite for any non-negative integer counts, including a
    class with zero tokens.  Symmetric counts give exactly 1.
    """
    if d < 1:
        raise ClassifierError("need at least one candidate feature")
    total = n_p + n_n + 1.0
    s_p = (n_p + 0.5) / total
    s_n = (n_n + 0.5) / total
    num = (c_p + s_p) / (n_p + d * s_p)
    den = (c_n + s_n) / (n_n + d * s_n)
    return num / den


def estimate_ratios(labeled: Iterable[LabeledExample]) -> tuple[FeatureCounts, LikelihoodTable]:
    """Count tokens per class and build the full candidate ratio table.

    Candidates are all distinct tokens across the labeled examples; the
    feature count d is recomputed from scratch on every call.
    """
    pos_counts: dict[str, int] = {}
    neg_counts: dict[str, int] = {}
    pos_total = 0
    neg_total = 0
    n_examples = 0
    for ex in labeled:
        n_examples += 1
        counts = pos_counts if ex.positive else neg_counts
        for tok in ex.tokens:
            counts[tok] = counts.get(tok, 0) + 1
        if ex.positive:
            pos_total += len(ex.tokens)
        else:
            neg_total += len(ex.tokens)
    if n_examples == 0:
        raise ClassifierError("cannot estimate ratios from an empty labeled set")
    if pos_total + neg_total == 0:
        raise ClassifierError("labeled set contains no tokens")
    candidates = sorted(set(pos_counts) | set(neg_counts))
    d = len(candidates)
    log_ratios = {
        f: math.log(
            likelihood_ratio(
                pos_counts.get(f, 0), neg_counts.get(f, 0), pos_total, neg_total, d
            )
        )
        for f in candidates
    }
    fc = FeatureCounts(
        pos_counts=pos_counts,
        neg_counts=neg_counts,
        pos_total=pos_total,
        neg_total=neg_total,
        n_features=d,
    )
    return fc, LikelihoodTable(log_ratios=log_ratios, provenance=fc)


def feature_quality(feature: str, counts: FeatureCounts, table: LikelihoodTable) -> float:
    """Evidence mass of a word: (occurrences in both classes) * log ratio."""
    return counts.quality(feature, table.log_ratios[feature])


def select_features(
    counts: FeatureCounts,
    table: LikelihoodTable,
    required: Iterable[str],
    fraction: float,
) -> FeatureSet:
    """Keep the best words until `fraction` of each sign group's quality is covered.

    Positive-ratio and negative-ratio words form separate groups; within a
    group, words are taken in descending |quality| until the running sum
    reaches fraction * (group total).  Required words join regardless.
    Ties break on the word string ascending, so selection is reproducible.
    """
    if not (0.0 < fraction <= 1.0):
        raise ClassifierError(f"selection fraction must be in (0, 1], got {fraction}")
    pos_group: list[tuple[float, str]] = []
    neg_group: list[tuple[float, str]] = []
    for feat, lr in table.log_ratios.items():
        q = counts.quality(feat, lr)
        if lr > 0 and q > 0:
            pos_group.append((q, feat))
        elif lr < 0 and q < 0:
            neg_group.append((-q, feat))

    def take(group: list[tuple[float, str]]) -> list[str]:
        group.sort(key=lambda t: (-t[0], t[1]))
        total = sum(q for q, _ in group)
        threshold = fraction * total
        chosen = []
        cum = 0.0
        for q, feat in group:
            if cum >= threshold:
                break
            chosen.append(feat)
            cum += q
        return chosen

    required_in_vocab = frozenset(f for f in required if f in table.log_ratios)
    selected = frozenset(take(pos_group)) | frozenset(take(neg_group)) | required_in_vocab
    return FeatureSet(selected=selected, required=required_in_vocab, selection_fraction=fraction)


def score(tokens: Sequence[str], classifier: Classifier) -> float:
    """Sum of log ratios over token occurrences, selected words only."""
    weights = classifier.weights
    total = 0.0
    for tok in tokens:
        w = weights.get(tok)
        if w is not None:
            total += w
    return total


def _penalized_loglik(a: float, b: float, x: np.ndarray, y: np.ndarray) -> float:
    eta = a + b * x
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll - RIDGE_LAMBDA * (a * a + b * b)


def fit_logistic(points: Sequence[tuple[float, bool]]) -> LogisticParams:
    """Ridge-penalized maximum likelihood for the score->probability curve.

    Newton iterations with step halving on the penalized log likelihood;
    the tiny ridge term guarantees a unique finite optimum even under
    complete separation, which small labeled sets produce routinely.
    A one-class input cannot identify the curve, so it passes scores
    through unchanged: (intercept, slope) = (0, 1).
    """
    if not points:
        raise ClassifierError("cannot fit logistic curve to no points")
    x = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([1.0 if p[1] else 0.0 for p in points], dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ClassifierError("non-finite score in logistic fit input")
    if y.min() == y.max():
        return LogisticParams(intercept=0.0, slope=1.0)

    theta = np.zeros(2)
    ll = _penalized_loglik(theta[0], theta[1], x, y)
    for _ in range(MAX_NEWTON_ITER):
        eta = theta[0] + theta[1] * x
        p = _sigmoid_array(eta)
        resid = y - p
        grad = np.array(
            [
                float(np.sum(resid)) - 2.0 * RIDGE_LAMBDA * theta[0],
                float(np.sum(resid * x)) - 2.0 * RIDGE_LAMBDA * theta[1],
            ]
        )
        if np.max(np.abs(grad)) < GRAD_TOL:
            break
        w = p * (1.0 - p)
        h00 = float(np.sum(w)) + 2.0 * RIDGE_LAMBDA
        h01 = float(np.sum(w * x))
        h11 = float(np.sum(w * x * x)) + 2.0 * RIDGE_LAMBDA
        try:
            step = np.linalg.solve(np.array([[h00, h01], [h01, h11]]), grad)
        except np.linalg.LinAlgError:
            step = grad / max(h00, h11)
        # Halve the step until the penalized likelihood improves; the
        # objective is strictly concave so this always terminates.
        scale = 1.0
        for _ in range(60):
            cand = theta + scale * step
            cand_ll = _penalized_loglik(cand[0], cand[1], x, y)
            if cand_ll >= ll:
                theta = cand
                ll = cand_ll
                break
            scale *= 0.5
        else:
            break
    return LogisticParams(intercept=float(theta[0]), slope=float(theta[1]))


def logistic_gradient(
    params: LogisticParams, points: Sequence[tuple[float, bool]]
) -> tuple[float, float]:
    """Analytic gradient of the penalized log likelihood at params."""
    x = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([1.0 if p[1] else 0.0 for p in points], dtype=np.float64)
    p = _sigmoid_array(params.intercept + params.slope * x)
    resid = y - p
    ga = float(np.sum(resid)) - 2.0 * RIDGE_LAMBDA * params.intercept
    gb = float(np.sum(resid * x)) - 2.0 * RIDGE_LAMBDA * params.slope
    return ga, gb


def sigmoid(eta: float) -> float:
    """Numerically stable logistic function, safe for |eta| up to 1e4."""
    if eta >= 0.0:
        return 1.0 / (1.0 + math.exp(-eta))
    e = math.exp(eta)
    return e / (1.0 + e)


def _sigmoid_array(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=np.float64)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def posterior(tokens: Sequence[str], classifier: Classifier) -> float:
    """Estimated probability of class membership for one title."""
    s = score(tokens, classifier)
    return sigmoid(classifier.logistic.intercept + classifier.logistic.slope * s)


def decide(p: float, loss: LossMatrix) -> bool:
    """Expected-loss decision: accept membership exactly when rejecting
    costs more.  Equality goes to the negative class."""
    reject_cost = loss.fn * p + loss.tn * (1.0 - p)
    accept_cost = loss.tp * p + loss.fp * (1.0 - p)
    return reject_cost > accept_cost


def decide_many(p: np.ndarray, loss: LossMatrix) -> np.ndarray:
    """Vectorized decide(); same inequality evaluated per element."""
    reject_cost = loss.fn * p + loss.tn * (1.0 - p)
    accept_cost = loss.tp * p + loss.fp * (1.0 - p)
    return reject_cost > accept_cost


def train(
    labeled: Sequence[LabeledExample],
    required: Iterable[str] = (),
    fraction: float = 0.7,
    loss: LossMatrix | None = None,
) -> Classifier:
    """Full training pass over the labeled set.

    Deterministic in its inputs: identical labeled sets give bit-identical
    classifiers regardless of example order.
    """
    ordered = sorted(labeled, key=lambda ex: ex.doc_id)
    counts, table = estimate_ratios(ordered)
    feature_set = select_features(counts, table, required, fraction)
    clf_for_scoring = Classifier(
        feature_set=feature_set,
        table=table,
        logistic=LogisticParams(0.0, 1.0),
        loss=loss or min_error_loss(),
    )
    points = [(score(ex.tokens, clf_for_scoring), ex.positive) for ex in ordered]
    params = fit_logistic(points)
    return Classifier(
        feature_set=feature_set,
        table=table,
        logistic=params,
        loss=loss or min_error_loss(),
    )


EXPORT_FORMAT = "activetext-classifier-v1"


def export_classifier(classifier: Classifier) -> str:
    """Serialize to canonical JSON.

    Floats go through repr, so a reload reproduces every posterior
    bit-exactly at double precision.
    """
    prov = classifier.table.provenance
    doc = {
        "format": EXPORT_FORMAT,
        "features": {f: classifier.table.log_ratios[f] for f in sorted(classifier.feature_set.selected)},
        "required": sorted(classifier.feature_set.required),
        "selection_fraction": classifier.feature_set.selection_fraction,
        "intercept": classifier.logistic.intercept,
        "slope": classifier.logistic.slope,
        "loss": {
            "tp": classifier.loss.tp,
            "fp": classifier.loss.fp,
            "fn": classifier.loss.fn,
            "tn": classifier.loss.tn,
        },
        "provenance": None
        if prov is None
        else {
            "pos_tokens": prov.pos_total,
            "neg_tokens": prov.neg_total,
            "n_candidate_features": prov.n_features,
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def load_classifier(text: str) -> Classifier:
    """Reload an exported classifier document."""
    doc = json.loads(text)
    if doc.get("format") != EXPORT_FORMAT:
        raise ClassifierError(f"unknown export format {doc.get('format')!r}")
    table = LikelihoodTable(log_ratios=dict(doc["features"]), provenance=None)
    feature_set = FeatureSet(
        selected=frozenset(doc["features"]),
        required=frozenset(doc["required"]),
        selection_fraction=doc["selection_fraction"],
    )
    loss = LossMatrix(**doc["loss"])
    return Classifier(
        feature_set=feature_set,
        table=table,
        logistic=LogisticParams(intercept=doc["intercept"], slope=doc["slope"]),
        loss=loss,
    )


def classifier_hash(classifier: Classifier) -> str:
    """Content hash of the export document, used as snapshot reference."""
    return hashlib.sha256(export_classifier(classifier).encode("utf-8")).hexdigest()
