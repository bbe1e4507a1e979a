"""Human-in-the-loop labeling sessions over HTTP/JSON.

A session is the sampling loop with a person supplying the labels: issue
an uncertainty batch, collect labels for exactly that batch, retrain,
repeat.  Every mutation is appended to a per-session event log before it
is acknowledged, so a crashed browser or server loses nothing: replaying
the log reproduces the session state, classifiers included, because
training is deterministic.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from fastapi import Depends, FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .classifier import (
    Classifier,
    LossMatrix,
    classifier_hash,
    decide_many,
    export_classifier,
    min_error_loss,
    train,
)
from .corpus import Document, LabeledExample, tokenize
from .evaluation import ConfusionCounts, EffectivenessReport, f_measure, precision, recall
from .sampling import Pool, _select_uncertain_positions, _sigmoid_array

__all__ = ["ServiceError", "Session", "SessionStore", "create_app"]

HISTOGRAM_BINS = 20


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _unknown_session(session_id: str) -> ServiceError:
    return ServiceError(404, "unknown_session", f"no session {session_id!r}")


@dataclass
class SessionConfig:
    batch_size: int = 4
    selection_fraction: float = 0.7
    loss: LossMatrix = field(default_factory=min_error_loss)

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ServiceError(400, "bad_config", "batch size must be even and >= 2")
        if not (0.0 < self.selection_fraction <= 1.0):
            raise ServiceError(400, "bad_config", "selection fraction must be in (0, 1]")


class Session:
    """One labeling session: pool, labeled set, classifier, pending batch."""

    def __init__(
        self,
        session_id: str,
        corpus_name: str,
        documents: Mapping[str, Document],
        seed_examples: list[tuple[str, bool]],
        seed_words: list[str],
        config: SessionConfig,
        holdout: list[tuple[str, bool]],
    ):
        if not seed_words and not any(lab for _, lab in seed_examples):
            raise ServiceError(400, "bad_seed", "need a positive seed example or seed words")
        if not documents:
            raise ServiceError(400, "empty_corpus", "corpus has no documents")
        unknown = [d for d, _ in seed_examples + holdout if d not in documents]
        if unknown:
            raise ServiceError(400, "unknown_doc", f"doc_ids not in corpus: {unknown[:5]}")

        self.session_id = session_id
        self.corpus_name = corpus_name
        self.documents = documents
        self.config = config
        self.seed_examples = seed_examples
        self.seed_words = list(seed_words)
        self.holdout = holdout
        self.lock = threading.Lock()

        tokens = {doc_id: tuple(tokenize(doc.title)) for doc_id, doc in documents.items()}
        excluded = {d for d, _ in seed_examples} | {d for d, _ in holdout}
        self.pool = Pool(
            (doc_id, tokens[doc_id]) for doc_id in documents if doc_id not in excluded
        )
        self._tokens = tokens
        self.labeled: list[LabeledExample] = [
            LabeledExample(doc_id=d, tokens=tokens[d], positive=lab) for d, lab in seed_examples
        ]
        seed_doc_words = {t for ex in self.labeled for t in ex.tokens}
        self.required = sorted(seed_doc_words | set(seed_words))
        self.pending: list[str] | None = None
        self.iteration = 0
        self.history: list[dict] = []
        self.classifier = self._train_initial()

    def _train_initial(self) -> Classifier:
        training = list(self.labeled)
        if not training:
            # Seed-words-only session: train on a pseudo-title of the seed
            # words; it never joins the labeled set.
            training = [
                LabeledExample(doc_id="__seed_words__", tokens=tuple(self.seed_words), positive=True)
            ]
        return train(
            training,
            required=self.required,
            fraction=self.config.selection_fraction,
            loss=self.config.loss,
        )

    def _retrain(self) -> Classifier:
        if self.labeled:
            return train(
                self.labeled,
                required=self.required,
                fraction=self.config.selection_fraction,
                loss=self.config.loss,
            )
        return self._train_initial()

    @property
    def status(self) -> str:
        if self.pending is not None:
            return "awaiting_labels"
        if self.pool.n_active == 0:
            return "exhausted"
        return "idle"

    def next_batch(self) -> dict:
        if self.pending is not None:
            raise ServiceError(409, "batch_pending", "label the current batch first")
        if self.pool.n_active == 0:
            return {"items": [], "session_status": "exhausted", "remaining_unlabeled": 0}
        idx, p = self.pool.posteriors(self.classifier)
        positions = _select_uncertain_positions(p, self.config.batch_size)
        items = [
            {
                "doc_id": self.pool.ids[idx[i]],
                "title": self.documents[self.pool.ids[idx[i]]].title,
                "posterior": float(p[i]),
            }
            for i in positions
        ]
        self.pending = [item["doc_id"] for item in items]
        return {
            "items": items,
            "session_status": self.status,
            "remaining_unlabeled": self.pool.n_active - len(items),
        }

    def apply_batch_event(self, doc_ids: list[str]) -> None:
        """Replay path: restore a pending batch recorded in the event log."""
        self.pending = list(doc_ids)

    def submit_labels(self, labels: Mapping[str, bool]) -> dict:
        if self.pending is None:
            raise ServiceError(409, "no_pending_batch", "request a batch before labeling")
        if set(labels) != set(self.pending):
            missing = sorted(set(self.pending) - set(labels))
            extra = sorted(set(labels) - set(self.pending))
            raise ServiceError(
                422,
                "label_set_mismatch",
                f"labels must cover exactly the pending batch (missing {missing}, extraneous {extra})",
            )
        self.pool.mark_labeled(self.pending)
        self.labeled.extend(
            LabeledExample(doc_id=d, tokens=self._tokens[d], positive=bool(labels[d]))
            for d in self.pending
        )
        self.pending = None
        self.iteration += 1
        self.classifier = self._retrain()
        entry = {
            "iteration": self.iteration,
            "labeled_count": len(self.labeled),
            "positive_count": sum(ex.positive for ex in self.labeled),
            "snapshot_hash": classifier_hash(self.classifier),
        }
        report = self._holdout_effectiveness()
        if report is not None:
            entry["f1"] = report.f_beta
        self.history.append(entry)
        summary = dict(entry)
        summary["session_status"] = self.status
        if report is not None:
            summary["effectiveness"] = _report_dict(report)
        return summary

    def _holdout_effectiveness(self) -> EffectivenessReport | None:
        if not self.holdout:
            return None
        ids = [d for d, _ in self.holdout]
        actual = np.array([lab for _, lab in self.holdout], dtype=bool)
        scores = np.array(
            [self.classifier.score(self._tokens[d]) for d in ids], dtype=np.float64
        )
        eta = self.classifier.logistic.intercept + self.classifier.logistic.slope * scores
        decided = decide_many(_sigmoid_array(eta), min_error_loss())
        counts = ConfusionCounts(
            tp=int(np.count_nonzero(decided & actual)),
            fp=int(np.count_nonzero(decided & ~actual)),
            fn=int(np.count_nonzero(~decided & actual)),
            tn=int(np.count_nonzero(~decided & ~actual)),
        )
        r, p = recall(counts), precision(counts)
        return EffectivenessReport(
            recall=r, precision=p, f_beta=f_measure(r, p, 1.0), beta=1.0, counts=counts
        )

    def metrics(self) -> dict:
        idx, p = self.pool.posteriors(self.classifier)
        counts, edges = np.histogram(p, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
        out = {
            "session_id": self.session_id,
            "corpus": self.corpus_name,
            "status": self.status,
            "iteration": self.iteration,
            "labeled_count": len(self.labeled),
            "positive_count": sum(ex.positive for ex in self.labeled),
            "remaining_unlabeled": self.pool.n_active,
            "pending_doc_ids": list(self.pending) if self.pending else [],
            # enough to rebuild the batch screen after a page reload
            "pending_items": [
                {
                    "doc_id": d,
                    "title": self.documents[d].title,
                    "posterior": self.classifier.posterior(self._tokens[d]),
                }
                for d in (self.pending or [])
            ],
            "batch_size": self.config.batch_size,
            "history": list(self.history),
            "posterior_histogram": {
                "edges": [float(e) for e in edges],
                "counts": [int(c) for c in counts],
            },
        }
        report = self._holdout_effectiveness()
        if report is not None:
            out["effectiveness"] = _report_dict(report)
        return out

    def export(self) -> str:
        return export_classifier(self.classifier)


def _report_dict(report: EffectivenessReport) -> dict:
    c = report.counts
    return {
        "recall": report.recall,
        "precision": report.precision,
        "f1": report.f_beta,
        "tp": c.tp,
        "fp": c.fp,
        "fn": c.fn,
        "tn": c.tn,
    }


class SessionStore:
    """Sessions plus their append-only event logs."""

    def __init__(self, corpora: Mapping[str, list[Document]], store_dir: str | Path):
        self.corpora = {
            name: {d.doc_id: d for d in docs} for name, docs in corpora.items()
        }
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self._replay_all()

    def _log_path(self, session_id: str) -> Path:
        return self.store_dir / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict) -> None:
        with self._log_path(session_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n")

    def _replay_all(self) -> None:
        for path in sorted(self.store_dir.glob("*.jsonl")):
            try:
                self._replay_one(path)
            except ServiceError:
                # A log referencing a corpus not mounted this time; skip it.
                continue

    def _replay_one(self, path: Path) -> None:
        events = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
        if not events or events[0].get("event") != "created":
            return
        head = events[0]
        corpus_name = head["corpus"]
        if corpus_name not in self.corpora:
            raise ServiceError(400, "unknown_corpus", corpus_name)
        session = Session(
            session_id=head["session_id"],
            corpus_name=corpus_name,
            documents=self.corpora[corpus_name],
            seed_examples=[(d, bool(v)) for d, v in head["seed_examples"]],
            seed_words=list(head["seed_words"]),
            config=SessionConfig(
                batch_size=head["config"]["batch_size"],
                selection_fraction=head["config"]["selection_fraction"],
                loss=LossMatrix(**head["config"]["loss"]),
            ),
            holdout=[(d, bool(v)) for d, v in head["holdout"]],
        )
        for event in events[1:]:
            if event["event"] == "batch":
                session.apply_batch_event(event["doc_ids"])
            elif event["event"] == "labels":
                session.submit_labels({k: bool(v) for k, v in event["labels"].items()})
        self.sessions[session.session_id] = session

    def create(
        self,
        corpus_name: str,
        seed_examples: list[tuple[str, bool]],
        seed_words: list[str],
        config: SessionConfig,
        holdout: list[tuple[str, bool]],
    ) -> Session:
        if corpus_name not in self.corpora:
            raise ServiceError(404, "unknown_corpus", f"no corpus {corpus_name!r} mounted")
        session_id = "sess-" + uuid.uuid4().hex[:12]
        session = Session(
            session_id=session_id,
            corpus_name=corpus_name,
            documents=self.corpora[corpus_name],
            seed_examples=seed_examples,
            seed_words=seed_words,
            config=config,
            holdout=holdout,
        )
        with self._lock:
            self.sessions[session_id] = session
        self._append(
            session_id,
            {
                "event": "created",
                "session_id": session_id,
                "corpus": corpus_name,
                "seed_examples": [[d, bool(v)] for d, v in seed_examples],
                "seed_words": list(seed_words),
                "config": {
                    "batch_size": config.batch_size,
                    "selection_fraction": config.selection_fraction,
                    "loss": {
                        "tp": config.loss.tp,
                        "fp": config.loss.fp,
                        "fn": config.loss.fn,
                        "tn": config.loss.tn,
                    },
                },
                "holdout": [[d, bool(v)] for d, v in holdout],
            },
        )
        return session

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise _unknown_session(session_id)
        return session


class CreateSessionRequest(BaseModel):
    corpus: str = "default"
    seed_examples: dict[str, bool] | None = None
    seed_words: list[str] | None = None
    batch_size: int = 4
    selection_fraction: float = 0.7
    loss: dict[str, float] | None = None
    holdout: dict[str, bool] | None = None


class SubmitLabelsRequest(BaseModel):
    labels: dict[str, bool]


def create_app(
    corpora: Mapping[str, list[Document]],
    store_dir: str | Path,
    token: str | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Build the labeling service around the given named corpora."""
    app = FastAPI(title="activetext labeling service")
    store = SessionStore(corpora, store_dir)
    app.state.store = store

    def check_auth(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise ServiceError(401, "unauthorized", "missing or invalid token")

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "corpora": sorted(store.corpora)}

    @app.post("/v1/sessions", dependencies=[Depends(check_auth)])
    def create_session(body: CreateSessionRequest):
        config = SessionConfig(
            batch_size=body.batch_size,
            selection_fraction=body.selection_fraction,
            loss=LossMatrix(**body.loss) if body.loss else min_error_loss(),
        )
        session = store.create(
            corpus_name=body.corpus,
            seed_examples=sorted((body.seed_examples or {}).items()),
            seed_words=body.seed_words or [],
            config=config,
            holdout=sorted((body.holdout or {}).items()),
        )
        return {"session_id": session.session_id, "session_status": session.status}

    @app.post("/v1/sessions/{session_id}/batch", dependencies=[Depends(check_auth)])
    def next_batch(session_id: str):
        session = store.get(session_id)
        with session.lock:
            result = session.next_batch()
            if result["items"]:
                store._append(
                    session_id, {"event": "batch", "doc_ids": [i["doc_id"] for i in result["items"]]}
                )
        return result

    @app.post("/v1/sessions/{session_id}/labels", dependencies=[Depends(check_auth)])
    def submit_labels(session_id: str, body: SubmitLabelsRequest):
        session = store.get(session_id)
        with session.lock:
            summary = session.submit_labels(body.labels)
            store._append(
                session_id,
                {"event": "labels", "labels": {k: bool(v) for k, v in body.labels.items()}},
            )
        return summary

    @app.get("/v1/sessions/{session_id}/metrics", dependencies=[Depends(check_auth)])
    def session_metrics(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.metrics()

    @app.get("/v1/sessions/{session_id}/classifier", dependencies=[Depends(check_auth)])
    def export_endpoint(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return Response(content=session.export(), media_type="application/json")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
