import json

import pytest
from fastapi.testclient import TestClient

from activetext.classifier import export_classifier
from activetext.corpus import LabeledExample, tokenize
from activetext.harness import SyntheticCorpusSpec, generate_synthetic_corpus
from activetext.sampling import Pool, SamplingConfig, run_active_loop
from activetext.service import create_app


@pytest.fixture(scope="module")
def corpus():
    spec = SyntheticCorpusSpec(corpus_size=200, class_prior=0.1, seed=31)
    docs, oracle = generate_synthetic_corpus(spec)
    return docs, oracle


@pytest.fixture()
def client(corpus, tmp_path):
    docs, _ = corpus
    app = create_app({"default": docs}, store_dir=tmp_path / "sessions")
    return TestClient(app)


def _seed_ids(corpus, n=3, positive=True):
    docs, oracle = corpus
    return sorted(d.doc_id for d in docs if oracle[d.doc_id] == positive)[:n]


def _create(client, corpus, **kwargs):
    seeds = {d: True for d in _seed_ids(corpus)}
    body = {"corpus": "default", "seed_examples": seeds, "batch_size": 4}
    body.update(kwargs)
    resp = client.post("/v1/sessions", json=body)
    assert resp.status_code == 200, resp.text
    return resp.json()["session_id"]


def test_health(client):
    resp = client.get("/v1/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_create_session_with_seed_docs(client, corpus):
    session_id = _create(client, corpus)
    metrics = client.get(f"/v1/sessions/{session_id}/metrics").json()
    assert metrics["labeled_count"] == 3
    assert metrics["positive_count"] == 3
    assert metrics["status"] == "idle"
    assert metrics["history"] == []


def test_create_session_with_seed_words_only(client):
    resp = client.post(
        "/v1/sessions",
        json={"corpus": "default", "seed_words": ["tw000", "tw001", "tw002"]},
    )
    assert resp.status_code == 200
    metrics = client.get(f"/v1/sessions/{resp.json()['session_id']}/metrics").json()
    assert metrics["labeled_count"] == 0
    assert metrics["status"] == "idle"


def test_create_session_requires_seeds(client):
    resp = client.post("/v1/sessions", json={"corpus": "default"})
    assert resp.status_code == 400
    assert resp.json()["code"] == "bad_seed"


def test_create_session_unknown_corpus(client):
    resp = client.post(
        "/v1/sessions", json={"corpus": "nope", "seed_words": ["x"]}
    )
    assert resp.status_code == 404
    assert resp.json()["code"] == "unknown_corpus"


def test_batch_and_labels_cycle(client, corpus):
    docs, oracle = corpus
    session_id = _create(client, corpus)
    batch = client.post(f"/v1/sessions/{session_id}/batch").json()
    assert len(batch["items"]) == 4
    for item in batch["items"]:
        assert set(item) == {"doc_id", "title", "posterior"}
    labels = {item["doc_id"]: oracle[item["doc_id"]] for item in batch["items"]}
    summary = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels}).json()
    assert summary["labeled_count"] == 7
    assert summary["iteration"] == 1
    assert "snapshot_hash" in summary


def test_double_batch_conflicts(client, corpus):
    session_id = _create(client, corpus)
    assert client.post(f"/v1/sessions/{session_id}/batch").status_code == 200
    resp = client.post(f"/v1/sessions/{session_id}/batch")
    assert resp.status_code == 409
    assert resp.json()["code"] == "batch_pending"


def test_labels_without_batch_conflict(client, corpus):
    session_id = _create(client, corpus)
    resp = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": {"x": True}})
    assert resp.status_code == 409
    assert resp.json()["code"] == "no_pending_batch"


def test_partial_labels_rejected_atomically(client, corpus):
    session_id = _create(client, corpus)
    batch = client.post(f"/v1/sessions/{session_id}/batch").json()
    before = client.get(f"/v1/sessions/{session_id}/metrics").json()
    partial = {i["doc_id"]: True for i in batch["items"][:3]}
    resp = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": partial})
    assert resp.status_code == 422
    assert resp.json()["code"] == "label_set_mismatch"
    after = client.get(f"/v1/sessions/{session_id}/metrics").json()
    assert after == before
    assert after["status"] == "awaiting_labels"


def test_extraneous_labels_rejected(client, corpus):
    session_id = _create(client, corpus)
    batch = client.post(f"/v1/sessions/{session_id}/batch").json()
    labels = {i["doc_id"]: True for i in batch["items"]}
    labels["not-in-batch"] = False
    resp = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels})
    assert resp.status_code == 422


def test_all_negative_labels_fine(client, corpus):
    session_id = _create(client, corpus)
    batch = client.post(f"/v1/sessions/{session_id}/batch").json()
    labels = {i["doc_id"]: False for i in batch["items"]}
    resp = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels})
    assert resp.status_code == 200


def test_unknown_session_404(client):
    for path in ("metrics", "classifier"):
        assert client.get(f"/v1/sessions/ghost/{path}").status_code == 404
    assert client.post("/v1/sessions/ghost/batch").status_code == 404


def test_small_pool_returns_remainder_and_exhausts(corpus, tmp_path):
    docs, oracle = corpus
    small = docs[:9]  # 3 seeds + 6 pool docs
    seeds = {d.doc_id: oracle[d.doc_id] for d in small[:3]}
    if not any(seeds.values()):
        seeds[small[0].doc_id] = True
    app = create_app({"default": small}, store_dir=tmp_path / "s")
    client = TestClient(app)
    resp = client.post(
        "/v1/sessions", json={"corpus": "default", "seed_examples": seeds, "batch_size": 4}
    )
    session_id = resp.json()["session_id"]
    b1 = client.post(f"/v1/sessions/{session_id}/batch").json()
    assert len(b1["items"]) == 4
    client.post(
        f"/v1/sessions/{session_id}/labels",
        json={"labels": {i["doc_id"]: False for i in b1["items"]}},
    )
    b2 = client.post(f"/v1/sessions/{session_id}/batch").json()
    assert len(b2["items"]) == 2
    assert b2["remaining_unlabeled"] == 0
    client.post(
        f"/v1/sessions/{session_id}/labels",
        json={"labels": {i["doc_id"]: False for i in b2["items"]}},
    )
    b3 = client.post(f"/v1/sessions/{session_id}/batch").json()
    assert b3["items"] == [] and b3["session_status"] == "exhausted"


def test_metrics_histogram_and_counts(client, corpus):
    docs, oracle = corpus
    session_id = _create(client, corpus)
    metrics = client.get(f"/v1/sessions/{session_id}/metrics").json()
    hist = metrics["posterior_histogram"]
    assert len(hist["counts"]) == 20 and len(hist["edges"]) == 21
    assert sum(hist["counts"]) == metrics["remaining_unlabeled"] == len(docs) - 3


def test_holdout_effectiveness_reported(client, corpus):
    docs, oracle = corpus
    seeds = {d: True for d in _seed_ids(corpus)}
    holdout_ids = [d.doc_id for d in docs[-30:]]
    holdout = {d: oracle[d] for d in holdout_ids}
    resp = client.post(
        "/v1/sessions",
        json={"corpus": "default", "seed_examples": seeds, "holdout": holdout},
    )
    session_id = resp.json()["session_id"]
    metrics = client.get(f"/v1/sessions/{session_id}/metrics").json()
    assert "effectiveness" in metrics
    assert metrics["remaining_unlabeled"] == len(docs) - 3 - 30
    batch = client.post(f"/v1/sessions/{session_id}/batch").json()
    labels = {i["doc_id"]: oracle[i["doc_id"]] for i in batch["items"]}
    summary = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels}).json()
    assert "effectiveness" in summary and "f1" in summary["effectiveness"]


def test_export_round_trip_and_changes(client, corpus):
    docs, oracle = corpus
    session_id = _create(client, corpus)
    first = client.get(f"/v1/sessions/{session_id}/classifier")
    assert first.status_code == 200
    again = client.get(f"/v1/sessions/{session_id}/classifier")
    assert first.content == again.content
    batch = client.post(f"/v1/sessions/{session_id}/batch").json()
    labels = {i["doc_id"]: oracle[i["doc_id"]] for i in batch["items"]}
    client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels})
    after = client.get(f"/v1/sessions/{session_id}/classifier")
    assert after.content != first.content
    from activetext.classifier import load_classifier

    clf = load_classifier(after.content.decode("utf-8"))
    assert clf.logistic is not None


def test_persistence_replays_after_restart(corpus, tmp_path):
    docs, oracle = corpus
    store_dir = tmp_path / "sessions"
    app = create_app({"default": docs}, store_dir=store_dir)
    client = TestClient(app)
    session_id = _create(client, corpus)
    for _ in range(2):
        batch = client.post(f"/v1/sessions/{session_id}/batch").json()
        labels = {i["doc_id"]: oracle[i["doc_id"]] for i in batch["items"]}
        client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels})
    pending = client.post(f"/v1/sessions/{session_id}/batch").json()
    before_metrics = client.get(f"/v1/sessions/{session_id}/metrics").json()
    before_export = client.get(f"/v1/sessions/{session_id}/classifier").content

    # simulate a restart: brand-new app over the same store directory
    app2 = create_app({"default": docs}, store_dir=store_dir)
    client2 = TestClient(app2)
    after_metrics = client2.get(f"/v1/sessions/{session_id}/metrics").json()
    assert after_metrics == before_metrics
    assert after_metrics["pending_doc_ids"] == [i["doc_id"] for i in pending["items"]]
    assert client2.get(f"/v1/sessions/{session_id}/classifier").content == before_export
    # and the replayed session is still usable
    labels = {d: oracle[d] for d in after_metrics["pending_doc_ids"]}
    resp = client2.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels})
    assert resp.status_code == 200


def test_token_auth(corpus, tmp_path):
    docs, _ = corpus
    app = create_app({"default": docs}, store_dir=tmp_path / "s", token="hunter2")
    client = TestClient(app)
    assert client.get("/v1/health").status_code == 200  # health stays open
    resp = client.post("/v1/sessions", json={"corpus": "default", "seed_words": ["x"]})
    assert resp.status_code == 401
    resp = client.post(
        "/v1/sessions",
        json={"corpus": "default", "seed_words": ["tw000"]},
        headers={"Authorization": "Bearer hunter2"},
    )
    assert resp.status_code == 200


def test_api_path_equals_library_path(client, corpus):
    """A scripted oracle-labeled session must reproduce run_active_loop."""
    docs, oracle = corpus
    seed_ids = _seed_ids(corpus)
    iterations = 5

    session_id = _create(client, corpus)
    api_hashes = []
    for _ in range(iterations):
        batch = client.post(f"/v1/sessions/{session_id}/batch").json()
        labels = {i["doc_id"]: oracle[i["doc_id"]] for i in batch["items"]}
        summary = client.post(f"/v1/sessions/{session_id}/labels", json={"labels": labels}).json()
        api_hashes.append(summary["snapshot_hash"])
    api_export = client.get(f"/v1/sessions/{session_id}/classifier").content.decode("utf-8")

    tokens = {d.doc_id: tuple(tokenize(d.title)) for d in docs}
    pool = Pool((d.doc_id, tokens[d.doc_id]) for d in docs)
    starting = [LabeledExample(d, tokens[d], True) for d in seed_ids]
    config = SamplingConfig(batch_size=4, iterations=iterations, strategy="uncertainty", seed=0)
    result = run_active_loop(pool, oracle, starting, config)

    assert [log.snapshot_hash for log in result.logs] == api_hashes
    assert export_classifier(result.final_classifier) == api_export
