from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from scorer_bridge.app import create_app
from scorer_bridge.config import BridgeConfig
from scorer_bridge.replay import ReplayError, ReplayStore


@pytest.fixture
def fixture_file(tmp_path):
    exchanges = [
        {"request": {"path": "/score",
                     "body": {"query": "q1",
                              "candidates": [{"id": "a", "text": "t a"},
                                             {"id": "b", "text": "t b"}]}},
         "response": {"scores": [{"id": "a", "score": 0.25},
                                 {"id": "b", "score": 0.7500000000000001}]}},
        {"request": {"path": "/attention",
                     "body": {"query": "q1",
                              "candidates": [{"id": "p", "text": "x y"}]}},
         "response": {"tensors": [{"id": "p", "layers": 1, "heads": 1,
                                   "tokens": 3,
                                   "query_token_mask": [True, False, False],
                                   "scores": [[[0.2, 0.3, 0.5]]]}]}},
    ]
    path = tmp_path / "fixtures.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for ex in exchanges:
            fh.write(json.dumps(ex, ensure_ascii=False) + "\n")
    return path, exchanges


@pytest.fixture
def client(fixture_file):
    path, _ = fixture_file
    return TestClient(create_app(BridgeConfig(
        score_model=None, attention_model=None, replay_fixtures=str(path))))


class TestReplay:
    def test_golden_fixture_served_byte_identically(self, client, fixture_file):
        _, exchanges = fixture_file
        for exchange in exchanges:
            resp = client.post(exchange["request"]["path"],
                               json=exchange["request"]["body"])
            assert resp.status_code == 200
            expected = json.dumps(exchange["response"], ensure_ascii=False)
            assert resp.content == expected.encode("utf-8")

    def test_candidate_order_matters_for_matching(self, client, fixture_file):
        _, exchanges = fixture_file
        body = json.loads(json.dumps(exchanges[0]["request"]["body"]))
        body["candidates"].reverse()
        assert client.post("/score", json=body).status_code == 404

    def test_unknown_request_is_404(self, client):
        resp = client.post("/score", json={"query": "never recorded",
                                           "candidates": []})
        assert resp.status_code == 404

    def test_health_reports_replay(self, client):
        assert client.get("/health").json()["model"] == "replay"

    def test_repeated_requests_stay_stable(self, client, fixture_file):
        _, exchanges = fixture_file
        request = exchanges[0]["request"]
        first = client.post(request["path"], json=request["body"]).content
        second = client.post(request["path"], json=request["body"]).content
        assert first == second


class TestStore:
    def test_load_counts_exchanges(self, fixture_file):
        path, _ = fixture_file
        assert len(ReplayStore.load(path)) == 2

    def test_malformed_fixture_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"request": {"path": "/score"}}\n')
        with pytest.raises(ReplayError, match=":1"):
            ReplayStore.load(path)
