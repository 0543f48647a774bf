"""FastAPI application implementing the scoring wire protocol.

Endpoints (JSON, UTF-8):
    POST /score      -> {"scores": [{"id", "score"}]}
    POST /attention  -> {"tensors": [{"id", "layers", "heads", "tokens",
                                      "query_token_mask", "scores"}]}
    GET  /health     -> {"status": "ok", "model": "<score>+<attention>"}

Oversized batches get 413; inference failures get 500 with the candidate
ids; in replay mode an unrecorded request gets 404.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from scorer_bridge.backends import (
    BackendError,
    make_attention_backend,
    make_score_backend,
)
from scorer_bridge.config import BridgeConfig
from scorer_bridge.replay import ReplayStore

logger = logging.getLogger(__name__)


class Candidate(BaseModel):
    id: str
    text: str


class ScoringRequest(BaseModel):
    query: str
    candidates: list[Candidate] = Field(default_factory=list)


def create_app(config: BridgeConfig) -> FastAPI:
    config.validate()
    app = FastAPI(title="scorer-bridge")

    replay: ReplayStore | None = None
    score_backend = None
    attention_backend = None
    if config.replay_fixtures:
        replay = ReplayStore.load(config.replay_fixtures)
        logger.info("replay mode: %d recorded exchanges", len(replay))
        model_label = "replay"
    else:
        if config.score_model:
            score_backend = make_score_backend(config.score_model, config.device)
        if config.attention_model:
            attention_backend = make_attention_backend(config.attention_model,
                                                       config.device)
        model_label = "+".join(
            b.name for b in (score_backend, attention_backend) if b is not None)

    def check_batch(request: ScoringRequest) -> list[tuple[str, str]]:
        if len(request.candidates) > config.max_batch_size:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(request.candidates)} exceeds "
                       f"max_batch_size {config.max_batch_size}")
        return [(c.id, c.text) for c in request.candidates]

    def replayed(path: str, request: ScoringRequest) -> Response:
        body = replay.lookup(path, request.model_dump())
        if body is None:
            raise HTTPException(status_code=404,
                                detail=f"no recorded response for this {path} request")
        return Response(content=body, media_type="application/json")

    @app.get("/health")
    def health():
        return {"status": "ok", "model": model_label}

    @app.post("/score")
    def score(request: ScoringRequest):
        if replay is not None:
            return replayed("/score", request)
        if score_backend is None:
            raise HTTPException(status_code=404, detail="no score backend configured")
        candidates = check_batch(request)
        try:
            values = score_backend.score(request.query, candidates)
        except BackendError as exc:
            raise HTTPException(status_code=500, detail={
                "error": str(exc), "candidate_ids": exc.candidate_ids})
        return {"scores": [{"id": cid, "score": float(s)}
                           for (cid, _), s in zip(candidates, values)]}

    @app.post("/attention")
    def attention(request: ScoringRequest):
        if replay is not None:
            return replayed("/attention", request)
        if attention_backend is None:
            raise HTTPException(status_code=404,
                                detail="no attention backend configured")
        candidates = check_batch(request)
        try:
            tensors = attention_backend.attention(request.query, candidates)
        except BackendError as exc:
            raise HTTPException(status_code=500, detail={
                "error": str(exc), "candidate_ids": exc.candidate_ids})
        return {"tensors": tensors}

    return app
