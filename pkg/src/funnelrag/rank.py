"""Pre-ranking and post-ranking scorers plus cross-attention aggregation.

Neural scorers live behind an HTTP boundary (see the wire protocol below);
the engine itself only ever sees scores and attention tensors. Builtin
lexical and seeded synthetic scorers make the whole pipeline runnable with
no model server.

Wire protocol (JSON over HTTP, UTF-8):
    POST /score      {"query": str, "candidates": [{"id": str, "text": str}]}
                  -> {"scores": [{"id": str, "score": number}]}
                     ids echo the request ids exactly, one score each.
    POST /attention  same request shape
                  -> {"tensors": [{"id": str, "layers": int, "heads": int,
                       "tokens": int, "query_token_mask": [bool],
                       "scores": [[[number]]]}]}   indexed [layer][head][token]
    GET /health   -> {"status": "ok", "model": str}
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import requests

from funnelrag.chunker import RetrievalUnit
from funnelrag.sparse import ScoredHit
from funnelrag.text import analyze

logger = logging.getLogger(__name__)

SCHEME_MEAN_REP = "mean-rep"          # (i)
SCHEME_MAX_LAYER = "max-layer"        # (ii)
SCHEME_MAX_HEAD = "max-head"          # (iii)
SCHEME_MAX_TOKEN = "max-token"        # (iv)
SCHEME_MEAN_REP_LAST6 = "mean-rep-last6"  # (v)
ALL_SCHEMES = (SCHEME_MEAN_REP, SCHEME_MAX_LAYER, SCHEME_MAX_HEAD,
               SCHEME_MAX_TOKEN, SCHEME_MEAN_REP_LAST6)


class ScorerError(RuntimeError):
    """Scoring stage failure (transport exhausted or protocol violation)."""

    def __init__(self, message: str, failed_ids: list[str] | None = None):
        super().__init__(message)
        self.failed_ids = failed_ids or []


class ProtocolError(ScorerError):
    """Remote response violated the wire contract."""


@dataclass(frozen=True)
class ScorerHandle:
    """Where scores come from: `builtin-lexical`, `remote-protocol`, or
    `synthetic` (seeded fixture generator)."""

    kind: str
    endpoint: str | None = None
    batch_size: int = 16
    timeout: float = 30.0
    seed: int = 0
    max_in_flight: int = 4
    retries: int = 3

    def __post_init__(self):
        if self.kind not in ("builtin-lexical", "remote-protocol", "synthetic"):
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        if self.kind == "remote-protocol" and not self.endpoint:
            raise ValueError("remote-protocol scorer requires an endpoint")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def parse_scorer_spec(spec: str) -> ScorerHandle:
    """`builtin` | `synthetic:<seed>` | an http(s) URL."""
    if spec == "builtin" or spec == "builtin-lexical":
        return ScorerHandle(kind="builtin-lexical")
    if spec.startswith("synthetic"):
        _, _, seed = spec.partition(":")
        return ScorerHandle(kind="synthetic", seed=int(seed) if seed else 0)
    if spec.startswith("http://") or spec.startswith("https://"):
        return ScorerHandle(kind="remote-protocol", endpoint=spec.rstrip("/"))
    raise ValueError(f"unrecognized scorer spec {spec!r}")


@dataclass
class AttentionTensor:
    """Cross-attention of the first decoder token over one query+passage
    input, shaped [layers, heads, tokens]. The mask flags query positions."""

    scores: np.ndarray
    query_token_mask: np.ndarray
    token_ids: list[str] | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.query_token_mask = np.asarray(self.query_token_mask, dtype=bool)
        if self.scores.ndim != 3:
            raise ValueError("attention scores must be [layers, heads, tokens]")
        ln, lh, lt = self.scores.shape
        if min(ln, lh, lt) < 1:
            raise ValueError("attention dims must all be >= 1")
        if not np.isfinite(self.scores).all():
            raise ValueError("attention scores must be finite")
        if self.query_token_mask.shape != (lt,):
            raise ValueError("query_token_mask length must equal token count")
        if bool(self.query_token_mask.all()):
            raise ValueError("tensor needs at least one non-query token")

    @property
    def layers(self) -> int:
        return self.scores.shape[0]

    @property
    def heads(self) -> int:
        return self.scores.shape[1]

    @property
    def tokens(self) -> int:
        return self.scores.shape[2]


@dataclass(frozen=True)
class AggregationScheme:
    kind: str = SCHEME_MEAN_REP
    rep_tokens: int = 4
    include_query_tokens: bool = False

    def __post_init__(self):
        if self.kind not in ALL_SCHEMES:
            raise ValueError(f"unknown aggregation scheme {self.kind!r}")
        if self.rep_tokens < 1:
            raise ValueError("rep_tokens must be >= 1")


def _eligible_indices(tensor: AttentionTensor, include_query_tokens: bool) -> np.ndarray:
    if include_query_tokens:
        return np.arange(tensor.tokens)
    return np.flatnonzero(~tensor.query_token_mask)


def select_representative_tokens(
    tensor: AttentionTensor, rep_tokens: int, include_query_tokens: bool = False
) -> list[list[list[int]]]:
    """Per (layer, head): indices of the `rep_tokens` highest-scoring eligible
    tokens, ties to the smaller index. Saturates when fewer are eligible."""
    if rep_tokens < 1:
        raise ValueError("rep_tokens must be >= 1")
    eligible = _eligible_indices(tensor, include_query_tokens)
    if eligible.size == 0:
        raise ValueError("no eligible tokens to select from")
    take = min(rep_tokens, eligible.size)
    out: list[list[list[int]]] = []
    for i in range(tensor.layers):
        row: list[list[int]] = []
        for j in range(tensor.heads):
            vals = tensor.scores[i, j, eligible]
            # stable sort on (-score, index) gives the smaller-index tie rule
            order = sorted(range(eligible.size), key=lambda k: (-vals[k], eligible[k]))
            row.append(sorted(int(eligible[k]) for k in order[:take]))
        out.append(row)
    return out


def aggregate_attention(tensor: AttentionTensor, scheme: AggregationScheme) -> float:
    """Collapse a tensor to one relevance score.

    mean-rep       mean over layers, heads, and representative tokens
    max-layer      mean over heads and eligible tokens of the layer max
    max-head       mean over layers and eligible tokens of the head max
    max-token      mean over layers and heads of the eligible-token max
    mean-rep-last6 mean-rep restricted to the last six layers (all, if fewer)
    """
    eligible = _eligible_indices(tensor, scheme.include_query_tokens)
    if eligible.size == 0:
        raise ValueError("no eligible tokens to aggregate")
    sub = tensor.scores[:, :, eligible]

    if scheme.kind in (SCHEME_MEAN_REP, SCHEME_MEAN_REP_LAST6):
        reps = select_representative_tokens(
            tensor, scheme.rep_tokens, scheme.include_query_tokens)
        layers = range(tensor.layers)
        if scheme.kind == SCHEME_MEAN_REP_LAST6 and tensor.layers > 6:
            layers = range(tensor.layers - 6, tensor.layers)
        vals = [
            tensor.scores[i, j, idx]
            for i in layers
            for j in range(tensor.heads)
            for idx in reps[i][j]
        ]
        return float(np.mean(vals))
    if scheme.kind == SCHEME_MAX_LAYER:
        return float(sub.max(axis=0).mean())
    if scheme.kind == SCHEME_MAX_HEAD:
        return float(sub.max(axis=1).mean())
    if scheme.kind == SCHEME_MAX_TOKEN:
        return float(sub.max(axis=2).mean())
    raise AssertionError(scheme.kind)


def builtin_lexical_score(query: str, text: str) -> float:
    """Fraction of distinct query terms present in the text; 0 for an empty
    analyzed query. Always in [0, 1]."""
    q_terms = set(analyze(query))
    if not q_terms:
        return 0.0
    t_terms = set(analyze(text))
    return len(q_terms & t_terms) / len(q_terms)


def synthetic_attention(
    seed: int, layers: int, heads: int, tokens: int, query_len: int
) -> AttentionTensor:
    """Deterministic pseudo-random tensor fixture. Rows are normalized to
    sum to one, matching what a softmax-producing backend would send."""
    if min(layers, heads, tokens) < 1:
        raise ValueError("dims must be >= 1")
    if not 0 <= query_len < tokens:
        raise ValueError("query_len must satisfy 0 <= query_len < tokens")
    rng = np.random.default_rng(seed)
    scores = rng.random((layers, heads, tokens))
    scores /= scores.sum(axis=2, keepdims=True)
    mask = np.zeros(tokens, dtype=bool)
    mask[:query_len] = True
    return AttentionTensor(scores=scores, query_token_mask=mask)


def lexical_attention(query: str, passage: RetrievalUnit) -> AttentionTensor:
    """Builtin stand-in for a neural attention backend: a 1-layer, 1-head
    tensor where passage tokens matching a query term score 1.0 and all
    other positions a small epsilon."""
    q_terms = set(analyze(query))
    q_tokens = analyze(query) or ["?"]
    p_tokens = passage.text.split() or [""]
    lt = len(q_tokens) + len(p_tokens)
    scores = np.full((1, 1, lt), 0.01)
    for pos, tok in enumerate(p_tokens):
        terms = set(analyze(tok))
        if terms and terms <= q_terms:
            scores[0, 0, len(q_tokens) + pos] = 1.0
    mask = np.zeros(lt, dtype=bool)
    mask[:len(q_tokens)] = True
    return AttentionTensor(scores=scores, query_token_mask=mask)


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def synthetic_score(seed: int, query: str, unit_id: str) -> float:
    """Deterministic pseudo-random score in [0, 1) keyed on (seed, query, id)."""
    rng = np.random.default_rng(_stable_seed("score", seed, query, unit_id))
    return float(rng.random())


def synthetic_attention_for(
    seed: int, query: str, passage: RetrievalUnit,
    layers: int = 4, heads: int = 4,
) -> AttentionTensor:
    """Synthetic tensor whose shape follows the query/passage token counts and
    whose values depend only on (seed, query, unit_id)."""
    query_len = max(len(analyze(query)), 1)
    lt = query_len + max(passage.token_count, 1)
    return synthetic_attention(
        _stable_seed("attention", seed, query, passage.unit_id),
        layers, heads, lt, query_len)


# --- remote transport -------------------------------------------------------

def _post_with_retry(handle: ScorerHandle, path: str, payload: dict,
                     batch_ids: list[str]) -> dict:
    url = f"{handle.endpoint}{path}"
    last_exc: Exception | None = None
    for attempt in range(handle.retries):
        try:
            resp = requests.post(url, json=payload, timeout=handle.timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.ConnectionError, requests.Timeout, requests.HTTPError,
                ValueError) as exc:
            last_exc = exc
            if attempt + 1 < handle.retries:
                backoff = 0.2 * (2 ** attempt)
                logger.warning("scorer %s attempt %d failed (%s); retrying in %.1fs",
                               url, attempt + 1, exc, backoff)
                time.sleep(backoff)
    raise ScorerError(
        f"scorer {url} unreachable after {handle.retries} attempts: {last_exc}",
        failed_ids=batch_ids)


def _batches(items: list, size: int) -> list[list]:
    return [items[i:i + size] for i in range(0, len(items), size)]


def remote_scores(handle: ScorerHandle, query: str,
                  candidates: list[tuple[str, str]]) -> list[float]:
    """Score (id, text) candidates via POST /score. Batches run on a small
    thread pool; results are reassembled in request order, so concurrency can
    only affect latency, never output."""
    batches = _batches(candidates, handle.batch_size)

    def run(batch: list[tuple[str, str]]) -> list[float]:
        ids = [cid for cid, _ in batch]
        payload = {"query": query,
                   "candidates": [{"id": cid, "text": text} for cid, text in batch]}
        body = _post_with_retry(handle, "/score", payload, ids)
        rows = body.get("scores")
        if not isinstance(rows, list) or len(rows) != len(batch):
            raise ProtocolError(
                f"/score returned {len(rows) if isinstance(rows, list) else 'no'} "
                f"scores for {len(batch)} candidates", failed_ids=ids)
        out = []
        for expect, row in zip(ids, rows):
            if row.get("id") != expect:
                raise ProtocolError(
                    f"/score id mismatch: sent {expect!r}, got {row.get('id')!r}",
                    failed_ids=ids)
            out.append(float(row["score"]))
        return out

    with ThreadPoolExecutor(max_workers=handle.max_in_flight) as pool:
        results = list(pool.map(run, batches))
    return [s for batch in results for s in batch]


def remote_attention(handle: ScorerHandle, query: str,
                     candidates: list[tuple[str, str]]) -> list[AttentionTensor]:
    """Fetch tensors via POST /attention, request order preserved."""
    batches = _batches(candidates, handle.batch_size)

    def run(batch: list[tuple[str, str]]) -> list[AttentionTensor]:
        ids = [cid for cid, _ in batch]
        payload = {"query": query,
                   "candidates": [{"id": cid, "text": text} for cid, text in batch]}
        body = _post_with_retry(handle, "/attention", payload, ids)
        rows = body.get("tensors")
        if not isinstance(rows, list) or len(rows) != len(batch):
            raise ProtocolError(
                f"/attention returned {len(rows) if isinstance(rows, list) else 'no'} "
                f"tensors for {len(batch)} candidates", failed_ids=ids)
        out = []
        for expect, row in zip(ids, rows):
            if row.get("id") != expect:
                raise ProtocolError(
                    f"/attention id mismatch: sent {expect!r}, got {row.get('id')!r}",
                    failed_ids=ids)
            tensor = AttentionTensor(
                scores=np.asarray(row["scores"], dtype=np.float64),
                query_token_mask=np.asarray(row["query_token_mask"], dtype=bool))
            if tensor.scores.shape != (row["layers"], row["heads"], row["tokens"]):
                raise ProtocolError(
                    f"/attention shape mismatch for {expect!r}", failed_ids=ids)
            out.append(tensor)
        return out

    with ThreadPoolExecutor(max_workers=handle.max_in_flight) as pool:
        results = list(pool.map(run, batches))
    return [t for batch in results for t in batch]


def health(handle: ScorerHandle) -> dict:
    resp = requests.get(f"{handle.endpoint}/health", timeout=handle.timeout)
    resp.raise_for_status()
    return resp.json()


# --- stage entry points -----------------------------------------------------

def score_units(handle: ScorerHandle, query: str,
                units: list[RetrievalUnit]) -> list[float]:
    if handle.kind == "builtin-lexical":
        return [builtin_lexical_score(query, u.text) for u in units]
    if handle.kind == "synthetic":
        return [synthetic_score(handle.seed, query, u.unit_id) for u in units]
    return remote_scores(handle, query, [(u.unit_id, u.text) for u in units])


def attention_tensors(handle: ScorerHandle, query: str,
                      passages: list[RetrievalUnit]) -> list[AttentionTensor]:
    if handle.kind == "builtin-lexical":
        return [lexical_attention(query, p) for p in passages]
    if handle.kind == "synthetic":
        return [synthetic_attention_for(handle.seed, query, p) for p in passages]
    return remote_attention(handle, query, [(p.unit_id, p.text) for p in passages])


def _ranked(scored: list[tuple[str, float]], limit: int) -> list[ScoredHit]:
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0]))[:limit]
    return [ScoredHit(unit_id=uid, score=s, rank=i + 1)
            for i, (uid, s) in enumerate(ordered)]


def pre_rank(scorer: ScorerHandle, query: str, units: list[RetrievalUnit],
             top_n: int) -> list[ScoredHit]:
    """Score document-level units and keep the top_n (ties by unit_id)."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    scores = score_units(scorer, query, units)
    return _ranked([(u.unit_id, s) for u, s in zip(units, scores)], top_n)


def post_rank(tensors: list[tuple[RetrievalUnit, AttentionTensor | None]],
              scheme: AggregationScheme, top_h: int) -> list[ScoredHit]:
    """Aggregate each passage's tensor and rank; order-independent."""
    if top_h < 1:
        raise ValueError("top_h must be >= 1")
    scored = []
    for passage, tensor in tensors:
        if tensor is None:
            raise ScorerError(f"missing attention tensor for passage {passage.unit_id!r}",
                              failed_ids=[passage.unit_id])
        scored.append((passage.unit_id, aggregate_attention(tensor, scheme)))
    return _ranked(scored, top_h)


def post_rank_all(tensors: list[tuple[RetrievalUnit, AttentionTensor | None]],
                  scheme: AggregationScheme) -> list[ScoredHit]:
    """Full ranked scoring record (no truncation); feeds distillation."""
    return post_rank(tensors, scheme, top_h=max(len(tensors), 1)) if tensors else []
