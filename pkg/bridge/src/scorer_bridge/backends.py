"""Score and attention backends behind the wire protocol.

The bridge owns tokenization and the query/passage boundary: every tensor's
query_token_mask is computed here from the tokenizer's view of the
query (+) passage concatenation, and clients treat it as authoritative.
Raw per-layer/head/token attention crosses the wire; all aggregation stays
client-side.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


class BackendError(RuntimeError):
    """Inference failure; carries the candidate ids that were in flight."""

    def __init__(self, message: str, candidate_ids: list[str]):
        super().__init__(message)
        self.candidate_ids = candidate_ids


class ModelLoadError(RuntimeError):
    pass


def _words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class LexicalScoreBackend:
    """Distinct-term overlap between query and candidate, in [0, 1]."""

    name = "lexical"

    def score(self, query: str, candidates: list[tuple[str, str]]) -> list[float]:
        q_terms = set(_words(query))
        if not q_terms:
            return [0.0 for _ in candidates]
        return [len(q_terms & set(_words(text))) / len(q_terms)
                for _, text in candidates]


class SyntheticScoreBackend:
    """Pseudo-random but fully determined by (seed, query, candidate id)."""

    def __init__(self, seed: int):
        self.seed = seed
        self.name = f"synthetic:{seed}"

    def score(self, query: str, candidates: list[tuple[str, str]]) -> list[float]:
        return [
            float(np.random.default_rng(
                _stable_seed("score", self.seed, query, cid)).random())
            for cid, _ in candidates
        ]


class SyntheticAttentionBackend:
    """Row-normalized pseudo-random tensors shaped by the token counts of
    the query (+) passage concatenation."""

    def __init__(self, seed: int, layers: int = 4, heads: int = 4):
        self.seed = seed
        self.layers = layers
        self.heads = heads
        self.name = f"synthetic:{seed}"

    def attention(self, query: str, candidates: list[tuple[str, str]]) -> list[dict]:
        out = []
        q_len = max(len(_words(query)), 1)
        for cid, text in candidates:
            p_len = max(len(text.split()), 1)
            tokens = q_len + p_len
            rng = np.random.default_rng(
                _stable_seed("attention", self.seed, query, cid))
            scores = rng.random((self.layers, self.heads, tokens))
            scores /= scores.sum(axis=2, keepdims=True)
            mask = [True] * q_len + [False] * p_len
            out.append({
                "id": cid,
                "layers": self.layers, "heads": self.heads, "tokens": tokens,
                "query_token_mask": mask,
                "scores": scores.tolist(),
            })
        return out


class HfScoreBackend:
    """Cross-encoder relevance scores from a sequence-classification model."""

    def __init__(self, model_name: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModelForSequenceClassification, AutoTokenizer
        except ImportError as exc:
            raise ModelLoadError(f"transformers runtime unavailable: {exc}") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModelForSequenceClassification.from_pretrained(model_name)
        except Exception as exc:
            raise ModelLoadError(f"cannot load {model_name!r}: {exc}") from exc
        self.torch = torch
        self.model.to(device).eval()
        self.device = device
        self.name = model_name

    def score(self, query: str, candidates: list[tuple[str, str]]) -> list[float]:
        ids = [cid for cid, _ in candidates]
        try:
            with self.torch.no_grad():
                enc = self.tokenizer([query] * len(candidates),
                                     [text for _, text in candidates],
                                     padding=True, truncation=True,
                                     return_tensors="pt").to(self.device)
                logits = self.model(**enc).logits
            return logits[:, 0].float().cpu().tolist()
        except Exception as exc:
            raise BackendError(f"inference failed: {exc}", ids) from exc


class HfAttentionBackend:
    """First-decoder-token cross-attention from an encoder-decoder model,
    softmax-normalized per (layer, head), shaped [layer][head][token]."""

    def __init__(self, model_name: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoTokenizer, T5ForConditionalGeneration
        except ImportError as exc:
            raise ModelLoadError(f"transformers runtime unavailable: {exc}") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = T5ForConditionalGeneration.from_pretrained(model_name)
        except Exception as exc:
            raise ModelLoadError(f"cannot load {model_name!r}: {exc}") from exc
        self.torch = torch
        self.model.to(device).eval()
        self.device = device
        self.name = model_name

    def attention(self, query: str, candidates: list[tuple[str, str]]) -> list[dict]:
        out = []
        # the boundary is computed from the tokenizer's own view of the
        # query prefix, never from whitespace heuristics
        prefix = f"question: {query} context: "
        q_tokens = len(self.tokenizer(prefix, add_special_tokens=False).input_ids)
        for cid, text in candidates:
            try:
                enc = self.tokenizer(prefix + text, return_tensors="pt",
                                     truncation=True).to(self.device)
                decoder_input = self.torch.full(
                    (1, 1), self.model.config.decoder_start_token_id,
                    dtype=self.torch.long, device=self.device)
                with self.torch.no_grad():
                    result = self.model(**enc, decoder_input_ids=decoder_input,
                                        output_cross_attentions=True)
                # tuple of [batch, heads, tgt, src]; take decoder position 0
                stack = self.torch.stack(
                    [layer[0, :, 0, :] for layer in result.cross_attentions])
                scores = stack.float().cpu().numpy()
            except Exception as exc:
                raise BackendError(f"inference failed: {exc}",
                                   [c for c, _ in candidates]) from exc
            layers, heads, tokens = scores.shape
            mask = [i < min(q_tokens, tokens - 1) for i in range(tokens)]
            out.append({
                "id": cid,
                "layers": layers, "heads": heads, "tokens": tokens,
                "query_token_mask": mask,
                "scores": scores.tolist(),
            })
        return out


def make_score_backend(spec: str, device: str = "cpu"):
    if spec == "lexical":
        return LexicalScoreBackend()
    if spec.startswith("synthetic"):
        _, _, seed = spec.partition(":")
        return SyntheticScoreBackend(int(seed) if seed else 0)
    if spec.startswith("hf:"):
        return HfScoreBackend(spec[3:], device=device)
    raise ModelLoadError(f"unknown score backend {spec!r}")


def make_attention_backend(spec: str, device: str = "cpu"):
    if spec.startswith("synthetic"):
        _, _, seed = spec.partition(":")
        return SyntheticAttentionBackend(int(seed) if seed else 0)
    if spec.startswith("hf:"):
        return HfAttentionBackend(spec[3:], device=device)
    raise ModelLoadError(f"unknown attention backend {spec!r}")
