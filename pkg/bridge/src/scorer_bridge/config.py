"""Bridge configuration.

Backend identifiers:
    lexical            term-overlap scores (no model runtime needed)
    synthetic:<seed>   deterministic pseudo-random scores / tensors
    hf:<model-name>    transformers checkpoint (sequence classification for
                       /score, encoder-decoder cross-attention for /attention)
"""

from __future__ import annotations

from dataclasses import dataclass


class BridgeConfigError(ValueError):
    pass


@dataclass
class BridgeConfig:
    score_model: str | None = "lexical"
    attention_model: str | None = "synthetic:0"
    host: str = "127.0.0.1"
    port: int = 8750
    max_batch_size: int = 64
    device: str = "cpu"
    replay_fixtures: str | None = None

    def validate(self) -> None:
        if self.replay_fixtures is None and not (self.score_model or self.attention_model):
            raise BridgeConfigError("configure at least one backend or replay fixtures")
        if self.max_batch_size < 1:
            raise BridgeConfigError("max_batch_size must be >= 1")
