"""Funnel configuration: a flat `key = value` text file with a version tag.

Environment variables named FUNNELRAG_<FIELD> (upper-cased field name)
override file values, which override defaults. `parse(render(cfg)) == cfg`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from funnelrag.rank import ALL_SCHEMES, SCHEME_MEAN_REP

CONFIG_VERSION = 1
ENV_PREFIX = "FUNNELRAG_"

DEPTH_RETRIEVAL_ONLY = "retrieval-only"
DEPTH_TWO_STAGE = "two-stage"
DEPTH_FULL = "full"
ALL_DEPTHS = (DEPTH_RETRIEVAL_ONLY, DEPTH_TWO_STAGE, DEPTH_FULL)


class ConfigError(ValueError):
    pass


@dataclass
class FunnelConfig:
    max_cluster_size: int = 4000
    top_clusters: int = 80
    top_docs: int = 8
    passage_size: int = 100
    top_passages: int = 4
    scheme: str = SCHEME_MEAN_REP
    rep_tokens: int = 4
    include_query_tokens: bool = False
    mix_alpha: float = 0.75
    k1: float = 1.5
    b: float = 0.75
    pre_scorer: str = "builtin"
    post_scorer: str = "builtin"
    stage_depth: str = DEPTH_FULL
    parallelism: int = 1

    def validate(self) -> None:
        if self.max_cluster_size < 1:
            raise ConfigError("max_cluster_size must be >= 1")
        if self.top_clusters < 1 or self.top_docs < 1 or self.top_passages < 1:
            raise ConfigError("stage budgets must be >= 1")
        if self.passage_size < 1:
            raise ConfigError("passage_size must be >= 1")
        if self.max_cluster_size < self.passage_size:
            raise ConfigError("max_cluster_size must be >= passage_size")
        if self.scheme not in ALL_SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.rep_tokens < 1:
            raise ConfigError("rep_tokens must be >= 1")
        if not 0.0 <= self.mix_alpha <= 1.0:
            raise ConfigError("mix_alpha must be in [0, 1]")
        if self.stage_depth not in ALL_DEPTHS:
            raise ConfigError(f"unknown stage_depth {self.stage_depth!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


# matches the funnel settings reported for the two benchmark datasets
PRESETS: dict[str, dict] = {
    "nq": {},
    "tqa": {"top_docs": 12},
}


def preset(name: str) -> FunnelConfig:
    try:
        cfg = FunnelConfig(**PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}") from None
    cfg.validate()
    return cfg


def _coerce(field_type: type, raw: str):
    if field_type is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    return field_type(raw)


_FIELD_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def render_config(cfg: FunnelConfig) -> str:
    lines = [f"version = {CONFIG_VERSION}"]
    for f in fields(cfg):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, apply_env: bool = True) -> FunnelConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        values[key.strip()] = value.strip()

    version = values.pop("version", str(CONFIG_VERSION))
    if int(version) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")

    cfg = FunnelConfig()
    known = {f.name: f for f in fields(cfg)}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = _FIELD_TYPES[known[key].type] if isinstance(known[key].type, str) else known[key].type
        setattr(cfg, key, _coerce(ftype, raw))
    if apply_env:
        apply_env_overrides(cfg)
    cfg.validate()
    return cfg


def apply_env_overrides(cfg: FunnelConfig, env: dict[str, str] | None = None) -> None:
    env = os.environ if env is None else env
    known = {f.name: f for f in fields(cfg)}
    for name, f in known.items():
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is None:
            continue
        ftype = _FIELD_TYPES[f.type] if isinstance(f.type, str) else f.type
        setattr(cfg, name, _coerce(ftype, raw))


def load_config(path: str | Path | None, apply_env: bool = True) -> FunnelConfig:
    """Config from file (or defaults when path is None) + env overrides."""
    if path is None:
        cfg = FunnelConfig()
        if apply_env:
            apply_env_overrides(cfg)
        cfg.validate()
        return cfg
    return parse_config(Path(path).read_text(encoding="utf-8"), apply_env=apply_env)


def save_config(cfg: FunnelConfig, path: str | Path) -> None:
    Path(path).write_text(render_config(cfg), encoding="utf-8")
