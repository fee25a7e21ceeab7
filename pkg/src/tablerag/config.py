"""Application configuration: defaults < config file < environment < flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .corpus import ChunkParams
from .llm import ProviderConfig
from .reasoner import AblationFlags, ReasonerParams

ROLES = ("main", "judge", "embedder", "reranker")
ENV_PREFIX = "TABLERAG_"


@dataclass
class AppConfig:
    corpus_dir: str = ""
    out_dir: str = "build"
    database: str = "tables.db"  # relative to out_dir unless absolute
    index: str = "index.npz"
    providers: dict[str, ProviderConfig] = field(
        default_factory=lambda: {role: ProviderConfig(api_key_env=_key_env(role)) for role in ROLES})
    recall_n: int = 30
    rerank_k: int = 3
    chunk_size: int = 1000
    chunk_overlap: int = 200
    max_iterations: int = 5
    sql_timeout: float = 5.0
    max_rows: int = 100
    embedding_dim: int = 256
    flags: AblationFlags = field(default_factory=AblationFlags)
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.recall_n >= self.rerank_k >= 1):
            raise ValueError(f"need N >= k >= 1, got N={self.recall_n}, k={self.rerank_k}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (0 <= self.chunk_overlap < self.chunk_size):
            raise ValueError("need 0 <= chunk_overlap < chunk_size")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def chunk_params(self) -> ChunkParams:
        return ChunkParams(self.chunk_size, self.chunk_overlap)

    @property
    def reasoner_params(self) -> ReasonerParams:
        return ReasonerParams(self.max_iterations, self.sql_timeout, self.max_rows)

    def provider(self, role: str) -> ProviderConfig:
        """Per-role config; judge falls back to main when it has no endpoint of its own."""
        cfg = self.providers[role]
        if role == "judge" and not cfg.endpoint:
            return self.providers["main"]
        return cfg

    def resolve(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else Path(self.out_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = self.flags.to_dict()
        return d


def _key_env(role: str) -> str:
    return ENV_PREFIX + "API_KEY" if role == "main" else f"{ENV_PREFIX}{role.upper()}_API_KEY"


_SCALARS = {f.name: f.type for f in fields(AppConfig) if f.name not in ("providers", "flags")}


def _cast(name: str, value):
    typ = _SCALARS[name]
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return str(value)


def _merge(cfg: AppConfig, data: dict) -> AppConfig:
    updates = {}
    for key, value in data.items():
        if key in _SCALARS:
            updates[key] = _cast(key, value)
        elif key == "flags":
            updates["flags"] = AblationFlags(**{**cfg.flags.to_dict(), **value})
        elif key == "providers":
            providers = dict(cfg.providers)
            for role, pdata in value.items():
                if role not in ROLES:
                    raise ValueError(f"unknown provider role {role!r}")
                providers[role] = replace(providers[role], **pdata)
            updates["providers"] = providers
        else:
            raise ValueError(f"unknown config key {key!r}")
    return replace(cfg, **updates)


def _from_env(env) -> dict:
    data: dict = {}
    for name in _SCALARS:
        key = ENV_PREFIX + name.upper()
        if key in env:
            data[name] = env[key]
    providers: dict = {}
    for role in ROLES:
        tag = "" if role == "main" else role.upper() + "_"
        for attr in ("endpoint", "model"):
            key = f"{ENV_PREFIX}{tag}{attr.upper()}"
            if key in env:
                providers.setdefault(role, {})[attr] = env[key]
    if providers:
        data["providers"] = providers
    return data


def load_config(path: str | Path | None = None, env=None, overrides: dict | None = None) -> AppConfig:
    cfg = AppConfig()
    if path:
        cfg = _merge(cfg, json.loads(Path(path).read_text(encoding="utf-8")))
    cfg = _merge(cfg, _from_env(os.environ if env is None else env))
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg
