"""Declarative app configuration: one JSON file plus environment overrides.

Unknown keys are rejected loudly.  Secrets (backend key) come from the
environment, never the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .agent import (ENV_BACKEND_KEY, ENV_BACKEND_MODEL, ENV_BACKEND_URL,
                    Backend, ChatCompletionBackend, KeywordBackend,
                    ScriptedBackend)
from .errors import ConfigError

BACKEND_KINDS = ("keyword", "scripted", "chat_completion")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "keyword"
    url: Optional[str] = None
    model: Optional[str] = None
    timeout_s: float = 60.0
    script_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend.kind must be one of {BACKEND_KINDS}, "
                              f"got {self.kind!r}")


@dataclass(frozen=True)
class AppConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    judge: str = "rule"
    composer: str = "rule"
    retry_budget: int = 2
    token_budget: int = 4096
    registry_path: Optional[str] = None
    records_dir: Optional[str] = None
    sessions_dir: str = "sessions"
    debug_trace: bool = False

    def __post_init__(self):
        if self.judge not in ("rule", "llm"):
            raise ConfigError(f"judge must be 'rule' or 'llm', got {self.judge!r}")
        if self.composer not in ("rule", "backend"):
            raise ConfigError(f"composer must be 'rule' or 'backend', "
                              f"got {self.composer!r}")


def _build(cls, data: dict, path: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys under {path}: {sorted(unknown)}")
    return data


def load_config(path: Optional[str] = None) -> AppConfig:
    if path is None:
        return AppConfig()
    raw = Path(path).read_text()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    backend_data = data.pop("backend", {})
    if not isinstance(backend_data, dict):
        raise ConfigError(f"{path}: 'backend' must be an object")
    backend = BackendConfig(**_build(BackendConfig, backend_data, "backend"))
    return AppConfig(backend=backend, **_build(AppConfig, data, "$"))


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "keyword":
        return KeywordBackend()
    if config.kind == "scripted":
        if not config.script_path:
            raise ConfigError("scripted backend requires backend.script_path")
        outputs = json.loads(Path(config.script_path).read_text())
        if not isinstance(outputs, list):
            raise ConfigError("backend script file must hold a JSON list of outputs")
        return ScriptedBackend(outputs)
    url = config.url or os.environ.get(ENV_BACKEND_URL)
    model = config.model or os.environ.get(ENV_BACKEND_MODEL)
    return ChatCompletionBackend(url=url, model=model,
                                 api_key=os.environ.get(ENV_BACKEND_KEY),
                                 timeout_s=config.timeout_s)
