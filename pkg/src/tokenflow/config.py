"""Run configuration: defaults, key=value config files and environment fallback."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

ENV_RPC_URL = "TOKENFLOW_RPC_URL"
MAX_DEPTH_LIMIT = 8
OUTPUT_MODES = ("json", "text")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    rpc_url: str | None = None
    chain_id: int | None = None
    depth_limit: int = 3
    timeout_secs: float = 120.0
    path_cap: int = 10_000
    workers: int = 15
    templates: str | None = None
    output: str = "json"
    from_block: int | None = None
    poll_interval: float = 3.0
    request_timeout: float = 10.0
    max_retries: int = 5
    retry_backoff: float = 0.25
    trace_internal: bool = False
    dedup_by_codehash: bool = False
    # analysis switches (ablation and tests)
    expand: bool = True
    sensitive_filter: bool = True
    # extra selector -> signature names used only for node labels
    signatures: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("depth_limit", "timeout_secs", "path_cap", "workers", "poll_interval", "request_timeout"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.depth_limit > MAX_DEPTH_LIMIT:
            raise ConfigError(f"depth_limit must be at most {MAX_DEPTH_LIMIT}")
        if self.retry_backoff < 0:
            raise ConfigError("retry_backoff must not be negative")
        if self.max_retries < 0:
            raise ConfigError("max_retries must not be negative")
        if self.output not in OUTPUT_MODES:
            raise ConfigError(f"output must be one of {OUTPUT_MODES}")

    def with_overrides(self, **kw: Any) -> Config:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_TYPES = {f.name: f.type for f in fields(Config)}
_FILE_KEYS = {"rpc_url", "chain_id", "depth_limit", "timeout_secs", "path_cap", "workers", "templates", "output",
              "from_block", "poll_interval", "request_timeout", "max_retries", "retry_backoff", "trace_internal",
              "dedup_by_codehash"}


def _coerce(key: str, raw: str) -> Any:
    t = str(_TYPES[key])
    if "bool" in t:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if "int" in t:
            return int(raw, 0)
        if "float" in t:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: bad number {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, Any]:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys are accepted."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FILE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> Config:
    """Flags override the config file, which overrides the environment."""
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}
    if environ.get(ENV_RPC_URL):
        values["rpc_url"] = environ[ENV_RPC_URL]
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return Config(**values)
