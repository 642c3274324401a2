"""Flat ``key = value`` configuration files with CLI and environment overrides.

Lines look like ``embed.dim = 384``; ``#`` starts a comment.  Keys are
dotted ``section.name`` strings.  Path-valued keys (ending in ``_path`` or
``_dir``) given relative in a file are resolved against the file's directory.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError

ENV_PREFIX = "TOOLRANK_"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def _is_path_key(key: str) -> bool:
    return key.endswith("_path") or key.endswith("_dir")


def load_file(path: str | os.PathLike) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    cfg = parse_text(p.read_text(encoding="utf-8"), source=str(p))
    base = p.resolve().parent
    for key, value in cfg.items():
        if _is_path_key(key) and value and not os.path.isabs(value):
            cfg[key] = str(base / value)
    return cfg


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """``TOOLRANK_SERVICE_INDEX_PATH=x`` becomes ``service.index_path = x``."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :].lower()
        if "_" not in rest:
            continue
        section, key = rest.split("_", 1)
        out[f"{section}.{key}"] = value
    return out


def get_bool(cfg: Mapping[str, str], key: str, default: bool = False) -> bool:
    if key not in cfg:
        return default
    value = str(cfg[key]).strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {cfg[key]!r}")


def get_int(cfg: Mapping[str, str], key: str, default: int | None = None) -> int | None:
    if key not in cfg or cfg[key] == "":
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}") from None


def get_list(cfg: Mapping[str, str], key: str, default: list[str]) -> list[str]:
    if key not in cfg:
        return list(default)
    return [item.strip() for item in str(cfg[key]).split(",") if item.strip()]
