"""Plain-text ``key=value`` run configuration with a content hash."""

from __future__ import annotations

import hashlib
from pathlib import Path

from .errors import ConfigurationError, ParameterError

# Keys that change where or how fast outputs are produced, but not their content.
UNHASHED_KEYS = frozenset({"config", "out", "threads"})


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigurationError(f"config line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"config file {path} does not exist")
    return parse_config_text(path.read_text())


def canonical_text(values: dict) -> str:
    lines = []
    for key in sorted(values):
        if key in UNHASHED_KEYS:
            continue
        v = values[key]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> int:
    """First 8 bytes of SHA-256 over the canonical text, as an unsigned integer."""
    return int.from_bytes(hashlib.sha256(canonical_text(values).encode()).digest()[:8], "big")


def hash_hex(h: int) -> str:
    return f"{h:016x}"
