"""Canonical JSON serialization and RFC 3339 timestamp helpers.

Result documents must be byte-identical for identical logical content, so all
persisted or served JSON goes through :func:`canonical_dumps`.
"""
from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone


def canonical_dumps(obj) -> str:
    """Serialize with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(obj) -> bytes:
    return canonical_dumps(obj).encode("utf-8")


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def format_rfc3339(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.isoformat()


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; a trailing ``Z`` is accepted for UTC."""
    if not isinstance(text, str):
        raise ValueError(f"not a timestamp: {text!r}")
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def add_days(dt: datetime, days: float) -> datetime:
    return dt + timedelta(days=days)
