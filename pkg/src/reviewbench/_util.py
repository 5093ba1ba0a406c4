"""Shared helpers: JSON-lines IO, hashing, atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

META_KEY = "_meta"


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> str:
    """Stable serialization used for hashing and cache keys."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file and rename so concurrent writers converge."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: Path, records: Iterable[dict], meta: dict | None = None) -> None:
    """Write records one JSON object per line, with an optional leading meta record."""
    lines = []
    if meta is not None:
        lines.append(canonical_json({META_KEY: meta}))
    lines.extend(canonical_json(rec) for rec in records)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path: Path) -> Iterator[dict]:
    """Yield records from a JSON-lines file, skipping a leading meta record."""
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if i == 0 and isinstance(rec, dict) and META_KEY in rec:
                continue
            yield rec


def read_jsonl_meta(path: Path) -> dict | None:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first:
        return None
    rec = json.loads(first)
    if isinstance(rec, dict) and META_KEY in rec:
        return rec[META_KEY]
    return None
