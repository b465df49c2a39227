"""Append-only JSON-lines score cache, one file per model."""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ScoredText:
    text_hash: str
    model_name: str
    score: float
    fetched_at: str

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score!r} outside [0, 1]")


def cache_path(cache_dir: str | Path, model_name: str) -> Path:
    """File for ``model_name``; the digest suffix keeps distinct names apart
    even when their sanitized forms coincide."""
    safe = re.sub(r"[^A-Za-z0-9._@-]", "_", model_name)[:64]
    digest = hashlib.sha256(model_name.encode("utf-8")).hexdigest()[:10]
    return Path(cache_dir) / f"{safe}-{digest}.jsonl"


class ScoreCache:
    """Entries keyed by ``(model_name, text_hash)``.

    Loading keeps the last valid entry per hash, drops unparsable lines (for
    example a line cut short by a crash) and rewrites the file when anything
    was dropped or duplicated.  Writes are appends of one line each and must
    come from a single thread.
    """

    def __init__(self, cache_dir: Optional[str | Path], model_name: str):
        self.model_name = model_name
        self.path = None if cache_dir is None else cache_path(cache_dir, model_name)
        self._entries: dict[str, ScoredText] = {}
        self._fh = None
        if self.path is not None:
            self._load()

    def _load(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            return
        lines = 0
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                lines += 1
                try:
                    entry = ScoredText(**json.loads(line))
                except (ValueError, TypeError):
                    continue
                if entry.model_name == self.model_name:
                    self._entries[entry.text_hash] = entry
        if lines != len(self._entries):
            self._compact()

    def _compact(self) -> None:
        tmp = self.path.with_suffix(".jsonl.tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for entry in self._entries.values():
                fh.write(json.dumps(asdict(entry)) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def get(self, digest: str) -> Optional[ScoredText]:
        return self._entries.get(digest)

    def put(self, entry: ScoredText) -> None:
        if entry.model_name != self.model_name:
            raise ValueError("entry belongs to a different model")
        self._entries[entry.text_hash] = entry
        if self.path is None:
            return
        if self._fh is None:
            self._fh = self.path.open("a", encoding="utf-8")
        self._fh.write(json.dumps(asdict(entry)) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
