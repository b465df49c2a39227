"""Scoring of raw texts against an external HTTP model endpoint."""

from __future__ import annotations

from .cache import ScoreCache, ScoredText, text_hash
from .client import BatchResult, ScorerClient, ScorerConfig, TokenBucket, resolve_pointer, score_batch

__all__ = [
    "BatchResult",
    "ScoreCache",
    "ScoredText",
    "ScorerClient",
    "ScorerConfig",
    "TokenBucket",
    "resolve_pointer",
    "score_batch",
    "text_hash",
]
