"""HTTP client for arbitrary model-scoring endpoints.

Every request is a JSON POST built from ``request_template`` by replacing the
``{text}`` placeholder inside its string values.  The score is read from the
response with an RFC 6901 JSON pointer.  The credential is taken from the
environment variable named by ``api_key_env``; config files never hold it.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional
from urllib.parse import urlsplit

import httpx

from ..errors import AuthError, InvalidSpec, RateLimited, SchemaError, ScorerError
from .cache import ScoreCache, ScoredText, text_hash

PLACEHOLDER = "{text}"
_SECRET_KEYS = {"api_key", "apikey", "key", "token", "secret", "password"}


@dataclass(frozen=True)
class ScorerConfig:
    endpoint_url: str
    model_name: str
    request_template: Any
    response_score_path: str
    max_qps: float = 5.0
    max_retries: int = 3
    cache_dir: Optional[str] = None
    api_key_env: str = "SCORER_API_KEY"
    require_api_key: bool = True
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    max_in_flight: int = 4
    timeout: float = 30.0
    backoff_base: float = 0.5
    backoff_max: float = 30.0

    def __post_init__(self) -> None:
        url = urlsplit(self.endpoint_url)
        if url.scheme not in ("http", "https") or not url.netloc:
            raise InvalidSpec(f"endpoint_url is not an http(s) URL: {self.endpoint_url!r}")
        if not self.model_name:
            raise InvalidSpec("model_name must be nonempty")
        if not self.response_score_path or not self.response_score_path.startswith("/"):
            raise InvalidSpec("response_score_path must be a nonempty JSON pointer starting with '/'")
        if not _has_placeholder(self.request_template):
            raise InvalidSpec(f"request_template has no {PLACEHOLDER} placeholder")
        if not (math.isfinite(self.max_qps) and self.max_qps > 0):
            raise InvalidSpec("max_qps must be positive")
        if not 0 <= self.max_retries <= 10:
            raise InvalidSpec("max_retries must be between 0 and 10")
        if self.max_in_flight < 1:
            raise InvalidSpec("max_in_flight must be at least 1")
        if self.timeout <= 0 or self.backoff_base < 0 or self.backoff_max < 0:
            raise InvalidSpec("timeout and backoff values must be nonnegative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScorerConfig":
        secrets = {k for k in d if k.lower() in _SECRET_KEYS}
        if secrets:
            raise InvalidSpec(
                f"credentials do not belong in scorer config ({', '.join(sorted(secrets))}); "
                "set the environment variable named by api_key_env instead"
            )
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown scorer config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(f"malformed scorer config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ScorerConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)


def _has_placeholder(node) -> bool:
    if isinstance(node, str):
        return PLACEHOLDER in node
    if isinstance(node, Mapping):
        return any(_has_placeholder(v) for v in node.values())
    if isinstance(node, list):
        return any(_has_placeholder(v) for v in node)
    return False


def fill_template(node, text: str):
    if isinstance(node, str):
        return node.replace(PLACEHOLDER, text)
    if isinstance(node, Mapping):
        return {k: fill_template(v, text) for k, v in node.items()}
    if isinstance(node, list):
        return [fill_template(v, text) for v in node]
    return node


def resolve_pointer(doc, pointer: str):
    """Follow an RFC 6901 pointer; raises ``LookupError`` when absent."""
    if pointer == "":
        return doc
    if not pointer.startswith("/"):
        raise LookupError(f"invalid JSON pointer {pointer!r}")
    node = doc
    for token in pointer[1:].split("/"):
        token = token.replace("~1", "/").replace("~0", "~")
        if isinstance(node, Mapping):
            if token not in node:
                raise LookupError(token)
            node = node[token]
        elif isinstance(node, list):
            if not token.isdigit() or (len(token) > 1 and token[0] == "0") or int(token) >= len(node):
                raise LookupError(token)
            node = node[int(token)]
        else:
            raise LookupError(token)
    return node


class TokenBucket:
    """Thread-safe pacer: at most ``burst`` requests ahead of ``rate`` per second.

    Uses virtual scheduling, so a caller learns its slot under the lock and
    sleeps outside it.  ``clock`` and ``sleep`` are injectable for tests.
    """

    def __init__(
        self,
        rate: float,
        burst: int = 1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0 or burst < 1:
            raise ValueError("rate must be positive and burst at least 1")
        self.interval = 1.0 / rate
        self.burst = burst
        self.clock = clock
        self.sleep = sleep
        self._tat: Optional[float] = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock()
            tat = now if self._tat is None else max(self._tat, now)
            wait_for = max(0.0, tat - (self.burst - 1) * self.interval - now)
            self._tat = tat + self.interval
        if wait_for > 0:
            self.sleep(wait_for)


@dataclass
class BatchResult:
    """Scores in input order for the ids that succeeded, plus a manifest of
    the ids that did not."""

    scores: list[tuple[str, float]] = field(default_factory=list)
    errors: dict[str, ScorerError] = field(default_factory=dict)
    network_calls: int = 0
    cache_hits: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors

    def error_manifest(self) -> list[dict]:
        return [{"id": i, "error": type(e).__name__, "message": str(e)} for i, e in self.errors.items()]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class ScorerClient:
    def __init__(
        self,
        cfg: ScorerConfig,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        env: Mapping[str, str] = os.environ,
    ):
        self.cfg = cfg
        self.sleep = sleep
        self.limiter = TokenBucket(cfg.max_qps, clock=clock, sleep=sleep)
        self.cache = ScoreCache(cfg.cache_dir, cfg.model_name)
        self._env = env
        self._transport = transport
        self._calls = 0
        self._calls_lock = threading.Lock()

    def close(self) -> None:
        self.cache.close()

    def __enter__(self) -> "ScorerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = self._env.get(self.cfg.api_key_env, "")
        if not key:
            if self.cfg.require_api_key:
                raise AuthError(f"environment variable {self.cfg.api_key_env} is not set")
            return headers
        headers[self.cfg.auth_header] = f"{self.cfg.auth_scheme} {key}".strip()
        return headers

    def _parse(self, response: httpx.Response) -> float:
        try:
            doc = response.json()
        except ValueError as exc:
            raise SchemaError(f"response is not JSON: {exc}") from exc
        try:
            value = resolve_pointer(doc, self.cfg.response_score_path)
        except LookupError:
            raise SchemaError(f"response has no score at {self.cfg.response_score_path}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"score at {self.cfg.response_score_path} is not a number: {value!r}")
        value = float(value)
        if not (math.isfinite(value) and 0.0 <= value <= 1.0):
            raise SchemaError(f"score {value!r} outside [0, 1]")
        return value

    def _backoff(self, attempt: int, response: Optional[httpx.Response]) -> float:
        delay = min(self.cfg.backoff_max, self.cfg.backoff_base * 2**attempt)
        if response is not None:
            try:
                delay = max(delay, min(self.cfg.backoff_max, float(response.headers.get("Retry-After", 0))))
            except ValueError:
                pass
        return delay

    def _fetch(self, http: httpx.Client, text: str, headers: dict, stop: threading.Event) -> float:
        body = fill_template(self.cfg.request_template, text)
        last: Optional[Exception] = None
        for attempt in range(self.cfg.max_retries + 1):
            if stop.is_set():
                raise ScorerError("cancelled")
            self.limiter.acquire()
            with self._calls_lock:
                self._calls += 1
            response = None
            try:
                response = http.post(self.cfg.endpoint_url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = ScorerError(f"transport error: {exc}")
            else:
                code = response.status_code
                if code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {code})")
                if code == 429:
                    last = RateLimited(f"HTTP 429 after {attempt + 1} attempt(s)")
                elif code >= 500:
                    last = ScorerError(f"HTTP {code} after {attempt + 1} attempt(s)")
                elif code >= 400:
                    raise ScorerError(f"HTTP {code}: {response.text[:200]}")
                else:
                    return self._parse(response)
            if attempt < self.cfg.max_retries:
                self.sleep(self._backoff(attempt, response))
        raise last

    def score_batch(self, texts: Sequence[tuple[str, str]]) -> BatchResult:
        """Score ``(id, text)`` pairs, each distinct text at most once.

        Raises ``AuthError`` immediately; every other failure is recorded
        per id in the result's error manifest.
        """
        if not texts:
            raise ValueError("texts must be nonempty")
        result = BatchResult()
        digests = [text_hash(t) for _, t in texts]
        todo: dict[str, str] = {}
        for (_, text), digest in zip(texts, digests):
            if digest in self.cache:
                result.cache_hits += 1
            elif digest not in todo:
                todo[digest] = text
        failures: dict[str, ScorerError] = {}
        if todo:
            headers = self._headers()
            stop = threading.Event()
            calls_before = self._calls
            with httpx.Client(transport=self._transport, timeout=self.cfg.timeout) as http, ThreadPoolExecutor(
                self.cfg.max_in_flight
            ) as pool:
                pending: dict[Future, str] = {
                    pool.submit(self._fetch, http, text, headers, stop): d for d, text in todo.items()
                }
                try:
                    while pending:
                        done, _ = wait(pending, return_when=FIRST_COMPLETED)
                        for fut in done:
                            digest = pending.pop(fut)
                            try:
                                score = fut.result()
                            except AuthError:
                                raise
                            except ScorerError as exc:
                                failures[digest] = exc
                            else:
                                # single writer: only this thread touches the cache
                                self.cache.put(ScoredText(digest, self.cfg.model_name, score, _now()))
                except AuthError:
                    stop.set()
                    for fut in pending:
                        fut.cancel()
                    raise
            result.network_calls = self._calls - calls_before
        for (id_, _), digest in zip(texts, digests):
            entry = self.cache.get(digest)
            if entry is not None:
                result.scores.append((id_, entry.score))
            else:
                result.errors[id_] = failures[digest]
        return result


def score_batch(texts: Sequence[tuple[str, str]], cfg: ScorerConfig, **client_kwargs) -> BatchResult:
    with ScorerClient(cfg, **client_kwargs) as client:
        return client.score_batch(texts)
