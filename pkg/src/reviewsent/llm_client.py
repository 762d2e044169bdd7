"""Chat-completion labelling harness with caching, retries and rate limiting.

Each review is sent as a single user message built from a prompt template;
the reply is mapped to a star rating with :func:`reviewsent.model.map_label`.
Replies are cached on disk (append-only JSONL keyed by a digest of model,
template and review text) so reruns do not hit the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence
from urllib.parse import urlparse

import httpx

from .corpus import RecordSet
from .evaluation import (
    DEFAULT_COLLAPSE,
    RunResult,
    collapse,
    metrics,
    ratings_confusion,
    render_report,
)
from .model import MappingError, map_label

log = logging.getLogger(__name__)

PROMPT_VERSION = "v1"
DEFAULT_PROMPT = (
    "You are rating customer reviews written in Lithuanian. Read the review and answer "
    "with a single digit from 1 to 5: 1 = very negative, 2 = negative, 3 = neutral, "
    "4 = positive, 5 = very positive. Answer with the digit only.\n\nReview:\n{review}"
)
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
TOKEN_ENV = "OPENAI_API_KEY"
RETRYABLE = {429, 500, 502, 503, 504}


class RemoteError(RuntimeError):
    pass


class AuthError(RemoteError):
    pass


class CacheCorruptError(RemoteError):
    pass


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model: str = "gpt-4"
    prompt_template: str = DEFAULT_PROMPT
    timeout: float = 30.0
    max_retries: int = 5
    requests_per_minute: int = 60
    token_env: str = TOKEN_ENV
    backoff_base: float = 1.0
    temperature: float = 0.0

    def __post_init__(self):
        if self.prompt_template.count("{review}") != 1:
            raise ValueError("prompt_template must contain exactly one {review} slot")
        if self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def token(self) -> str | None:
        return os.environ.get(self.token_env) or None

    @property
    def is_local(self) -> bool:
        return urlparse(self.endpoint).hostname in ("localhost", "127.0.0.1", "::1")

    def prompt(self, review: str) -> str:
        return self.prompt_template.replace("{review}", review)

    def request_body(self, review: str) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": self.prompt(review)}],
            "temperature": self.temperature,
        }


@dataclass(frozen=True)
class RemoteVerdict:
    id: str
    raw_response: str
    label: int | None
    latency: float
    cached: bool
    attempts: int = 1
    error: str | None = None

    @property
    def mapping_error(self) -> bool:
        return self.label is None

    def to_json(self) -> dict:
        return {"id": self.id, "raw_response": self.raw_response, "label": self.label,
                "latency": self.latency, "cached": self.cached, "attempts": self.attempts,
                "error": self.error}


def cache_key(model: str, prompt_template: str, text: str) -> str:
    payload = json.dumps([model, prompt_template, text], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSONL cache ``{digest, raw_response, timestamp}``.

    A final line without its newline is an interrupted append and is ignored;
    any other unparseable line is corruption.
    """

    def __init__(self, path: str | Path | None, wall_clock: Callable[[], float] = time.time):
        self.path = Path(path) if path is not None else None
        self.wall_clock = wall_clock
        self.entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        content = self.path.read_text(encoding="utf-8")
        lines = content.split("\n")
        complete = lines[:-1]  # the last element is "" or an unterminated partial line
        for lineno, line in enumerate(complete, start=1):
            if not line:
                continue
            try:
                obj = json.loads(line)
                self.entries[obj["digest"]] = obj["raw_response"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CacheCorruptError(f"cache file {self.path} corrupt at line {lineno}") from None

    def get(self, key: str) -> str | None:
        return self.entries.get(key)

    def put(self, key: str, raw: str) -> None:
        with self._lock:
            self.entries[key] = raw
            if self.path is None:
                return
            line = json.dumps({"digest": key, "raw_response": raw, "timestamp": self.wall_clock()},
                              ensure_ascii=False) + "\n"
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)


class RateLimiter:
    """Sliding 60 s window: at most ``rpm`` acquisitions in any window."""

    def __init__(self, rpm: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep, window: float = 60.0):
        self.rpm, self.clock, self.sleep, self.window = rpm, clock, sleep, window
        self.stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            now = self.clock()
            while self.stamps and now - self.stamps[0] >= self.window:
                self.stamps.popleft()
            if len(self.stamps) >= self.rpm:
                wait = self.stamps[0] + self.window - now
                if wait > 0:
                    self.sleep(wait)
                now = self.clock()
                while self.stamps and now - self.stamps[0] >= self.window:
                    self.stamps.popleft()
            self.stamps.append(now)
            return now


def _reply_text(body: Mapping) -> str:
    try:
        return str(body["choices"][0]["message"]["content"])
    except (KeyError, IndexError, TypeError):
        raise RemoteError("response is not a chat completion") from None


def _label(raw: str) -> int | None:
    try:
        return map_label(raw)
    except MappingError:
        return None


class RemoteClassifier:
    def __init__(self, cfg: RemoteConfig, cache_path: str | Path | None = None, *,
                 client: httpx.Client | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep,
                 wall_clock: Callable[[], float] = time.time):
        token = cfg.token
        if token is None and not cfg.is_local:
            raise AuthError(f"no auth token in ${cfg.token_env} for remote endpoint {cfg.endpoint}")
        self.cfg = cfg
        self.cache = ResponseCache(cache_path, wall_clock)
        self.limiter = RateLimiter(cfg.requests_per_minute, clock, sleep)
        self.clock, self.sleep = clock, sleep
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.client = client or httpx.Client(timeout=cfg.timeout)
        self.headers = headers
        self.network_calls = 0

    def close(self) -> None:
        self.client.close()

    def _post(self, review: str) -> tuple[str | None, int, str | None]:
        """Returns ``(raw_text or None, attempts, error)``."""
        body = self.cfg.request_body(review)
        error = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self.sleep(self.cfg.backoff_base * 2 ** (attempt - 1))
            self.limiter.acquire()
            self.network_calls += 1
            try:
                resp = self.client.post(self.cfg.endpoint, json=body, headers=self.headers,
                                        timeout=self.cfg.timeout)
            except httpx.TimeoutException:
                error = "timeout"
                continue
            except httpx.TransportError as e:
                error = f"transport error: {type(e).__name__}"
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code in RETRYABLE:
                error = f"HTTP {resp.status_code}"
                log.debug("retryable HTTP %d on attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code != 200:
                return None, attempt + 1, f"HTTP {resp.status_code}"
            try:
                return _reply_text(resp.json()), attempt + 1, None
            except (ValueError, RemoteError) as e:
                return None, attempt + 1, str(e)
        return None, self.cfg.max_retries + 1, error

    def classify(self, rid: str, text: str) -> RemoteVerdict:
        key = cache_key(self.cfg.model, self.cfg.prompt_template, text)
        hit = self.cache.get(key)
        if hit is not None:
            return RemoteVerdict(rid, hit, _label(hit), 0.0, True, 0)
        start = self.clock()
        raw, attempts, error = self._post(text)
        latency = (self.clock() - start) * 1000.0
        if raw is None:
            log.warning("record %s: giving up after %d attempts (%s)", rid, attempts, error)
            return RemoteVerdict(rid, "", None, latency, False, attempts, error)
        self.cache.put(key, raw)
        return RemoteVerdict(rid, raw, _label(raw), latency, False, attempts)


def classify_remote(rs: RecordSet, cfg: RemoteConfig, cache_path: str | Path | None, **kw
                    ) -> list[RemoteVerdict]:
    clf = RemoteClassifier(cfg, cache_path, **kw)
    try:
        return [clf.classify(r.id, r.text) for r in rs]
    finally:
        if "client" not in kw:
            clf.close()


# ---------------------------------------------------------------------------
# Comparison


@dataclass
class Comparison:
    runs: list[RunResult] = field(default_factory=list)

    def render(self, format: str = "markdown", notes: Sequence[str] = ()) -> str:
        return render_report(self.runs, format, notes)

    def by_name(self, name: str) -> RunResult:
        return next(r for r in self.runs if r.name == name)


def _as_mapping(preds) -> dict[str, int | None]:
    if isinstance(preds, Mapping):
        return dict(preds)
    out = {}
    for p in preds:
        if isinstance(p, RemoteVerdict):
            out[p.id] = p.label
        else:
            out[p["id"]] = p["pred"]
    return out


def compare_runs(local_preds, remote_verdicts, truths: Mapping[str, int],
                 local_name: str = "local", remote_name: str = "remote",
                 collapse_map: Mapping[int, str] = DEFAULT_COLLAPSE) -> Comparison:
    """5-class and collapsed 3-class reports for a local model and the remote model."""
    local = _as_mapping(local_preds)
    remote = _as_mapping(remote_verdicts)
    ids = set(truths)
    problems = []
    for name, got in ((local_name, local), (remote_name, remote)):
        missing = sorted(ids - set(got))
        extra = sorted(set(got) - ids)
        if missing:
            problems.append(f"{name} missing ids: {', '.join(missing)}")
        if extra:
            problems.append(f"{name} has ids without truth: {', '.join(extra)}")
    if problems:
        raise AlignmentError("; ".join(problems))
    order = sorted(ids)
    true = [truths[i] for i in order]
    cmp = Comparison()
    for name, got in ((local_name, local), (remote_name, remote)):
        cm5 = ratings_confusion([got[i] for i in order], true)
        cm3 = collapse(cm5, collapse_map)
        cmp.runs.append(RunResult(f"{name} (5-class)", metrics(cm5), cm5))
        cmp.runs.append(RunResult(f"{name} (3-class)", metrics(cm3), cm3))
    return cmp
