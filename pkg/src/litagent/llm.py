"""Completion and embedding gateways.

Every gateway implements ``complete(request, tracker=None) -> str``.  The
scripted :class:`MockGateway` is the default for offline runs and tests; the
HTTP gateways speak the OpenAI chat-completions and Anthropic messages wire
formats.  Transcripts are JSON-lines files readable by :func:`load_transcript`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import httpx
import numpy as np

from .config import ConfigError
from .corpus import estimate_tokens

log = logging.getLogger(__name__)

# USD per million (prompt, completion) tokens.
PRICES: dict[str, tuple[float, float]] = {
    "gpt-4-turbo-2024-04-09": (10.0, 30.0),
    "gpt-4-0613": (30.0, 60.0),
    "gpt-4o": (5.0, 15.0),
    "gpt-3.5-turbo-0125": (0.5, 1.5),
    "claude-3-opus-20240229": (15.0, 75.0),
    "claude-3-5-sonnet-20240620": (3.0, 15.0),
    "gemini-1.5-pro": (3.5, 10.5),
    "meta-llama/Llama-3-70b-chat-hf": (0.9, 0.9),
    "text-embedding-3-large": (0.13, 0.0),
}


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Provider unreachable after all retries."""


class MockMismatchError(GatewayError):
    """A strict mock received a request that matches no (or several) script entries."""


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    system: str
    user: str
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    @property
    def hash(self) -> str:
        blob = json.dumps([self.model, self.system, self.user, self.temperature], ensure_ascii=False)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def split_model(model: str) -> tuple[str, str]:
    provider, sep, name = model.partition("/")
    if not sep or not name:
        raise ConfigError(f"model id {model!r} must look like 'provider/model'")
    return provider, name


class CostTracker:
    """Thread-safe token counters; cost is derived from the totals, so it is order independent."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.tokens: dict[str, list[int]] = {}
        self.calls = 0

    def add(self, model: str, prompt_tokens: int, completion_tokens: int) -> None:
        with self._lock:
            counts = self.tokens.setdefault(model, [0, 0])
            counts[0] += prompt_tokens
            counts[1] += completion_tokens
            self.calls += 1

    def merge(self, other: "CostTracker") -> None:
        """Add another tracker's totals and call count into this one."""
        with other._lock:
            snapshot = {m: list(v) for m, v in other.tokens.items()}
            calls = other.calls
        with self._lock:
            for model, (p, c) in snapshot.items():
                counts = self.tokens.setdefault(model, [0, 0])
                counts[0] += p
                counts[1] += c
            self.calls += calls

    @property
    def total_tokens(self) -> int:
        return sum(p + c for p, c in self.tokens.values())

    @property
    def cost(self) -> float:
        total = 0.0
        for model in sorted(self.tokens):
            p, c = self.tokens[model]
            name = model.partition("/")[2] or model
            price_in, price_out = PRICES.get(name, (0.0, 0.0))
            total += (p * price_in + c * price_out) / 1e6
        return total

    def to_dict(self) -> dict[str, Any]:
        return {"cost_usd": round(self.cost, 6), "calls": self.calls, "tokens": {m: list(v) for m, v in sorted(self.tokens.items())}}


class Gateway:
    def complete(self, request: CompletionRequest, tracker: CostTracker | None = None) -> str:
        raise NotImplementedError


# -- scripted mock ------------------------------------------------------------


@dataclass
class MockEntry:
    """One scripted reply.

    ``match`` keys (all optional, all must hold): ``hash`` (request hash),
    ``model``, ``contains`` (string or list of strings that must all occur in
    the user text), ``system_contains``, ``regex`` (searched in the user text).
    A list of ``responses`` is consumed in order (``cycle`` wraps around at
    the end); a single ``response`` is returned every time.
    """

    match: dict[str, Any]
    responses: list[str]
    repeat: bool = True
    cycle: bool = False
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    _cursor: int = field(default=0, repr=False)

    def matches(self, request: CompletionRequest) -> bool:
        m = self.match
        if "hash" in m and m["hash"] != request.hash:
            return False
        if "model" in m and m["model"] != request.model:
            return False
        contains = m.get("contains", [])
        if isinstance(contains, str):
            contains = [contains]
        if any(c not in request.user for c in contains):
            return False
        sys_contains = m.get("system_contains", [])
        if isinstance(sys_contains, str):
            sys_contains = [sys_contains]
        if any(c not in request.system for c in sys_contains):
            return False
        if "regex" in m and not re.search(m["regex"], request.user, re.S):
            return False
        return True

    @property
    def exhausted(self) -> bool:
        return not self.repeat and not self.cycle and self._cursor >= len(self.responses)

    def take(self) -> str:
        if self.repeat:
            return self.responses[0]
        reply = self.responses[self._cursor % len(self.responses)]
        self._cursor += 1
        return reply


@dataclass
class MockScript:
    entries: list[MockEntry]
    strict: bool = True
    default_response: str | None = None


class MockGateway(Gateway):
    def __init__(self, script: MockScript | Iterable[MockEntry], *, strict: bool | None = None, default_response: str | None = None):
        if not isinstance(script, MockScript):
            script = MockScript(list(script))
        self.entries = script.entries
        self.strict = script.strict if strict is None else strict
        self.default_response = default_response if default_response is not None else script.default_response
        self.requests: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], **kwargs: Any) -> "MockGateway":
        return cls([MockEntry({"contains": k}, [v]) for k, v in pairs.items()], **kwargs)

    def complete(self, request: CompletionRequest, tracker: CostTracker | None = None) -> str:
        with self._lock:
            self.requests.append(request)
            candidates = [e for e in self.entries if not e.exhausted and e.matches(request)]
            if self.strict and len(candidates) != 1:
                what = "no script entry" if not candidates else f"{len(candidates)} script entries"
                raise MockMismatchError(
                    f"unmatched prompt {request.hash}: {what} for model {request.model} "
                    f"(user text starts {request.user[:60]!r})"
                )
            if candidates:
                entry = candidates[0]
                reply = entry.take()
                prompt_tokens = entry.prompt_tokens
                completion_tokens = entry.completion_tokens
            elif self.default_response is not None:
                reply, prompt_tokens, completion_tokens = self.default_response, None, None
            else:
                raise MockMismatchError(f"unmatched prompt {request.hash} and no default response")
        if tracker is not None:
            tracker.add(
                request.model,
                prompt_tokens if prompt_tokens is not None else estimate_tokens(request.system + request.user),
                completion_tokens if completion_tokens is not None else estimate_tokens(reply),
            )
        return reply

    def calls_for(self, model: str) -> int:
        return sum(1 for r in self.requests if r.model == model)


def load_transcript(path: str | Path) -> MockScript:
    """Read a transcript file.

    Records with ``request_hash`` replay recorded exchanges (repeated hashes
    replay in order); records with ``match`` are hand-written script entries.
    An optional ``{"meta": {...}}`` record sets ``strict`` and
    ``default_response``.
    """
    entries: list[MockEntry] = []
    by_hash: dict[str, MockEntry] = {}
    meta: dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise GatewayError(f"{path}:{lineno}: malformed transcript record: {exc}") from None
        if "meta" in rec:
            meta.update(rec["meta"])
        elif "request_hash" in rec:
            h = rec["request_hash"]
            if h in by_hash:
                by_hash[h].responses.append(rec["response"])
            else:
                entry = MockEntry(
                    {"hash": h},
                    [rec["response"]],
                    repeat=False,
                    prompt_tokens=rec.get("prompt_tokens"),
                    completion_tokens=rec.get("completion_tokens"),
                )
                by_hash[h] = entry
                entries.append(entry)
        elif "match" in rec:
            responses = rec["responses"] if "responses" in rec else [rec["response"]]
            entries.append(
                MockEntry(
                    rec["match"],
                    list(responses),
                    repeat="responses" not in rec,
                    cycle=bool(rec.get("cycle", False)),
                    prompt_tokens=rec.get("prompt_tokens"),
                    completion_tokens=rec.get("completion_tokens"),
                )
            )
        else:
            raise GatewayError(f"{path}:{lineno}: record needs 'request_hash', 'match' or 'meta'")
    # a recorded exchange replayed more often than it was recorded repeats its last reply
    for entry in by_hash.values():
        if len(entry.responses) == 1:
            entry.repeat = True
    return MockScript(entries, strict=meta.get("strict", True), default_response=meta.get("default_response"))


class RecordingGateway(Gateway):
    """Wraps a gateway and appends every exchange to a transcript file."""

    def __init__(self, inner: Gateway, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest, tracker: CostTracker | None = None) -> str:
        local = CostTracker()
        reply = self.inner.complete(request, local)
        p, c = next(iter(local.tokens.values()), [0, 0])
        if tracker is not None:
            tracker.add(request.model, p, c)
        record = {
            "request_hash": request.hash,
            "model": request.model,
            "system": request.system,
            "user": request.user,
            "temperature": request.temperature,
            "response": reply,
            "prompt_tokens": p,
            "completion_tokens": c,
        }
        with self._lock, open(self.path, "a") as fh:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        return reply


# -- live providers -------------------------------------------------------------


class RateLimiter:
    """Sliding-window requests-per-minute ceiling shared by threads."""

    def __init__(self, rpm: int, clock=time.monotonic, sleep=time.sleep):
        self.rpm = rpm
        self._clock, self._sleep = clock, sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rpm <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.rpm:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._sleep(wait)


RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


def post_with_retries(
    client: httpx.Client,
    url: str,
    payload: dict[str, Any],
    headers: dict[str, str],
    *,
    retries: int = 4,
    backoff: float = 1.0,
    sleep=time.sleep,
    limiter: RateLimiter | None = None,
) -> dict[str, Any]:
    last: Exception | None = None
    for attempt in range(retries + 1):
        if limiter:
            limiter.acquire()
        try:
            response = client.post(url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            last = exc
        else:
            if response.status_code not in RETRYABLE_STATUS:
                if response.is_error:
                    raise TransportError(f"{url}: status {response.status_code}: {response.text[:200]}")
                return response.json()
            last = httpx.HTTPStatusError(f"status {response.status_code}", request=response.request, response=response)
        if attempt < retries:
            delay = min(backoff * 2**attempt, 30.0)
            log.warning("transient failure on %s (%s); retry %d in %.1fs", url, last, attempt + 1, delay)
            sleep(delay)
    raise TransportError(f"{url}: giving up after {retries + 1} attempts: {last}")


class OpenAIChatGateway(Gateway):
    """OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(self, api_key: str, base_url: str = "https://api.openai.com/v1", *, transport: httpx.BaseTransport | None = None,
                 retries: int = 4, backoff: float = 1.0, rpm: int = 0, timeout: float = 120.0, sleep=time.sleep):
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.retries, self.backoff, self._sleep = retries, backoff, sleep
        self.limiter = RateLimiter(rpm) if rpm else None
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: CompletionRequest, tracker: CostTracker | None = None) -> str:
        _, name = split_model(request.model)
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        data = post_with_retries(
            self._client,
            f"{self.base_url}/chat/completions",
            {"model": name, "messages": messages, "temperature": request.temperature},
            {"Authorization": f"Bearer {self.api_key}"},
            retries=self.retries, backoff=self.backoff, sleep=self._sleep, limiter=self.limiter,
        )
        reply = data["choices"][0]["message"]["content"] or ""
        usage = data.get("usage") or {}
        if tracker is not None:
            tracker.add(
                request.model,
                usage.get("prompt_tokens", estimate_tokens(request.system + request.user)),
                usage.get("completion_tokens", estimate_tokens(reply)),
            )
        return reply


class AnthropicGateway(Gateway):
    """Anthropic ``/v1/messages`` endpoint."""

    def __init__(self, api_key: str, base_url: str = "https://api.anthropic.com", *, transport: httpx.BaseTransport | None = None,
                 retries: int = 4, backoff: float = 1.0, rpm: int = 0, max_tokens: int = 4096, timeout: float = 120.0, sleep=time.sleep):
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.retries, self.backoff, self._sleep = retries, backoff, sleep
        self.max_tokens = max_tokens
        self.limiter = RateLimiter(rpm) if rpm else None
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: CompletionRequest, tracker: CostTracker | None = None) -> str:
        _, name = split_model(request.model)
        payload: dict[str, Any] = {
            "model": name,
            "max_tokens": self.max_tokens,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.user}],
        }
        if request.system:
            payload["system"] = request.system
        data = post_with_retries(
            self._client,
            f"{self.base_url}/v1/messages",
            payload,
            {"x-api-key": self.api_key, "anthropic-version": "2023-06-01"},
            retries=self.retries, backoff=self.backoff, sleep=self._sleep, limiter=self.limiter,
        )
        reply = "".join(block.get("text", "") for block in data.get("content", []) if block.get("type") == "text")
        usage = data.get("usage") or {}
        if tracker is not None:
            tracker.add(
                request.model,
                usage.get("input_tokens", estimate_tokens(request.system + request.user)),
                usage.get("output_tokens", estimate_tokens(reply)),
            )
        return reply


class RouterGateway(Gateway):
    """Dispatches on the provider prefix of the model id."""

    def __init__(self, routes: dict[str, Gateway]):
        self.routes = routes

    def complete(self, request: CompletionRequest, tracker: CostTracker | None = None) -> str:
        provider, _ = split_model(request.model)
        if provider not in self.routes:
            raise ConfigError(f"unknown model {request.model!r}: no provider configured for {provider!r}")
        return self.routes[provider].complete(request, tracker)


PROVIDER_ENV = {
    "openai": ("OPENAI_API_KEY", "https://api.openai.com/v1"),
    "gemini": ("GEMINI_API_KEY", "https://generativelanguage.googleapis.com/v1beta/openai"),
    "together": ("TOGETHER_API_KEY", "https://api.together.xyz/v1"),
    "anthropic": ("ANTHROPIC_API_KEY", "https://api.anthropic.com"),
}


def gateway_from_env(env: dict[str, str] | None = None, rpm: int = 0) -> RouterGateway:
    """Router with one live gateway per provider whose API key is set."""
    env = dict(os.environ if env is None else env)
    routes: dict[str, Gateway] = {}
    for provider, (var, url) in PROVIDER_ENV.items():
        key = env.get(var)
        if not key:
            continue
        if provider == "anthropic":
            routes[provider] = AnthropicGateway(key, url, rpm=rpm)
        else:
            routes[provider] = OpenAIChatGateway(key, url, rpm=rpm)
    return RouterGateway(routes)


class OpenAIEmbedder:
    def __init__(self, api_key: str, model: str = "text-embedding-3-large", base_url: str = "https://api.openai.com/v1",
                 *, transport: httpx.BaseTransport | None = None, retries: int = 4):
        self.model_id = model
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self._client = httpx.Client(timeout=120.0, transport=transport)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        data = post_with_retries(
            self._client,
            f"{self.base_url}/embeddings",
            {"model": self.model_id, "input": list(texts)},
            {"Authorization": f"Bearer {self.api_key}"},
            retries=self.retries,
        )
        rows = sorted(data["data"], key=lambda d: d["index"])
        return [np.asarray(r["embedding"], dtype=np.float64) for r in rows]


# -- structured output ----------------------------------------------------------


@dataclass(frozen=True)
class RcsOutput:
    summary: str
    relevance_score: int
    extra: dict[str, str] = field(default_factory=dict)


_INT = re.compile(r"-?\d+(?:\.\d+)?")
_decoder = json.JSONDecoder()


def iter_json_objects(text: str) -> Iterable[Any]:
    """Yield every JSON value that starts at a ``{`` or ``[`` in ``text``, left to right."""
    i = 0
    while True:
        starts = [p for p in (text.find("{", i), text.find("[", i)) if p != -1]
        if not starts:
            return
        start = min(starts)
        try:
            value, end = _decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            i = start + 1
            continue
        yield value
        i = end


def parse_score(value: Any) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return int(round(value))
    if isinstance(value, str):
        m = _INT.search(value)
        if m:
            return int(round(float(m.group())))
    return None


def parse_rcs(text: str, extra_keys: Sequence[str] = ()) -> RcsOutput | None:
    """Parse a reranking-summary reply; ``None`` means the chunk is discarded."""
    try:
        for obj in iter_json_objects(text):
            if not isinstance(obj, dict) or "summary" not in obj or "relevance_score" not in obj:
                continue
            score = parse_score(obj["relevance_score"])
            if score is None or not isinstance(obj["summary"], str):
                continue
            if not 0 <= score <= 10:
                log.warning("relevance score %s out of range; clamped", score)
                score = min(10, max(0, score))
            extra = {k: str(obj[k]) for k in extra_keys if k in obj and obj[k] is not None}
            return RcsOutput(obj["summary"], score, extra)
    except RecursionError:
        pass
    log.info("discarding unparsable summary reply: %r", text[:80])
    return None
