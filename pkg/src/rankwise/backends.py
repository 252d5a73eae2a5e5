"""Uniform access to chat-completion backends: remote HTTP endpoints and
deterministic local mocks.

Everything that can answer a :class:`ChatRequest` exposes a single
``complete(request) -> ChatResponse`` method.  :class:`Gateway` wraps any
backend with the retry/backoff policy and a global concurrency permit, so
mocks and real endpoints behave identically from the caller's side.

The HTTP wire format is the de-facto chat-completion shape::

    POST <endpoint>
    {"model": ..., "messages": [{"role": ..., "content": ...}, ...],
     "temperature": ..., "max_tokens": ...}

    -> {"choices": [{"message": {"content": ...}}],
        "usage": {"prompt_tokens": ..., "completion_tokens": ...}}

Credentials come exclusively from the ``RERANK_API_KEY`` environment
variable; config files and flags never carry secrets.
"""

from __future__ import annotations

import dataclasses
import os
import random
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from .errors import ProtocolError, TransportError

API_KEY_ENV = "RERANK_API_KEY"
RETRYABLE_STATUSES = frozenset({429}) | frozenset(range(500, 600))


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    def __post_init__(self):
        if not self.messages:
            raise ValueError("chat request must contain at least one message")

    @classmethod
    def from_dicts(cls, messages: Sequence[Mapping[str, str]]) -> "ChatRequest":
        return cls(tuple(Message(m["role"], m["content"]) for m in messages))

    @classmethod
    def single_user(cls, content: str) -> "ChatRequest":
        return cls((Message("user", content),))


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    latency_s: float = 0.0
    attempts: int = 1

    def __post_init__(self):
        if self.latency_s < 0:
            raise ValueError("latency must be >= 0")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 4096
    timeout_s: float = 120.0
    retries: int = 2          # re-attempts after the first try
    backoff_base_ms: float = 500.0
    concurrency: int = 4

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def backoff_schedule(base_ms: float, attempts: int) -> list[float]:
    """Sleep intervals (ms) before each re-attempt; doubling, hence monotone."""
    return [base_ms * (2 ** i) for i in range(attempts)]


class HttpBackend:
    """Single-attempt HTTP chat-completion client (wrap in a Gateway for
    retries and concurrency limits)."""

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        if not config.endpoint:
            raise ValueError("HTTP backend requires an endpoint URL")
        self.config = config
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        start = time.perf_counter()
        try:
            response = self._client.post(self.config.endpoint, json=payload, headers=self._headers())
        except httpx.HTTPError as exc:
            raise TransportError(str(exc), request_id=request.request_id) from exc
        elapsed = time.perf_counter() - start

        if response.status_code != 200:
            raise ProtocolError(
                f"backend returned status {response.status_code}",
                request_id=request.request_id,
                status=response.status_code,
            )
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, LookupError, TypeError) as exc:
            raise ProtocolError(
                f"unparseable completion body: {exc}", request_id=request.request_id
            ) from exc
        usage = body.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
            latency_s=elapsed,
        )

    def close(self):
        self._client.close()


class Gateway:
    """Retry/backoff and a counting-permit concurrency bound around a backend.

    Shareable across threads; individual requests are independent.  Transport
    failures and retryable HTTP statuses (429/5xx) are retried up to
    ``config.retries`` extra attempts with exponentially growing sleeps;
    anything else is terminal.
    """

    def __init__(self, backend: Backend, config: BackendConfig | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.config = config or BackendConfig()
        self._permits = threading.BoundedSemaphore(self.config.concurrency)
        self._sleep = sleep

    def _retryable(self, exc: Exception) -> bool:
        if isinstance(exc, TransportError):
            return True
        return isinstance(exc, ProtocolError) and exc.status in RETRYABLE_STATUSES

    def complete(self, request: ChatRequest) -> ChatResponse:
        max_attempts = self.config.retries + 1
        delays = backoff_schedule(self.config.backoff_base_ms, self.config.retries)
        start = time.perf_counter()
        with self._permits:
            last_exc: Exception | None = None
            for attempt in range(1, max_attempts + 1):
                try:
                    response = self.backend.complete(request)
                except (TransportError, ProtocolError) as exc:
                    if not self._retryable(exc):
                        raise
                    last_exc = exc
                    if attempt < max_attempts:
                        self._sleep(delays[attempt - 1] / 1000.0)
                    continue
                response.attempts = attempt
                response.latency_s = time.perf_counter() - start
                return response
        raise TransportError(
            f"retries exhausted after {max_attempts} attempts: {last_exc}",
            request_id=request.request_id,
            attempts=max_attempts,
        )


# ---------------------------------------------------------------------------
# Prompt introspection for mocks
# ---------------------------------------------------------------------------
#
# Prompts intentionally carry only local numbering and passage text, so test
# doubles recover the window by parsing the shipped prompt shapes:
#   "[i]: text"          rerank window prompt
#   "Passage [i]: text"  selection prompts
#   "[i] text"           one passage per message in the multi-turn exchange

_BLOCK_COLON_RE = re.compile(
    r"^\[(\d+)\]:\s?(.*?)(?=\n\n\[\d+\]:|\n\nSearch Query:|\Z)", re.M | re.S
)
_BLOCK_PASSAGE_RE = re.compile(
    r"^Passage \[(\d+)\]:\s?(.*?)(?=\n\nPassage \[\d+\]:|\Z)", re.M | re.S
)
_TURN_RE = re.compile(r"^\[(\d+)\]\s(.*)$", re.S)
_SEARCH_QUERY_RE = re.compile(r"Search Query:\s*(.*?)\s*\.\s*Rank the \d+ passages", re.S)
_QUERY_LINE_RE = re.compile(r"^Query:\s*(.*?)\s*$", re.M)


def parse_prompt_window(request: ChatRequest) -> tuple[str | None, list[str]]:
    """Recover (query text, passage texts ordered by local index) from any of
    the shipped prompt shapes.  Returns (None, []) when nothing matches."""
    found: dict[int, str] = {}
    joined = "\n\n".join(m.content for m in request.messages)

    for message in request.messages:
        if message.role != "user":
            continue
        turn = _TURN_RE.match(message.content)
        if turn and "\n\n" not in message.content:
            found[int(turn.group(1))] = turn.group(2).strip()
    if not found:
        for regex in (_BLOCK_COLON_RE, _BLOCK_PASSAGE_RE):
            for idx, text in regex.findall(joined):
                found.setdefault(int(idx), text.strip())
            if found:
                break

    query = None
    search = _SEARCH_QUERY_RE.search(joined)
    if search:
        query = search.group(1)
    else:
        line = _QUERY_LINE_RE.search(joined)
        if line:
            query = line.group(1).rstrip(".")

    texts = [found[i] for i in sorted(found)] if found else []
    return query, texts


def _ranking_text(order: Sequence[int], think: str) -> str:
    body = " > ".join(f"[{k}]" for k in order)
    return f"<think>{think}</think><answer>{body}</answer>"


class MockBackend:
    """Base class for deterministic test doubles; subclasses override
    :meth:`_generate`.  Pure given construction arguments and the request."""

    def complete(self, request: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        text = self._generate(request)
        prompt_tokens = sum(len(m.content.split()) for m in request.messages)
        return ChatResponse(
            text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=len(text.split()),
            latency_s=time.perf_counter() - start,
        )

    def _generate(self, request: ChatRequest) -> str:
        raise NotImplementedError


class IdentityBackend(MockBackend):
    """Echoes the input order: [1] > [2] > ... > [m]."""

    def _generate(self, request: ChatRequest) -> str:
        _, texts = parse_prompt_window(request)
        return _ranking_text(range(1, len(texts) + 1), "keep the current order")


class ReverseBackend(MockBackend):
    """Reverses the input order: [m] > ... > [1]."""

    def _generate(self, request: ChatRequest) -> str:
        _, texts = parse_prompt_window(request)
        return _ranking_text(range(len(texts), 0, -1), "reverse the current order")


class OracleBackend(MockBackend):
    """Ranks by hidden judgments: grade descending, then input order.

    Judgments are keyed by query text and passage text because prompts never
    expose global ids.  Unknown passages score 0.
    """

    def __init__(self, judgments_by_query: Mapping[str, Mapping[str, int]]):
        self.judgments_by_query = judgments_by_query

    def _grades(self, query: str | None) -> Mapping[str, int]:
        if query is None:
            return {}
        for candidate in (query, query.rstrip(".")):
            if candidate in self.judgments_by_query:
                return self.judgments_by_query[candidate]
        return {}

    def _generate(self, request: ChatRequest) -> str:
        query, texts = parse_prompt_window(request)
        grades = self._grades(query)
        order = sorted(
            range(1, len(texts) + 1), key=lambda k: (-grades.get(texts[k - 1], 0), k)
        )
        return _ranking_text(order, "rank by hidden judgments")


class NoisyBackend(MockBackend):
    """Identity order perturbed by seeded adjacent swaps.

    The RNG is derived from (seed, request content), so repeated calls with
    the same input are byte-identical regardless of call order or threads.
    A swap rate of 0 reproduces the identity backend's ordering.
    """

    def __init__(self, seed: int, swap_rate: float):
        if not 0.0 <= swap_rate <= 1.0:
            raise ValueError("swap rate must lie in [0, 1]")
        self.seed = seed
        self.swap_rate = swap_rate

    def _generate(self, request: ChatRequest) -> str:
        _, texts = parse_prompt_window(request)
        content = "\x1e".join(m.content for m in request.messages)
        rng = random.Random(f"{self.seed}\x1f{content}")
        order = list(range(1, len(texts) + 1))
        for i in range(len(order) - 1):
            if rng.random() < self.swap_rate:
                order[i], order[i + 1] = order[i + 1], order[i]
        return _ranking_text(order, "noisy order")


class MalformedBackend(MockBackend):
    """Emits one of a fixed set of broken response shapes."""

    MODES = ("no_tags", "think_only", "bad_answer", "subset", "duplicates", "out_of_range")

    def __init__(self, mode: str = "no_tags"):
        if mode not in self.MODES:
            raise ValueError(f"unknown malformed mode {mode!r}; expected one of {self.MODES}")
        self.mode = mode

    def _generate(self, request: ChatRequest) -> str:
        _, texts = parse_prompt_window(request)
        m = max(len(texts), 1)
        if self.mode == "no_tags":
            return "passage 2 looks best, then passage 1"
        if self.mode == "think_only":
            return "<think>lost the answer somewhere</think>"
        if self.mode == "bad_answer":
            return "<think>t</think><answer>word salad with no indices</answer>"
        if self.mode == "subset":
            return "<think>t</think><answer>[1]</answer>"
        if self.mode == "duplicates":
            return _ranking_text([1, 1] + list(range(2, m + 1)), "t")
        return _ranking_text([m + 7] + list(range(1, m + 1)), "t")  # out_of_range


class FlakyBackend:
    """Raises a transport error for the first `fail_first` calls, then
    delegates to the inner backend.  For exercising retry behavior."""

    def __init__(self, inner: Backend, fail_first: int):
        self.inner = inner
        self.fail_first = fail_first
        self._calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self._calls += 1
            failing = self._calls <= self.fail_first
        if failing:
            raise TransportError("simulated transport failure", request_id=request.request_id)
        return self.inner.complete(request)


class FunctionBackend(MockBackend):
    """Adapts a plain ``request -> text`` callable into a backend."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn

    def _generate(self, request: ChatRequest) -> str:
        return self.fn(request)


def make_backend(
    spec: str,
    config: BackendConfig | None = None,
    judgments_by_query: Mapping[str, Mapping[str, int]] | None = None,
    seed: int = 0,
) -> Backend:
    """Build a backend from a CLI-style spec string.

    Specs: ``identity``, ``reverse``, ``oracle``, ``noisy[:swap_rate]``,
    ``malformed[:mode]``, or an ``http(s)://`` endpoint URL.
    """
    if spec.startswith(("http://", "https://")):
        cfg = dataclasses.replace(config or BackendConfig(), endpoint=spec)
        return HttpBackend(cfg)
    name, _, arg = spec.partition(":")
    if name == "identity":
        return IdentityBackend()
    if name == "reverse":
        return ReverseBackend()
    if name == "oracle":
        if judgments_by_query is None:
            raise ValueError("oracle backend requires judgments (load qrels first)")
        return OracleBackend(judgments_by_query)
    if name == "noisy":
        return NoisyBackend(seed=seed, swap_rate=float(arg) if arg else 0.1)
    if name == "malformed":
        return MalformedBackend(arg or "no_tags")
    raise ValueError(f"unknown backend spec {spec!r}")
