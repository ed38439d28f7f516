"""Text-generation backends behind one interface.

RemoteBackend speaks the OpenAI-compatible chat-completions wire format
with retry/backoff; OfflineBackend is a deterministic stand-in that serves
every prompt kind the pipeline produces (rewriting, tree extraction,
deepening, judging, response generation) as a pure function of the request
and a seed. Both share a content-addressed response cache and an optional
rate limiter.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import requests

from . import prompts
from .prng import MASK64, SplitMix64
from .semantic_tree import TreeNode, copy_tree, preorder, serialize_tree
from .tokens import count_tokens
from .words import CONNECTIVE, NOUNS, VERBS, content_tokens

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

DEFAULT_TEMPERATURE = 0.7
DEFAULT_TOP_P = 0.9
DEFAULT_MAX_TOKENS = 2048

API_KEY_ENV = "TREE_EVOLVE_API_KEY"

# Appended by the offline backend for deepening prompts; must contain
# content words so the rewrite measurably complicates the instruction.
OFFLINE_DEEPENING_SUFFIX = (
    "Justify each step, cite supporting evidence, and compare at least two "
    "alternative approaches before concluding."
)


class BackendError(Exception):
    """Base for backend failures."""


class TransportError(BackendError):
    """Retryable failures exhausted (429/5xx/connection errors)."""


class PermanentError(BackendError):
    """Non-retryable HTTP failure (4xx other than 429)."""


class ProtocolError(BackendError):
    """Response body does not match the chat-completions shape."""


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("usage counters must be non-negative")


@dataclass
class ChatRequest:
    model: str
    messages: list[dict]
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for msg in self.messages:
            if msg.get("role") not in ROLES:
                raise ValueError(f"unknown message role {msg.get('role')!r}")
            if "content" not in msg:
                raise ValueError("message missing content")
        if self.messages[-1]["role"] != "user":
            raise ValueError("last message must be a user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def wire_body(self) -> dict:
        body = {
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        return body


@dataclass
class ChatResponse:
    content: str
    backend_id: str
    cached: bool = False
    usage: Usage = field(default_factory=Usage)


def canonical_request_json(request: ChatRequest) -> str:
    """Canonical JSON: sorted keys, no insignificant whitespace, UTF-8."""
    payload = {
        "model": request.model,
        "messages": request.messages,
        "temperature": request.temperature,
        "top_p": request.top_p,
        "max_tokens": request.max_tokens,
        "seed": request.seed,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def cache_key(request: ChatRequest) -> str:
    canonical = canonical_request_json(request)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def request_hash64(request: ChatRequest) -> int:
    return int(cache_key(request)[:16], 16)


@dataclass
class CacheEntry:
    key: str
    request: dict
    response: dict
    created_at: float


class ResponseCache:
    """Content-addressed response cache.

    The in-memory index is authoritative; when a path is given, entries are
    persisted append-only as JSON lines and reloaded at startup. Undecodable
    lines (for example a line truncated by a crash) are dropped with a
    warning. Reads may run concurrently; writes are serialized.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._index: dict[str, ChatResponse] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        dropped = 0
        with self.path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    resp = entry["response"]
                    self._index[entry["key"]] = ChatResponse(
                        content=resp["content"],
                        backend_id=resp["backend_id"],
                        cached=False,
                        usage=Usage(**resp.get("usage", {})),
                    )
                except (json.JSONDecodeError, KeyError, TypeError):
                    dropped += 1
        if dropped:
            logger.warning("%s: dropped %d corrupt cache line(s)", self.path, dropped)

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str) -> ChatResponse | None:
        with self._lock:
            found = self._index.get(key)
            if found is None:
                self.misses += 1
                return None
            self.hits += 1
            return found

    def put(self, key: str, request: ChatRequest, response: ChatResponse) -> None:
        entry = CacheEntry(
            key=key,
            request=request.wire_body() | {"seed": request.seed},
            response={
                "content": response.content,
                "backend_id": response.backend_id,
                "usage": {
                    "prompt_tokens": response.usage.prompt_tokens,
                    "completion_tokens": response.usage.completion_tokens,
                },
            },
            created_at=time.time(),
        )
        line = json.dumps(entry.__dict__, ensure_ascii=False)
        with self._lock:
            self._index[key] = response
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
                    handle.flush()


class RateLimiter:
    """Sliding-window limiter: at most `rate` acquisitions in any 1 s window.

    A refilling bucket with burst capacity would admit up to 2r-1 calls in a
    window straddling a full bucket, so the window itself is enforced.
    """

    def __init__(
        self,
        rate: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.capacity = max(1, int(rate))
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and self._stamps[0] <= now - 1.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.capacity:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + 1.0 - now
            self._sleep(max(wait, 0.0))


class Backend:
    """Shared complete() flow: cache lookup, rate limit, invoke, persist."""

    backend_id = "base"

    def __init__(
        self,
        model: str = "offline",
        cache: ResponseCache | None = None,
        rate_limiter: RateLimiter | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        top_p: float = DEFAULT_TOP_P,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        self.model = model
        self.cache = cache if cache is not None else ResponseCache()
        self.rate_limiter = rate_limiter
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.calls = 0
        self._counter_lock = threading.Lock()

    def make_request(self, messages: list[dict], seed: int | None = None) -> ChatRequest:
        """Request carrying this backend's model and decoding defaults."""
        return ChatRequest(
            model=self.model,
            messages=messages,
            temperature=self.temperature,
            top_p=self.top_p,
            max_tokens=self.max_tokens,
            seed=seed,
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = cache_key(request)
        hit = self.cache.get(key)
        if hit is not None:
            return replace(hit, cached=True)
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        with self._counter_lock:
            self.calls += 1
        response = self._invoke(request)
        self.cache.put(key, request, response)
        return response

    def _invoke(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


class RemoteBackend(Backend):
    """OpenAI-compatible chat-completions client.

    429 and 5xx responses (and connection-level failures) are retried with
    exponential backoff: base 1 s, factor 2, at most 5 attempts. Other 4xx
    are permanent and never retried.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        completions_path: str = "/v1/chat/completions",
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        cache: ResponseCache | None = None,
        rate_limiter: RateLimiter | None = None,
        sleep: Callable[[float], None] = time.sleep,
        temperature: float = DEFAULT_TEMPERATURE,
        top_p: float = DEFAULT_TOP_P,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        super().__init__(
            model=model, cache=cache, rate_limiter=rate_limiter,
            temperature=temperature, top_p=top_p, max_tokens=max_tokens,
        )
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.completions_path = completions_path
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleep

    @property
    def url(self) -> str:
        return self.base_url + self.completions_path

    def _invoke(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_failure = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt > 0:
                self._sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
            try:
                http = requests.post(
                    self.url, json=request.wire_body(), headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as err:
                last_failure = f"connection failure: {err}"
                logger.warning("attempt %d/%d %s", attempt + 1, self.max_attempts, last_failure)
                continue
            if http.status_code == 200:
                return self._parse(http)
            if http.status_code == 429 or http.status_code >= 500:
                last_failure = f"HTTP {http.status_code}"
                logger.warning("attempt %d/%d %s", attempt + 1, self.max_attempts, last_failure)
                continue
            raise PermanentError(f"HTTP {http.status_code} from {self.url}: {http.text[:200]}")
        raise TransportError(
            f"{self.url} still failing after {self.max_attempts} attempts ({last_failure})"
        )

    def _parse(self, http: requests.Response) -> ChatResponse:
        try:
            data = http.json()
            content = data["choices"][0]["message"]["content"]
            if not isinstance(content, str):
                raise TypeError("content is not a string")
            usage = data.get("usage") or {}
            return ChatResponse(
                content=content,
                backend_id=f"remote:{data.get('model', '')}",
                cached=False,
                usage=Usage(
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                ),
            )
        except (ValueError, KeyError, IndexError, TypeError) as err:
            raise ProtocolError(f"malformed chat-completions body: {err}") from err


def heuristic_tree(text: str) -> TreeNode | None:
    """Deterministic local stand-in for LLM semantic parsing.

    Content words (whitespace tokens minus the function-word stoplist,
    normalized) are chained in order, classes alternating V/N starting
    with V. Returns None when no content words remain.
    """
    toks = content_tokens(text)
    if not toks:
        return None
    root = TreeNode(toks[0], "V")
    node = root
    for i, tok in enumerate(toks[1:], start=1):
        child = TreeNode(tok, "V" if i % 2 == 0 else "N")
        node.children.append(child)
        node = child
    return root


def offline_expand(tree: TreeNode, n: int, seed: int) -> TreeNode:
    """Add exactly `n` content nodes, reproducibly.

    Insertion i (0-based) attaches a new leaf as the last child of the node
    at pre-order index next_u64() % total_nodes in the current tree; its
    class alternates V/N with i and its label comes from the fixed lexicons
    at index i mod 32.
    """
    if n < 0:
        raise ValueError("cannot add a negative number of nodes")
    result = copy_tree(tree)
    rng = SplitMix64(seed)
    for i in range(n):
        nodes = preorder(result)
        attach = nodes[rng.next_below(len(nodes))]
        if i % 2 == 0:
            attach.children.append(TreeNode(VERBS[i % len(VERBS)], "V"))
        else:
            attach.children.append(TreeNode(NOUNS[i % len(NOUNS)], "N"))
    return result


def offline_verbalize(tree: TreeNode) -> str:
    """Deterministic tree-to-text: pre-order labels joined by spaces, a
    connective before each multi-child list, first character uppercased,
    terminal period."""
    words: list[str] = []
    stack: list[TreeNode] = [tree]
    while stack:
        node = stack.pop()
        words.append(node.label)
        if len(node.children) > 1:
            words.append(CONNECTIVE)
        stack.extend(reversed(node.children))
    sentence = " ".join(words)
    return sentence[0].upper() + sentence[1:] + "."


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


class OfflineBackend(Backend):
    """Deterministic backend: every response is a pure function of the
    request and the configured seed, regardless of call interleaving."""

    backend_id = "offline"

    def __init__(
        self,
        seed: int = 0,
        cache: ResponseCache | None = None,
        rate_limiter: RateLimiter | None = None,
        temperature: float = DEFAULT_TEMPERATURE,
        top_p: float = DEFAULT_TOP_P,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ):
        super().__init__(
            model="offline", cache=cache, rate_limiter=rate_limiter,
            temperature=temperature, top_p=top_p, max_tokens=max_tokens,
        )
        self.seed = seed & MASK64

    def _invoke(self, request: ChatRequest) -> ChatResponse:
        content = self._dispatch(request)
        prompt_text = "\n".join(str(m["content"]) for m in request.messages)
        return ChatResponse(
            content=content,
            backend_id=self.backend_id,
            cached=False,
            usage=Usage(
                prompt_tokens=count_tokens(prompt_text),
                completion_tokens=count_tokens(content),
            ),
        )

    def _call_seed(self, request: ChatRequest) -> int:
        # Mix the backend seed with the request identity (which includes the
        # caller-set request seed) so retries draw fresh randomness.
        return SplitMix64(self.seed ^ request_hash64(request)).next_u64()

    def _dispatch(self, request: ChatRequest) -> str:
        prompt = str(request.messages[-1]["content"])
        system = next(
            (str(m["content"]) for m in request.messages if m["role"] == "system"),
            None,
        )

        rewrite = prompts.tree_instruct_payload(prompt)
        if rewrite is not None:
            instruction, n = rewrite
            tree = heuristic_tree(instruction)
            if tree is None:
                return ""
            return offline_verbalize(offline_expand(tree, n, self._call_seed(request)))

        extraction = prompts.extraction_payload(prompt)
        if extraction is not None:
            tree = heuristic_tree(extraction)
            return serialize_tree(tree) if tree is not None else ""

        deepening = prompts.deepening_payload(prompt)
        if deepening is not None:
            return deepening + " " + OFFLINE_DEEPENING_SUFFIX

        consistency = prompts.consistency_payload(prompt)
        if consistency is not None:
            original, rewritten = consistency
            score = _jaccard(set(content_tokens(original)), set(content_tokens(rewritten)))
            return f"{score:.4f}"

        pairwise = prompts.pairwise_payload(prompt)
        if pairwise is not None:
            _, a, b = pairwise
            if len(a) > len(b):
                return "A"
            if len(b) > len(a):
                return "B"
            return "TIE"

        if system == prompts.RESPONDER_SYSTEM:
            return (
                "Response covering: " + prompt
                + " All requested points are addressed in order."
            )

        return "ACK: " + prompt
