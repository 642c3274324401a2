"""Second stage: single-pass listwise reranking of the top candidates by an LLM.

Every failure of the LLM call (deadline, transport, unusable answer) resolves
to the first-stage order, flagged as a fallback.  :func:`rerank` never raises
for a failing client.
"""

from __future__ import annotations

import enum
import re
import string
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Protocol, Sequence

import httpx
import numpy as np

from .corpus import Task, ToolRecord
from .embed import QueryMode, compose_query_text, effective_mode
from .errors import ConfigError, LLMError, LLMTimeout, LLMTransportError
from .index import RankedList
from .retrieve import RetrievalConfig

DEFAULT_PROMPT_VERSION = "v1"

_INDEX_RE = re.compile(r"\[\s*(\d+)\s*\]")
_HEADER_RE = re.compile(r"^\[(\d+)\] name: ", re.MULTILINE)


class FallbackReason(str, enum.Enum):
    NONE = "None"
    TIMEOUT = "Timeout"
    TRANSPORT_ERROR = "TransportError"
    PARSE_UNUSABLE = "ParseUnusable"


@dataclass(frozen=True)
class PermutationParse:
    order: tuple[int, ...]
    repaired: bool
    dropped_tokens: int
    usable: bool = True


@dataclass(frozen=True)
class RerankOutcome:
    task_id: str
    final_list: RankedList
    fallback: bool
    fallback_reason: FallbackReason
    rerank_latency_ms: float
    raw_model_text: str = ""


class LLMClient(Protocol):
    def complete(self, prompt: str, timeout_s: float) -> str: ...


@lru_cache(maxsize=None)
def load_template(version: str = DEFAULT_PROMPT_VERSION) -> string.Template:
    name = f"listwise_{version}.txt"
    try:
        text = resources.files("toolrank").joinpath("prompts", name).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"unknown prompt version {version!r}") from None
    return string.Template(text)


def build_prompt(
    task: Task,
    candidates: RankedList,
    mode: QueryMode,
    corpus: Mapping[str, ToolRecord],
    version: str = DEFAULT_PROMPT_VERSION,
) -> str:
    if len(candidates) == 0:
        raise ValueError("cannot build a rerank prompt without candidates")
    blocks = []
    for i, (tool_id, _) in enumerate(candidates, start=1):
        tool = corpus[tool_id]
        blocks.append(f"[{i}] name: {tool.name}\ndescription: {tool.description}")
    return load_template(version).substitute(
        query=compose_query_text(task, effective_mode(task, mode)),
        candidates="\n\n".join(blocks),
        n=len(candidates),
    )


def prompt_candidate_count(prompt: str) -> int:
    """Number of candidate blocks in a prompt built by :func:`build_prompt`."""
    seen = 0
    for m in _HEADER_RE.finditer(prompt):
        if int(m.group(1)) == seen + 1:
            seen += 1
    return seen


def format_permutation(order: Sequence[int]) -> str:
    return " > ".join(f"[{i}]" for i in order)


def parse_permutation(text: str, n: int) -> PermutationParse:
    """Read a ranking of ``n`` candidates out of free-form model output.

    Bracketed integers are taken in order of appearance.  Out-of-range and
    repeated indices are dropped, missing ones appended in ascending order.
    With no valid index at all the result is the identity order and
    ``usable`` is false.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    order: list[int] = []
    seen: set[int] = set()
    dropped = 0
    for m in _INDEX_RE.finditer(text or ""):
        digits = m.group(1)
        # very long digit runs are out of range anyway; avoid int() on them
        i = int(digits) if len(digits) <= 9 else 0
        if not 1 <= i <= n or i in seen:
            dropped += 1
            continue
        seen.add(i)
        order.append(i)
    usable = bool(order)
    missing = [i for i in range(1, n + 1) if i not in seen]
    order.extend(missing)
    return PermutationParse(
        order=tuple(order),
        repaired=bool(dropped or missing),
        dropped_tokens=dropped,
        usable=usable,
    )


def rank_scores(n: int) -> list[float]:
    return [float(np.float32(n - i)) for i in range(n)]


def _call_with_deadline(client: LLMClient, prompt: str, timeout_s: float) -> str:
    result: dict = {}
    done = threading.Event()

    def target():
        try:
            result["text"] = client.complete(prompt, timeout_s)
        except BaseException as exc:  # noqa: BLE001 - re-raised in caller thread
            result["error"] = exc
        finally:
            done.set()

    # daemon: a client stuck past its deadline must not block interpreter exit
    threading.Thread(target=target, daemon=True).start()
    if not done.wait(timeout_s):
        raise LLMTimeout(f"no answer within {timeout_s * 1000:.0f} ms")
    if "error" in result:
        raise result["error"]
    return result["text"]


def _fallback(task: Task, candidates: RankedList, reason: FallbackReason, t0: float, raw: str = "") -> RerankOutcome:
    return RerankOutcome(
        task_id=task.task_id,
        final_list=candidates,
        fallback=True,
        fallback_reason=reason,
        rerank_latency_ms=(time.perf_counter() - t0) * 1000.0,
        raw_model_text=raw,
    )


def rerank(
    llm_client: LLMClient,
    task: Task,
    etr_list: RankedList,
    config: RetrievalConfig,
    corpus: Mapping[str, ToolRecord],
    prompt_version: str = DEFAULT_PROMPT_VERSION,
) -> RerankOutcome:
    """Reorder the first ``k_rerank`` candidates with one LLM call.

    Reranked entries get synthetic scores n, n-1, ..., 1.  On timeout,
    transport failure or an answer without a single valid index, the
    candidates are returned in their original order with cosine scores.
    """
    candidates = etr_list.truncate(config.k_rerank)
    prompt = build_prompt(task, candidates, config.mode, corpus, prompt_version)
    t0 = time.perf_counter()
    try:
        text = _call_with_deadline(llm_client, prompt, config.rerank_timeout_ms / 1000.0)
    except LLMTimeout:
        return _fallback(task, candidates, FallbackReason.TIMEOUT, t0)
    except Exception:
        return _fallback(task, candidates, FallbackReason.TRANSPORT_ERROR, t0)
    text = text if isinstance(text, str) else ""
    parsed = parse_permutation(text, len(candidates))
    if not parsed.usable:
        return _fallback(task, candidates, FallbackReason.PARSE_UNUSABLE, t0, raw=text)
    ids = candidates.ids
    final = RankedList(tuple(zip((ids[i - 1] for i in parsed.order), rank_scores(len(ids)))))
    return RerankOutcome(
        task_id=task.task_id,
        final_list=final,
        fallback=False,
        fallback_reason=FallbackReason.NONE,
        rerank_latency_ms=(time.perf_counter() - t0) * 1000.0,
        raw_model_text=text,
    )


def oracle_rerank(task: Task, etr_list: RankedList, k_rerank: int | None = None) -> RerankOutcome:
    """Upper-bound reranker: labelled-relevant candidates first, stable within groups."""
    candidates = etr_list if k_rerank is None else etr_list.truncate(k_rerank)
    relevant = task.relevant
    ids = candidates.ids
    ordered = [t for t in ids if t in relevant] + [t for t in ids if t not in relevant]
    return RerankOutcome(
        task_id=task.task_id,
        final_list=RankedList(tuple(zip(ordered, rank_scores(len(ordered))))),
        fallback=False,
        fallback_reason=FallbackReason.NONE,
        rerank_latency_ms=0.0,
    )


class ChatCompletionsClient:
    """OpenAI-compatible ``/v1/chat/completions`` client, temperature 0.

    At most ``max_inflight`` requests are outstanding; waiting for a slot
    counts against the caller's deadline.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        max_tokens: int = 256,
        max_inflight: int = 8,
        transport: httpx.BaseTransport | None = None,
    ):
        if max_inflight < 1:
            raise ConfigError("rerank.max_inflight must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_tokens = max_tokens
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._client = httpx.Client(transport=transport)

    def close(self) -> None:
        self._client.close()

    def complete(self, prompt: str, timeout_s: float) -> str:
        t0 = time.monotonic()
        if not self._slots.acquire(timeout=timeout_s):
            raise LLMTimeout("no free request slot before the deadline")
        try:
            remaining = max(timeout_s - (time.monotonic() - t0), 0.001)
            payload = {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
                "max_tokens": self.max_tokens,
            }
            try:
                resp = self._client.post(f"{self.base_url}/v1/chat/completions", json=payload, timeout=remaining)
                resp.raise_for_status()
                body = resp.json()
            except httpx.TimeoutException as exc:
                raise LLMTimeout(str(exc)) from exc
            except (httpx.HTTPError, ValueError) as exc:
                raise LLMTransportError(str(exc)) from exc
        finally:
            self._slots.release()
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LLMTransportError(f"malformed chat completion response: {exc!r}") from None
        return content if isinstance(content, str) else ""

    def probe(self, timeout_s: float = 2.0) -> bool:
        try:
            self.complete("ping", timeout_s)
        except LLMError:
            return False
        return True


def make_llm_client(cfg: dict) -> ChatCompletionsClient:
    base_url = cfg.get("rerank.base_url")
    if not base_url:
        raise ConfigError("reranking requires rerank.base_url")
    return ChatCompletionsClient(
        base_url=str(base_url),
        model=str(cfg.get("rerank.model", "llama-3.1-8b-instruct")),
        max_tokens=int(cfg.get("rerank.max_tokens", 256)),
        max_inflight=int(cfg.get("rerank.max_inflight", 8)),
    )
