"""First stage: embed the task text at query time and rank tools by cosine."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .corpus import Task
from .embed import EmbeddingProvider, QueryMode, compose_query_text, effective_mode, embed_batch
from .errors import ConfigError, FingerprintMismatchError
from .index import RankedList, ToolIndex, top_k

DEFAULT_K_RERANK = 10


@dataclass(frozen=True)
class RetrievalConfig:
    k_retrieve: int | None = None
    k_rerank: int = DEFAULT_K_RERANK
    mode: QueryMode = QueryMode.QUERY_ONLY
    rerank_enabled: bool = False
    rerank_timeout_ms: int = 5_000

    def __post_init__(self):
        if self.k_retrieve is None:
            object.__setattr__(self, "k_retrieve", max(self.k_rerank, 10))
        if self.k_retrieve < 1 or self.k_rerank < 1:
            raise ConfigError("k_retrieve and k_rerank must be >= 1")
        if self.k_rerank > self.k_retrieve:
            raise ConfigError(f"k_rerank ({self.k_rerank}) must not exceed k_retrieve ({self.k_retrieve})")
        if self.rerank_timeout_ms < 1:
            raise ConfigError("rerank_timeout_ms must be positive")


@dataclass(frozen=True)
class RetrievalResult:
    task_id: str
    etr_list: RankedList
    query_latency_ms: float
    mode_used: QueryMode
    encode_ms: float = 0.0
    search_ms: float = 0.0


def check_compatible(index: ToolIndex, provider: EmbeddingProvider) -> None:
    if provider.fingerprint != index.fingerprint:
        raise FingerprintMismatchError(
            f"provider {provider.fingerprint.to_dict()} does not match index {index.fingerprint.to_dict()}"
        )


def retrieve(index: ToolIndex, provider: EmbeddingProvider, task: Task, config: RetrievalConfig) -> RetrievalResult:
    """Rank the index for ``task``.  Provider errors propagate: this stage has no fallback."""
    check_compatible(index, provider)
    mode = effective_mode(task, config.mode)
    text = compose_query_text(task, mode)
    t0 = time.perf_counter()
    qvec = embed_batch(provider, [text])[0]
    t1 = time.perf_counter()
    ranked = top_k(index, qvec, config.k_retrieve)
    t2 = time.perf_counter()
    return RetrievalResult(
        task_id=task.task_id,
        etr_list=ranked,
        query_latency_ms=(t2 - t0) * 1000.0,
        mode_used=mode,
        encode_ms=(t1 - t0) * 1000.0,
        search_ms=(t2 - t1) * 1000.0,
    )
