"""Two-stage tool retrieval: dense top-k retrieval, listwise LLM reranking with
fallback to the first-stage order, a benchmark harness and an HTTP gateway."""

from .corpus import Category, CorpusStats, Task, ToolRecord, ValidationReport, load_tasks, load_tools, stats, validate
from .embed import HashEmbedder, ProviderFingerprint, ProviderKind, QueryMode, RemoteEmbedder, embed_batch, hash_embed
from .index import RankedList, ToolIndex, build, cosine, load, save, top_k
from .rerank import FallbackReason, RerankOutcome, oracle_rerank, parse_permutation, rerank
from .retrieve import RetrievalConfig, RetrievalResult, retrieve

__version__ = "0.1.0"

__all__ = [
    "Category",
    "CorpusStats",
    "FallbackReason",
    "HashEmbedder",
    "ProviderFingerprint",
    "ProviderKind",
    "QueryMode",
    "RankedList",
    "RemoteEmbedder",
    "RerankOutcome",
    "RetrievalConfig",
    "RetrievalResult",
    "Task",
    "ToolIndex",
    "ToolRecord",
    "ValidationReport",
    "build",
    "cosine",
    "embed_batch",
    "hash_embed",
    "load",
    "load_tasks",
    "load_tools",
    "oracle_rerank",
    "parse_permutation",
    "rerank",
    "retrieve",
    "save",
    "stats",
    "top_k",
    "validate",
]
