"""Text embedding providers.

Two providers share one contract: ``embed(texts) -> float32 array (n, dim)``
whose rows are unit-norm or exactly zero.

* :class:`HashEmbedder` is a deterministic bag-of-words stand-in used in tests
  and synthetic benchmarks.
* :class:`RemoteEmbedder` calls an OpenAI-style ``/v1/embeddings`` endpoint.
"""

from __future__ import annotations

import enum
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx
import numpy as np

from .corpus import Task, ToolRecord
from .errors import ConfigError, DimensionMismatchError, EmbeddingError, ProviderTransportError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
NORM_TOLERANCE = 1e-4

_TOKEN_RE = re.compile(r"[^\W_]+")


class ProviderKind(enum.IntEnum):
    REMOTE = 0
    HASH_TEST = 1


class QueryMode(str, enum.Enum):
    QUERY_ONLY = "query_only"
    QUERY_PLUS_INSTRUCTION = "query_plus_instruction"

    @classmethod
    def parse(cls, raw: "str | QueryMode") -> "QueryMode":
        if isinstance(raw, QueryMode):
            return raw
        key = raw.strip().lower().replace("-", "_").replace("+", "_plus_")
        aliases = {"q": cls.QUERY_ONLY, "qi": cls.QUERY_PLUS_INSTRUCTION, "query": cls.QUERY_ONLY}
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class ProviderFingerprint:
    provider_kind: ProviderKind
    model_name: str
    dim: int

    def __post_init__(self):
        if self.dim <= 0:
            raise ConfigError(f"embedding dim must be positive, got {self.dim}")

    def to_dict(self) -> dict:
        return {"provider_kind": self.provider_kind.name, "model_name": self.model_name, "dim": self.dim}


class EmbeddingProvider(Protocol):
    fingerprint: ProviderFingerprint

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def compose_query_text(task: Task, mode: QueryMode) -> str:
    if mode is QueryMode.QUERY_PLUS_INSTRUCTION and task.instruction:
        return f"{task.query}\n{task.instruction}"
    return task.query


def effective_mode(task: Task, mode: QueryMode) -> QueryMode:
    """The mode actually applied: instruction mode without an instruction is query-only."""
    if mode is QueryMode.QUERY_PLUS_INSTRUCTION and not task.instruction:
        return QueryMode.QUERY_ONLY
    return mode


def compose_tool_text(tool: ToolRecord) -> str:
    return f"{tool.name}\n{tool.description}"


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Feature-hashed, L2-normalised token counts; all-zero when there are no tokens."""
    if dim <= 0:
        raise ValueError("dim must be positive")
    counts = np.zeros(dim, dtype=np.float64)
    for token in tokenize(text):
        counts[fnv1a_64(token.encode("utf-8")) % dim] += 1.0
    norm = np.sqrt(np.dot(counts, counts))
    if norm == 0.0:
        return counts.astype(np.float32)
    return (counts / norm).astype(np.float32)


def normalize_rows(matrix: np.ndarray, *, expected_dim: int | None = None) -> np.ndarray:
    """Validate and unit-normalise embedding rows; zero rows pass through unchanged."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise EmbeddingError(f"expected a 2-d array of embeddings, got shape {m.shape}")
    if expected_dim is not None and m.shape[1] != expected_dim:
        raise DimensionMismatchError(f"embedding dim {m.shape[1]} != expected {expected_dim}")
    if not np.all(np.isfinite(m)):
        raise EmbeddingError("embedding contains non-finite components")
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    safe = np.where(norms > 0.0, norms, 1.0)
    return (m / safe[:, None]).astype(np.float32)


class HashEmbedder:
    model_name = "fnv1a-bow"

    def __init__(self, dim: int):
        self.fingerprint = ProviderFingerprint(ProviderKind.HASH_TEST, self.model_name, dim)
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            out[i] = hash_embed(text, self.dim)
        return out


class RemoteEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    Batches of ``batch_size`` texts are sent with at most ``max_inflight``
    requests outstanding; each request has its own ``timeout_ms`` deadline.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        timeout_ms: int = 10_000,
        batch_size: int = 64,
        max_inflight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        if batch_size < 1 or max_inflight < 1:
            raise ConfigError("batch_size and max_inflight must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.dim = dim
        self.timeout_s = timeout_ms / 1000.0
        self.batch_size = batch_size
        self.max_inflight = max_inflight
        self.fingerprint = ProviderFingerprint(ProviderKind.REMOTE, model, dim)
        self._client = httpx.Client(timeout=self.timeout_s, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, texts: list[str]) -> np.ndarray:
        try:
            resp = self._client.post(f"{self.base_url}/v1/embeddings", json={"model": self.model, "input": texts})
            resp.raise_for_status()
            body = resp.json()
        except httpx.HTTPError as exc:
            raise ProviderTransportError(f"embedding request to {self.base_url} failed: {exc}") from exc
        except ValueError as exc:
            raise ProviderTransportError(f"embedding service returned invalid JSON: {exc}") from exc
        try:
            data = body["data"]
            by_index = {int(item["index"]): item["embedding"] for item in data}
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"malformed embeddings response: {exc!r}") from None
        if len(data) != len(texts) or sorted(by_index) != list(range(len(texts))):
            raise DimensionMismatchError(f"requested {len(texts)} embeddings, service returned {len(data)}")
        rows = [by_index[i] for i in range(len(texts))]
        if any(len(r) != self.dim for r in rows):
            raise DimensionMismatchError(f"service returned vectors not of dim {self.dim}")
        try:
            return np.asarray(rows, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise EmbeddingError(f"non-numeric embedding component: {exc}") from None

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        batches = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        if len(batches) == 1:
            parts = [self._post(batches[0])]
        else:
            with ThreadPoolExecutor(max_workers=self.max_inflight) as pool:
                parts = list(pool.map(self._post, batches))
        return np.concatenate(parts, axis=0)

    def probe(self) -> bool:
        try:
            self.embed(["ping"])
        except Exception:
            return False
        return True


def embed_batch(provider: EmbeddingProvider, texts: Sequence[str]) -> np.ndarray:
    """Embed ``texts`` with ``provider`` and enforce the vector contract.

    Returns a float32 array of shape ``(len(texts), dim)``.  Non-unit rows are
    re-normalised; zero rows are kept as-is.
    """
    raw = provider.embed(list(texts))
    raw = np.asarray(raw)
    if raw.ndim != 2 or raw.shape[0] != len(texts):
        raise DimensionMismatchError(f"provider returned {raw.shape[0] if raw.ndim else 0} vectors for {len(texts)} texts")
    return normalize_rows(raw, expected_dim=provider.fingerprint.dim)


def make_provider(cfg: dict) -> EmbeddingProvider:
    """Build a provider from flat ``embed.*`` config keys."""
    kind = str(cfg.get("embed.provider", "hash")).lower()
    dim = int(cfg.get("embed.dim", 384))
    if kind == "hash":
        return HashEmbedder(dim)
    if kind == "remote":
        base_url = cfg.get("embed.base_url")
        if not base_url:
            raise ConfigError("embed.provider=remote requires embed.base_url")
        return RemoteEmbedder(
            base_url=str(base_url),
            model=str(cfg.get("embed.model", "all-MiniLM-L6-v2")),
            dim=dim,
            timeout_ms=int(cfg.get("embed.timeout_ms", 10_000)),
            batch_size=int(cfg.get("embed.batch_size", 64)),
            max_inflight=int(cfg.get("embed.max_inflight", 4)),
        )
    raise ConfigError(f"unknown embed.provider {kind!r} (expected 'remote' or 'hash')")
