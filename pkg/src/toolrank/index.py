"""Exact dense index over tool embeddings and its binary file format.

File layout (all integers little-endian)::

    b"TRIX" | u16 version=1 | u32 dim | u64 n_tools | u8 provider_kind
    | u32 len + UTF-8 model_name
    | n_tools x (u32 len + UTF-8 tool_id)
    | n_tools*dim f32 row-major matrix
    | u64 CRC-64/XZ of every preceding byte
"""

from __future__ import annotations

import math
import os
import struct
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import crcmod
import numpy as np

from .corpus import ToolRecord
from .embed import (
    EmbeddingProvider,
    ProviderFingerprint,
    ProviderKind,
    compose_tool_text,
    embed_batch,
    normalize_rows,
)
from .errors import ChecksumError, DimensionMismatchError, DuplicateToolError, IndexFormatError

MAGIC = b"TRIX"
VERSION = 1

crc64 = crcmod.mkCrcFun(0x142F0E1EBA9EA3693, initCrc=0, rev=True, xorOut=0xFFFFFFFFFFFFFFFF)

# float32 unit roundoff; bounds the error of a dim-length f32 dot product
_F32_U = 2.0**-24


@dataclass(frozen=True)
class RankedList:
    """Candidates in descending score order, ties by ascending tool_id."""

    entries: tuple[tuple[str, float], ...] = ()

    @property
    def ids(self) -> list[str]:
        return [tid for tid, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def truncate(self, k: int) -> "RankedList":
        return RankedList(self.entries[:k])


def cosine(u, v) -> float:
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"cannot compare vectors of shapes {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite vector component")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb)))


@dataclass(frozen=True, eq=False)
class ToolIndex:
    fingerprint: ProviderFingerprint
    tool_ids: tuple[str, ...]
    matrix: np.ndarray
    built_at: float = field(default_factory=time.time)

    def __post_init__(self):
        m = self.matrix
        if m.dtype != np.float32 or m.ndim != 2:
            raise IndexFormatError("index matrix must be a 2-d float32 array")
        if m.shape[0] != len(self.tool_ids):
            raise IndexFormatError(f"{m.shape[0]} rows but {len(self.tool_ids)} tool ids")
        if m.shape[1] != self.fingerprint.dim:
            raise DimensionMismatchError(f"matrix dim {m.shape[1]} != fingerprint dim {self.fingerprint.dim}")
        if len(set(self.tool_ids)) != len(self.tool_ids):
            raise DuplicateToolError("duplicate tool_id in index")
        m.setflags(write=False)
        # rank of each row's tool_id in ascending id order, for tie-breaking
        order = sorted(range(len(self.tool_ids)), key=self.tool_ids.__getitem__)
        id_rank = np.empty(len(order), dtype=np.int64)
        id_rank[order] = np.arange(len(order))
        object.__setattr__(self, "_id_rank", id_rank)

    def __eq__(self, other) -> bool:
        # built_at is not part of the persisted format and is ignored here
        if not isinstance(other, ToolIndex):
            return NotImplemented
        return (
            self.fingerprint == other.fingerprint
            and self.tool_ids == other.tool_ids
            and self.matrix.shape == other.matrix.shape
            and self.matrix.tobytes() == other.matrix.tobytes()
        )

    __hash__ = None

    @property
    def dim(self) -> int:
        return self.fingerprint.dim

    def __len__(self) -> int:
        return len(self.tool_ids)

    @classmethod
    def from_vectors(cls, tool_ids: Sequence[str], vectors, fingerprint: ProviderFingerprint) -> "ToolIndex":
        matrix = normalize_rows(np.asarray(vectors), expected_dim=fingerprint.dim)
        return cls(fingerprint=fingerprint, tool_ids=tuple(tool_ids), matrix=np.ascontiguousarray(matrix))


def build(corpus: Sequence[ToolRecord], provider: EmbeddingProvider, batch_size: int = 256) -> ToolIndex:
    """Embed every tool's name+description; rows follow corpus order."""
    ids = [t.tool_id for t in corpus]
    if len(set(ids)) != len(ids):
        seen, dups = set(), []
        for tid in ids:
            if tid in seen:
                dups.append(tid)
            seen.add(tid)
        raise DuplicateToolError(f"duplicate tool_id(s) in corpus: {sorted(set(dups))}")
    dim = provider.fingerprint.dim
    texts = [compose_tool_text(t) for t in corpus]
    parts = [embed_batch(provider, texts[i : i + batch_size]) for i in range(0, len(texts), batch_size)]
    matrix = np.concatenate(parts, axis=0) if parts else np.zeros((0, dim), dtype=np.float32)
    return ToolIndex(fingerprint=provider.fingerprint, tool_ids=tuple(ids), matrix=np.ascontiguousarray(matrix))


def top_k(index: ToolIndex, query_vec, k: int) -> RankedList:
    """Exact top-k by cosine similarity.

    A float32 pass over the whole matrix selects every row that could be in
    the top k given the f32 rounding bound; those rows are then rescored
    with float64 accumulation and rounded to float32, so the ranking is a
    deterministic function of the stored values.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q32 = np.asarray(query_vec, dtype=np.float32)
    if q32.shape != (index.dim,):
        raise DimensionMismatchError(f"query dim {q32.shape} != index dim {index.dim}")
    if not np.all(np.isfinite(q32)):
        raise ValueError("non-finite query component")
    n = len(index)
    if n == 0:
        return RankedList()
    k = min(k, n)
    q64 = q32.astype(np.float64)
    qnorm = math.sqrt(float(np.dot(q64, q64)))
    if qnorm == 0.0:
        cand = np.argsort(index._id_rank, kind="stable")[:k]
        return RankedList(tuple((index.tool_ids[i], 0.0) for i in cand))

    if k < n:
        rough = index.matrix @ q32
        kth = np.partition(rough, n - k)[n - k]
        margin = 4.0 * index.dim * _F32_U * qnorm
        cand = np.flatnonzero(rough >= kth - margin)
    else:
        cand = np.arange(n)

    exact = index.matrix[cand].astype(np.float64) @ q64 / qnorm
    scores = np.clip(exact.astype(np.float32), -1.0, 1.0)
    order = np.lexsort((index._id_rank[cand], -scores))[:k]
    return RankedList(tuple((index.tool_ids[cand[i]], float(scores[i])) for i in order))


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def to_bytes(index: ToolIndex) -> bytes:
    fp = index.fingerprint
    parts = [
        MAGIC,
        struct.pack("<HIQB", VERSION, fp.dim, len(index), int(fp.provider_kind)),
        _pack_str(fp.model_name),
    ]
    parts.extend(_pack_str(t) for t in index.tool_ids)
    parts.append(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", crc64(body))


def from_bytes(data: bytes) -> ToolIndex:
    if len(data) < 4 or data[:4] != MAGIC:
        raise IndexFormatError("bad magic: not a TRIX index file")
    if len(data) < 4 + 15 + 8:
        raise IndexFormatError("truncated index file")
    view = memoryview(data)
    pos = 4
    version, dim, n, kind = struct.unpack_from("<HIQB", view, pos)
    pos += struct.calcsize("<HIQB")
    if version != VERSION:
        raise IndexFormatError(f"unsupported index version {version}")

    def read_str() -> str:
        nonlocal pos
        if pos + 4 > len(data) - 8:
            raise IndexFormatError("truncated index file")
        (length,) = struct.unpack_from("<I", view, pos)
        pos += 4
        if pos + length > len(data) - 8:
            raise IndexFormatError("truncated index file")
        try:
            s = bytes(view[pos : pos + length]).decode("utf-8")
        except UnicodeDecodeError:
            raise IndexFormatError("invalid UTF-8 string in index header") from None
        pos += length
        return s

    model = read_str()
    ids = tuple(read_str() for _ in range(n))
    body_end = pos + n * dim * 4
    if body_end + 8 != len(data):
        raise IndexFormatError(f"truncated index file: expected {body_end + 8} bytes, found {len(data)}")
    (stored,) = struct.unpack_from("<Q", view, body_end)
    actual = crc64(view[:body_end])
    if stored != actual:
        raise ChecksumError(f"checksum mismatch: stored {stored:016x}, computed {actual:016x}")
    try:
        kind = ProviderKind(kind)
    except ValueError:
        raise IndexFormatError(f"unknown provider kind {kind}") from None
    matrix = np.frombuffer(data, dtype="<f4", count=n * dim, offset=pos).astype(np.float32).reshape(n, dim)
    return ToolIndex(fingerprint=ProviderFingerprint(kind, model, dim), tool_ids=ids, matrix=matrix)


def save(index: ToolIndex, path: str | os.PathLike) -> None:
    """Write atomically so a failed save never leaves a partial index behind."""
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(index))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> ToolIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    index = from_bytes(data)
    object.__setattr__(index, "built_at", os.path.getmtime(path))
    return index
