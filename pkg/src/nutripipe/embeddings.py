"""Sentence vectors for titles and food descriptions.

Two providers: precomputed vectors loaded from an EMBV1 file, or the
built-in deterministic fallback embedder (hashed character 3-grams). The
EMBV1 binary layout is little-endian: magic ``EMBV1\\0``, u32 dim, u64
record count, then per record a u32 key byte-length, the UTF-8 key bytes,
and dim float32 components.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagic, DimMismatch, DimTooSmall, DuplicateKey, TruncatedFile

MAGIC = b"EMBV1\x00"
DEFAULT_FALLBACK_DIM = 256

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def embed_fallback(text: str, dim: int = DEFAULT_FALLBACK_DIM) -> np.ndarray:
    """Deterministic hashed 3-gram embedding of `text`.

    Lowercases, hashes every overlapping character 3-gram with 64-bit
    FNV-1a, and adds +1/-1 (sign from hash bit 63) to bucket ``h % dim``.
    The result is L2-normalized float32; text shorter than 3 characters
    (or full cancellation) yields the zero vector.
    """
    if dim < 16:
        raise DimTooSmall(f"fallback dim must be >= 16, got {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    lowered = text.lower()
    for i in range(len(lowered) - 2):
        h = _fnv1a64(lowered[i : i + 3].encode("utf-8"))
        sign = 1.0 if (h >> 63) == 0 else -1.0
        acc[h % dim] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        return np.zeros(dim, dtype=np.float32)
    return (acc / norm).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors compare as 0 by definition."""
    if a.shape[0] != b.shape[0]:
        raise DimMismatch(f"dim {a.shape[0]} vs {b.shape[0]}")
    a64 = a.astype(np.float64, copy=False)
    b64 = b.astype(np.float64, copy=False)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a64, b64) / (na * nb))


@dataclass
class VectorStore:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.entries)

    def model_id(self) -> str | None:
        """Model name recorded by an exporter, if any (key `__model__=<id>`)."""
        for key in self.entries:
            if key.startswith("__model__="):
                return key.split("=", 1)[1]
        return None


def write_vector_store(store: VectorStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", store.dim, len(store.entries)))
        for key, vec in store.entries.items():
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())


def load_vector_store(path) -> VectorStore:
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head != MAGIC:
            raise BadMagic(f"{path}: expected {MAGIC!r}, found {head!r}")
        meta = fh.read(12)
        if len(meta) < 12:
            raise TruncatedFile(f"{path}: header cut short")
        dim, count = struct.unpack("<IQ", meta)
        entries: dict[str, np.ndarray] = {}
        for i in range(count):
            klen_raw = fh.read(4)
            if len(klen_raw) < 4:
                raise TruncatedFile(f"{path}: record {i} key length missing")
            (klen,) = struct.unpack("<I", klen_raw)
            key_raw = fh.read(klen)
            if len(key_raw) < klen:
                raise TruncatedFile(f"{path}: record {i} key cut short")
            key = key_raw.decode("utf-8")
            vec_raw = fh.read(4 * dim)
            if len(vec_raw) < 4 * dim:
                raise TruncatedFile(f"{path}: record {i} vector cut short")
            if key in entries:
                raise DuplicateKey(f"{path}: key {key!r} appears twice")
            entries[key] = np.frombuffer(vec_raw, dtype="<f4").copy()
        if fh.read(1):
            raise DimMismatch(f"{path}: trailing bytes after {count} records")
    return VectorStore(dim=dim, entries=entries)


class StoreVectors:
    """Vector provider backed by a loaded VectorStore."""

    def __init__(self, store: VectorStore):
        self.store = store
        self.dim = store.dim

    def get(self, key: str) -> np.ndarray | None:
        return self.store.entries.get(key)

    def matrix(self, keys) -> tuple[np.ndarray, list[str]]:
        """float32 matrix of vectors for `keys`; missing keys listed separately.

        Rows for missing keys are zero (and excluded via the missing list).
        """
        out = np.zeros((len(keys), self.dim), dtype=np.float32)
        missing = []
        for i, key in enumerate(keys):
            vec = self.store.entries.get(key)
            if vec is None:
                missing.append(key)
            else:
                out[i] = vec
        return out, missing


class FallbackVectors:
    """Vector provider that embeds on demand with `embed_fallback`.

    `alias` maps keys to the text actually embedded (food ids to their
    descriptions); keys not in the map embed as themselves (titles).
    """

    def __init__(self, dim: int = DEFAULT_FALLBACK_DIM, alias: dict[str, str] | None = None):
        if dim < 16:
            raise DimTooSmall(f"fallback dim must be >= 16, got {dim}")
        self.dim = dim
        self.alias = alias or {}

    def get(self, key: str) -> np.ndarray:
        return embed_fallback(self.alias.get(key, key), self.dim)

    def matrix(self, keys) -> tuple[np.ndarray, list[str]]:
        out = np.zeros((len(keys), self.dim), dtype=np.float32)
        for i, key in enumerate(keys):
            out[i] = self.get(key)
        return out, []
