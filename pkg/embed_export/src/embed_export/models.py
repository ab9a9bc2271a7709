"""Embedding model loading.

Two kinds of model ids:

- ``fallback:<dim>`` — the built-in deterministic hashed 3-gram embedder.
  It reproduces, bit for bit, the fallback recipe the pipeline consumer
  uses (lowercase, overlapping character 3-grams, 64-bit FNV-1a, +/-1 into
  bucket h % dim by hash bit 63, L2-normalize), so exports are verifiable
  offline.
- anything else — a sentence-transformers checkpoint name, loaded lazily.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelLoadFailure

DEFAULT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class HashedTrigramModel:
    """Deterministic stand-in encoder; dim >= 16."""

    def __init__(self, dim: int):
        if dim < 16:
            raise ModelLoadFailure(f"fallback dim must be >= 16, got {dim}")
        self.dim = dim

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for row, text in enumerate(texts):
            acc = np.zeros(self.dim, dtype=np.float64)
            lowered = text.lower()
            for i in range(len(lowered) - 2):
                h = _FNV_OFFSET
                for byte in lowered[i : i + 3].encode("utf-8"):
                    h = ((h ^ byte) * _FNV_PRIME) & _MASK64
                acc[h % self.dim] += 1.0 if (h >> 63) == 0 else -1.0
            norm = float(np.linalg.norm(acc))
            if norm > 0.0:
                out[row] = (acc / norm).astype(np.float32)
        return out


class SentenceTransformerModel:
    def __init__(self, model_id: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadFailure(f"sentence-transformers is not installed: {exc}") from exc
        try:
            self._model = SentenceTransformer(model_id)
        except Exception as exc:  # missing checkpoint, no network, ...
            raise ModelLoadFailure(f"could not load {model_id!r}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list[str]) -> np.ndarray:
        vectors = self._model.encode(texts, convert_to_numpy=True, normalize_embeddings=False)
        return np.asarray(vectors, dtype=np.float32)


def load_model(model_id: str):
    if model_id.startswith("fallback:"):
        try:
            dim = int(model_id.split(":", 1)[1])
        except ValueError as exc:
            raise ModelLoadFailure(f"bad fallback model id {model_id!r}") from exc
        return HashedTrigramModel(dim)
    return SentenceTransformerModel(model_id)
