"""Batch export of embeddings to the EMBV1 wire format.

EMBV1, little-endian: magic ``EMBV1\\0``, u32 dim, u64 record count, then
per record a u32 key byte-length, the UTF-8 key bytes, and dim float32
components. The model id is recorded as an extra ``__model__=<id>`` entry
with a zero vector, so consumers can see what produced the file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateKey, EmptyInput, MalformedLine
from .models import DEFAULT_MODEL, load_model

MAGIC = b"EMBV1\x00"


@dataclass
class ExportJob:
    input_path: str
    output_path: str
    model_id: str = DEFAULT_MODEL
    batch_size: int = 64
    normalize: bool = True


@dataclass
class ExportSummary:
    count: int
    dim: int
    model_id: str


def read_input_tsv(path) -> list[tuple[str, str]]:
    """One `key<TAB>text` pair per line; keys must be unique."""
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            if "\t" not in line:
                raise MalformedLine(f"line {lineno}: expected key<TAB>text")
            key, text = line.split("\t", 1)
            if key in seen:
                raise DuplicateKey(f"line {lineno}: key {key!r} appears twice")
            seen.add(key)
            pairs.append((key, text))
    if not pairs:
        raise EmptyInput(f"{path}: no key/text lines")
    return pairs


def write_embv1(path, dim: int, records) -> int:
    """Write (key, float32 vector) records; returns the record count."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        count_offset = fh.tell()
        fh.write(struct.pack("<IQ", dim, 0))
        for key, vec in records:
            raw = key.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
            count += 1
        fh.seek(count_offset)
        fh.write(struct.pack("<IQ", dim, count))
    return count


def export_embeddings(job: ExportJob) -> ExportSummary:
    """Embed every input line and write the vectors plus a model entry."""
    pairs = read_input_tsv(job.input_path)
    model = load_model(job.model_id)
    dim = model.dim

    vectors = np.empty((len(pairs), dim), dtype=np.float32)
    texts = [text for _, text in pairs]
    for start in range(0, len(texts), job.batch_size):
        batch = model.encode(texts[start : start + job.batch_size])
        if batch.shape[1] != dim:
            raise ValueError(f"model returned dim {batch.shape[1]}, expected {dim}")
        vectors[start : start + batch.shape[0]] = batch.astype(np.float32)

    if job.normalize:
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        nonzero = norms > 0.0
        vectors[nonzero] = (vectors[nonzero].astype(np.float64) / norms[nonzero, None]).astype(
            np.float32
        )

    def records():
        yield f"__model__={job.model_id}", np.zeros(dim, dtype=np.float32)
        for (key, _), vec in zip(pairs, vectors):
            yield key, vec

    count = write_embv1(job.output_path, dim, records())
    return ExportSummary(count=count, dim=dim, model_id=job.model_id)
