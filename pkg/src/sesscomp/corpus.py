"""Embedding corpus data model, cosine similarity, and the binary corpus file format.

A corpus holds one record per utterance. Each record carries the utterance's
sliding-window embeddings as a ``(W, D)`` float64 array together with its
speaker / session / augmentation labels. Arithmetic is done in float64; the
on-disk format stores float32 (loading widens exactly).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._binio import Reader, pack_str
from .errors import (
    BadMagicError,
    FormatVersionError,
    NonFiniteValueError,
)

CORPUS_MAGIC = b"SESSCMP1"
CORPUS_VERSION = 1


@dataclass
class UtteranceRecord:
    """One utterance: identity labels plus its W window embeddings."""

    utterance_id: str
    speaker_id: str
    session_id: str
    augmentation_id: str
    windows: np.ndarray  # (W, D) float64

    def pooled(self) -> np.ndarray:
        """Mean of the window embeddings, the utterance-level embedding."""
        return pool(self.windows)


@dataclass
class EmbeddingCorpus:
    """A validated collection of utterance records with uniform D and W."""

    dimension: int
    windows_per_utterance: int
    records: list[UtteranceRecord]
    _by_id: dict[str, UtteranceRecord] = field(init=False, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("corpus dimension must be >= 1")
        if self.windows_per_utterance < 1:
            raise ValueError("windows_per_utterance must be >= 1")
        self._by_id = {}
        for rec in self.records:
            if rec.windows.shape != (self.windows_per_utterance, self.dimension):
                raise ValueError(
                    f"record {rec.utterance_id!r} has window shape "
                    f"{rec.windows.shape}, expected "
                    f"({self.windows_per_utterance}, {self.dimension})"
                )
            if not np.all(np.isfinite(rec.windows)):
                raise NonFiniteValueError(
                    f"record {rec.utterance_id!r} contains non-finite values"
                )
            if rec.utterance_id in self._by_id:
                raise ValueError(f"duplicate utterance_id {rec.utterance_id!r}")
            self._by_id[rec.utterance_id] = rec

    def get(self, utterance_id: str) -> UtteranceRecord:
        try:
            return self._by_id[utterance_id]
        except KeyError:
            raise KeyError(f"unknown utterance_id {utterance_id!r}") from None

    def __len__(self) -> int:
        return len(self.records)

    def speaker_ids(self) -> list[str]:
        """Distinct speaker ids in first-appearance order."""
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.speaker_id, None)
        return list(seen)


def subset_by_speakers(corpus: EmbeddingCorpus, keep: set[str]) -> EmbeddingCorpus:
    """New corpus containing only records whose speaker_id is in ``keep``."""
    records = [rec for rec in corpus.records if rec.speaker_id in keep]
    if not records:
        raise ValueError("speaker subset matches no records")
    return EmbeddingCorpus(corpus.dimension, corpus.windows_per_utterance, records)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity between two embeddings.

    Args:
      a, b: 1-D arrays of equal dimension with nonzero norm.

    Returns:
      Similarity in [-1, 1] (up to rounding).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if not (np.isfinite(na) and np.isfinite(nb)):
        raise NonFiniteValueError("embedding contains non-finite values")
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm embedding is degenerate, cosine undefined")
    return float(np.dot(a, b) / (na * nb))


def pool(windows) -> np.ndarray:
    """Element-wise mean of a non-empty list of equal-dimension embeddings."""
    arr = np.asarray(windows, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot pool an empty window list")
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a list of 1-D embeddings, got shape {arr.shape}")
    return arr.mean(axis=0)


def save_corpus(corpus: EmbeddingCorpus, path) -> None:
    """Write a corpus to ``path`` in the SESSCMP1 binary format.

    Vector payloads are stored as little-endian float32; loading widens them
    back to float64 exactly, so save/load round-trips are bit-stable after
    the first save.
    """
    chunks = [
        CORPUS_MAGIC,
        struct.pack(
            "<IIIQ",
            CORPUS_VERSION,
            corpus.dimension,
            corpus.windows_per_utterance,
            len(corpus.records),
        ),
    ]
    for rec in corpus.records:
        payload = np.ascontiguousarray(rec.windows, dtype="<f4")
        if not np.all(np.isfinite(payload)):
            raise NonFiniteValueError(
                f"record {rec.utterance_id!r} is non-finite after float32 narrowing"
            )
        chunks.append(pack_str(rec.utterance_id))
        chunks.append(pack_str(rec.speaker_id))
        chunks.append(pack_str(rec.session_id))
        chunks.append(pack_str(rec.augmentation_id))
        chunks.append(payload.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_corpus(path) -> EmbeddingCorpus:
    """Read a SESSCMP1 corpus file.

    Raises:
      BadMagicError, FormatVersionError, TruncatedFileError,
      NonFiniteValueError: on the corresponding format violation.
    """
    with open(path, "rb") as f:
        data = f.read()
    r = Reader(data, f"corpus file {path}")
    magic = r.take(8)
    if magic != CORPUS_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CORPUS_MAGIC!r}")
    version = r.u32()
    if version != CORPUS_VERSION:
        raise FormatVersionError(f"unsupported corpus version {version}")
    dim = r.u32()
    wpu = r.u32()
    count = r.u64()
    records = []
    for _ in range(count):
        utterance_id = r.string()
        speaker_id = r.string()
        session_id = r.string()
        augmentation_id = r.string()
        flat = r.f32_array(wpu * dim)
        if not np.all(np.isfinite(flat)):
            raise NonFiniteValueError(
                f"record {utterance_id!r} contains non-finite values"
            )
        windows = flat.astype(np.float64).reshape(wpu, dim)
        records.append(
            UtteranceRecord(utterance_id, speaker_id, session_id, augmentation_id, windows)
        )
    r.expect_end()
    return EmbeddingCorpus(dim, wpu, records)
