"""Synthetic embedding generator with known speaker/session/augmentation latents.

Every window embedding is built as

    alpha * v_speaker + beta * v_session + gamma * v_augmentation + sigma * noise

from unit-norm latent vectors drawn once per speaker, session, and
augmentation tag. The latents are returned as ground truth, giving every
downstream similarity an exact oracle. Generation is deterministic given the
config seed; ``noise_seed`` lets several corpora share one set of latents
while realizing independent per-window noise (stand-ins for different
extractors observing the same utterances).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._binio import Reader, pack_str
from .corpus import EmbeddingCorpus, UtteranceRecord, cosine
from .errors import BadMagicError, FormatVersionError

GROUND_TRUTH_MAGIC = b"SESSGT01"
GROUND_TRUTH_VERSION = 1


@dataclass
class SynthConfig:
    """Shape and strength parameters of one synthetic corpus."""

    num_speakers: int
    sessions_per_speaker: int
    utterances_per_session: int
    dimension: int
    seed: int
    shared_session_groups: int = 0
    windows_per_utterance: int = 10
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.0
    sigma: float = 0.1
    noise_seed: int | None = None

    def validate(self) -> None:
        counts = {
            "num_speakers": self.num_speakers,
            "sessions_per_speaker": self.sessions_per_speaker,
            "utterances_per_session": self.utterances_per_session,
            "dimension": self.dimension,
            "windows_per_utterance": self.windows_per_utterance,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.shared_session_groups < 0:
            raise ValueError("shared_session_groups must be >= 0")
        if 2 * self.shared_session_groups > self.num_speakers:
            raise ValueError(
                "shared_session_groups pairs two distinct speakers each; "
                f"{self.shared_session_groups} groups need >= "
                f"{2 * self.shared_session_groups} speakers, have {self.num_speakers}"
            )
        for name in ("alpha", "beta", "gamma", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0 (speaker term is mandatory)")


@dataclass
class GroundTruth:
    """Latent unit vectors underlying a synthetic corpus."""

    dimension: int
    speakers: dict[str, np.ndarray]
    sessions: dict[str, np.ndarray]
    augmentations: dict[str, np.ndarray]


def _unit_normal(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def speaker_name(index: int) -> str:
    return f"spk{index:04d}"


def generate(config: SynthConfig) -> tuple[EmbeddingCorpus, GroundTruth]:
    """Build a corpus and its ground truth from ``config``.

    Speakers 2g and 2g+1 additionally record in shared session g, so
    corpora with ``shared_session_groups >= 1`` contain same-session
    different-speaker pairs. Augmentation tags are assigned per session and
    never repeat within a speaker, which keeps every speaker eligible for
    quadruple sampling.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    noise_seed = config.noise_seed if config.noise_seed is not None else config.seed + 1
    noise_rng = np.random.default_rng(noise_seed)

    dim = config.dimension
    speakers = {speaker_name(i): _unit_normal(rng, dim) for i in range(config.num_speakers)}

    sessions: dict[str, np.ndarray] = {}
    for i in range(config.num_speakers):
        for s in range(config.sessions_per_speaker):
            sessions[f"{speaker_name(i)}_sess{s:02d}"] = _unit_normal(rng, dim)
    for g in range(config.shared_session_groups):
        sessions[f"shared{g:04d}"] = _unit_normal(rng, dim)

    augmentations: dict[str, np.ndarray] = {}
    for s in range(config.sessions_per_speaker):
        augmentations[f"aug{s:02d}"] = _unit_normal(rng, dim)
    for g in range(config.shared_session_groups):
        augmentations[f"aug_sh{g:04d}"] = _unit_normal(rng, dim)

    gt = GroundTruth(dim, speakers, sessions, augmentations)

    records = []

    def emit(speaker_id, session_id, augmentation_id, utt_tag):
        base = (
            config.alpha * speakers[speaker_id]
            + config.beta * sessions[session_id]
            + config.gamma * augmentations[augmentation_id]
        )
        noise = noise_rng.standard_normal((config.windows_per_utterance, dim))
        windows = base[None, :] + config.sigma * noise
        records.append(
            UtteranceRecord(
                utterance_id=f"{speaker_id}_{utt_tag}",
                speaker_id=speaker_id,
                session_id=session_id,
                augmentation_id=augmentation_id,
                windows=windows,
            )
        )

    for i in range(config.num_speakers):
        spk = speaker_name(i)
        for s in range(config.sessions_per_speaker):
            for u in range(config.utterances_per_session):
                emit(spk, f"{spk}_sess{s:02d}", f"aug{s:02d}", f"sess{s:02d}_utt{u:02d}")
        g = i // 2
        if i // 2 < config.shared_session_groups:
            for u in range(config.utterances_per_session):
                emit(spk, f"shared{g:04d}", f"aug_sh{g:04d}", f"shared{g:04d}_utt{u:02d}")

    corpus = EmbeddingCorpus(dim, config.windows_per_utterance, records)
    return corpus, gt


def oracle_session_similarity(
    gt: GroundTruth, rec1: UtteranceRecord, rec2: UtteranceRecord
) -> float:
    """Cosine of the true session latents behind two records.

    Returns exactly 1.0 when the records share a session id.
    """
    for rec in (rec1, rec2):
        if rec.session_id not in gt.sessions:
            raise ValueError(f"unknown session id {rec.session_id!r}")
    if rec1.session_id == rec2.session_id:
        return 1.0
    return cosine(gt.sessions[rec1.session_id], gt.sessions[rec2.session_id])


def _write_table(chunks: list, table: dict[str, np.ndarray]) -> None:
    chunks.append(struct.pack("<Q", len(table)))
    for key, vec in table.items():
        chunks.append(pack_str(key))
        chunks.append(np.ascontiguousarray(vec, dtype="<f8").tobytes())


def save_ground_truth(gt: GroundTruth, path) -> None:
    """Write the latent tables to ``path`` (SESSGT01 sidecar format).

    Latents are stored as float64 so the unit-norm oracle survives the
    round trip exactly.
    """
    chunks = [GROUND_TRUTH_MAGIC, struct.pack("<II", GROUND_TRUTH_VERSION, gt.dimension)]
    for table in (gt.speakers, gt.sessions, gt.augmentations):
        _write_table(chunks, table)
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_ground_truth(path) -> GroundTruth:
    """Read a SESSGT01 ground-truth sidecar file."""
    with open(path, "rb") as f:
        data = f.read()
    r = Reader(data, f"ground-truth file {path}")
    magic = r.take(8)
    if magic != GROUND_TRUTH_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {GROUND_TRUTH_MAGIC!r}")
    version = r.u32()
    if version != GROUND_TRUTH_VERSION:
        raise FormatVersionError(f"unsupported ground-truth version {version}")
    dim = r.u32()

    def read_table() -> dict[str, np.ndarray]:
        count = r.u64()
        table = {}
        for _ in range(count):
            key = r.string()
            buf = r.take(8 * dim)
            table[key] = np.frombuffer(buf, dtype="<f8", count=dim).copy()
        return table

    speakers = read_table()
    sessions = read_table()
    augmentations = read_table()
    r.expect_end()
    return GroundTruth(dim, speakers, sessions, augmentations)
