"""Speaker similarity, session similarity, and linear score compensation.

A trial's speaker similarity is the cosine of the two pooled utterance
embeddings; its session similarity is the cosine of the session embeddings
extracted from those pooled embeddings. The compensated score subtracts a
weighted session similarity from the speaker similarity, and the weight is
picked by sweeping a grid on a development protocol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingCorpus, UtteranceRecord, cosine
from .errors import FormatError
from .evaluation import Protocol, Trial, compute_eer
from .session_net import SessionNet, extract_session_embedding


@dataclass
class TrialScore:
    """One scored trial: similarities and the compensated score."""

    trial: Trial
    spk: float
    sess: float
    score: float


@dataclass
class WeightSweepResult:
    """EER over a weight grid; best point with smallest-weight tie-break."""

    points: list[tuple[float, float]]  # (w, eer)
    best_w: float
    best_eer: float


def speaker_similarity(rec1: UtteranceRecord, rec2: UtteranceRecord) -> float:
    """Cosine of the pooled window embeddings of two utterances."""
    return cosine(rec1.pooled(), rec2.pooled())


def session_similarity(net: SessionNet, rec1: UtteranceRecord, rec2: UtteranceRecord) -> float:
    """Cosine of the session embeddings extracted from the pooled embeddings."""
    se1 = extract_session_embedding(net, rec1.pooled())
    se2 = extract_session_embedding(net, rec2.pooled())
    return cosine(se1, se2)


def compensated_score(spk: float, sess: float, w: float) -> float:
    """The compensated verification score, speaker minus weighted session."""
    if not (math.isfinite(spk) and math.isfinite(sess) and math.isfinite(w)):
        raise ValueError("compensated_score requires finite inputs")
    if w < 0:
        raise ValueError("session weight must be >= 0")
    return spk - w * sess


def score_protocol(
    corpus: EmbeddingCorpus,
    net: SessionNet,
    protocol: Protocol,
    w: float,
) -> list[TrialScore]:
    """Score every trial of a protocol at session weight ``w``."""
    scored = []
    for trial in protocol.trials:
        rec1 = corpus.get(trial.enrol_id)
        rec2 = corpus.get(trial.test_id)
        spk = speaker_similarity(rec1, rec2)
        sess = session_similarity(net, rec1, rec2)
        scored.append(TrialScore(trial, spk, sess, compensated_score(spk, sess, w)))
    return scored


def sweep_weight(
    protocol: Protocol,
    corpus: EmbeddingCorpus,
    net: SessionNet,
    grid,
) -> WeightSweepResult:
    """Evaluate EER at every weight in ``grid`` on a development protocol.

    The similarities are computed once; each grid point only re-mixes them.
    Ties in EER break toward the smallest weight.
    """
    grid = [float(w) for w in grid]
    if not grid:
        raise ValueError("weight grid must be non-empty")
    for w in grid:
        if not math.isfinite(w) or w < 0:
            raise ValueError(f"invalid grid weight {w}")
    protocol.require_both_classes()
    base = score_protocol(corpus, net, protocol, 0.0)
    spk = np.array([s.spk for s in base])
    sess = np.array([s.sess for s in base])
    labels = np.array([s.trial.target for s in base])
    points = []
    for w in grid:
        eer, _ = compute_eer(spk - w * sess, labels)
        points.append((w, eer))
    best_w, best_eer = min(points, key=lambda p: (p[1], p[0]))
    return WeightSweepResult(points, best_w, best_eer)


def default_weight_grid() -> list[float]:
    """w in {0.00, 0.01, ..., 1.00}."""
    return [round(i / 100.0, 2) for i in range(101)]


def save_scores(path, scored: list[TrialScore], header_lines=()) -> None:
    """Write scored trials as tab-separated lines.

    Columns: enrol_id, test_id, label (1/0), spk, sess, score. Floats use
    shortest round-trip formatting, so identical runs write identical bytes.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        for s in scored:
            label = 1 if s.trial.target else 0
            f.write(
                f"{s.trial.enrol_id}\t{s.trial.test_id}\t{label}\t"
                f"{s.spk!r}\t{s.sess!r}\t{s.score!r}\n"
            )


def load_scores(path) -> list[TrialScore]:
    """Read a scored-trial file written by ``save_scores``."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 6 or parts[2] not in ("0", "1"):
                raise FormatError(
                    f"{path}:{lineno}: expected 6 tab-separated columns with "
                    f"label 0 or 1, got {line!r}"
                )
            try:
                spk, sess, score = (float(parts[3]), float(parts[4]), float(parts[5]))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad float: {exc}") from exc
            trial = Trial(parts[0], parts[1], parts[2] == "1")
            out.append(TrialScore(trial, spk, sess, score))
    return out
