"""Trial protocols, EER/DET computation, and mixed-protocol construction.

Conventions, pinned for reproducibility:

* Decision rule: accept when score >= threshold. Operating points sit at
  the distinct score values (ties grouped), framed by -inf/+inf sentinels.
* EER is read off the ROC by linear interpolation between the two adjacent
  operating points where FAR - FRR changes sign; when an operating point
  hits FAR == FRR exactly, that value is returned exactly.
* Protocol text files carry one trial per line: ``label enrol_id test_id``
  with label 1 (target) or 0 (nontarget). Blank lines and lines starting
  with ``#`` are ignored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import EmbeddingCorpus
from .errors import FormatError


@dataclass(frozen=True)
class Trial:
    enrol_id: str
    test_id: str
    target: bool


@dataclass
class Protocol:
    name: str
    trials: list[Trial]

    def target_count(self) -> int:
        return sum(1 for t in self.trials if t.target)

    def nontarget_count(self) -> int:
        return sum(1 for t in self.trials if not t.target)

    def require_both_classes(self) -> None:
        if self.target_count() == 0 or self.nontarget_count() == 0:
            raise ValueError(
                f"protocol {self.name!r} is degenerate: needs at least one "
                f"target and one nontarget trial (has {self.target_count()} "
                f"targets, {self.nontarget_count()} nontargets)"
            )


def _split_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    tar = np.sort(scores[labels])
    non = np.sort(scores[~labels])
    if tar.size == 0 or non.size == 0:
        raise ValueError("EER needs at least one target and one nontarget score")
    return tar, non


def _operating_points(tar: np.ndarray, non: np.ndarray):
    """Thresholds at distinct scores plus sentinels, with FAR/FRR per point."""
    thresholds = np.unique(np.concatenate([tar, non]))
    far = (non.size - np.searchsorted(non, thresholds, side="left")) / non.size
    frr = np.searchsorted(tar, thresholds, side="left") / tar.size
    thresholds = np.concatenate([[-np.inf], thresholds, [np.inf]])
    far = np.concatenate([[1.0], far, [0.0]])
    frr = np.concatenate([[0.0], frr, [1.0]])
    return thresholds, far, frr


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Args:
      scores: trial scores, higher means more target-like.
      labels: truthy for target trials.

    Returns:
      (eer, threshold) at the FAR/FRR crossing.
    """
    tar, non = _split_scores(scores, labels)
    thresholds, far, frr = _operating_points(tar, non)
    diff = far - frr  # non-increasing, from +1 to -1
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx]), float(thresholds[idx])
    lo, hi = idx - 1, idx
    lam = diff[lo] / (diff[lo] - diff[hi])
    eer = (1.0 - lam) * far[lo] + lam * far[hi]
    if math.isinf(thresholds[hi]):
        threshold = float(thresholds[lo])
    elif math.isinf(thresholds[lo]):  # pragma: no cover - diff[0] is always 1
        threshold = float(thresholds[hi])
    else:
        threshold = float((1.0 - lam) * thresholds[lo] + lam * thresholds[hi])
    return float(eer), threshold


def det_points(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, FAR, FRR) at every distinct score, thresholds ascending.

    FAR is non-increasing and FRR non-decreasing along the list.
    """
    tar, non = _split_scores(scores, labels)
    thresholds, far, frr = _operating_points(tar, non)
    return [
        (float(t), float(fa), float(fr))
        for t, fa, fr in zip(thresholds[1:-1], far[1:-1], frr[1:-1])
    ]


def eer_for_protocol(protocol: Protocol, scores_by_trial) -> tuple[float, float]:
    """EER over a protocol given a ``trial -> score`` mapping or score list."""
    protocol.require_both_classes()
    if callable(scores_by_trial):
        scores = [scores_by_trial(t) for t in protocol.trials]
    else:
        scores = list(scores_by_trial)
        if len(scores) != len(protocol.trials):
            raise ValueError("one score per trial required")
    labels = [t.target for t in protocol.trials]
    return compute_eer(scores, labels)


def mix_protocols(positives_from: Protocol, negatives_from: Protocol,
                  name: str | None = None) -> Protocol:
    """Targets of the first protocol plus nontargets of the second, in order."""
    targets = [t for t in positives_from.trials if t.target]
    nontargets = [t for t in negatives_from.trials if not t.target]
    if not targets:
        raise ValueError(f"protocol {positives_from.name!r} has no target trials")
    if not nontargets:
        raise ValueError(f"protocol {negatives_from.name!r} has no nontarget trials")
    if name is None:
        name = f"mix({positives_from.name}+,{negatives_from.name}-)"
    return Protocol(name, targets + nontargets)


def union_protocols(a: Protocol, b: Protocol, name: str | None = None) -> Protocol:
    """All trials of both protocols, order preserved (VN-Mix-style union)."""
    if name is None:
        name = f"union({a.name},{b.name})"
    return Protocol(name, list(a.trials) + list(b.trials))


def _evenly_spaced(items: list, count: int) -> list:
    if count >= len(items):
        return list(items)
    return [items[(k * len(items)) // count] for k in range(count)]


def make_confound_protocol(corpus: EmbeddingCorpus, name: str = "confound") -> Protocol:
    """Protocol where session identity anti-correlates with speaker identity.

    Targets are same-speaker pairs drawn across different sessions;
    nontargets are different-speaker pairs drawn within one shared session.
    Both classes are trimmed to equal size by even subsampling, keeping the
    construction deterministic.
    """
    by_speaker: dict[str, list] = {}
    by_session: dict[str, list] = {}
    for rec in corpus.records:
        by_speaker.setdefault(rec.speaker_id, []).append(rec)
        by_session.setdefault(rec.session_id, []).append(rec)

    targets = []
    for speaker_id in sorted(by_speaker):
        recs = by_speaker[speaker_id]
        for i in range(len(recs)):
            for j in range(i + 1, len(recs)):
                if recs[i].session_id != recs[j].session_id:
                    targets.append(Trial(recs[i].utterance_id, recs[j].utterance_id, True))

    nontargets = []
    for session_id in sorted(by_session):
        recs = by_session[session_id]
        if len({r.speaker_id for r in recs}) < 2:
            continue
        for i in range(len(recs)):
            for j in range(i + 1, len(recs)):
                if recs[i].speaker_id != recs[j].speaker_id:
                    nontargets.append(
                        Trial(recs[i].utterance_id, recs[j].utterance_id, False)
                    )

    if not targets:
        raise ValueError(
            "confound protocol needs same-speaker pairs across different "
            "sessions; the corpus has none"
        )
    if not nontargets:
        raise ValueError(
            "confound protocol needs different-speaker pairs within a shared "
            "session; the corpus has none (generate with shared_session_groups >= 1)"
        )
    count = min(len(targets), len(nontargets))
    return Protocol(name, _evenly_spaced(targets, count) + _evenly_spaced(nontargets, count))


def save_protocol(protocol: Protocol, path, header_lines=()) -> None:
    """Write ``label enrol_id test_id`` lines; header lines are '#'-prefixed."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        for t in protocol.trials:
            f.write(f"{1 if t.target else 0} {t.enrol_id} {t.test_id}\n")


def load_protocol(path, name: str | None = None) -> Protocol:
    """Read a protocol text file."""
    trials = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise FormatError(
                    f"{path}:{lineno}: expected 'label enrol_id test_id' with "
                    f"label 0 or 1, got {raw.rstrip()!r}"
                )
            trials.append(Trial(parts[1], parts[2], parts[0] == "1"))
    if name is None:
        name = str(path)
    return Protocol(name, trials)
