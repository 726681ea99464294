"""Training and application of the auxiliary session-embedding network.

The session network maps fixed speaker embeddings to session embeddings.
It is trained on quadruples: one speaker, two sessions, two utterances per
session. Utterances from the same session (and same augmentation tag) form
positive pairs whose session embeddings should agree; utterances of the
same speaker from different sessions (distinct augmentation tags) form
negative pairs whose session embeddings should not. Speaker embeddings are
read-only throughout; only the session network's parameters move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mlp
from .corpus import EmbeddingCorpus, UtteranceRecord, pool
from .errors import TrainingDivergedError

CHECKPOINT_KIND = "session_net"

# Pair index layout within a quadruple (s1u0, s1u1, s2u0, s2u1):
# positives are the two within-session pairs, negatives the four
# cross-session pairs. Self-pairs are excluded.
POSITIVE_PAIRS = ((0, 1), (2, 3))
NEGATIVE_PAIRS = ((0, 2), (0, 3), (1, 2), (1, 3))

_ELIGIBILITY = (
    "a speaker is eligible when it has two different sessions, each with at "
    "least two utterances under a single augmentation tag, and the two "
    "sessions' tags differ (or both are untagged)"
)


@dataclass
class SessionNetConfig:
    """Architecture and training hyperparameters of the session network."""

    session_dim: int = 128
    hidden_dim: int = 256
    num_blocks: int = 3
    dropout_rate: float = 0.1
    steps: int = 1000
    speakers_per_batch: int = 8
    learning_rate: float = 1e-3
    seed: int = 0

    def validate(self) -> None:
        if self.session_dim < 2:
            raise ValueError("session_dim must be >= 2")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.speakers_per_batch < 1:
            raise ValueError("speakers_per_batch must be >= 1")

    def network_spec(self, input_dim: int) -> mlp.NetworkSpec:
        return mlp.NetworkSpec(
            input_dim=input_dim,
            output_dim=self.session_dim,
            hidden_dim=self.hidden_dim,
            num_blocks=self.num_blocks,
            activation="gelu",
            dropout_rate=self.dropout_rate,
            use_prenorm_residual=True,
        )


@dataclass
class SessionNet:
    """A trained (or fresh) session network."""

    spec: mlp.NetworkSpec
    params: mlp.NetworkParams

    def save(self, path) -> None:
        mlp.save_network(path, self.spec, self.params, CHECKPOINT_KIND)

    @classmethod
    def load(cls, path) -> "SessionNet":
        spec, params, _ = mlp.load_network(path, expect_kind=CHECKPOINT_KIND)
        return cls(spec, params)


@dataclass
class Quadruple:
    """One speaker, two sessions, two utterances per session."""

    speaker_id: str
    session_ids: tuple[str, str]
    utterances: tuple[UtteranceRecord, UtteranceRecord, UtteranceRecord, UtteranceRecord]


class QuadrupleSampler:
    """Samples valid quadruples uniformly over eligible speakers.

    Eligibility and the augmentation constraint are precomputed once from
    the corpus: per speaker, each session's utterances are grouped by
    augmentation tag, and only (session, tag) groups with two or more
    utterances can host a positive pair. The two chosen groups must come
    from different sessions and carry different tags; corpora without
    augmentation tags (all tags empty) skip the tag constraint.
    """

    def __init__(self, corpus: EmbeddingCorpus):
        by_speaker: dict[str, dict[str, dict[str, list[UtteranceRecord]]]] = {}
        for rec in corpus.records:
            sessions = by_speaker.setdefault(rec.speaker_id, {})
            groups = sessions.setdefault(rec.session_id, {})
            groups.setdefault(rec.augmentation_id, []).append(rec)

        self._options: dict[str, list[tuple[str, str, list[UtteranceRecord]]]] = {}
        eligible = []
        for speaker_id in sorted(by_speaker):
            options = [
                (session_id, tag, recs)
                for session_id, groups in sorted(by_speaker[speaker_id].items())
                for tag, recs in sorted(groups.items())
                if len(recs) >= 2
            ]
            if self._has_valid_pair(options):
                self._options[speaker_id] = options
                eligible.append(speaker_id)
        if not eligible:
            raise ValueError(f"no eligible speaker for quadruple sampling: {_ELIGIBILITY}")
        self.eligible_speakers = eligible

    @staticmethod
    def _pair_ok(opt_a, opt_b) -> bool:
        sess_a, tag_a, _ = opt_a
        sess_b, tag_b, _ = opt_b
        if sess_a == sess_b:
            return False
        return tag_a != tag_b or (tag_a == "" and tag_b == "")

    @classmethod
    def _has_valid_pair(cls, options) -> bool:
        return any(
            cls._pair_ok(options[i], options[j])
            for i in range(len(options))
            for j in range(i + 1, len(options))
        )

    def sample(self, rng: np.random.Generator) -> Quadruple:
        speaker_id = self.eligible_speakers[rng.integers(len(self.eligible_speakers))]
        options = self._options[speaker_id]
        pick = None
        for _ in range(64):
            i, j = rng.choice(len(options), size=2, replace=False)
            if self._pair_ok(options[i], options[j]):
                pick = (options[i], options[j])
                break
        if pick is None:
            valid = [
                (options[i], options[j])
                for i in range(len(options))
                for j in range(len(options))
                if i != j and self._pair_ok(options[i], options[j])
            ]
            pick = valid[rng.integers(len(valid))]
        (sess1, _, recs1), (sess2, _, recs2) = pick
        u1 = rng.choice(len(recs1), size=2, replace=False)
        u2 = rng.choice(len(recs2), size=2, replace=False)
        return Quadruple(
            speaker_id=speaker_id,
            session_ids=(sess1, sess2),
            utterances=(recs1[u1[0]], recs1[u1[1]], recs2[u2[0]], recs2[u2[1]]),
        )


def sample_quadruple(corpus: EmbeddingCorpus, rng: np.random.Generator) -> Quadruple:
    """One-off quadruple draw; builds the sampling index each call."""
    return QuadrupleSampler(corpus).sample(rng)


def pair_loss(se1: np.ndarray, se2: np.ndarray, same_session: bool) -> float:
    """Per-pair loss: 1 - cosine for same-session pairs, cosine otherwise."""
    c = _cosine_checked(se1, se2)
    return 1.0 - c if same_session else c


def _cosine_checked(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm session embedding, cosine undefined")
    return float(np.dot(a, b) / (na * nb))


def _cosine_grads(a: np.ndarray, b: np.ndarray):
    """Cosine value and its gradients w.r.t. both vectors."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm session embedding, cosine undefined")
    c = float(np.dot(a, b) / (na * nb))
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return c, da, db


def batch_loss(net: SessionNet, quadruple: Quadruple, *,
               train: bool = False, seed: int | None = None) -> float:
    """Mean pair loss over the six pairs of a quadruple."""
    loss, _ = batch_loss_grads(net, quadruple, train=train, seed=seed)
    return loss


def batch_loss_grads(net: SessionNet, quadruple: Quadruple, *,
                     train: bool = False, seed: int | None = None):
    """Quadruple loss and its gradients w.r.t. the session-net parameters.

    In train mode ``seed`` fixes the dropout masks (one derived seed per
    utterance), so the loss is a deterministic, differentiable function of
    the parameters and the check against finite differences is exact.
    """
    embeddings = [pool(rec.windows) for rec in quadruple.utterances]
    outs = []
    caches = []
    for k, emb in enumerate(embeddings):
        out, cache = mlp.forward(
            net.spec, net.params, emb, train=train,
            seed=None if seed is None else seed + k,
        )
        outs.append(out)
        caches.append(cache)

    pairs = [(i, j, True) for i, j in POSITIVE_PAIRS] + [
        (i, j, False) for i, j in NEGATIVE_PAIRS
    ]
    n_pairs = len(pairs)
    loss = 0.0
    dse = [np.zeros_like(outs[0]) for _ in range(4)]
    for i, j, same in pairs:
        c, da, db = _cosine_grads(outs[i], outs[j])
        if same:
            loss += (1.0 - c) / n_pairs
            dse[i] -= da / n_pairs
            dse[j] -= db / n_pairs
        else:
            loss += c / n_pairs
            dse[i] += da / n_pairs
            dse[j] += db / n_pairs

    grads = {name: np.zeros_like(arr) for name, arr in net.params.tensors.items()}
    for k in range(4):
        gk, _ = mlp.backward(net.spec, net.params, caches[k], dse[k])
        for name in grads:
            grads[name] += gk[name]
    return float(loss), grads


def train(corpus: EmbeddingCorpus, config: SessionNetConfig) -> tuple[SessionNet, list[float]]:
    """Train a session network on a corpus.

    Each step averages loss and gradients over ``speakers_per_batch``
    independently sampled quadruples and applies one Adam update. Returns
    the trained network and the per-step loss curve. Deterministic given
    ``config.seed``; the corpus is never modified.
    """
    config.validate()
    spec = config.network_spec(corpus.dimension)
    params = mlp.init_params(spec, config.seed)
    net = SessionNet(spec, params)
    opt = mlp.init_optimizer(params, learning_rate=config.learning_rate)
    sampler = QuadrupleSampler(corpus)
    rng = np.random.default_rng(config.seed)

    losses = []
    for step in range(config.steps):
        total = {name: np.zeros_like(arr) for name, arr in params.tensors.items()}
        step_loss = 0.0
        for _ in range(config.speakers_per_batch):
            quad = sampler.sample(rng)
            dropout_seed = int(rng.integers(2**63))
            loss, grads = batch_loss_grads(net, quad, train=True, seed=dropout_seed)
            step_loss += loss
            for name in total:
                total[name] += grads[name]
        scale = 1.0 / config.speakers_per_batch
        step_loss *= scale
        if not np.isfinite(step_loss):
            raise TrainingDivergedError(
                f"non-finite loss {step_loss} at step {step}; "
                "lower the learning rate or check the corpus"
            )
        for name in total:
            total[name] *= scale
        mlp.optimizer_step(params, total, opt)
        losses.append(step_loss)
    return net, losses


def extract_session_embedding(net: SessionNet, speaker_embedding: np.ndarray) -> np.ndarray:
    """Session embedding of one speaker embedding (eval mode, deterministic)."""
    return mlp.apply(net.spec, net.params, speaker_embedding)
