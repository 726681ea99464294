"""Trial classifier over stacked window-level similarity features.

For a trial, each model contributes 200 features: the 10x10 grid of
window-level speaker cosines (enrol-major order), then the 10x10 grid of
window-level session-embedding cosines. Features from several models are
concatenated, and a small feed-forward classifier with two outputs is
trained on balanced target/nontarget batches. The trial score is the
difference between the two output logits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from ._binio import Reader
from .corpus import EmbeddingCorpus, cosine
from .errors import (
    BadMagicError,
    FormatError,
    FormatVersionError,
    NonFiniteValueError,
    TrainingDivergedError,
)
from .evaluation import Protocol
from .session_net import SessionNet

CHECKPOINT_KIND = "qstack"

FEATURES_MAGIC = b"SESSQF01"
FEATURES_VERSION = 1

# Window-level similarity grids are 10x10; other window counts are rejected.
REQUIRED_WINDOWS = 10
FEATURES_PER_MODEL = 2 * REQUIRED_WINDOWS * REQUIRED_WINDOWS


@dataclass
class ModelContext:
    """One model's corpus and session network, with a per-utterance cache."""

    corpus: EmbeddingCorpus
    net: SessionNet
    _session_windows: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        if self.corpus.windows_per_utterance != REQUIRED_WINDOWS:
            raise ValueError(
                f"window-level features need {REQUIRED_WINDOWS} windows per "
                f"utterance, corpus has {self.corpus.windows_per_utterance}"
            )
        if self.net.spec.input_dim != self.corpus.dimension:
            raise ValueError(
                f"session network expects dimension {self.net.spec.input_dim}, "
                f"corpus has {self.corpus.dimension}"
            )

    def window_session_embeddings(self, utterance_id: str) -> np.ndarray:
        """Session embedding of each window of an utterance, cached."""
        got = self._session_windows.get(utterance_id)
        if got is None:
            windows = self.corpus.get(utterance_id).windows
            got = np.stack(
                [mlp.apply(self.net.spec, self.net.params, w) for w in windows]
            )
            self._session_windows[utterance_id] = got
        return got


def _grid(a: np.ndarray, b: np.ndarray) -> list[float]:
    """All pairwise cosines, enrol-major: a[0] against every b, then a[1], ..."""
    return [cosine(x, y) for x in a for y in b]


def build_features(models, enrol_id: str, test_id: str) -> np.ndarray:
    """Concatenated per-model similarity features for one trial.

    Per model: 100 window-level speaker cosines, then 100 window-level
    session cosines, clipped to [-1, 1]. Model m owns the slice
    ``[200 * m : 200 * (m + 1)]``.
    """
    if not models:
        raise ValueError("need at least one model")
    feats = []
    for model in models:
        model.validate()
        enrol = model.corpus.get(enrol_id)
        test = model.corpus.get(test_id)
        feats.extend(_grid(enrol.windows, test.windows))
        feats.extend(
            _grid(
                model.window_session_embeddings(enrol_id),
                model.window_session_embeddings(test_id),
            )
        )
    return np.clip(np.array(feats, dtype=np.float64), -1.0, 1.0)


def build_training_set(models, protocol: Protocol) -> tuple[np.ndarray, np.ndarray]:
    """Features and labels for every trial of a protocol.

    Returns (features (N, 200 * num_models), labels (N,) bool).
    """
    protocol.require_both_classes()
    rows = [build_features(models, t.enrol_id, t.test_id) for t in protocol.trials]
    labels = np.array([t.target for t in protocol.trials], dtype=bool)
    return np.stack(rows), labels


@dataclass
class QstackConfig:
    """Training settings for the trial classifier."""

    hidden_dim: int = 400
    num_blocks: int = 1
    dropout_rate: float = 0.1
    steps: int = 1500
    examples_per_class: int = 8
    learning_rate: float = 1e-3
    seed: int = 0

    def validate(self) -> None:
        if self.hidden_dim < 1 or self.num_blocks < 1:
            raise ValueError("hidden_dim and num_blocks must be >= 1")
        if self.steps < 1 or self.examples_per_class < 1:
            raise ValueError("steps and examples_per_class must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")

    def network_spec(self, feature_len: int) -> mlp.NetworkSpec:
        return mlp.NetworkSpec(
            input_dim=feature_len,
            output_dim=2,
            hidden_dim=self.hidden_dim,
            num_blocks=self.num_blocks,
            activation="leaky_relu",
            dropout_rate=self.dropout_rate,
            use_prenorm_residual=False,
        )


@dataclass
class QstackModel:
    """A trained trial classifier."""

    spec: mlp.NetworkSpec
    params: mlp.NetworkParams

    def save(self, path) -> None:
        mlp.save_network(path, self.spec, self.params, CHECKPOINT_KIND)

    @classmethod
    def load(cls, path) -> "QstackModel":
        spec, params, _ = mlp.load_network(path, expect_kind=CHECKPOINT_KIND)
        return cls(spec, params)


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its gradient in the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max()
    logz = m + np.log(np.exp(logits - m).sum())
    loss = logz - logits[label]
    grad = np.exp(logits - logz)
    grad[label] -= 1.0
    return float(loss), grad


def train_qstack(
    features: np.ndarray,
    labels: np.ndarray,
    config: QstackConfig,
) -> tuple[QstackModel, list[float]]:
    """Train the classifier on labelled trial features.

    Each step samples ``examples_per_class`` trials from each class, so the
    optimizer always sees balanced batches regardless of the protocol's
    class ratio. Deterministic for a fixed config.
    """
    config.validate()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError("features must be (N, F) with one label per row")
    if not np.all(np.isfinite(features)):
        raise NonFiniteValueError("non-finite feature value")
    target_idx = np.flatnonzero(labels)
    nontarget_idx = np.flatnonzero(~labels)
    if target_idx.size == 0 or nontarget_idx.size == 0:
        raise ValueError("training needs both target and nontarget examples")

    spec = config.network_spec(features.shape[1])
    params = mlp.init_params(spec, config.seed)
    opt = mlp.init_optimizer(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    losses = []
    for _ in range(config.steps):
        picked = np.concatenate(
            [
                rng.choice(target_idx, size=config.examples_per_class),
                rng.choice(nontarget_idx, size=config.examples_per_class),
            ]
        )
        total = 0.0
        grads = None
        for i in picked:
            y, cache = mlp.forward(
                spec, params, features[i],
                train=True, seed=int(rng.integers(2**63)),
            )
            loss, dy = cross_entropy(y, int(labels[i]))
            total += loss
            g, _ = mlp.backward(spec, params, cache, dy)
            if grads is None:
                grads = g
            else:
                for name in grads:
                    grads[name] += g[name]
        n = picked.size
        for name in grads:
            grads[name] /= n
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(f"loss became {mean_loss}")
        mlp.optimizer_step(params, grads, opt)
        losses.append(mean_loss)
    return QstackModel(spec, params), losses


def qstack_score(model: QstackModel, features: np.ndarray) -> float:
    """Trial score: target logit minus nontarget logit."""
    y = mlp.apply(model.spec, model.params, features)
    return float(y[1] - y[0])


def score_trials(model: QstackModel, models, protocol: Protocol) -> list[float]:
    """Score every trial of a protocol with a trained classifier."""
    return [
        qstack_score(model, build_features(models, t.enrol_id, t.test_id))
        for t in protocol.trials
    ]


def save_features(path, features: np.ndarray, labels: np.ndarray) -> None:
    """Write a labelled feature set to a binary file.

    Layout (little-endian): magic, u32 version, u32 feature length,
    u64 row count, then per row a label byte (0/1) and the features as
    float32.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ValueError("features must be (N, F) with one label per row")
    if not np.all(np.isfinite(features)):
        raise NonFiniteValueError("non-finite feature value")
    with open(path, "wb") as f:
        f.write(FEATURES_MAGIC)
        f.write(struct.pack("<IIQ", FEATURES_VERSION, features.shape[1], features.shape[0]))
        for row, label in zip(features, labels):
            f.write(struct.pack("<B", 1 if label else 0))
            f.write(row.astype(np.float32).tobytes())


def load_features(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a feature file written by ``save_features``."""
    with open(path, "rb") as f:
        data = f.read()
    r = Reader(data, what="feature file")
    magic = r.take(len(FEATURES_MAGIC))
    if magic != FEATURES_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {FEATURES_MAGIC!r}")
    version = r.u32()
    if version != FEATURES_VERSION:
        raise FormatVersionError(f"unsupported feature-file version {version}")
    feature_len = r.u32()
    count = r.u64()
    rows = np.empty((count, feature_len), dtype=np.float64)
    labels = np.empty(count, dtype=bool)
    for i in range(count):
        b = r.u8()
        if b not in (0, 1):
            raise FormatError(f"label byte must be 0 or 1, got {b}")
        labels[i] = bool(b)
        rows[i] = r.f32_array(feature_len)
    r.expect_end()
    if count and not np.all(np.isfinite(rows)):
        raise NonFiniteValueError("non-finite feature value")
    return rows, labels
