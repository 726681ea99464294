import numpy as np
import pytest

from sesscomp.corpus import UtteranceRecord, cosine
from sesscomp.errors import BadMagicError, FormatVersionError
from sesscomp.synthgen import (
    SynthConfig,
    generate,
    load_ground_truth,
    oracle_session_similarity,
    save_ground_truth,
)


def small_config(**overrides):
    base = dict(
        num_speakers=6,
        sessions_per_speaker=2,
        utterances_per_session=2,
        dimension=16,
        seed=5,
        shared_session_groups=2,
        windows_per_utterance=4,
    )
    base.update(overrides)
    return SynthConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(num_speakers=0).validate()
    with pytest.raises(ValueError, match="shared_session_groups"):
        small_config(num_speakers=3, shared_session_groups=2).validate()
    with pytest.raises(ValueError):
        small_config(sigma=-0.1).validate()
    with pytest.raises(ValueError, match="alpha"):
        small_config(alpha=0.0).validate()


def test_corpus_shape_and_counts():
    cfg = small_config()
    corpus, gt = generate(cfg)
    # 2 own sessions everywhere, plus one shared session for speakers 0..3
    expected = 6 * 2 * 2 + 4 * 2
    assert len(corpus) == expected
    assert corpus.dimension == 16
    assert corpus.windows_per_utterance == 4
    assert len(corpus.speaker_ids()) == 6


def test_latents_unit_norm():
    _, gt = generate(small_config())
    for table in (gt.speakers, gt.sessions, gt.augmentations):
        for v in table.values():
            assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)


def test_noise_free_windows_match_latent_combination():
    # with sigma=0 every window is exactly its latent combination
    cfg = small_config(sigma=0.0, alpha=1.25, beta=0.5, gamma=0.3)
    corpus, gt = generate(cfg)
    for rec in corpus.records:
        expected = (
            1.25 * gt.speakers[rec.speaker_id]
            + 0.5 * gt.sessions[rec.session_id]
            + 0.3 * gt.augmentations[rec.augmentation_id]
        )
        assert np.allclose(rec.windows, expected[None, :], atol=1e-12)


def test_noise_scale():
    cfg = small_config(sigma=0.7, beta=0.4, gamma=0.2, dimension=64,
                       num_speakers=8, shared_session_groups=0)
    corpus, gt = generate(cfg)
    residuals = []
    for rec in corpus.records:
        base = (
            cfg.alpha * gt.speakers[rec.speaker_id]
            + cfg.beta * gt.sessions[rec.session_id]
            + cfg.gamma * gt.augmentations[rec.augmentation_id]
        )
        residuals.append(rec.windows - base[None, :])
    sd = np.concatenate(residuals).std()
    assert sd == pytest.approx(0.7, rel=0.05)


def test_determinism_and_noise_seed_independence():
    cfg = small_config()
    c1, g1 = generate(cfg)
    c2, g2 = generate(cfg)
    for a, b in zip(c1.records, c2.records):
        assert np.array_equal(a.windows, b.windows)
    # same latent seed, different noise: identical ground truth, new windows
    c3, g3 = generate(small_config(noise_seed=99))
    assert set(g3.speakers) == set(g1.speakers)
    for k in g1.speakers:
        assert np.array_equal(g1.speakers[k], g3.speakers[k])
    for k in g1.sessions:
        assert np.array_equal(g1.sessions[k], g3.sessions[k])
    assert any(
        not np.array_equal(a.windows, b.windows)
        for a, b in zip(c1.records, c3.records)
    )
    # identity labels line up record by record
    for a, b in zip(c1.records, c3.records):
        assert a.utterance_id == b.utterance_id
        assert a.session_id == b.session_id


def test_shared_sessions_pair_adjacent_speakers():
    corpus, _ = generate(small_config())
    by_session = {}
    for rec in corpus.records:
        by_session.setdefault(rec.session_id, set()).add(rec.speaker_id)
    shared = {s: spk for s, spk in by_session.items() if len(spk) > 1}
    assert len(shared) == 2
    for speakers in shared.values():
        assert len(speakers) == 2
    own = [s for s, spk in by_session.items() if len(spk) == 1]
    assert len(own) == 6 * 2


def test_positive_pairs_share_augmentation_within_session():
    corpus, _ = generate(small_config())
    for rec in corpus.records:
        same_session = [
            r for r in corpus.records
            if r.session_id == rec.session_id and r.speaker_id == rec.speaker_id
        ]
        tags = {r.augmentation_id for r in same_session}
        assert len(tags) == 1


def test_augmentation_tags_differ_across_speaker_sessions():
    corpus, _ = generate(small_config())
    per_speaker = {}
    for rec in corpus.records:
        per_speaker.setdefault(rec.speaker_id, {})[rec.session_id] = rec.augmentation_id
    for sessions in per_speaker.values():
        tags = list(sessions.values())
        assert len(set(tags)) == len(tags)


def test_oracle_session_similarity():
    corpus, gt = generate(small_config())
    a = corpus.records[0]
    assert oracle_session_similarity(gt, a, a) == 1.0
    other = next(r for r in corpus.records if r.session_id != a.session_id)
    cross = oracle_session_similarity(gt, a, other)
    assert cross == pytest.approx(
        cosine(gt.sessions[a.session_id], gt.sessions[other.session_id]), abs=1e-12
    )
    stranger = UtteranceRecord("x", "spk9999", "sess_unknown", "", a.windows)
    with pytest.raises(ValueError, match="unknown"):
        oracle_session_similarity(gt, stranger, a)


def test_cross_speaker_cosine_near_zero_in_high_dim():
    # pure speaker latents in D=512: random unit vectors are near-orthogonal
    cfg = SynthConfig(
        num_speakers=12, sessions_per_speaker=1, utterances_per_session=1,
        dimension=512, seed=17, beta=0.0, sigma=0.0, windows_per_utterance=1,
    )
    corpus, _ = generate(cfg)
    pooled = [r.pooled() for r in corpus.records]
    sims = [
        cosine(pooled[i], pooled[j])
        for i in range(len(pooled)) for j in range(i + 1, len(pooled))
    ]
    assert max(abs(s) for s in sims) < 0.2


def test_ground_truth_round_trip(tmp_path):
    _, gt = generate(small_config())
    path = tmp_path / "gt.bin"
    save_ground_truth(gt, path)
    loaded = load_ground_truth(path)
    assert loaded.dimension == gt.dimension
    for table, got in (
        (gt.speakers, loaded.speakers),
        (gt.sessions, loaded.sessions),
        (gt.augmentations, loaded.augmentations),
    ):
        assert set(table) == set(got)
        for k in table:
            assert np.array_equal(table[k], got[k])
    # byte stability through a load/save cycle
    path2 = tmp_path / "gt2.bin"
    save_ground_truth(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_ground_truth_error_taxonomy(tmp_path):
    _, gt = generate(small_config())
    path = tmp_path / "gt.bin"
    save_ground_truth(gt, path)
    data = path.read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"ZZZZZZZZ" + data[8:])
    with pytest.raises(BadMagicError):
        load_ground_truth(bad)
    bumped = bytearray(data)
    bumped[8] = 42
    bad.write_bytes(bytes(bumped))
    with pytest.raises(FormatVersionError):
        load_ground_truth(bad)
