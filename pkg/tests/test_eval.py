import numpy as np
import pytest

from sesscomp.corpus import EmbeddingCorpus, UtteranceRecord
from sesscomp.errors import FormatError
from sesscomp.evaluation import (
    Protocol,
    Trial,
    compute_eer,
    det_points,
    eer_for_protocol,
    load_protocol,
    make_confound_protocol,
    mix_protocols,
    save_protocol,
    union_protocols,
)
from sesscomp.synthgen import SynthConfig, generate

from oracles import brute_force_eer


def test_eer_separable_is_zero():
    scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1]
    labels = [1, 1, 1, 0, 0, 0]
    eer, threshold = compute_eer(scores, labels)
    assert eer == 0.0
    assert 0.3 < threshold <= 0.7


def test_eer_interleaved_four_trials():
    # scores alternate classes; no threshold separates them better than half
    eer, _ = compute_eer([0.8, 0.2, 0.7, 0.1], [1, 1, 0, 0])
    assert eer == 0.5
    assert brute_force_eer([0.8, 0.2, 0.7, 0.1], [1, 1, 0, 0]) == 0.5


def test_eer_fully_reversed():
    eer, _ = compute_eer([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    assert eer == 1.0


def test_eer_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for trial in range(50):
        n = int(rng.integers(4, 1000))
        labels = np.zeros(n, dtype=bool)
        labels[: max(1, n // 3)] = True
        rng.shuffle(labels)
        if not labels.any() or labels.all():
            labels[0] = True
            labels[-1] = False
        # mixture of continuous and heavily tied scores
        if trial % 3 == 0:
            scores = rng.integers(0, 6, size=n).astype(float)
        else:
            scores = rng.normal(size=n) + 0.8 * labels
        eer, _ = compute_eer(scores, labels)
        oracle = brute_force_eer(scores, labels)
        assert abs(eer - oracle) < 1e-9, trial


def test_eer_invariant_under_monotone_transform():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=200)
    labels = rng.random(200) < 0.4
    labels[0], labels[1] = True, False
    base, _ = compute_eer(scores, labels)
    warped, _ = compute_eer(np.exp(scores * 0.5) + 3.0, labels)
    assert warped == pytest.approx(base, abs=1e-12)


def test_eer_threshold_is_operating_point():
    scores = [0.9, 0.6, 0.55, 0.4, 0.5, 0.3]
    labels = [1, 1, 1, 0, 0, 0]
    eer, threshold = compute_eer(scores, labels)
    # applying the returned threshold reproduces rates within one trial's worth
    far = np.mean([s >= threshold for s, l in zip(scores, labels) if not l])
    frr = np.mean([s < threshold for s, l in zip(scores, labels) if l])
    assert abs(far - eer) <= 1 / 3 + 1e-12
    assert abs(frr - eer) <= 1 / 3 + 1e-12


def test_eer_validation():
    with pytest.raises(ValueError, match="class|target"):
        compute_eer([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError, match="finite"):
        compute_eer([0.1, np.nan], [1, 0])
    with pytest.raises(ValueError, match="1-D|length"):
        compute_eer([0.1, 0.2, 0.3], [1, 0])


def test_det_points_monotone():
    rng = np.random.default_rng(5)
    scores = np.round(rng.normal(size=300), 1)
    labels = rng.random(300) < 0.5
    labels[0], labels[1] = True, False
    pts = det_points(scores, labels)
    thresholds = [t for t, _, _ in pts]
    fars = [f for _, f, _ in pts]
    frrs = [r for _, _, r in pts]
    assert thresholds == sorted(thresholds)
    assert all(a >= b for a, b in zip(fars, fars[1:]))
    assert all(a <= b for a, b in zip(frrs, frrs[1:]))
    assert len(pts) == len(np.unique(scores))
    assert all(np.isfinite(t) for t in thresholds)


def test_eer_for_protocol_callable_and_list():
    trials = [Trial("a", "b", True), Trial("c", "d", False)]
    protocol = Protocol("p", trials)
    by_pair = {("a", "b"): 0.9, ("c", "d"): 0.1}
    eer1, _ = eer_for_protocol(protocol, lambda t: by_pair[(t.enrol_id, t.test_id)])
    eer2, _ = eer_for_protocol(protocol, [0.9, 0.1])
    assert eer1 == eer2 == 0.0
    with pytest.raises(ValueError, match="one score per trial"):
        eer_for_protocol(protocol, [0.9])
    with pytest.raises(ValueError, match="degenerate"):
        eer_for_protocol(Protocol("q", [trials[0]]), [0.5])


def test_mix_protocols_takes_positives_and_negatives():
    a = Protocol("a", [Trial("1", "2", True), Trial("3", "4", False)])
    b = Protocol("b", [Trial("5", "6", True), Trial("7", "8", False)])
    mixed = mix_protocols(a, b)
    assert [t.enrol_id for t in mixed.trials] == ["1", "7"]
    assert mixed.target_count() == 1 and mixed.nontarget_count() == 1
    with pytest.raises(ValueError, match="no target"):
        mix_protocols(Protocol("x", [Trial("1", "2", False)]), b)
    with pytest.raises(ValueError, match="no nontarget"):
        mix_protocols(a, Protocol("y", [Trial("1", "2", True)]))


def test_union_protocols_keeps_everything():
    a = Protocol("a", [Trial("1", "2", True)])
    b = Protocol("b", [Trial("3", "4", False), Trial("5", "6", True)])
    u = union_protocols(a, b)
    assert len(u.trials) == 3
    assert u.trials[0] == a.trials[0]
    assert u.trials[1:] == b.trials


def confound_corpus(groups=2):
    cfg = SynthConfig(
        num_speakers=6, sessions_per_speaker=2, utterances_per_session=2,
        dimension=8, seed=1, shared_session_groups=groups,
        windows_per_utterance=2,
    )
    corpus, _ = generate(cfg)
    return corpus


def test_confound_protocol_structure():
    corpus = confound_corpus()
    protocol = make_confound_protocol(corpus)
    assert protocol.target_count() == protocol.nontarget_count() > 0
    for t in protocol.trials:
        enrol = corpus.get(t.enrol_id)
        test = corpus.get(t.test_id)
        if t.target:
            assert enrol.speaker_id == test.speaker_id
            assert enrol.session_id != test.session_id
        else:
            assert enrol.speaker_id != test.speaker_id
            assert enrol.session_id == test.session_id


def test_confound_protocol_deterministic():
    corpus = confound_corpus()
    p1 = make_confound_protocol(corpus)
    p2 = make_confound_protocol(corpus)
    assert p1.trials == p2.trials


def test_confound_protocol_needs_shared_sessions():
    corpus = confound_corpus(groups=0)
    with pytest.raises(ValueError, match="shared"):
        make_confound_protocol(corpus)


def test_confound_protocol_needs_multiple_sessions():
    rec1 = UtteranceRecord("u1", "a", "v", "", np.ones((1, 2)))
    rec2 = UtteranceRecord("u2", "b", "v", "", np.full((1, 2), 2.0))
    corpus = EmbeddingCorpus(2, 1, [rec1, rec2])
    with pytest.raises(ValueError, match="different sessions"):
        make_confound_protocol(corpus)


def test_protocol_file_round_trip(tmp_path):
    protocol = make_confound_protocol(confound_corpus())
    path = tmp_path / "trials.txt"
    save_protocol(protocol, path, header_lines=("made for a test",))
    loaded = load_protocol(path, name=protocol.name)
    assert loaded.trials == protocol.trials
    assert loaded.name == protocol.name
    text = path.read_text()
    assert text.startswith("# made for a test\n")
    path2 = tmp_path / "again.txt"
    save_protocol(loaded, path2)
    body = [l for l in text.splitlines() if not l.startswith("#")]
    assert body == path2.read_text().splitlines()


def test_protocol_file_malformed_lines(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 a b\n2 c d\n")
    with pytest.raises(FormatError, match=":2"):
        load_protocol(path)
    path.write_text("1 a\n")
    with pytest.raises(FormatError, match=":1"):
        load_protocol(path)
