import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speakermia.attack import (DEFAULT_ATTACK_CONFIG, MEMBER, NONMEMBER, RANK_FEATURE, AttackMetrics,
                               MembershipRecord, best_threshold, build_attack_dataset, evaluate_attack,
                               export_records_csv, extract_attack_feature, load_attack, metrics_from_features,
                               read_records_csv, records_to_arrays, response_feature, save_attack,
                               select_threshold, train_attack)
from speakermia.corpus import N_SAMPLES, AudioClip
from speakermia.obfuscation import ObfuscationConfig, obfuscate

FAST_ATTACK = DEFAULT_ATTACK_CONFIG.replace(max_epochs=300)


class UniformStub:
    def __init__(self, n_classes=4):
        self.class_map = tuple(range(n_classes))

    def predict_proba(self, clips):
        return np.full((len(clips), len(self.class_map)), 1 / len(self.class_map))


def fake_clips(n, n_speakers=4):
    return [AudioClip(np.zeros(N_SAMPLES, np.float32), 16000, i % n_speakers, i) for i in range(n)]


def synthetic_records(rng, n, signal=True, source="shadow"):
    # members are confident, nonmembers less so
    recs = []
    for label in (MEMBER, NONMEMBER):
        for i in range(n):
            p1 = rng.uniform(0.7, 1.0) if (label == MEMBER or not signal) else rng.uniform(0.3, 0.8)
            rest = (1 - p1) * np.sort(rng.dirichlet([1, 1, 1]))[::-1]
            f = tuple(float(v) for v in extract_attack_feature(np.r_[p1, rest]))
            recs.append(MembershipRecord(f, label, source, 0, i))
    return recs


def test_feature_examples():
    np.testing.assert_allclose(extract_attack_feature([0.1, 0.6, 0.05, 0.25]), [0.6, 0.25, 0.1])
    np.testing.assert_allclose(extract_attack_feature([0.25] * 4), [0.25] * 3)
    np.testing.assert_allclose(extract_attack_feature([0, 1.0, 0, 0]), [1, 0, 0])
    with pytest.raises(ValueError):
        extract_attack_feature([0.5, 0.5])


@given(v=st.lists(st.floats(0.0, 1.0), min_size=3, max_size=12), seed=st.integers(0, 1000))
@settings(max_examples=100, deadline=None)
def test_feature_permutation_invariant(v, seed):
    p = np.array(v) + 1e-3
    p /= p.sum()
    perm = np.random.default_rng(seed).permutation(len(p))
    f = extract_attack_feature(p)
    np.testing.assert_array_equal(f, extract_attack_feature(p[perm]))
    assert 1 >= f[0] >= f[1] >= f[2] >= 0 and f.sum() <= 1 + 1e-6


def test_response_feature_modes():
    p = [0.1, 0.6, 0.05, 0.25]
    np.testing.assert_allclose(response_feature(obfuscate(p, ObfuscationConfig("topk", 1))), [0.6, 0, 0])
    np.testing.assert_allclose(response_feature(obfuscate(p, ObfuscationConfig("topk", 2))), [0.6, 0.25, 0])
    np.testing.assert_allclose(response_feature(obfuscate(p, ObfuscationConfig("rank"))), RANK_FEATURE)


def test_record_validation():
    with pytest.raises(ValueError):
        MembershipRecord((0.2, 0.5, 0.1), MEMBER, "shadow", 0, 0)
    with pytest.raises(ValueError):
        MembershipRecord((0.5, 0.2, 0.1), 3, "shadow", 0, 0)
    with pytest.raises(ValueError):
        MembershipRecord((0.5, 0.2, 0.1), MEMBER, "elsewhere", 0, 0)


def test_dataset_counts_and_balance():
    recs = build_attack_dataset(UniformStub(), fake_clips(100), fake_clips(100))
    _, y = records_to_arrays(recs)
    assert len(recs) == 200 and y.sum() == 100


def test_dataset_contracts():
    with pytest.raises(ValueError):
        build_attack_dataset(UniformStub(), fake_clips(5), fake_clips(4))
    with pytest.raises(ValueError):
        build_attack_dataset(UniformStub(2), fake_clips(4, 4), fake_clips(4, 4))


def test_uniform_stub_no_signal():
    recs = build_attack_dataset(UniformStub(), fake_clips(20), fake_clips(20))
    x, y = records_to_arrays(recs)
    assert {tuple(r) for r in x[y == 1]} == {tuple(r) for r in x[y == 0]}


def test_overfit_model_separates_members(small_target, small_corpus, small_plan):
    model, _ = small_target
    ins, outs = small_plan.membership_pool("target", "attack_eval")
    recs = build_attack_dataset(model, small_corpus.select(ins), small_corpus.select(outs))
    x, y = records_to_arrays(recs)
    assert x[y == 1, 0].mean() > x[y == 0, 0].mean()


def test_attack_learns_signal():
    rng = np.random.default_rng(0)
    model = train_attack(synthetic_records(rng, 100), FAST_ATTACK)
    held = synthetic_records(rng, 100)
    x, y = records_to_arrays(held)
    th = select_threshold(model, synthetic_records(rng, 50))
    assert np.mean((model.score(x) >= th) == y) > 0.5


def test_attack_on_real_shadow_beats_chance(small_target, small_corpus, small_plan):
    model, _ = small_target
    pool = lambda name: [small_corpus.select(k) for k in small_plan.membership_pool("target", name)]
    attack = train_attack(build_attack_dataset(model, *pool("attack_train")), FAST_ATTACK)
    held = build_attack_dataset(model, *pool("attack_eval"))
    x, y = records_to_arrays(held)
    assert np.mean((attack.score(x) >= 0.5) == y) > 0.5


def test_shuffled_labels_near_chance():
    rng = np.random.default_rng(1)
    recs = synthetic_records(rng, 100)
    labels = rng.permutation([r.label for r in recs])
    shuffled = [MembershipRecord(r.feature, int(l), r.source, r.speaker_id, r.clip_id) for r, l in zip(recs, labels)]
    model = train_attack(shuffled, FAST_ATTACK)
    # labels independent of features on the evaluation side as well
    x, _ = records_to_arrays(synthetic_records(rng, 200))
    y = rng.permutation(np.r_[np.ones(200, int), np.zeros(200, int)])
    acc = np.mean((model.score(x) >= 0.5) == y)
    assert abs(acc - 0.5) <= 3 * np.sqrt(0.25 / len(y))


def test_duplicated_records_same_decision_function():
    rng = np.random.default_rng(2)
    recs = synthetic_records(rng, 40)
    a = train_attack(recs, FAST_ATTACK)
    b = train_attack(recs + recs, FAST_ATTACK)
    g = np.linspace(0, 1, 11)
    probe = np.array([sorted([u, v * (1 - u), 0.0], reverse=True) for u in g for v in g])
    np.testing.assert_allclose(a.score(probe), b.score(probe), atol=1e-5)


def test_train_attack_contracts():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        train_attack([], FAST_ATTACK)
    with pytest.raises(ValueError):
        train_attack(synthetic_records(rng, 5, source="target"), FAST_ATTACK)
    with pytest.raises(ValueError):
        train_attack(synthetic_records(rng, 5)[:-1], FAST_ATTACK)


def test_threshold_examples():
    assert best_threshold([0.9, 0.9, 0.1, 0.1], [1, 1, 0, 0]) == 0.5
    assert best_threshold([0.3] * 6, [1, 1, 1, 0, 0, 0]) == 0.5
    assert best_threshold([0.2, 0.4, 0.6, 0.8], [0, 0, 1, 1]) == 0.5
    with pytest.raises(ValueError):
        best_threshold([], [])


@given(scores=st.lists(st.floats(0, 1), min_size=2, max_size=40), data=st.data())
@settings(max_examples=50, deadline=None)
def test_threshold_is_optimal_on_grid(scores, data):
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
    s, y = np.array(scores), np.array(labels)
    t = best_threshold(s, y)
    best = max(np.mean((s >= g) == y) for g in np.arange(1001) / 1000)
    assert np.mean((s >= t) == y) == pytest.approx(best)
    assert round(t * 1000) == t * 1000


def test_metrics_arithmetic():
    m = AttackMetrics(tp=3, fp=1, tn=4, fn=2)
    assert (m.accuracy, m.precision, m.recall) == (pytest.approx(0.7), 0.75, 0.6)
    assert not m.degenerate


@given(tp=st.integers(0, 50), fp=st.integers(0, 50), tn=st.integers(0, 50), fn=st.integers(0, 50))
def test_metrics_invariants(tp, fp, tn, fn):
    m = AttackMetrics(tp, fp, tn, fn)
    n = tp + fp + tn + fn
    if n:
        assert m.accuracy == pytest.approx((tp + tn) / n)
    assert m.degenerate == (tp + fp == 0)
    assert m.precision == (tp / (tp + fp) if tp + fp else 0.0)
    assert 0 <= m.recall <= 1


def test_uniform_target_gives_chance():
    rng = np.random.default_rng(4)
    attack = train_attack(synthetic_records(rng, 50), FAST_ATTACK)
    m = evaluate_attack(attack, 0.5, UniformStub(), fake_clips(150), fake_clips(150))
    assert abs(m.accuracy - 0.5) <= 3 * np.sqrt(0.25 / 300)


def test_rank_constant_feature_chance_floor():
    rng = np.random.default_rng(5)
    attack = train_attack(synthetic_records(rng, 50), FAST_ATTACK)
    const = np.tile(RANK_FEATURE, (120, 1))
    for th in (0.0, 0.5, 1.0):
        m = metrics_from_features(attack, th, const, const)
        assert 0.45 <= m.accuracy <= 0.55


def test_csv_roundtrip(tmp_path):
    recs = synthetic_records(np.random.default_rng(6), 5)
    export_records_csv(recs, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "p1,p2,p3,label,source,speaker_id,clip_id"
    assert read_records_csv(tmp_path / "a.csv") == recs


def test_attack_checkpoint(tmp_path):
    rng = np.random.default_rng(7)
    attack = train_attack(synthetic_records(rng, 20), FAST_ATTACK)
    save_attack(attack, tmp_path, threshold=0.42)
    back, th = load_attack(tmp_path)
    assert th == 0.42
    x, _ = records_to_arrays(synthetic_records(rng, 5))
    np.testing.assert_array_equal(back.score(x), attack.score(x))
