import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import welch

from speakermia.corpus import (BUCKETS, COHORTS, N_SAMPLES, POOLS, SAMPLE_RATE, AudioClip, CorpusSpec,
                               SpeakerProfile, add_noise, build_corpus, clip_seed, degrade_clip,
                               glottal_source, load_corpus, make_speaker, plan_splits, reverberate,
                               save_corpus, synthesize_clip, _philox)
from speakermia.features import stft_magnitude


def test_make_speaker_deterministic():
    assert make_speaker(7, 0) == make_speaker(7, 0)


def test_make_speaker_distinct():
    a, b = make_speaker(7, 0), make_speaker(7, 1)
    assert a.f0 != b.f0 or a.formants != b.formants


@given(seed=st.integers(0, 2**32), index=st.integers(0, 200))
@settings(max_examples=60, deadline=None)
def test_make_speaker_ranges(seed, index):
    p = make_speaker(seed, index)
    assert 80 <= p.f0 <= 300
    centers = [c for c, _ in p.formants]
    assert len(centers) == 3 and all(a < b for a, b in zip(centers, centers[1:]))
    assert 0 <= p.jitter <= 0.05


def test_make_speaker_other_master_seed_in_range():
    for p in (make_speaker(7, 0), make_speaker(8, 0)):
        assert 80 <= p.f0 <= 300


def test_profile_validation():
    with pytest.raises(ValueError):
        SpeakerProfile(0, 50.0, ((500, 80), (1500, 100), (2500, 150)), 0.01, 1)
    with pytest.raises(ValueError):
        SpeakerProfile(0, 120.0, ((1500, 80), (500, 100), (2500, 150)), 0.01, 1)
    with pytest.raises(ValueError):
        SpeakerProfile(0, 120.0, ((500, 80), (1500, 100), (2500, 150)), 0.08, 1)


def test_clip_shape_and_peak():
    clip = synthesize_clip(make_speaker(7, 3), 11)
    assert clip.samples.shape == (N_SAMPLES,) and clip.samples.dtype == np.float32
    assert clip.sample_rate == SAMPLE_RATE
    assert np.max(np.abs(clip.samples)) <= 1.0


def test_clip_deterministic():
    p = make_speaker(7, 2)
    a, b = synthesize_clip(p, 99), synthesize_clip(p, 99)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_clip_is_immutable():
    clip = synthesize_clip(make_speaker(7, 2), 1)
    with pytest.raises(ValueError):
        clip.samples[0] = 0.5


def test_audio_clip_contract():
    with pytest.raises(ValueError):
        AudioClip(np.zeros(N_SAMPLES - 1, np.float32), SAMPLE_RATE, 0, 0)
    with pytest.raises(ValueError):
        AudioClip(np.full(N_SAMPLES, 1.5, np.float32), SAMPLE_RATE, 0, 0)
    with pytest.raises(ValueError):
        AudioClip(np.zeros(N_SAMPLES, np.float32), 8000, 0, 0)


def test_f0_peak_within_two_bins():
    # first formant placed well above the band so the fundamental dominates 0-400 Hz
    profile = SpeakerProfile(0, 150.0, ((700.0, 90.0), (1500.0, 120.0), (2600.0, 160.0)), 0.01, 5)
    clip = synthesize_clip(profile, 3)
    freqs, psd = welch(clip.samples.astype(np.float64), fs=SAMPLE_RATE, nperseg=512, window="hann")
    band = (freqs > 0) & (freqs <= 400)
    peak_hz = freqs[band][np.argmax(psd[band])]
    bin_hz = SAMPLE_RATE / 512
    assert abs(peak_hz - 150.0) <= 2 * bin_hz


def test_zero_jitter_source_is_periodic():
    f0 = 160.0
    profile = SpeakerProfile(0, f0, ((500, 80), (1500, 100), (2500, 150)), 0.0, 1)
    src = glottal_source(profile, _philox(5))
    x = src - src.mean()
    ac = np.correlate(x[:8000], x[:16000], mode="valid")[:400]
    lag = 40 + np.argmax(ac[40:400])
    assert abs(lag - SAMPLE_RATE / f0) <= 1
    period = SAMPLE_RATE / f0
    assert period == int(period)
    np.testing.assert_allclose(src[int(period):], src[:-int(period)], atol=1e-6)


def test_degrade_identity_case():
    clip = synthesize_clip(make_speaker(7, 1), 4)
    out = degrade_clip(clip, float("inf"), "none")
    np.testing.assert_array_equal(out.samples, clip.samples)
    assert out.condition == "noisy"


def test_add_noise_exact_snr(rng):
    clip = synthesize_clip(make_speaker(7, 1), 4)
    s = reverberate(clip.samples, "room_a")
    noisy = add_noise(s, 20.0, rng)
    snr = 10 * np.log10(np.mean(s ** 2) / np.mean((noisy - s) ** 2))
    assert abs(snr - 20.0) <= 0.5


def test_degrade_deterministic_and_guarded():
    clip = synthesize_clip(make_speaker(7, 1), 4)
    a = degrade_clip(clip, 10.0, "room_b", seed=3)
    b = degrade_clip(clip, 10.0, "room_b", seed=3)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert len(a.samples) == len(clip.samples)
    with pytest.raises(ValueError):
        degrade_clip(clip, 0.0)
    with pytest.raises(ValueError):
        degrade_clip(a, 10.0)


def test_build_corpus_count_and_digest(small_spec, small_corpus):
    assert len(small_corpus) == small_spec.n_speakers * small_spec.clips_per_speaker
    from speakermia.corpus import _build_corpus
    _build_corpus.cache_clear()
    assert build_corpus(small_spec).digest() == small_corpus.digest()


def test_default_corpus_count():
    spec = CorpusSpec()
    assert spec.n_speakers * spec.clips_per_speaker == 800


def test_noisy_corpus_differs_from_clean(small_spec, small_corpus):
    noisy = build_corpus(dataclasses.replace(small_spec, condition="noisy", reverb_preset="room_a"))
    for key, clip in noisy.clips.items():
        assert clip.condition == "noisy"
        assert not np.array_equal(clip.samples, small_corpus.clips[key].samples)


def test_spec_validation():
    with pytest.raises(ValueError):
        CorpusSpec(n_speakers=7)
    with pytest.raises(ValueError):
        CorpusSpec(clips_per_speaker=10)


def test_default_split_sizes():
    # bucket arithmetic only needs the profiles, so a fake corpus with the default spec suffices
    spec = CorpusSpec()
    profiles = tuple(make_speaker(spec.master_seed, i) for i in range(spec.n_speakers))
    corpus = type("C", (), {"spec": spec, "profiles": profiles,
                            "speaker_ids": [p.speaker_id for p in profiles]})()
    plan = plan_splits(corpus, 0)
    assert len(plan.target_speakers) == 10 and len(plan.shadow_speakers) == 10
    assert not set(plan.target_speakers) & set(plan.shadow_speakers)
    for b in plan.buckets.values():
        assert [len(b[k]) for k in BUCKETS] == [16, 4, 10, 10]
    assert plan == plan_splits(corpus, 0)
    assert plan.buckets == plan_splits(corpus, 0).buckets


def test_split_hygiene(small_corpus, small_plan):
    small_plan.check(small_corpus.spec.clips_per_speaker)
    for cohort in COHORTS:
        for pool in POOLS:
            ins, outs = small_plan.membership_pool(cohort, pool)
            assert len(ins) == len(outs) > 0
            assert set(ins) <= set(small_plan.keys(cohort, "in_train"))
            assert not set(outs) & set(small_plan.keys(cohort, "in_train"))


@given(n_half=st.integers(3, 8), clips=st.sampled_from([8, 12, 16, 40]), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_split_hygiene_property(n_half, clips, seed):
    spec = CorpusSpec(n_speakers=2 * n_half, clips_per_speaker=clips)
    profiles = tuple(make_speaker(spec.master_seed, i) for i in range(spec.n_speakers))
    corpus = type("C", (), {"spec": spec, "profiles": profiles,
                            "speaker_ids": [p.speaker_id for p in profiles]})()
    plan = plan_splits(corpus, seed)
    plan.check(clips)
    assert sorted(plan.target_speakers + plan.shadow_speakers) == list(range(spec.n_speakers))
    for cohort in COHORTS:
        seen = set()
        for bucket in BUCKETS:
            keys = set(plan.keys(cohort, bucket))
            assert not keys & seen
            seen |= keys


def test_corpus_is_learnable(small_corpus, small_plan):
    # nearest centroid on mean log spectra beats chance
    def mean_spec(clip):
        return np.log1p(stft_magnitude(clip).values).mean(axis=0)

    train = small_corpus.select(small_plan.keys("target", "in_train") + small_plan.keys("shadow", "in_train"))
    test = small_corpus.select(small_plan.keys("target", "out_attack_eval") + small_plan.keys("shadow", "out_attack_eval"))
    spk = sorted({c.speaker_id for c in train})
    cent = np.stack([np.mean([mean_spec(c) for c in train if c.speaker_id == s], axis=0) for s in spk])
    hits = [spk[int(np.argmin(np.sum((cent - mean_spec(c)) ** 2, axis=1)))] == c.speaker_id for c in test]
    assert np.mean(hits) > 1 / len(spk)


def test_save_load_roundtrip(tmp_path, small_corpus, small_plan):
    save_corpus(small_corpus, tmp_path, small_plan)
    assert (tmp_path / "spk0_clip0.f32").stat().st_size == 4 * N_SAMPLES
    corpus, plan = load_corpus(tmp_path)
    assert corpus.digest() == small_corpus.digest()
    assert plan.buckets == small_plan.buckets
    assert plan.target_speakers == small_plan.target_speakers


def test_load_detects_tampering(tmp_path, small_corpus):
    save_corpus(small_corpus, tmp_path)
    data = np.fromfile(tmp_path / "spk1_clip2.f32", dtype="<f4")
    data[100] = 0.123
    data.tofile(tmp_path / "spk1_clip2.f32")
    with pytest.raises(ValueError):
        load_corpus(tmp_path)


def test_clip_seed_order_independent():
    assert clip_seed(7, 3, 5) == clip_seed(7, 3, 5) != clip_seed(7, 5, 3)
