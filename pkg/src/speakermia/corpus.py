"""Deterministic synthetic speaker corpus and the target/shadow membership splits.

Each speaker is a harmonic voice source (fundamental ``f0`` with per-frame jitter)
shaped by three formant resonators. Every clip is an utterance of 6-10 vowel-like
segments whose formants wander around the speaker's own, so clips of one speaker
share a voice but not content. All randomness flows from counter-based Philox
streams keyed by ``(master_seed, speaker_id, clip_id)``; the generation order does
not matter.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve, lfilter

SAMPLE_RATE = 16000
DURATION_S = 3.0
N_SAMPLES = int(SAMPLE_RATE * DURATION_S)
PEAK = 0.95
CONDITIONS = ("clean", "noisy")
# RT60 in seconds of the synthetic exponential-decay rooms
REVERB_PRESETS = {"none": None, "room_a": 0.3, "room_b": 0.7}
CORPUS_FORMAT_VERSION = 1

# cohort-dependent generator ranges; cohort plays the role of a speaker sex
_F0_RANGE = {0: (95.0, 150.0), 1: (165.0, 255.0)}
_TRACT_SCALE = {0: (0.92, 1.00), 1: (1.04, 1.12)}
_FORMANT_SPREAD = 0.05
_VOWEL_SPREAD = 0.35
_CHANNEL_TILT = (-0.6, 0.8)
_CLIP_TRACT_SPREAD = 0.10
_INTONATION = 3.0
_BASE_FORMANTS = (500.0, 1500.0, 2500.0)
_BANDWIDTHS = ((60.0, 110.0), (80.0, 150.0), (110.0, 220.0))


def _philox(*words) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(w) for w in words])))


def derive_seed(*words) -> int:
    """64-bit seed that is a pure function of the integer words."""
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: int
    f0: float
    formants: tuple  # ((center_hz, bandwidth_hz), ...) x 3
    jitter: float
    seed: int
    cohort: int = 0

    def __post_init__(self):
        if not 80.0 <= self.f0 <= 300.0:
            raise ValueError(f"f0 {self.f0} outside [80, 300] Hz")
        if len(self.formants) != 3:
            raise ValueError("need exactly 3 formants")
        centers = [c for c, _ in self.formants]
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise ValueError("formant centers must be strictly increasing")
        if not 0.0 <= self.jitter <= 0.05:
            raise ValueError(f"jitter {self.jitter} outside [0, 0.05]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["formants"] = [list(f) for f in self.formants]
        return d

    @classmethod
    def from_dict(cls, d) -> "SpeakerProfile":
        return cls(d["speaker_id"], d["f0"], tuple(tuple(f) for f in d["formants"]),
                   d["jitter"], d["seed"], d.get("cohort", 0))


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    speaker_id: int
    clip_id: int
    condition: str = "clean"

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 1 or len(s) != N_SAMPLES:
            raise ValueError(f"clip must hold exactly {N_SAMPLES} samples, got {s.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE}")
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1.0:
            raise ValueError("samples must be finite and within [-1, 1]")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def key(self) -> tuple:
        return (self.speaker_id, self.clip_id)


@dataclass(frozen=True)
class CorpusSpec:
    n_speakers: int = 20
    clips_per_speaker: int = 40
    duration_s: float = DURATION_S
    condition: str = "clean"
    noise_snr_db: float = 10.0
    reverb_preset: str = "none"
    master_seed: int = 7

    def __post_init__(self):
        if self.n_speakers < 6 or self.n_speakers % 2:
            raise ValueError("n_speakers must be even and >= 6")
        if self.clips_per_speaker < 8 or self.clips_per_speaker % 4:
            raise ValueError("clips_per_speaker must be a multiple of 4 and >= 8")
        if self.duration_s != DURATION_S:
            raise ValueError("clips are fixed at 3.0 s")
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.reverb_preset not in REVERB_PRESETS:
            raise ValueError(f"unknown reverb preset {self.reverb_preset!r}")
        if self.condition == "noisy" and not self.noise_snr_db > 0:
            raise ValueError("noise_snr_db must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "CorpusSpec":
        return cls(**d)


# ---------------------------------------------------------------------------
# speakers and clips


def make_speaker(master_seed: int, index: int, n_speakers=None) -> SpeakerProfile:
    if index < 0 or (n_speakers is not None and index >= n_speakers):
        raise ValueError(f"speaker index {index} out of range")
    rng = _philox(master_seed, 0, index)
    cohort = index % 2
    f0 = rng.uniform(*_F0_RANGE[cohort])
    scale = rng.uniform(*_TRACT_SCALE[cohort])
    formants = tuple(
        (float(base * scale * rng.uniform(1 - _FORMANT_SPREAD, 1 + _FORMANT_SPREAD)), float(rng.uniform(*bw)))
        for base, bw in zip(_BASE_FORMANTS, _BANDWIDTHS)
    )
    jitter = rng.uniform(0.005, 0.03)
    seed = int(rng.integers(0, 2**63))
    return SpeakerProfile(index, float(f0), formants, float(jitter), seed, cohort)


def clip_seed(master_seed: int, speaker_id: int, clip_id: int) -> int:
    return derive_seed(master_seed, 1, speaker_id, clip_id)


def glottal_source(profile: SpeakerProfile, rng: np.random.Generator, n=N_SAMPLES,
                   sample_rate=SAMPLE_RATE) -> np.ndarray:
    """Band-limited harmonic series at ``f0`` with per-10ms-frame jitter.

    Exactly periodic (period ``sample_rate / f0``) when the profile has zero jitter.
    Harmonic amplitudes fall as ``k ** -tilt`` with a per-clip tilt.
    """
    hop = sample_rate // 100
    phase0 = rng.uniform(0, 2 * np.pi)
    tilt = rng.uniform(0.8, 1.4)
    # utterance-level pitch register, scaled by the speaker's jitter
    f0 = profile.f0 * np.exp(_INTONATION * profile.jitter * np.clip(rng.standard_normal(), -2.5, 2.5))
    n_frames = n // hop + 2
    f_frames = f0 * (1.0 + profile.jitter * rng.standard_normal(n_frames))
    if profile.jitter > 0:
        f_inst = np.interp(np.arange(n), np.arange(n_frames) * hop, f_frames)
        theta = phase0 + 2 * np.pi * np.cumsum(f_inst) / sample_rate
    else:
        theta = phase0 + 2 * np.pi * f0 * np.arange(1, n + 1) / sample_rate
    n_harm = max(1, int(0.45 * sample_rate / (f0 * (1 + 4 * profile.jitter))))
    # sin(k t) by the Chebyshev recurrence, one multiply-add per harmonic
    two_cos = 2 * np.cos(theta)
    s_prev = np.zeros(n)
    s_cur = np.sin(theta)
    out = s_cur.copy()
    for k in range(2, n_harm + 1):
        s_prev, s_cur = s_cur, two_cos * s_cur - s_prev
        out += s_cur * k ** -tilt
    return out


def _resonate(x, center, bandwidth, sample_rate):
    r = np.exp(-np.pi * bandwidth / sample_rate)
    b1 = 2 * r * np.cos(2 * np.pi * center / sample_rate)
    b2 = -r * r
    return lfilter([1.0 - b1 - b2], [1.0, -b1, -b2], x)


def _segment_bounds(rng, n, sample_rate):
    n_seg = int(rng.integers(6, 11))
    lengths = rng.dirichlet(np.full(n_seg, 6.0)) * n
    edges = np.concatenate([[0], np.cumsum(lengths)]).astype(int)
    edges[-1] = n
    return [(edges[i], edges[i + 1]) for i in range(n_seg)]


def synthesize_clip(profile: SpeakerProfile, clip_seed: int, spec: CorpusSpec = None,
                    clip_id: int = 0) -> AudioClip:
    """Render one clean 3 s utterance of ``profile``; bit-identical per ``clip_seed``."""
    if spec is not None and spec.duration_s != DURATION_S:
        raise ValueError("clips are fixed at 3.0 s")
    sr = SAMPLE_RATE
    n = N_SAMPLES
    rng = _philox(clip_seed)
    source = glottal_source(profile, rng, n, sr)
    # per-clip vocal effort / articulation: a common shift of all formants
    tract = rng.uniform(1 - _CLIP_TRACT_SPREAD, 1 + _CLIP_TRACT_SPREAD)
    out = np.zeros(n)
    ramp = int(0.015 * sr)
    preroll = int(0.02 * sr)
    for start, stop in _segment_bounds(rng, n, sr):
        factors = tract * rng.uniform(1 - _VOWEL_SPREAD, 1 + _VOWEL_SPREAD, size=3)
        voiced = int((stop - start) * rng.uniform(0.7, 0.95))
        gain = rng.uniform(0.4, 1.0)
        lo = max(0, start - preroll)
        y = source[lo:start + voiced]
        for (center, bw), f in zip(sorted(profile.formants), factors):
            y = _resonate(y, min(center * f, 0.45 * sr), bw, sr)
        y = y[start - lo:]
        env = np.ones(len(y))
        r = min(ramp, len(y) // 2)
        if r > 0:
            w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            env[:r] = w
            env[-r:] = w[::-1]
        out[start:start + len(y)] += gain * env * y
    # per-clip channel coloration: first-order tilt, stands in for microphone/session
    out = lfilter([1.0, -rng.uniform(*_CHANNEL_TILT)], [1.0], out)
    return AudioClip(_peak_normalize(out), sr, profile.speaker_id, clip_id, "clean")


def _peak_normalize(x):
    peak = np.max(np.abs(x))
    if peak == 0:
        return x.astype(np.float32)
    return (x * (PEAK / peak)).astype(np.float32)


# ---------------------------------------------------------------------------
# degradation


@lru_cache(maxsize=None)
def impulse_response(preset: str, sample_rate=SAMPLE_RATE) -> np.ndarray:
    """Fixed exponential-decay room response: direct path plus a decaying noise tail."""
    rt60 = REVERB_PRESETS[preset]
    if rt60 is None:
        return np.ones(1)
    n = int(rt60 * sample_rate)
    rng = _philox(0x5245_5642, n)
    t = np.arange(n) / sample_rate
    tail = rng.standard_normal(n) * np.exp(-6.9 * t / rt60)
    tail[0] = 0.0
    h = 0.6 * tail / np.sqrt(np.sum(tail ** 2))
    h[0] = 1.0
    h.setflags(write=False)
    return h


def reverberate(samples, preset: str) -> np.ndarray:
    """Convolve with the preset's room response, truncating the tail to the input length."""
    x = np.asarray(samples, dtype=np.float64)
    if preset == "none":
        return x.copy()
    return fftconvolve(x, impulse_response(preset))[:len(x)]


def add_noise(signal, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise whose power is exactly ``power(signal) / 10**(snr_db/10)``."""
    s = np.asarray(signal, dtype=np.float64)
    noise = rng.standard_normal(len(s))
    target = np.mean(s ** 2) / 10 ** (snr_db / 10)
    noise *= np.sqrt(target / np.mean(noise ** 2))
    return s + noise


def degrade_clip(clip: AudioClip, snr_db: float, reverb_preset: str = "none",
                 seed: int = None) -> AudioClip:
    """Far-field stand-in: room reverb, additive white noise at ``snr_db``, re-normalize.

    ``snr_db=float('inf')`` skips the noise. The noise stream is keyed by ``seed``
    (default: derived from the clip's speaker and clip ids).
    """
    if clip.condition != "clean":
        raise ValueError("degrade_clip expects a clean clip")
    if not snr_db > 0:
        raise ValueError("snr_db must be > 0")
    if reverb_preset not in REVERB_PRESETS:
        raise ValueError(f"unknown reverb preset {reverb_preset!r}")
    if reverb_preset == "none" and np.isinf(snr_db):
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.speaker_id, clip.clip_id, "noisy")
    if seed is None:
        seed = derive_seed(2, clip.speaker_id, clip.clip_id)
    y = reverberate(clip.samples, reverb_preset)
    if np.isfinite(snr_db):
        y = add_noise(y, snr_db, _philox(seed))
    return AudioClip(_peak_normalize(y), clip.sample_rate, clip.speaker_id, clip.clip_id, "noisy")


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True, eq=False)
class Corpus:
    spec: CorpusSpec
    profiles: tuple
    clips: dict  # (speaker_id, clip_id) -> AudioClip

    def __len__(self):
        return len(self.clips)

    @property
    def speaker_ids(self) -> list:
        return [p.speaker_id for p in self.profiles]

    def clip(self, speaker_id, clip_id) -> AudioClip:
        return self.clips[(speaker_id, clip_id)]

    def select(self, keys) -> list:
        return [self.clips[k] for k in keys]

    def digest(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.clips):
            h.update(np.asarray(self.clips[key].samples, dtype="<f4").tobytes())
        return h.hexdigest()


def build_corpus(spec: CorpusSpec) -> Corpus:
    """``n_speakers x clips_per_speaker`` clips; memoized per spec within a process."""
    return _build_corpus(spec)


@lru_cache(maxsize=4)
def _build_corpus(spec: CorpusSpec) -> Corpus:
    profiles = tuple(make_speaker(spec.master_seed, i, spec.n_speakers) for i in range(spec.n_speakers))
    clips = {}
    for p in profiles:
        for c in range(spec.clips_per_speaker):
            clip = synthesize_clip(p, clip_seed(spec.master_seed, p.speaker_id, c), spec, clip_id=c)
            if spec.condition == "noisy":
                clip = degrade_clip(clip, spec.noise_snr_db, spec.reverb_preset,
                                    seed=derive_seed(spec.master_seed, 2, p.speaker_id, c))
            clips[(p.speaker_id, c)] = clip
    return Corpus(spec, profiles, clips)


# ---------------------------------------------------------------------------
# splits

BUCKETS = ("in_train", "in_eval", "out_attack_train", "out_attack_eval")
COHORTS = ("target", "shadow")
POOLS = ("attack_train", "attack_validation", "attack_eval")


@dataclass(frozen=True)
class SplitPlan:
    """Speaker cohorts and per-speaker clip buckets.

    Membership pools are balanced views over the buckets: members are drawn from
    ``in_train`` (clips the cohort's model trains on), nonmembers from the two
    ``out_*`` buckets. ``attack_train`` and ``attack_validation`` are used on the
    shadow cohort, ``attack_eval`` on the target cohort.
    """

    target_speakers: tuple
    shadow_speakers: tuple
    buckets: dict = field(hash=False)  # speaker_id -> {bucket: tuple of clip ids}
    split_seed: int = 0

    def speakers(self, cohort) -> tuple:
        if cohort not in COHORTS:
            raise ValueError(f"unknown cohort {cohort!r}")
        return self.target_speakers if cohort == "target" else self.shadow_speakers

    def keys(self, cohort, bucket) -> list:
        return [(s, c) for s in self.speakers(cohort) for c in self.buckets[s][bucket]]

    def membership_pool(self, cohort, pool) -> tuple:
        """``(member_keys, nonmember_keys)`` of equal length."""
        members, nonmembers = [], []
        for s in self.speakers(cohort):
            b = self.buckets[s]
            m = min(len(b["in_train"]), len(b["out_attack_train"]))
            if pool == "attack_train":
                ins, outs = b["in_train"][:m], b["out_attack_train"][:m]
            elif pool == "attack_validation":
                v = min(len(b["in_train"]) - m, len(b["out_attack_eval"]))
                ins, outs = b["in_train"][m:m + v], b["out_attack_eval"][:v]
            elif pool == "attack_eval":
                e = min(len(b["in_train"]), len(b["out_attack_eval"]))
                ins, outs = b["in_train"][:e], b["out_attack_eval"][:e]
            else:
                raise ValueError(f"unknown pool {pool!r}")
            members += [(s, c) for c in ins]
            nonmembers += [(s, c) for c in outs]
        return members, nonmembers

    def check(self, n_clips=None) -> None:
        """Raise if any hygiene invariant is violated."""
        t, s = set(self.target_speakers), set(self.shadow_speakers)
        if t & s:
            raise AssertionError(f"speakers in both cohorts: {sorted(t & s)}")
        if set(self.buckets) != t | s:
            raise AssertionError("bucket table does not cover exactly the cohort speakers")
        for spk, b in self.buckets.items():
            seen = [c for name in BUCKETS for c in b[name]]
            if len(seen) != len(set(seen)):
                raise AssertionError(f"speaker {spk}: a clip sits in two buckets")
            if n_clips is not None and sorted(seen) != list(range(n_clips)):
                raise AssertionError(f"speaker {spk}: buckets do not cover every clip")
        for cohort in COHORTS:
            for pool in POOLS:
                ins, outs = self.membership_pool(cohort, pool)
                if len(ins) != len(outs):
                    raise AssertionError(f"{cohort}/{pool} unbalanced")
                if set(ins) & set(outs):
                    raise AssertionError(f"{cohort}/{pool}: clip labelled both in and out")

    def to_dict(self) -> dict:
        return {
            "split_seed": self.split_seed,
            "target_speakers": list(self.target_speakers),
            "shadow_speakers": list(self.shadow_speakers),
            "buckets": {str(k): {b: list(v[b]) for b in BUCKETS} for k, v in self.buckets.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "SplitPlan":
        buckets = {int(k): {b: tuple(v[b]) for b in BUCKETS} for k, v in d["buckets"].items()}
        return cls(tuple(d["target_speakers"]), tuple(d["shadow_speakers"]), buckets,
                   d.get("split_seed", 0))


def plan_splits(corpus: Corpus, split_seed: int = 0) -> SplitPlan:
    """Halve each speaker cohort into target/shadow; split every speaker's clips.

    Per speaker: half the clips are "in" (80% ``in_train``, 20% ``in_eval``), half
    are "out", split evenly into ``out_attack_train`` and ``out_attack_eval``.
    """
    n_clips = corpus.spec.clips_per_speaker
    n_in = n_clips // 2
    n_train = int(round(0.8 * n_in))
    n_train = min(max(n_train, 1), n_in - 1)
    n_out = n_clips // 4
    if n_in < 2 or n_out < 1:
        raise ValueError("corpus too small for exact splits")

    target, shadow = [], []
    groups = {}
    for p in corpus.profiles:
        groups.setdefault(p.cohort, []).append(p.speaker_id)
    for i, cohort in enumerate(sorted(groups)):
        ids = sorted(groups[cohort])
        order = _philox(split_seed, 3, cohort).permutation(len(ids))
        ids = [ids[j] for j in order]
        half = len(ids) // 2 + (len(ids) % 2 if i % 2 == 0 else 0)
        target += ids[:half]
        shadow += ids[half:]
    if len(target) < 3 or len(shadow) < 3:
        raise ValueError("each cohort needs at least 3 speakers")

    buckets = {}
    for spk in corpus.speaker_ids:
        order = [int(c) for c in _philox(split_seed, 4, spk).permutation(n_clips)]
        buckets[spk] = {
            "in_train": tuple(order[:n_train]),
            "in_eval": tuple(order[n_train:n_in]),
            "out_attack_train": tuple(order[n_in:n_in + n_out]),
            "out_attack_eval": tuple(order[n_in + n_out:]),
        }
    plan = SplitPlan(tuple(sorted(target)), tuple(sorted(shadow)), buckets, split_seed)
    plan.check(n_clips)
    return plan


# ---------------------------------------------------------------------------
# persistence


def save_corpus(corpus: Corpus, path, plan: SplitPlan = None) -> None:
    os.makedirs(path, exist_ok=True)
    for (s, c), clip in sorted(corpus.clips.items()):
        np.asarray(clip.samples, dtype="<f4").tofile(os.path.join(path, f"spk{s}_clip{c}.f32"))
    manifest = {
        "format_version": CORPUS_FORMAT_VERSION,
        "spec": corpus.spec.to_dict(),
        "profiles": [p.to_dict() for p in corpus.profiles],
        "split_plan": plan.to_dict() if plan is not None else None,
        "digest": corpus.digest(),
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_corpus(path) -> tuple:
    """Returns ``(corpus, split_plan_or_None)``; verifies the stored digest."""
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != CORPUS_FORMAT_VERSION:
        raise ValueError(f"unsupported corpus format {manifest.get('format_version')}")
    spec = CorpusSpec.from_dict(manifest["spec"])
    profiles = tuple(SpeakerProfile.from_dict(p) for p in manifest["profiles"])
    clips = {}
    for p in profiles:
        for c in range(spec.clips_per_speaker):
            data = np.fromfile(os.path.join(path, f"spk{p.speaker_id}_clip{c}.f32"), dtype="<f4")
            clips[(p.speaker_id, c)] = AudioClip(data, SAMPLE_RATE, p.speaker_id, c, spec.condition)
    corpus = Corpus(spec, profiles, clips)
    if manifest.get("digest") and corpus.digest() != manifest["digest"]:
        raise ValueError("corpus digest mismatch")
    plan = SplitPlan.from_dict(manifest["split_plan"]) if manifest.get("split_plan") else None
    return corpus, plan
