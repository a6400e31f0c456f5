"""STFT magnitude features and train-split standardization."""

from __future__ import annotations

import hashlib
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import SAMPLE_RATE, AudioClip

WINDOW_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class Spectrogram:
    values: np.ndarray  # frames x bins, float32, non-negative unless standardized
    n_fft: int = N_FFT
    window_length: int = WINDOW_LENGTH
    hop_length: int = HOP_LENGTH
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureStats:
    mean: np.ndarray
    var: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["var"], dtype=np.float64))


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def n_frames_for(length, window_length=WINDOW_LENGTH, hop_length=HOP_LENGTH) -> int:
    return 1 + (length - window_length) // hop_length


def stft_magnitude(clip, window_length=WINDOW_LENGTH, hop_length=HOP_LENGTH, n_fft=N_FFT,
                   sample_rate=SAMPLE_RATE) -> Spectrogram:
    """Magnitude of the one-sided DFT of Hann-windowed, zero-padded frames.

    ``clip`` may be an :class:`AudioClip` or a bare 1-D sample array.
    """
    if isinstance(clip, AudioClip):
        x, sample_rate = clip.samples, clip.sample_rate
    else:
        x = np.asarray(clip)
    if window_length > n_fft or hop_length > window_length or hop_length < 1:
        raise ValueError("need hop_length <= window_length <= n_fft")
    if len(x) < window_length:
        raise ValueError(f"clip of {len(x)} samples is shorter than one window")
    frames = sliding_window_view(np.asarray(x, dtype=np.float64), window_length)[::hop_length]
    mag = np.abs(np.fft.rfft(frames * hann(window_length), n=n_fft, axis=1))
    return Spectrogram(mag.astype(np.float32), n_fft, window_length, hop_length, sample_rate)


def compute_feature_stats(spectrograms) -> FeatureStats:
    """Per-bin mean/variance of ``log(1 + x)`` over every frame of the given spectrograms."""
    logs = [np.log1p(np.asarray(s.values if isinstance(s, Spectrogram) else s, dtype=np.float64))
            for s in spectrograms]
    if not logs:
        raise ValueError("no spectrograms to compute statistics from")
    stacked = np.concatenate(logs, axis=0)
    return FeatureStats(stacked.mean(axis=0), stacked.var(axis=0))


def log_compress_and_standardize(spec, stats: FeatureStats) -> Spectrogram:
    """``(log(1 + x) - mean) / std`` per bin; bins with variance under 1e-6 are only centered."""
    values = spec.values if isinstance(spec, Spectrogram) else np.asarray(spec)
    if values.shape[-1] != stats.n_bins:
        raise ValueError(f"spectrogram has {values.shape[-1]} bins, stats have {stats.n_bins}")
    scale = np.where(stats.var < VARIANCE_FLOOR, 1.0, np.sqrt(stats.var))
    out = ((np.log1p(values.astype(np.float64)) - stats.mean) / scale).astype(np.float32)
    if isinstance(spec, Spectrogram):
        return Spectrogram(out, spec.n_fft, spec.window_length, spec.hop_length, spec.sample_rate)
    return out


# ---------------------------------------------------------------------------
# memoized clip -> log spectrogram, shared by training and serving code paths

_CACHE: "OrderedDict[bytes, np.ndarray]" = OrderedDict()
_CACHE_LIMIT = 2400


def _clip_digest(clip: AudioClip) -> bytes:
    return hashlib.blake2b(np.ascontiguousarray(clip.samples).tobytes(), digest_size=16).digest()


def log_spectrogram(clip: AudioClip) -> np.ndarray:
    """``log(1 + |STFT|)`` at the default parameters, ``frames x bins``; memoized by content."""
    key = _clip_digest(clip)
    hit = _CACHE.get(key)
    if hit is not None:
        _CACHE.move_to_end(key)
        return hit
    values = np.log1p(stft_magnitude(clip).values.astype(np.float64)).astype(np.float32)
    values.setflags(write=False)
    _CACHE[key] = values
    if len(_CACHE) > _CACHE_LIMIT:
        _CACHE.popitem(last=False)
    return values


def stats_from_logs(logs) -> FeatureStats:
    stacked = np.concatenate([np.asarray(l, dtype=np.float64) for l in logs], axis=0)
    return FeatureStats(stacked.mean(axis=0), stacked.var(axis=0))


def standardize_logs(logs, stats: FeatureStats) -> np.ndarray:
    """Stack already log-compressed spectrograms into a ``(N, frames, bins)`` model input."""
    scale = np.where(stats.var < VARIANCE_FLOOR, 1.0, np.sqrt(stats.var)).astype(np.float32)
    mean = stats.mean.astype(np.float32)
    return (np.stack(logs) - mean) / scale


def clip_features(clips, stats: FeatureStats) -> np.ndarray:
    return standardize_logs([log_spectrogram(c) for c in clips], stats)


# ---------------------------------------------------------------------------
# optional cache on disk


def save_spectrograms(specs: dict, path) -> None:
    """``specs`` maps ``(speaker_id, clip_id)`` to a Spectrogram; row-major float32 files."""
    os.makedirs(path, exist_ok=True)
    for (s, c), spec in specs.items():
        np.asarray(spec.values, dtype="<f4").tofile(os.path.join(path, f"spk{s}_clip{c}.spec.f32"))


def load_spectrogram(path, speaker_id, clip_id, n_bins=N_FFT // 2 + 1) -> Spectrogram:
    data = np.fromfile(os.path.join(path, f"spk{speaker_id}_clip{clip_id}.spec.f32"), dtype="<f4")
    return Spectrogram(data.reshape(-1, n_bins))
