"""Target and shadow speaker-identification models."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .corpus import AudioClip
from .features import FeatureStats, clip_features, log_spectrogram, standardize_logs, stats_from_logs
from .nncore import ParamSet, TrainConfig, sid_architecture, softmax_t

DEFAULT_ARCH = {"channels": (32, 64, 128), "kernel": 7, "stride": 2, "pool": 2, "hidden": 256}


@dataclass
class SidModel:
    params: ParamSet
    class_map: tuple  # class index -> speaker_id
    feature_stats: FeatureStats
    serving_temperature: float = 1.0
    defense: dict = field(default_factory=lambda: {"kind": "none"})
    train_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.class_map)) != len(self.class_map):
            raise ValueError("class_map must be a bijection")
        if self.params.arch.n_outputs != len(self.class_map):
            raise ValueError("output layer does not match class_map")

    @property
    def n_classes(self) -> int:
        return len(self.class_map)

    def class_of(self, speaker_id) -> int:
        try:
            return self.class_map.index(speaker_id)
        except ValueError:
            raise KeyError(f"speaker {speaker_id} is not enrolled in this model") from None

    def features(self, clips) -> np.ndarray:
        if self.feature_stats.n_bins != self.params.arch.n_inputs:
            raise ValueError("feature statistics do not match the model input")
        return clip_features(clips, self.feature_stats)

    def logits(self, clips) -> np.ndarray:
        return nncore.predict(self.params, self.features(clips))

    def predict_proba(self, clips, temperature=None) -> np.ndarray:
        """Posterior vectors, one row per clip, at the serving temperature."""
        t = self.serving_temperature if temperature is None else temperature
        return softmax_t(self.logits(clips).astype(np.float64), t)


@dataclass
class TrainReport:
    epochs: list
    train_acc: float
    eval_acc: float
    wall_seconds: float
    seeds: dict

    @property
    def gap(self) -> float:
        return self.train_acc - self.eval_acc

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "train_acc": self.train_acc, "eval_acc": self.eval_acc,
                "wall_seconds": self.wall_seconds, "seeds": self.seeds}


@dataclass
class SidData:
    """Standardized arrays for one cohort; statistics come from the training clips only."""

    class_map: tuple
    stats: FeatureStats
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray

    def encode(self, clips) -> np.ndarray:
        return clip_features(clips, self.stats)


def prepare_sid_data(train_clips, eval_clips=()) -> SidData:
    if not train_clips:
        raise ValueError("empty training split")
    class_map = tuple(sorted({c.speaker_id for c in train_clips}))
    index = {s: i for i, s in enumerate(class_map)}
    for c in eval_clips:
        if c.speaker_id not in index:
            raise ValueError(f"eval clip from speaker {c.speaker_id} outside the training cohort")
    logs = [log_spectrogram(c) for c in train_clips]
    stats = stats_from_logs(logs)
    x_train = standardize_logs(logs, stats)
    y_train = np.array([index[c.speaker_id] for c in train_clips])
    x_eval = clip_features(eval_clips, stats) if eval_clips else np.zeros((0,) + x_train.shape[1:], np.float32)
    y_eval = np.array([index[c.speaker_id] for c in eval_clips], dtype=np.int64)
    return SidData(class_map, stats, x_train, y_train, x_eval, y_eval)


def build_arch(n_bins, n_classes, arch_options=None):
    opts = {**DEFAULT_ARCH, **(arch_options or {})}
    return sid_architecture(n_bins, n_classes, tuple(opts["channels"]), opts["kernel"],
                            opts["stride"], opts["pool"], opts["hidden"])


def init_sid_params(data: SidData, arch_options=None, init_seed=0) -> ParamSet:
    return ParamSet.init(build_arch(data.x_train.shape[2], len(data.class_map), arch_options), init_seed)


def fit_sid(data: SidData, config: TrainConfig, *, arch_options=None, init_seed=None,
            temperature=1.0, y=None, loss_kind="ce_hard", hook=None, early_stop=True, params=None):
    """Train on prepared arrays; returns ``(params, TrainReport)``.

    ``params`` may be a ParamSet from ``init_sid_params`` (it is trained in place).
    """
    counts = np.bincount(data.y_train, minlength=len(data.class_map))
    if np.any(counts == 0):
        raise ValueError("a class has no training clips")
    init_seed = config.seed if init_seed is None else init_seed
    if params is None:
        params = init_sid_params(data, arch_options, init_seed)
    targets = data.y_train if y is None else y

    def eval_fn(p):
        if len(data.x_eval) == 0:
            return {}
        return {"eval_acc": nncore.accuracy(nncore.predict(p, data.x_eval), data.y_eval)}

    t0 = time.perf_counter()
    history = nncore.fit(params, data.x_train, targets, config, loss_kind=loss_kind,
                         temperature=temperature, acc_labels=data.y_train, hook=hook,
                         eval_fn=eval_fn, early_stop=early_stop)
    wall = time.perf_counter() - t0
    last = history[-1] if history else {}
    report = TrainReport(history, last.get("train_acc", float("nan")), last.get("eval_acc", float("nan")),
                         wall, {"init_seed": init_seed, "train_seed": config.seed})
    return params, report


def train_sid(train_clips, eval_clips, config: TrainConfig, *, arch_options=None, init_seed=None,
              temperature=1.0):
    """Hard-label cross-entropy (+ ``l2_alpha`` ridge) until the early-stop train accuracy.

    Returns ``(SidModel, TrainReport)``.
    """
    data = prepare_sid_data(train_clips, eval_clips)
    params, report = fit_sid(data, config, arch_options=arch_options, init_seed=init_seed,
                             temperature=temperature)
    model = SidModel(params, data.class_map, data.stats, 1.0, {"kind": "none"}, config.to_dict())
    return model, report


def predict_posteriors(model: SidModel, clip: AudioClip) -> np.ndarray:
    if not isinstance(clip, AudioClip):
        clip = AudioClip(np.asarray(clip), 16000, -1, -1)
    return model.predict_proba([clip])[0]


def evaluate_sid(model, clips, posteriors=None) -> float:
    """Fraction of clips whose top posterior class is the speaker's class.

    ``posteriors`` may supply precomputed outputs (any array whose row argmax names the
    predicted class); otherwise ``model.predict_proba`` is queried.
    """
    clips = list(clips)
    if not clips:
        raise ValueError("cannot evaluate on an empty clip set")
    truth = np.array([model.class_of(c.speaker_id) for c in clips])
    if posteriors is None:
        posteriors = model.predict_proba(clips)
    return float(np.mean(np.asarray(posteriors).argmax(axis=1) == truth))


# ---------------------------------------------------------------------------
# checkpoints


def save_sid(model: SidModel, path) -> None:
    nncore.save_params(model.params, path, extra={
        "kind": "sid",
        "n_classes": model.n_classes,
        "serving_temperature": model.serving_temperature,
        "defense": model.defense,
        "train_config": model.train_config,
    })
    with open(os.path.join(path, "class_map.json"), "w") as fh:
        json.dump({"classes": list(model.class_map)}, fh)
    with open(os.path.join(path, "feature_stats.json"), "w") as fh:
        json.dump(model.feature_stats.to_dict(), fh)


def load_sid(path) -> SidModel:
    params, manifest = nncore.load_params(path)
    with open(os.path.join(path, "class_map.json")) as fh:
        class_map = tuple(json.load(fh)["classes"])
    with open(os.path.join(path, "feature_stats.json")) as fh:
        stats = FeatureStats.from_dict(json.load(fh))
    return SidModel(params, class_map, stats, manifest.get("serving_temperature", 1.0),
                    manifest.get("defense", {"kind": "none"}), manifest.get("train_config", {}))
