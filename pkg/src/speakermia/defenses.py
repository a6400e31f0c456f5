"""Target-side defenses: adversarial regularization, obfuscation, distillation, model key."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nncore
from .attack import attack_architecture
from .corpus import PEAK, AudioClip, derive_seed
from .features import FeatureStats, VARIANCE_FLOOR, log_spectrogram
from .nncore import OptimizerState, ParamSet, TrainConfig, mlp_architecture, sigmoid, softmax_t
from .obfuscation import ObfuscatedOutput, ObfuscationConfig, obfuscate  # noqa: F401 (re-export)
from .sid import SidModel, fit_sid, init_sid_params, load_sid, prepare_sid_data, save_sid, train_sid

# ---------------------------------------------------------------------------
# adversarial regularization


@dataclass(frozen=True)
class AdvRegConfig:
    privacy_lambda: float = 1.0
    inner_attack_steps: int = 5
    reference_fraction: float = 0.2
    inference_lr: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if self.privacy_lambda < 0:
            raise ValueError("privacy_lambda must be >= 0")
        if not 0 < self.reference_fraction <= 0.5:
            raise ValueError("reference_fraction must be in (0, 0.5]")
        if self.inner_attack_steps < 1:
            raise ValueError("inner_attack_steps must be >= 1")

    def reference_count(self, n_train_per_speaker: int) -> int:
        """Reference clips per speaker so that they make up ``reference_fraction`` of the
        defender's data (training plus reference)."""
        f = self.reference_fraction
        return max(1, int(round(f / (1 - f) * n_train_per_speaker)))


def top3_backward(posteriors, d_features):
    """Scatter a gradient on the sorted top-3 feature back onto the posterior vector."""
    order = np.argsort(-posteriors, axis=1, kind="stable")[:, :3]
    dp = np.zeros_like(posteriors)
    np.put_along_axis(dp, order, d_features, axis=1)
    return dp


def softmax_backward(p, dp):
    return p * (dp - np.sum(p * dp, axis=1, keepdims=True))


class InferenceGame:
    """Inference head ``h`` and the classifier-side gain term of the min-max game.

    ``h`` sees sorted top-3 posteriors; it is trained to tell training-set members
    from a held-out reference set. The classifier pays ``lambda * mean log h(member)``.
    """

    def __init__(self, x_ref, config: AdvRegConfig, predict_fn, y_train=None):
        self.config = config
        self.x_ref = x_ref
        self.predict_fn = predict_fn
        self.y_train = y_train
        self.head = ParamSet.init(attack_architecture(), derive_seed(config.seed, 21))
        self.head_state = OptimizerState()
        self.head_config = TrainConfig(learning_rate=config.inference_lr, batch_size=0,
                                       max_epochs=1, seed=config.seed)
        self.rng = np.random.Generator(np.random.Philox(derive_seed(config.seed, 22)))
        self.initial_ce = None

    def head_step(self, member_feats, reference_feats):
        x = np.concatenate([member_feats, reference_feats]).astype(np.float32)
        y = np.r_[np.ones(len(member_feats)), np.zeros(len(reference_feats))]
        _, grads = nncore.loss_and_grads(self.head, (x, y), "bce")
        nncore.optimizer_step(self.head, grads, self.head_state, self.head_config)

    def gain_and_grad(self, logits):
        """``(lambda * mean log h(f(softmax(logits))), d/d logits)`` with ``h`` frozen."""
        lam = self.config.privacy_lambda
        p = softmax_t(logits.astype(np.float64))
        feats = -np.sort(-p, axis=1)[:, :3]
        dtype = self.head.dtype
        z, caches = nncore.forward(self.head, feats.astype(dtype))
        z = z[:, 0].astype(np.float64)
        n = len(z)
        gain = float(np.mean(-np.logaddexp(0, -z)))
        dz = (lam * (1 - sigmoid(z)) / n)[:, None].astype(dtype)
        _, d_feats = nncore.backward(self.head, caches, dz, need_input_grad=True)
        d_logits = softmax_backward(p, top3_backward(p, d_feats.astype(np.float64)))
        return lam * gain, d_logits.astype(logits.dtype)

    def __call__(self, logits, batch_index):
        if self.y_train is not None:
            ce, _ = nncore.output_loss(logits, self.y_train[batch_index], "ce_hard")
            if self.initial_ce is None:
                self.initial_ce = ce
            elif ce > 10 * self.initial_ce:
                raise RuntimeError(f"adversarial regularization diverged (CE {ce:.3f})")
        member = -np.sort(-softmax_t(logits.astype(np.float64)), axis=1)[:, :3]
        ridx = self.rng.integers(0, len(self.x_ref), size=len(logits))
        ref_post = softmax_t(self.predict_fn(self.x_ref[ridx]).astype(np.float64))
        reference = -np.sort(-ref_post, axis=1)[:, :3]
        for _ in range(self.config.inner_attack_steps):
            self.head_step(member, reference)
        return self.gain_and_grad(logits)


def train_adversarially_regularized(train_clips, eval_clips, reference_clips, config: AdvRegConfig,
                                    base: TrainConfig, arch_options=None):
    """Alternate inference-head updates with regularized classifier updates, per minibatch.

    ``reference_clips`` are cohort clips the classifier never trains on; they are the
    defender's nonmember examples. Returns ``(SidModel, TrainReport)``.
    """
    if not reference_clips:
        raise ValueError("adversarial regularization needs a nonmember reference pool")
    data = prepare_sid_data(train_clips, eval_clips)
    x_ref = data.encode(reference_clips)
    params = init_sid_params(data, arch_options, base.seed)

    def predict_fn(x):
        return nncore.forward(params, x, keep_cache=False)[0]

    game = InferenceGame(x_ref, config, predict_fn, data.y_train)
    params, report = fit_sid(data, base, arch_options=arch_options, hook=game, params=params)
    defense = {"kind": "adversarial_regularization", **asdict(config)}
    return SidModel(params, data.class_map, data.stats, 1.0, defense, base.to_dict()), report


# ---------------------------------------------------------------------------
# distillation


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 10.0
    teacher_config: TrainConfig = field(default_factory=TrainConfig)
    student_config: TrainConfig = None
    serve_softened: bool = True

    def __post_init__(self):
        if self.temperature < 1:
            raise ValueError("distillation temperature must be >= 1")

    @property
    def student(self) -> TrainConfig:
        if self.student_config is not None:
            return self.student_config
        return self.teacher_config.replace(seed=derive_seed(self.teacher_config.seed, 31) % 2**31)


def train_distilled(train_clips, eval_clips, config: DistillConfig, arch_options=None):
    """Teacher at temperature T on hard labels, student of the same shape on the teacher's
    T-softened training-set posteriors. Returns ``(SidModel, {"teacher": ..., "student": ...})``.
    """
    t = config.temperature
    data = prepare_sid_data(train_clips, eval_clips)
    teacher, teacher_report = fit_sid(data, config.teacher_config, arch_options=arch_options,
                                      temperature=t)
    if teacher_report.train_acc < config.teacher_config.early_stop_train_acc:
        raise RuntimeError(f"teacher reached only {teacher_report.train_acc:.3f} train accuracy")
    soft = softmax_t(nncore.predict(teacher, data.x_train).astype(np.float64), t).astype(np.float32)
    student, student_report = fit_sid(data, config.student, arch_options=arch_options,
                                      temperature=t, y=soft, loss_kind="ce_soft")
    defense = {"kind": "distillation", "temperature": t, "serve_softened": config.serve_softened}
    model = SidModel(student, data.class_map, data.stats, t if config.serve_softened else 1.0,
                     defense, config.student.to_dict())
    return model, {"teacher": teacher_report, "student": student_report, "soft_labels": soft,
                   "teacher_params": teacher}


def soft_label_loss(params, x, soft, temperature) -> float:
    out = nncore.predict(params, x)
    return nncore.output_loss(out, soft, "ce_soft", temperature)[0]


# ---------------------------------------------------------------------------
# model key


@dataclass(frozen=True)
class KeyConfig:
    noise_amplitude: float = 0.5
    detector_config: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=1e-3, batch_size=32, max_epochs=100, early_stop_train_acc=1.0))
    unkeyed_response: str = "flat_random"
    seed: int = 0
    min_detector_accuracy: float = 0.95
    # independent key draws per training clip; fresh noise acts as augmentation
    draws_per_clip: int = 4

    def __post_init__(self):
        if not self.noise_amplitude > 0:
            raise ValueError("noise_amplitude must be > 0")
        if self.draws_per_clip < 1:
            raise ValueError("draws_per_clip must be >= 1")
        if self.unkeyed_response != "flat_random":
            raise ValueError("only flat_random unkeyed responses are supported")


def apply_key(clip: AudioClip, amplitude: float, seed: int, draw: int = 0) -> AudioClip:
    """Add ``amplitude * U[0, 1]`` noise per sample, then peak-normalize."""
    words = (seed, 41, clip.speaker_id, clip.clip_id) + ((draw,) if draw else ())
    rng = np.random.Generator(np.random.Philox(derive_seed(*words)))
    y = clip.samples.astype(np.float64) + amplitude * rng.uniform(0.0, 1.0, size=len(clip.samples))
    y *= PEAK / np.max(np.abs(y))
    return AudioClip(y.astype(np.float32), clip.sample_rate, clip.speaker_id, clip.clip_id, clip.condition)


def _pooled(clips):
    return np.stack([log_spectrogram(c).mean(axis=0) for c in clips]).astype(np.float64)


@dataclass
class NoiseDetector:
    """Binary key detector over time-averaged log spectra (attack-net shape)."""

    params: ParamSet
    stats: FeatureStats

    def features(self, clips) -> np.ndarray:
        scale = np.where(self.stats.var < VARIANCE_FLOOR, 1.0, np.sqrt(self.stats.var))
        return ((_pooled(clips) - self.stats.mean) / scale).astype(np.float32)

    def score(self, clips) -> np.ndarray:
        return sigmoid(nncore.predict(self.params, self.features(clips))[:, 0].astype(np.float64))

    def is_keyed(self, clips) -> np.ndarray:
        return self.score(clips) >= 0.5


def train_detector(keyed_clips, clean_clips, config: TrainConfig, hidden=64) -> NoiseDetector:
    pooled = _pooled(list(keyed_clips) + list(clean_clips))
    stats = FeatureStats(pooled.mean(axis=0), pooled.var(axis=0))
    x = ((pooled - stats.mean) / np.where(stats.var < VARIANCE_FLOOR, 1.0, np.sqrt(stats.var))).astype(np.float32)
    y = np.r_[np.ones(len(keyed_clips), int), np.zeros(len(clean_clips), int)]
    params = ParamSet.init(mlp_architecture(x.shape[1], (hidden, hidden), 1, name="detector"), config.seed)
    nncore.fit(params, x, y, config, loss_kind="bce")
    return NoiseDetector(params, stats)


def random_posterior(n_classes, rng) -> np.ndarray:
    """Uniform draw from the probability simplex (normalized unit exponentials)."""
    e = rng.exponential(size=n_classes)
    return e / e.sum()


class KeyedSidModel:
    """Answers genuinely only when the detector finds the key; otherwise a random posterior.

    Each unkeyed query draws fresh randomness from the model's stream (or ``rng``).
    """

    def __init__(self, model: SidModel, detector: NoiseDetector, config: KeyConfig, stream_seed=0):
        self.model = model
        self.detector = detector
        self.config = config
        self._rng = np.random.Generator(np.random.Philox(derive_seed(stream_seed, 42)))

    @property
    def class_map(self):
        return self.model.class_map

    @property
    def n_classes(self):
        return self.model.n_classes

    def class_of(self, speaker_id):
        return self.model.class_of(speaker_id)

    def predict_proba(self, clips, rng=None) -> np.ndarray:
        rng = self._rng if rng is None else rng
        clips = list(clips)
        post = self.model.predict_proba(clips)
        keyed = self.detector.is_keyed(clips)
        for i in np.flatnonzero(~keyed):
            post[i] = random_posterior(self.n_classes, rng)
        return post


def keyed_predict(model: SidModel, detector: NoiseDetector, clip: AudioClip, rng=None) -> np.ndarray:
    if rng is None:
        rng = np.random.default_rng()
    if detector.is_keyed([clip])[0]:
        return model.predict_proba([clip])[0]
    return random_posterior(model.n_classes, rng)


def train_keyed(train_clips, eval_clips, config: KeyConfig, base: TrainConfig, arch_options=None):
    """SID on keyed inputs only, plus a key detector trained on keyed/clean pairs.

    Every training clip is keyed ``draws_per_clip`` times with independent noise.
    Returns ``(KeyedSidModel, {"sid": TrainReport, "detector_val_acc": float, ...})``; raises if
    the detector's validation accuracy is under ``config.min_detector_accuracy``.
    """
    keyed_train = [apply_key(c, config.noise_amplitude, config.seed) for c in train_clips]
    keyed_eval = [apply_key(c, config.noise_amplitude, config.seed) for c in eval_clips]
    extra = [apply_key(c, config.noise_amplitude, config.seed, d)
             for d in range(1, config.draws_per_clip) for c in train_clips]
    model, report = train_sid(keyed_train + extra, keyed_eval, base, arch_options=arch_options)
    model.defense = {"kind": "key", "noise_amplitude": config.noise_amplitude, "seed": config.seed}
    detector = train_detector(keyed_train, train_clips, config.detector_config)
    val_clips = keyed_eval + list(eval_clips)
    truth = np.r_[np.ones(len(keyed_eval), bool), np.zeros(len(eval_clips), bool)]
    val_acc = float(np.mean(detector.is_keyed(val_clips) == truth))
    if val_acc < config.min_detector_accuracy:
        raise RuntimeError(f"key detector validation accuracy {val_acc:.3f} below "
                           f"{config.min_detector_accuracy}")
    keyed = KeyedSidModel(model, detector, config, stream_seed=base.seed)
    return keyed, {"sid": report, "detector_val_acc": val_acc, "keyed_train": keyed_train,
                   "keyed_eval": keyed_eval}


# ---------------------------------------------------------------------------
# self-describing checkpoints for serving


def save_served_model(model, path) -> None:
    """Write a plain, distilled, adversarially regularized or keyed model."""
    if isinstance(model, KeyedSidModel):
        inner = model.model
        if inner.defense.get("kind") != "key":
            inner = dataclasses.replace(inner, defense={"kind": "key", "noise_amplitude": model.config.noise_amplitude,
                                                        "seed": model.config.seed})
        save_sid(inner, path)
        det = os.path.join(path, "detector")
        nncore.save_params(model.detector.params, det, extra={"kind": "detector"})
        with open(os.path.join(det, "feature_stats.json"), "w") as fh:
            json.dump(model.detector.stats.to_dict(), fh)
        with open(os.path.join(path, "key.json"), "w") as fh:
            json.dump({"noise_amplitude": model.config.noise_amplitude, "seed": model.config.seed,
                       "unkeyed_response": model.config.unkeyed_response}, fh)
    else:
        save_sid(model, path)


def load_served_model(path):
    """Inverse of :func:`save_served_model`; a key detector is restored when present."""
    model = load_sid(path)
    if not os.path.exists(os.path.join(path, "key.json")):
        return model
    det = os.path.join(path, "detector")
    params, _ = nncore.load_params(det)
    with open(os.path.join(det, "feature_stats.json")) as fh:
        stats = FeatureStats.from_dict(json.load(fh))
    with open(os.path.join(path, "key.json")) as fh:
        k = json.load(fh)
    config = KeyConfig(noise_amplitude=k["noise_amplitude"], seed=k["seed"])
    return KeyedSidModel(model, NoiseDetector(params, stats), config)
