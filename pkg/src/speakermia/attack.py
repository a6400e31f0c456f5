"""Membership inference from posterior vectors: shadow-trained binary attack network.

The attacker only ever sees what the target serves. Features are the three largest
posterior probabilities, sorted and stripped of class identity, so a model trained
on shadow posteriors transfers to a target with a different speaker set.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import ParamSet, TrainConfig, mlp_architecture, sigmoid
from .obfuscation import ObfuscatedOutput, ObfuscationConfig, obfuscate

MEMBER, NONMEMBER = 1, 0
SOURCES = ("shadow", "target")
# rank-only responses carry no probabilities: the attacker falls back to this feature
RANK_FEATURE = (1.0 / 3, 1.0 / 3, 1.0 / 3)

DEFAULT_ATTACK_CONFIG = TrainConfig(learning_rate=5e-3, batch_size=0, max_epochs=1500,
                                    optimizer="adam", seed=0, early_stop_train_acc=1.0)


def extract_attack_feature(posterior) -> np.ndarray:
    p = np.asarray(posterior, dtype=np.float64)
    if p.shape[-1] < 3:
        raise ValueError("need at least 3 classes for a top-3 feature")
    return -np.sort(-p, axis=-1)[..., :3]


def response_feature(response: ObfuscatedOutput) -> np.ndarray:
    """Attack feature from whatever a (possibly obfuscated) endpoint returned."""
    if response.mode == "full":
        return extract_attack_feature(response.posteriors)
    if response.mode == "topk":
        probs = sorted((p for _, p in response.topk), reverse=True)[:3]
        return np.array(probs + [0.0] * (3 - len(probs)))
    return np.array(RANK_FEATURE)


@dataclass(frozen=True)
class MembershipRecord:
    feature: tuple
    label: int
    source: str
    speaker_id: int
    clip_id: int

    def __post_init__(self):
        f = self.feature
        if len(f) != 3 or not (1 + 1e-9 >= f[0] >= f[1] >= f[2] >= 0) or sum(f) > 1 + 1e-6:
            raise ValueError(f"invalid attack feature {f}")
        if self.label not in (MEMBER, NONMEMBER):
            raise ValueError("label must be member (1) or nonmember (0)")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")


def records_to_arrays(records):
    x = np.array([r.feature for r in records], dtype=np.float32).reshape(-1, 3)
    y = np.array([r.label for r in records], dtype=np.int64)
    return x, y


@dataclass
class AttackMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5
    degenerate: bool = field(init=False)

    def __post_init__(self):
        self.degenerate = (self.tp + self.fp) == 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        # 0/0 (no member predictions) is reported as 0 with ``degenerate`` set
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @classmethod
    def from_predictions(cls, predicted, labels, threshold=0.5) -> "AttackMetrics":
        predicted = np.asarray(predicted, dtype=bool)
        labels = np.asarray(labels) == MEMBER
        return cls(int(np.sum(predicted & labels)), int(np.sum(predicted & ~labels)),
                   int(np.sum(~predicted & ~labels)), int(np.sum(~predicted & labels)), threshold)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "threshold": self.threshold, "degenerate": self.degenerate}


@dataclass
class AttackModel:
    params: ParamSet
    train_config: dict = field(default_factory=dict)

    def score(self, features) -> np.ndarray:
        """Membership probability per feature row."""
        x = np.asarray(features, dtype=np.float32).reshape(-1, 3)
        return sigmoid(nncore.predict(self.params, x)[:, 0].astype(np.float64))


def attack_architecture(n_inputs=3, hidden=64):
    return mlp_architecture(n_inputs, (hidden, hidden), 1, name="attack")


def _query_features(target, clips, obfuscation=None):
    post = target.predict_proba(clips)
    if obfuscation is None or obfuscation.mode == "full":
        return extract_attack_feature(post)
    return np.array([response_feature(obfuscate(p, obfuscation)) for p in post])


def build_attack_dataset(model, in_clips, out_clips, source="shadow", obfuscation=None) -> list:
    """One record per clip: members from ``in_clips``, nonmembers from ``out_clips``."""
    in_clips, out_clips = list(in_clips), list(out_clips)
    if len(in_clips) != len(out_clips):
        raise ValueError(f"unbalanced membership sets: {len(in_clips)} in, {len(out_clips)} out")
    class_map = getattr(model, "class_map", None)
    if class_map is not None:
        for c in in_clips + out_clips:
            if c.speaker_id not in class_map:
                raise ValueError(f"clip from speaker {c.speaker_id} outside the model's cohort")
    records = []
    for clips, label in ((in_clips, MEMBER), (out_clips, NONMEMBER)):
        if not clips:
            continue
        feats = _query_features(model, clips, obfuscation)
        for c, f in zip(clips, feats):
            records.append(MembershipRecord(tuple(float(v) for v in f), label, source,
                                            c.speaker_id, c.clip_id))
    return records


def _check_training_records(records):
    if not records:
        raise ValueError("no attack training records")
    if any(r.source != "shadow" for r in records):
        raise ValueError("attack training must use shadow-sourced records only")
    _, y = records_to_arrays(records)
    if 2 * int(y.sum()) != len(y):
        raise ValueError("attack training records are not balanced")


def train_attack(records, config: TrainConfig = DEFAULT_ATTACK_CONFIG, hidden=64) -> AttackModel:
    """3 -> 64 -> 64 -> 1 network with binary cross-entropy, full batch by default."""
    _check_training_records(records)
    x, y = records_to_arrays(records)
    params = ParamSet.init(attack_architecture(3, hidden), config.seed)
    nncore.fit(params, x, y, config, loss_kind="bce", early_stop=False)
    return AttackModel(params, config.to_dict())


THRESHOLD_GRID = np.round(np.arange(1001) / 1000.0, 3)


def best_threshold(scores, labels) -> float:
    """Grid threshold maximizing accuracy of ``score >= t``; ties go to the one nearest 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) == MEMBER
    if scores.size == 0:
        raise ValueError("empty validation set")
    acc = np.array([np.mean((scores >= t) == labels) for t in THRESHOLD_GRID])
    best = np.flatnonzero(acc >= acc.max() - 1e-12)
    return float(THRESHOLD_GRID[best[np.argmin(np.abs(THRESHOLD_GRID[best] - 0.5))]])


def select_threshold(model: AttackModel, records) -> float:
    x, y = records_to_arrays(records)
    if len(y) == 0:
        raise ValueError("empty validation set")
    return best_threshold(model.score(x), y)


def metrics_from_features(model: AttackModel, threshold, in_features, out_features) -> AttackMetrics:
    in_features = np.asarray(in_features).reshape(-1, 3)
    out_features = np.asarray(out_features).reshape(-1, 3)
    if len(in_features) != len(out_features):
        raise ValueError("unbalanced evaluation sets")
    scores = model.score(np.concatenate([in_features, out_features]))
    labels = np.r_[np.ones(len(in_features), int), np.zeros(len(out_features), int)]
    return AttackMetrics.from_predictions(scores >= threshold, labels, threshold)


def evaluate_attack(model: AttackModel, threshold, target, in_clips, out_clips,
                    obfuscation: ObfuscationConfig = None) -> AttackMetrics:
    """Score target-cohort clips through the target's (optionally obfuscated) outputs."""
    in_clips, out_clips = list(in_clips), list(out_clips)
    if len(in_clips) != len(out_clips):
        raise ValueError("unbalanced evaluation sets")
    return metrics_from_features(model, threshold, _query_features(target, in_clips, obfuscation),
                                 _query_features(target, out_clips, obfuscation))


# ---------------------------------------------------------------------------
# persistence


def export_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["p1", "p2", "p3", "label", "source", "speaker_id", "clip_id"])
        for r in records:
            w.writerow([repr(r.feature[0]), repr(r.feature[1]), repr(r.feature[2]),
                        "member" if r.label == MEMBER else "nonmember", r.source,
                        r.speaker_id, r.clip_id])


def read_records_csv(path) -> list:
    with open(path, newline="") as fh:
        return [MembershipRecord((float(row["p1"]), float(row["p2"]), float(row["p3"])),
                                 MEMBER if row["label"] == "member" else NONMEMBER,
                                 row["source"], int(row["speaker_id"]), int(row["clip_id"]))
                for row in csv.DictReader(fh)]


def save_attack(model: AttackModel, path, threshold=None) -> None:
    nncore.save_params(model.params, path, extra={"kind": "attack", "train_config": model.train_config,
                                                  "threshold": threshold})


def load_attack(path) -> tuple:
    """Returns ``(AttackModel, threshold_or_None)``."""
    params, manifest = nncore.load_params(path)
    return AttackModel(params, manifest.get("train_config", {})), manifest.get("threshold")
