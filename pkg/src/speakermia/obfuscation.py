"""Serving-side output transforms and their wire representation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MODES = ("full", "topk", "rank")


@dataclass(frozen=True)
class ObfuscationConfig:
    mode: str = "full"
    k: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown obfuscation mode {self.mode!r}")
        if self.mode == "topk" and self.k < 1:
            raise ValueError("k must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "ObfuscationConfig":
        """``full``, ``rank`` or ``topk:K``."""
        if text.startswith("topk"):
            _, _, k = text.partition(":")
            return cls("topk", int(k) if k else 3)
        return cls(text)

    def label(self) -> str:
        return f"topk:{self.k}" if self.mode == "topk" else self.mode

    def to_dict(self) -> dict:
        return {"mode": self.mode, "k": self.k}


@dataclass(frozen=True)
class ObfuscatedOutput:
    mode: str
    posteriors: Optional[tuple] = None
    topk: Optional[tuple] = None  # ((class_index, p), ...) descending
    ranks: Optional[tuple] = None  # rank of each class, 1 = most likely

    def to_json(self) -> dict:
        if self.mode == "full":
            return {"posteriors": list(self.posteriors)}
        if self.mode == "topk":
            return {"topk": [{"class": c, "p": p} for c, p in self.topk]}
        return {"ranks": list(self.ranks)}

    @classmethod
    def from_json(cls, body: dict) -> "ObfuscatedOutput":
        if "posteriors" in body:
            return cls("full", posteriors=tuple(float(p) for p in body["posteriors"]))
        if "topk" in body:
            return cls("topk", topk=tuple((int(e["class"]), float(e["p"])) for e in body["topk"]))
        if "ranks" in body:
            return cls("rank", ranks=tuple(int(r) for r in body["ranks"]))
        raise ValueError("response carries no posteriors, topk or ranks")

    def predicted_class(self) -> int:
        if self.mode == "full":
            return int(np.argmax(self.posteriors))
        if self.mode == "topk":
            return self.topk[0][0]
        return int(np.argmin(self.ranks))


def obfuscate(posterior, config: ObfuscationConfig) -> ObfuscatedOutput:
    p = np.asarray(posterior, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("invalid posterior vector")
    if config.mode == "full":
        return ObfuscatedOutput("full", posteriors=tuple(float(v) for v in p))
    # stable sort on -p: ties keep the lower class index first
    order = np.argsort(-p, kind="stable")
    if config.mode == "topk":
        if not 1 <= config.k < p.size:
            raise ValueError(f"k={config.k} out of range for {p.size} classes")
        return ObfuscatedOutput("topk", topk=tuple((int(c), float(p[c])) for c in order[:config.k]))
    ranks = np.empty(p.size, dtype=np.int64)
    ranks[order] = np.arange(1, p.size + 1)
    return ObfuscatedOutput("rank", ranks=tuple(int(r) for r in ranks))
