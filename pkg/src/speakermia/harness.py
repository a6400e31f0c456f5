"""End-to-end experiment grids: shadow, attack, (defended) target, metrics, reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .attack import (DEFAULT_ATTACK_CONFIG, build_attack_dataset, evaluate_attack, select_threshold,
                     train_attack)
from .corpus import BUCKETS, COHORTS, CorpusSpec, build_corpus, plan_splits
from .defenses import (AdvRegConfig, DistillConfig, KeyConfig, train_adversarially_regularized,
                       train_distilled, train_keyed)
from .nncore import TrainConfig
from .obfuscation import ObfuscationConfig
from .sid import evaluate_sid, train_sid

log = logging.getLogger(__name__)

DEFENSES = ("baseline", "adversarial_regularization", "obfuscation", "distillation", "key")
REPORT_FIELDS = ("dataset_condition", "defense", "parameter", "target_train_acc", "target_test_acc",
                 "attack_acc", "attack_prec", "attack_rec", "seed", "runtime_s")
METRICS = ("target_train_acc", "target_test_acc", "attack_acc", "attack_prec", "attack_rec")


@dataclass(frozen=True)
class GridEntry:
    """One defense and the values it is swept over.

    baseline: L2 alpha; adversarial_regularization: lambda; obfuscation: mode labels
    (``full``, ``topk:K``, ``rank``); distillation: temperature; key: noise amplitude.
    """

    defense: str
    values: tuple

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ValueError(f"unknown defense {self.defense!r}")
        if not self.values:
            raise ValueError(f"empty grid for {self.defense}")
        if self.defense == "obfuscation":
            for v in self.values:
                ObfuscationConfig.parse(str(v))
        elif any(not isinstance(v, (int, float)) for v in self.values):
            raise ValueError(f"{self.defense} grid values must be numbers")

    def points(self):
        return [(self.defense, v) for v in self.values]


@dataclass(frozen=True)
class ExperimentSpec:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    grid: tuple = (GridEntry("baseline", (0.0,)),)
    seeds: tuple = (0, 1, 2)
    output_dir: str = "results"
    split_seed: int = 0
    base_config: TrainConfig = field(default_factory=TrainConfig)
    attack_config: TrainConfig = DEFAULT_ATTACK_CONFIG
    arch_options: dict = None
    shadow_seed_offset: int = 100
    advreg_inner_steps: int = 5
    advreg_reference_fraction: float = 0.2
    distill_serve_softened: bool = True
    record_runtime: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.grid:
            raise ValueError("empty experiment grid")

    @property
    def condition(self) -> str:
        return self.corpus.condition

    def points(self):
        return [p for entry in self.grid for p in entry.points()]

    def to_dict(self) -> dict:
        return {
            "corpus": asdict(self.corpus),
            "grid": [{"defense": g.defense, "values": list(g.values)} for g in self.grid],
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "split_seed": self.split_seed,
            "base_config": self.base_config.to_dict(),
            "attack_config": self.attack_config.to_dict(),
            "arch_options": self.arch_options,
            "shadow_seed_offset": self.shadow_seed_offset,
            "advreg_inner_steps": self.advreg_inner_steps,
            "advreg_reference_fraction": self.advreg_reference_fraction,
            "distill_serve_softened": self.distill_serve_softened,
            "record_runtime": self.record_runtime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"condition"}
        if unknown:
            raise ValueError(f"unknown ExperimentSpec keys {sorted(unknown)}")
        corpus = dict(d.get("corpus", {}))
        if "condition" in d:
            corpus["condition"] = d["condition"]
        if corpus.get("condition") == "noisy":
            corpus.setdefault("reverb_preset", "room_a")
        kw = {k: v for k, v in d.items() if k in known}
        kw["corpus"] = CorpusSpec(**corpus)
        if "grid" in d:
            kw["grid"] = tuple(GridEntry(g["defense"], tuple(g["values"])) for g in d["grid"])
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        if "base_config" in d:
            kw["base_config"] = TrainConfig.from_dict(d["base_config"])
        if "attack_config" in d:
            kw["attack_config"] = TrainConfig.from_dict(d["attack_config"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_grid():
    return (
        GridEntry("baseline", (0.0, 0.001, 0.005, 0.01)),
        GridEntry("adversarial_regularization", (1.0, 3.0)),
        GridEntry("obfuscation", ("full", "topk:1", "rank")),
        GridEntry("distillation", (1.0, 100.0)),
        GridEntry("key", (0.5,)),
    )


@dataclass
class ReportRow:
    dataset_condition: str
    defense: str
    parameter: str
    target_train_acc: float
    target_test_acc: float
    attack_acc: float
    attack_prec: float
    attack_rec: float
    seed: int
    runtime_s: float = None

    def __post_init__(self):
        for name in METRICS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_label(defense, value) -> str:
    if defense == "obfuscation":
        return ObfuscationConfig.parse(str(value)).label()
    name = {"baseline": "alpha", "adversarial_regularization": "lambda",
            "distillation": "T", "key": "amplitude"}[defense]
    return f"{name}={value:g}"


# ---------------------------------------------------------------------------
# pipeline


def check_hygiene(plan, n_clips) -> None:
    """Refuse to train on a plan that could leak membership across roles."""
    try:
        plan.check(n_clips)
    except AssertionError as exc:
        raise ValueError(str(exc)) from None
    tgt, sh = set(plan.speakers("target")), set(plan.speakers("shadow"))
    if tgt & sh:
        raise ValueError(f"speakers in both cohorts: {sorted(tgt & sh)}")
    for cohort in COHORTS:
        seen = set()
        for bucket in BUCKETS:
            keys = set(plan.keys(cohort, bucket))
            if keys & seen:
                raise ValueError(f"clip in two buckets for the {cohort} cohort")
            seen |= keys
        for pool in ("attack_train", "attack_validation", "attack_eval"):
            ins, outs = plan.membership_pool(cohort, pool)
            if len(ins) != len(outs):
                raise ValueError(f"unbalanced {cohort} {pool} pool")
            if set(ins) & set(outs):
                raise ValueError(f"{cohort} {pool} pool has clips labelled both ways")
            in_train = set(plan.keys(cohort, "in_train"))
            if not set(ins) <= in_train or set(outs) & in_train:
                raise ValueError(f"{cohort} {pool} labels disagree with training membership")


class Pipeline:
    """Shared state for one experiment: corpus, plan, and per-seed caches."""

    def __init__(self, spec: ExperimentSpec, corpus=None, plan=None):
        self.spec = spec
        self.corpus = corpus if corpus is not None else build_corpus(spec.corpus)
        self.plan = plan if plan is not None else plan_splits(self.corpus, spec.split_seed)
        check_hygiene(self.plan, self.corpus.spec.clips_per_speaker)
        self._shadow = {}
        self._attack = {}
        self._baseline = {}

    def clips(self, cohort, bucket):
        return self.corpus.select(self.plan.keys(cohort, bucket))

    def eval_clips(self, cohort):
        return self.clips(cohort, "in_eval") + self.clips(cohort, "out_attack_eval")

    def pool(self, cohort, pool):
        ins, outs = self.plan.membership_pool(cohort, pool)
        return self.corpus.select(ins), self.corpus.select(outs)

    def base(self, seed, **kw) -> TrainConfig:
        return self.spec.base_config.replace(seed=seed, **kw)

    def shadow(self, seed):
        if seed not in self._shadow:
            cfg = self.base(seed + self.spec.shadow_seed_offset, l2_alpha=0.0)
            self._shadow[seed] = train_sid(self.clips("shadow", "in_train"), self.eval_clips("shadow"),
                                           cfg, arch_options=self.spec.arch_options)[0]
        return self._shadow[seed]

    def attack(self, seed, obfuscation: ObfuscationConfig = None):
        """Attack net and threshold, trained on shadow outputs in the format the target serves."""
        key = (seed, obfuscation.label() if obfuscation else "full")
        if key not in self._attack:
            sh = self.shadow(seed)
            records = build_attack_dataset(sh, *self.pool("shadow", "attack_train"), obfuscation=obfuscation)
            val = build_attack_dataset(sh, *self.pool("shadow", "attack_validation"), obfuscation=obfuscation)
            model = train_attack(records, self.spec.attack_config.replace(seed=seed))
            self._attack[key] = (model, select_threshold(model, val))
        return self._attack[key]

    def baseline_target(self, seed, alpha=0.0):
        if (seed, alpha) not in self._baseline:
            self._baseline[(seed, alpha)] = train_sid(
                self.clips("target", "in_train"), self.eval_clips("target"),
                self.base(seed, l2_alpha=alpha), arch_options=self.spec.arch_options)[0]
        return self._baseline[(seed, alpha)]

    def reference_clips(self, config: AdvRegConfig):
        keys = []
        for spk in self.plan.speakers("target"):
            n = config.reference_count(len(self.plan.buckets[spk]["in_train"]))
            keys += [(spk, c) for c in self.plan.buckets[spk]["out_attack_train"][:n]]
        return self.corpus.select(keys)

    def run_point(self, defense, value, seed) -> tuple:
        """One (grid point, seed) pipeline; returns ``(ReportRow, extras)``."""
        t0 = time.perf_counter()
        train_clips, eval_clips = self.clips("target", "in_train"), self.eval_clips("target")
        ins, outs = self.pool("target", "attack_eval")
        obf = None
        extras = {}
        if defense == "baseline":
            target = self.baseline_target(seed, float(value))
        elif defense == "obfuscation":
            obf = ObfuscationConfig.parse(str(value))
            target = self.baseline_target(seed)
        elif defense == "adversarial_regularization":
            cfg = AdvRegConfig(float(value), self.spec.advreg_inner_steps,
                               self.spec.advreg_reference_fraction, seed=seed)
            target, _ = train_adversarially_regularized(train_clips, eval_clips, self.reference_clips(cfg),
                                                        cfg, self.base(seed), self.spec.arch_options)
        elif defense == "distillation":
            cfg = DistillConfig(float(value), teacher_config=self.base(seed),
                                serve_softened=self.spec.distill_serve_softened)
            target, _ = train_distilled(train_clips, eval_clips, cfg, self.spec.arch_options)
        elif defense == "key":
            cfg = KeyConfig(noise_amplitude=float(value), seed=seed)
            target, info = train_keyed(train_clips, eval_clips, cfg, self.base(seed), self.spec.arch_options)
            extras["detector_val_acc"] = info["detector_val_acc"]
            extras["clean_input_test_acc"] = evaluate_sid(target, eval_clips)
            train_clips, eval_clips = info["keyed_train"], info["keyed_eval"]
        else:
            raise ValueError(f"unknown defense {defense!r}")

        if defense == "key":
            inner = target.model
            train_acc, test_acc = evaluate_sid(inner, train_clips), evaluate_sid(inner, eval_clips)
        else:
            train_acc, test_acc = evaluate_sid(target, train_clips), evaluate_sid(target, eval_clips)
        attack, threshold = self.attack(seed, obf)
        metrics = evaluate_attack(attack, threshold, target, ins, outs, obfuscation=obf)
        extras["attack"] = metrics.to_dict()
        runtime = time.perf_counter() - t0
        row = ReportRow(self.spec.condition, defense, parameter_label(defense, value), train_acc, test_acc,
                        metrics.accuracy, metrics.precision, metrics.recall, seed,
                        round(runtime, 3) if self.spec.record_runtime else None)
        extras["runtime_s"] = runtime
        return row, extras


@dataclass
class ExperimentResult:
    rows: list
    failures: list
    extras: dict

    @property
    def ok(self) -> bool:
        return not self.failures

    def medians(self) -> list:
        return summarize(self.rows)


def run_experiment(spec: ExperimentSpec, pipeline: Pipeline = None) -> ExperimentResult:
    """Every grid point x seed; a failing point is logged and skipped, the rest proceed."""
    pipeline = pipeline or Pipeline(spec)
    rows, failures, extras = [], [], {}
    for defense, value in spec.points():
        label = parameter_label(defense, value)
        for seed in spec.seeds:
            try:
                row, extra = pipeline.run_point(defense, value, seed)
            except Exception as exc:  # noqa: BLE001 - one bad point must not sink the grid
                log.warning("grid point %s %s seed %d failed: %s", defense, label, seed, exc)
                failures.append({"defense": defense, "parameter": label, "seed": seed,
                                 "reason": f"{type(exc).__name__}: {exc}"})
                continue
            log.info("%s %s seed %d: attack %.3f target %.3f/%.3f", defense, label, seed,
                     row.attack_acc, row.target_train_acc, row.target_test_acc)
            rows.append(row)
            extras[f"{defense}|{label}|{seed}"] = extra
    return ExperimentResult(rows, failures, extras)


def summarize(rows) -> list:
    """Median of every metric across seeds, per (condition, defense, parameter)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.dataset_condition, r.defense, r.parameter), []).append(r)
    out = []
    for (cond, defense, param), rs in groups.items():
        entry = {"dataset_condition": cond, "defense": defense, "parameter": param,
                 "seeds": [r.seed for r in rs]}
        for m in METRICS:
            entry[m] = float(np.median([getattr(r, m) for r in rs]))
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# reports


def format_percent(rate) -> str:
    """Rate in [0, 1] as a percentage with one decimal, round-half-even on the decimal value."""
    d = Decimal(repr(float(rate))) * 100
    return str(d.quantize(Decimal("0.1"), rounding=ROUND_HALF_EVEN))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in REPORT_FIELDS])
    return buf.getvalue()


def figure_data_csv(rows) -> str:
    """Bar-plot series: one group per defense, one bar cluster per parameter (seed medians)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "dataset_condition", "label", "target_train", "target_test",
                "attack_acc", "attack_prec", "attack_rec"])
    for s in summarize(rows):
        w.writerow([s["defense"], s["dataset_condition"], s["parameter"]]
                   + [_fmt(s[m]) for m in METRICS])
    return buf.getvalue()


def percent_table(rows) -> str:
    header = ["Data", "Defense", "Parameter", "Train", "Test", "Acc.", "Prec.", "Rec."]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for s in summarize(rows):
        cells = [s["dataset_condition"], s["defense"], s["parameter"]] + [format_percent(s[m]) for m in METRICS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_report(rows, output_dir, spec: ExperimentSpec = None, result: ExperimentResult = None) -> dict:
    """Write results.csv, results.json, figure_data.csv and results.md; returns their paths."""
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to report")
    os.makedirs(output_dir, exist_ok=True)
    paths = {name: os.path.join(output_dir, name)
             for name in ("results.csv", "results.json", "figure_data.csv", "results.md")}
    with open(paths["results.csv"], "w", newline="") as fh:
        fh.write(results_csv(rows))
    with open(paths["figure_data.csv"], "w", newline="") as fh:
        fh.write(figure_data_csv(rows))
    with open(paths["results.md"], "w") as fh:
        fh.write(percent_table(rows))
    doc = {"rows": [r.to_dict() for r in rows], "medians": summarize(rows)}
    if spec is not None:
        doc["spec"] = spec.to_dict()
    if result is not None:
        doc["failures"] = result.failures
        doc["details"] = result.extras
    with open(paths["results.json"], "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return paths
