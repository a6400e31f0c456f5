"""End-to-end acceptance criteria on the default desk configuration.

Each test records a one-line verdict (shown in the terminal summary) before asserting.
The clean grid is the default five-defense grid over seeds 0-2; the noisy condition
runs the undefended baseline only.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from speakermia.attack import attack_architecture, evaluate_attack
from speakermia.corpus import CorpusSpec
from speakermia.harness import (ExperimentSpec, GridEntry, Pipeline, default_grid, percent_table, render_report,
                                run_experiment, summarize)
from speakermia.nncore import gradient_check, mlp_architecture
from speakermia.server import ServeConfig, query_endpoint, remote_attack, serve
from speakermia.sid import build_arch, predict_posteriors

pytestmark = pytest.mark.acceptance


def verdict(record_property, number, ok, detail):
    record_property("criterion", f"{number:2d}. {'PASS' if ok else 'FAIL'}  {detail}")
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def clean():
    spec = ExperimentSpec(grid=default_grid())
    pipeline = Pipeline(spec)
    result = run_experiment(spec, pipeline)
    return pipeline, result, {(s["defense"], s["parameter"]): s for s in summarize(result.rows)}


@pytest.fixture(scope="module")
def noisy():
    spec = ExperimentSpec(corpus=CorpusSpec(condition="noisy", reverb_preset="room_a"),
                          grid=(GridEntry("baseline", (0.0,)),))
    result = run_experiment(spec)
    return result, summarize(result.rows)[0]


def _pt(x):
    return f"{100 * x:.1f}"


def test_c01_gradient_integrity(record_property):
    t0 = time.perf_counter()
    # layer layout of the served nets; SID channels narrowed so every weight can be probed
    reports = {"sid": gradient_check(build_arch(257, 10, {"channels": (4, 4, 4), "hidden": 8}), seed=0,
                                          input_length=200, batch=2),
               "attack": gradient_check(attack_architecture(), seed=0),
               "detector": gradient_check(mlp_architecture(257, (64, 64), 1, name="detector"), seed=0)}
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and elapsed < 60
    verdict(record_property, 1, ok, f"gradient check max rel err {worst:.2e} (< 1e-4) over "
            f"{', '.join(reports)} in {elapsed:.1f}s (< 60s)")


def test_c02_attack_efficacy(record_property, clean, noisy):
    _, result, med = clean
    b = med[("baseline", "alpha=0")]
    nb = noisy[1]
    gap = b["target_train_acc"] - b["target_test_acc"]
    record_property("table", percent_table(result.rows + noisy[0].rows))
    ok = (b["target_train_acc"] >= 0.98 and gap >= 0.05 and b["attack_acc"] >= 0.65
          and nb["attack_acc"] >= 0.60)
    verdict(record_property, 2, ok,
            f"clean train {_pt(b['target_train_acc'])} (>= 98), gap {_pt(gap)} (>= 5), attack "
            f"{_pt(b['attack_acc'])} (>= 65); noisy attack {_pt(nb['attack_acc'])} (>= 60)")


def test_c03_l2_direction(record_property, clean):
    med = clean[2]
    a0, a1 = med[("baseline", "alpha=0")], med[("baseline", "alpha=0.01")]
    ok = a1["attack_acc"] <= a0["attack_acc"] and a1["attack_rec"] < a0["attack_rec"]
    verdict(record_property, 3, ok,
            f"attack alpha=0.01 {_pt(a1['attack_acc'])} <= alpha=0 {_pt(a0['attack_acc'])}; recall "
            f"{_pt(a0['attack_rec'])} -> {_pt(a1['attack_rec'])} (must drop)")


def test_c04_rank_obfuscation(record_property, clean):
    _, result, med = clean
    r = med[("obfuscation", "rank")]
    full = {row.seed: row for row in result.rows if (row.defense, row.parameter) == ("baseline", "alpha=0")}
    rank = [row for row in result.rows if (row.defense, row.parameter) == ("obfuscation", "rank")]
    same = all((row.target_train_acc, row.target_test_acc)
               == (full[row.seed].target_train_acc, full[row.seed].target_test_acc) for row in rank)
    ok = 0.45 <= r["attack_acc"] <= 0.55 and same and len(rank) == 3
    verdict(record_property, 4, ok, f"rank attack {_pt(r['attack_acc'])} in [45, 55]; target accuracy "
            f"identical to undefended per seed: {same}")


def test_c05_distillation(record_property, clean):
    med = clean[2]
    t1, t100 = med.get(("distillation", "T=1")), med.get(("distillation", "T=100"))
    base = med[("baseline", "alpha=0")]
    if t1 is None or t100 is None:
        verdict(record_property, 5, False, f"distillation points failed: {clean[1].failures}")
    drop = t1["attack_acc"] - t100["attack_acc"]
    test_gap = abs(base["target_test_acc"] - t100["target_test_acc"])
    ok = 0.45 <= t100["attack_acc"] <= 0.57 and drop >= 0.10 and test_gap <= 0.08
    verdict(record_property, 5, ok,
            f"T=100 attack {_pt(t100['attack_acc'])} in [45, 57], {_pt(drop)} below T=1 (>= 10); "
            f"test acc {_pt(t100['target_test_acc'])} vs baseline {_pt(base['target_test_acc'])} (<= 8 apart)")


def test_c06_adversarial_regularization(record_property, clean):
    med = clean[2]
    l1, l3 = med.get(("adversarial_regularization", "lambda=1")), med.get(("adversarial_regularization", "lambda=3"))
    base = med[("baseline", "alpha=0")]
    if l1 is None or l3 is None:
        verdict(record_property, 6, False, f"adversarial regularization points failed: {clean[1].failures}")
    drop = l1["attack_acc"] - l3["attack_acc"]
    degradation = base["target_test_acc"] - l3["target_test_acc"]
    ok = drop >= 0.05 and degradation <= 0.12
    verdict(record_property, 6, ok,
            f"attack lambda=1 {_pt(l1['attack_acc'])} -> lambda=3 {_pt(l3['attack_acc'])} (drop {_pt(drop)}, "
            f">= 5); test degradation {_pt(degradation)} (<= 12)")


def test_c07_model_key(record_property, clean):
    _, result, med = clean
    k = med.get(("key", "amplitude=0.5"))
    base = med[("baseline", "alpha=0")]
    if k is None:
        verdict(record_property, 7, False, f"key points failed: {result.failures}")
    n_classes = clean[0].baseline_target(0).n_classes
    n_eval = len(clean[0].eval_clips("target"))
    p = 1 / n_classes
    bound = p + 3 * math.sqrt(p * (1 - p) / n_eval)
    clean_acc = float(np.median([v["clean_input_test_acc"] for key, v in result.extras.items()
                                 if key.startswith("key|")]))
    keyed_gap = base["target_test_acc"] - k["target_test_acc"]
    ok = 0.45 <= k["attack_acc"] <= 0.55 and keyed_gap <= 0.10 and clean_acc <= bound
    verdict(record_property, 7, ok,
            f"attack {_pt(k['attack_acc'])} in [45, 55]; keyed test {_pt(k['target_test_acc'])} vs baseline "
            f"{_pt(base['target_test_acc'])} (<= 10 apart); clean-input acc {_pt(clean_acc)} <= {_pt(bound)}")


def test_c08_black_box_parity(record_property, clean):
    pipeline = clean[0]
    target = pipeline.baseline_target(0)
    attack, threshold = pipeline.attack(0)
    ins, outs = pipeline.pool("target", "attack_eval")
    local = evaluate_attack(attack, threshold, target, ins, outs)
    with serve(ServeConfig(""), model=target) as server:
        remote = remote_attack(server.url, attack, threshold, ins, outs)
        probe = ins[:10] + outs[:10]
        worst = max(float(np.max(np.abs(np.asarray(query_endpoint(server.url, c).posteriors)
                                        - predict_posteriors(target, c)))) for c in probe)
    diff = abs(remote.accuracy - local.accuracy)
    ok = diff <= 0.01 and worst <= 1e-6
    verdict(record_property, 8, ok, f"remote attack {_pt(remote.accuracy)} vs local {_pt(local.accuracy)} "
            f"(<= 1 point apart); max posterior difference {worst:.1e} (<= 1e-6)")


def test_c09_determinism(record_property, tiny_experiment, tmp_path):
    spec = ExperimentSpec(corpus=tiny_experiment.corpus, seeds=(0, 1),
                          grid=(GridEntry("baseline", (0.0, 0.01)), GridEntry("adversarial_regularization", (1.0,)),
                                GridEntry("obfuscation", ("topk:1", "rank")), GridEntry("distillation", (1.0,)),
                                GridEntry("key", (0.5,))),
                          base_config=tiny_experiment.base_config, attack_config=tiny_experiment.attack_config,
                          arch_options=tiny_experiment.arch_options)
    files = []
    for run in ("a", "b"):
        result = run_experiment(spec)
        files.append(open(render_report(result.rows, str(tmp_path / run))["results.csv"], "rb").read())
    n_rows = files[0].count(b"\n") - 1
    ok = files[0] == files[1] and n_rows == 2 * len(spec.points())
    verdict(record_property, 9, ok, f"two runs of a {n_rows}-row spec give byte-identical results.csv: "
            f"{files[0] == files[1]}")


UNIT_INVARIANTS = [
    "tests/test_nncore.py::test_softmax_examples",
    "tests/test_nncore.py::test_softmax_normalized_and_argmax_invariant",
    "tests/test_nncore.py::test_entropy_non_decreasing_in_temperature",
    "tests/test_features.py::test_sine_peak_bin",
    "tests/test_features.py::test_parseval",
    "tests/test_attack.py::test_metrics_arithmetic",
    "tests/test_attack.py::test_metrics_invariants",
    "tests/test_corpus.py::test_default_split_sizes",
    "tests/test_corpus.py::test_split_hygiene",
    "tests/test_corpus.py::test_split_hygiene_property",
]


def test_c10_unit_invariants(record_property, pytestconfig):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *UNIT_INVARIANTS],
                          cwd=str(pytestconfig.rootpath), capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 120
    verdict(record_property, 10, ok, f"softmax/entropy, STFT peak/Parseval, metric arithmetic, split hygiene: "
            f"{summary} in {elapsed:.1f}s (< 120s)")
