"""Command-line entry point: corpus synthesis, training stages, serving, and experiment grids."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .attack import (build_attack_dataset, evaluate_attack, load_attack, save_attack, select_threshold,
                     train_attack)
from .corpus import REVERB_PRESETS, CorpusSpec, build_corpus, load_corpus, plan_splits, save_corpus
from .defenses import (AdvRegConfig, DistillConfig, KeyConfig, load_served_model, save_served_model,
                       train_adversarially_regularized, train_distilled, train_keyed)
from .harness import ExperimentSpec, Pipeline, render_report, run_experiment
from .obfuscation import ObfuscationConfig
from .server import RemoteQueryError, ServeConfig, make_server, remote_attack
from .sid import evaluate_sid, save_sid, train_sid

EXIT_FAILED_POINTS = 2
EXIT_REMOTE = 3


def _spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.load(args.config) if args.config else ExperimentSpec()
    if args.seed is not None:
        spec = replace(spec, seeds=(args.seed,))
    return spec


def _seed(args, spec) -> int:
    return spec.seeds[0]


def _pipeline(args) -> Pipeline:
    spec = _spec(args)
    corpus, plan = load_corpus(args.corpus)
    if plan is None:
        plan = plan_splits(corpus, spec.split_seed)
    return Pipeline(spec, corpus, plan)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_synth(args):
    spec = CorpusSpec(n_speakers=args.n_speakers, clips_per_speaker=args.clips_per_speaker,
                      condition=args.condition, noise_snr_db=args.snr_db,
                      reverb_preset=args.reverb or ("room_a" if args.condition == "noisy" else "none"),
                      master_seed=args.master_seed)
    corpus = build_corpus(spec)
    plan = plan_splits(corpus, args.split_seed)
    save_corpus(corpus, args.out, plan)
    _print({"clips": len(corpus.clips), "digest": corpus.digest(), "out": args.out})
    return 0


def _train_cohort(args, cohort):
    p = _pipeline(args)
    seed = _seed(args, p.spec)
    if cohort == "shadow":
        seed += p.spec.shadow_seed_offset
    cfg = p.base(seed, l2_alpha=args.alpha if cohort == "target" else 0.0)
    model, report = train_sid(p.clips(cohort, "in_train"), p.eval_clips(cohort), cfg,
                              arch_options=p.spec.arch_options)
    save_sid(model, args.out)
    _print({"cohort": cohort, "train_acc": report.train_acc, "eval_acc": report.eval_acc,
            "epochs": len(report.epochs), "out": args.out})
    return 0


def cmd_train_target(args):
    return _train_cohort(args, "target")


def cmd_train_shadow(args):
    return _train_cohort(args, "shadow")


def cmd_train_attack(args):
    p = _pipeline(args)
    shadow = load_served_model(args.shadow)
    obf = ObfuscationConfig.parse(args.obfuscation)
    records = build_attack_dataset(shadow, *p.pool("shadow", "attack_train"), obfuscation=obf)
    val = build_attack_dataset(shadow, *p.pool("shadow", "attack_validation"), obfuscation=obf)
    model = train_attack(records, p.spec.attack_config.replace(seed=_seed(args, p.spec)))
    threshold = select_threshold(model, val)
    save_attack(model, args.out, threshold)
    _print({"records": len(records), "threshold": threshold, "out": args.out})
    return 0


def cmd_evaluate(args):
    p = _pipeline(args)
    target = load_served_model(args.target)
    attack, threshold = load_attack(args.attack)
    obf = ObfuscationConfig.parse(args.obfuscation)
    metrics = evaluate_attack(attack, threshold, target, *p.pool("target", "attack_eval"), obfuscation=obf)
    _print({"target_train_acc": evaluate_sid(target, p.clips("target", "in_train")),
            "target_test_acc": evaluate_sid(target, p.eval_clips("target")),
            "attack": metrics.to_dict()})
    return 0


def cmd_defend(args):
    p = _pipeline(args)
    seed = _seed(args, p.spec)
    train, ev = p.clips("target", "in_train"), p.eval_clips("target")
    base = p.base(seed)
    if args.defense == "adversarial_regularization":
        cfg = AdvRegConfig(args.param, p.spec.advreg_inner_steps, p.spec.advreg_reference_fraction, seed=seed)
        model, _ = train_adversarially_regularized(train, ev, p.reference_clips(cfg), cfg, base,
                                                   p.spec.arch_options)
    elif args.defense == "distillation":
        model, _ = train_distilled(train, ev, DistillConfig(args.param, teacher_config=base), p.spec.arch_options)
    else:
        model, _ = train_keyed(train, ev, KeyConfig(noise_amplitude=args.param, seed=seed), base,
                               p.spec.arch_options)
    save_served_model(model, args.out)
    _print({"defense": args.defense, "parameter": args.param, "out": args.out})
    return 0


def cmd_serve(args):
    cfg = ServeConfig(args.checkpoint, ObfuscationConfig.parse(args.obfuscation), args.host, args.port,
                      args.max_concurrent)
    server = make_server(cfg)
    print(f"serving {args.checkpoint} at {server.url} ({cfg.obfuscation.label()})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()
    return 0


def cmd_attack_remote(args):
    p = _pipeline(args)
    attack, threshold = load_attack(args.attack)
    try:
        metrics = remote_attack(args.endpoint, attack, threshold, *p.pool("target", "attack_eval"))
    except RemoteQueryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    _print(metrics.to_dict())
    return 0


def cmd_experiment(args):
    spec = _spec(args)
    if args.out:
        spec = replace(spec, output_dir=args.out)
    result = run_experiment(spec)
    if result.rows:
        paths = render_report(result.rows, spec.output_dir, spec, result)
        print(open(paths["results.md"]).read())
    for f in result.failures:
        print(f"failed: {f['defense']} {f['parameter']} seed {f['seed']}: {f['reason']}", file=sys.stderr)
    return 0 if result.ok else EXIT_FAILED_POINTS


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment spec (training settings, seeds, grid)")
    common.add_argument("--seed", type=int, help="override the spec's seeds with this single seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="speakermia", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "synthesize a corpus and its split plan")
    p.add_argument("--out", required=True)
    p.add_argument("--condition", choices=("clean", "noisy"), default="clean")
    p.add_argument("--n-speakers", type=int, default=20)
    p.add_argument("--clips-per-speaker", type=int, default=40)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--reverb", choices=sorted(REVERB_PRESETS))
    p.add_argument("--master-seed", type=int, default=7)
    p.add_argument("--split-seed", type=int, default=0)

    for name, fn in (("train-target", cmd_train_target), ("train-shadow", cmd_train_shadow)):
        p = add(name, fn, f"train the {name.split('-')[1]} SID model")
        p.add_argument("--corpus", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--alpha", type=float, default=0.0, help="L2 weight (target only)")

    p = add("train-attack", cmd_train_attack, "train the attack net on shadow outputs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--shadow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--obfuscation", default="full")

    p = add("evaluate", cmd_evaluate, "score target accuracy and attack metrics in-process")
    p.add_argument("--corpus", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--attack", required=True)
    p.add_argument("--obfuscation", default="full")

    p = add("defend", cmd_defend, "train a defended target model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--defense", required=True, choices=("adversarial_regularization", "distillation", "key"))
    p.add_argument("--param", type=float, required=True, help="lambda, temperature or key amplitude")

    p = add("serve", cmd_serve, "serve a checkpoint over HTTP")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--obfuscation", default="full", help="full, topk:K or rank")
    p.add_argument("--max-concurrent", type=int, default=8)

    p = add("attack-remote", cmd_attack_remote, "run the attack against a served endpoint")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--attack", required=True)

    p = add("experiment", cmd_experiment, "run a full experiment grid and write reports")
    p.add_argument("--out", help="output directory (overrides the spec)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
