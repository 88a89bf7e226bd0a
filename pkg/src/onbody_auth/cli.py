"""Command-line entry point: ``onbody-auth <command> --config cfg.json --out DIR``.

All commands share one output directory; each stage reads what the
previous one wrote there unless an explicit input path is given::

    DIR/traces/       manifest.json + trace_NNNNN.csv/.json
    DIR/profiles/     train.jsonl, test.jsonl, normalizer.json
    DIR/model/        checkpoint.json, history.json   (model-baseline/ with --baseline)
    DIR/eval/         metrics.json, roc.csv, *.svg    (eval-baseline/ with --baseline)
    DIR/protocol/     transcript.jsonl
    DIR/theory/       report.json
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline, protocol
from .adversarial import equilibrium as eq
from .channel import CONTROLLED_MOTIONS, EnvironmentClass, gen_offbody_trace, gen_onbody_trace
from .seeding import derive_seed


class CliError(Exception):
    pass


def _load_config(args) -> pipeline.ExperimentConfig:
    obj = {}
    if args.config is not None:
        try:
            obj = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
    if args.seed is not None:
        obj = {**obj, "seed": args.seed}
    return pipeline.ExperimentConfig.from_json(obj)


def _out_dir(args) -> Path:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise CliError(f"output path {out} is not a directory")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from None
    return out


def _suffix(args) -> str:
    return "-baseline" if getattr(args, "baseline", False) else ""


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    traces = pipeline.simulate(cfg)
    pipeline.write_dataset(traces, out / "traces")
    print(f"{'class':<5} {'motion':<12} {'environment':<12} count")
    for y, z, v, n in pipeline.cell_table(traces):
        print(f"{y:<5} {z:<12} {v:<12} {n}")
    print(f"total {len(traces)} traces -> {out / 'traces' / 'manifest.json'}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    manifest = Path(args.manifest) if args.manifest else out / "traces" / "manifest.json"
    traces = pipeline.load_dataset(manifest)
    train_p, test_p, norm = pipeline.featurize(traces, cfg.seed, cfg.train_fraction)
    pipeline.write_featurized(train_p, test_p, norm, out / "profiles")
    print(f"{len(train_p)} training profiles, {len(test_p)} test profiles -> {out / 'profiles'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    profiles_dir = Path(args.profiles) if args.profiles else out / "profiles"
    train_p = pipeline.read_split(profiles_dir / "train.jsonl")
    norm = pipeline.load_normalizer(profiles_dir / "normalizer.json")
    tcfg = cfg.train.as_baseline() if args.baseline else cfg.train
    every = max(1, tcfg.outer_iters // 10)

    def progress(h):
        if h["iter"] % every == 0 or h["iter"] == tcfg.outer_iters - 1:
            print(f"iter {h['iter']:>6}  L_P {h['L_P']:.4f}  L_D {h['L_D']:.4f}  "
                  f"L_C {h['L_C']:.4f}  V {h['V']:.4f}", file=sys.stderr)

    result = pipeline.train_profiles(train_p, norm, tcfg, progress=progress)
    target = out / f"model{_suffix(args)}"
    pipeline.save_trained(result, norm, tcfg, target)
    print(f"checkpoint -> {target / 'checkpoint.json'}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"model{_suffix(args)}" / "checkpoint.json"
    model, norm = pipeline.load_trained(ckpt)
    profiles = Path(args.profiles) if args.profiles else out / "profiles" / "test.jsonl"
    records = pipeline.score(model, norm, pipeline.read_split(profiles))
    report, curve, m = pipeline.evaluation_report(records, cfg.threshold)
    target = out / f"eval{_suffix(args)}"
    pipeline.write_evaluation(report, curve, m, target)
    o = report["overall"]
    print(f"accuracy {o['accuracy']:.4f}  TP {o['tp_rate']:.4f}  FP {o['fp_rate']:.4f}  "
          f"AUROC {report['auroc']:.4f} -> {target}")
    return 0


def _calibration_traces(seed: int, n_per_class: int = 20):
    traces = []
    for i in range(n_per_class):
        z, v = CONTROLLED_MOTIONS[i % 5], EnvironmentClass(i % 5)
        sub = derive_seed(seed, "calibration", i) >> 1
        traces.append(gen_onbody_trace(z, v, 5.0, sub))
        traces.append(gen_offbody_trace(v, duration=5.0, seed=sub ^ 1, z=z))
    return traces


def _verifier(name: str, spec: pipeline.ProtocolSpec, seed: int, checkpoint: Path | None):
    if name == "oracle":
        return protocol.OracleVerifier()
    if name == "threshold":
        if spec.threshold_cutoff is not None:
            return protocol.ThresholdVerifier(spec.threshold_cutoff)
        return protocol.calibrate_threshold(_calibration_traces(seed))
    if name == "learned":
        if checkpoint is None:
            raise CliError("the learned verifier needs --checkpoint")
        model, norm = pipeline.load_trained(checkpoint)
        return protocol.LearnedVerifier(model, norm, spec.k_segments)
    raise CliError(f"unknown verifier {name!r}")


BUILTIN_SCENARIOS = {
    "legitimate": protocol.legitimate_script,
    "spoofing": protocol.spoofing_script,
    "deadlock": protocol.deadlock_script,
}


def cmd_protocol(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    spec = cfg.protocol
    scenario = args.scenario or spec.scenario
    if scenario in BUILTIN_SCENARIOS:
        script = BUILTIN_SCENARIOS[scenario]()
    else:
        try:
            script = json.loads(Path(scenario).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read scenario {scenario}: {exc}") from None
    verifier = _verifier(args.verifier or spec.verifier, spec, cfg.seed,
                         Path(args.checkpoint) if args.checkpoint else None)
    transcript = protocol.run_scenario(script, verifier, cfg.seed, spec.timeout, spec.k_segments)
    target = out / "protocol"
    target.mkdir(exist_ok=True)
    protocol.write_transcript(transcript, target / "transcript.jsonl")
    print(" -> ".join(transcript.messages()) or "(empty script)")
    print(f"final state {transcript.final.state.value} -> {target / 'transcript.jsonl'}")
    return 0


def cmd_theory_check(args) -> int:
    cfg = _load_config(args) if (args.config or args.seed is not None) else None
    out = _out_dir(args)
    joints = eq.read_joints(Path(args.joints)) if args.joints else eq.builtin_joints()
    alpha = cfg.train.alpha if cfg else 0.5
    beta = cfg.train.beta if cfg else 0.5
    seed = cfg.seed if cfg else 0
    reports = []
    all_pass = True
    for joint in joints:
        closed = eq.tabular_equilibrium_check(joint, alpha, beta, seed=seed)
        entry = closed.to_json()
        if not args.skip_gradient:
            grad = eq.gradient_training_vs_oracle(joint, eq.TinyConfig(alpha=alpha, beta=beta, seed=seed))
            entry["gradient_training"] = grad.to_json()
            entry["pass"] = closed.passed and grad.passed
        all_pass &= entry["pass"]
        reports.append(entry)
        for c in closed.checks:
            print(f"{joint.name:<28} {c.name:<36} {c.extractor:<16} {'PASS' if c.passed else 'FAIL'}")
        if "gradient_training" in entry:
            g = entry["gradient_training"]
            print(f"{joint.name:<28} {'gradient_training':<36} {'tiny_model':<16} "
                  f"{'PASS' if g['pass'] else 'FAIL'}")
    target = out / "theory"
    target.mkdir(exist_ok=True)
    (target / "report.json").write_text(json.dumps({"alpha": alpha, "beta": beta, "joints": reports},
                                                   indent=1, sort_keys=True) + "\n")
    return 0 if all_pass else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    common.add_argument("--out", required=True, help="experiment output directory")

    parser = argparse.ArgumentParser(prog="onbody-auth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="generate RSS traces").set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", parents=[common], help="traces -> profiles + normalizer")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="adversarial training")
    p.add_argument("--profiles", help="directory holding train.jsonl and normalizer.json")
    p.add_argument("--baseline", action="store_true", help="alpha = beta = 0")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="metrics, ROC and plots")
    p.add_argument("--checkpoint")
    p.add_argument("--profiles", help="profiles JSONL to score (default: the test split)")
    p.add_argument("--baseline", action="store_true", help="evaluate the baseline model")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("protocol", parents=[common], help="run a gateway scenario")
    p.add_argument("--scenario", help="legitimate | spoofing | deadlock | path to a JSON script")
    p.add_argument("--verifier", choices=("oracle", "threshold", "learned"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_protocol)

    p = sub.add_parser("theory-check", parents=[common], help="tabular equilibrium checks")
    p.add_argument("--joints", help="JSON file with one joint or a list of joints")
    p.add_argument("--skip-gradient", action="store_true", help="closed-form checks only")
    p.set_defaults(func=cmd_theory_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
