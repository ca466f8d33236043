"""Command-line surface.

Subcommands: verify, train, eval, rate, analyze, report, sweep. Exit code
0 on success, 1 when a check fails, 2 on usage or configuration errors.
Commands that generate randomness require an explicit --seed; there is no
hidden entropy. PBSD_LAB_OUT overrides the default output directory and
--quiet suppresses progress lines on the error stream.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError, LabError, SchemaError
from .information import RateConfig, rate_experiment, teacher_gap_diagnostic
from .oracle import implied_reward, random_instance, tilted_policy, verify_prop1, verify_prop2
from .policy import init_policy, student_view, teacher_view, view_param_indices
from .reporting import render_report
from .tasks import TaskConfig, generate_task
from .trainer import TrainConfig, evaluate, load_checkpoint, run

PROP1_L1_TOL = 1e-6
PROP1_F_TOL = 1e-9
PROP2_FLOOR = -1e-12
PROP2_STRICT = 1e-12
EQ5_TOL = 1e-9
SLOPE_BAND = (-0.65, -0.35)


def _progress(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr, flush=True)


def load_config_file(path, run_seed=None) -> TrainConfig:
    """Strict config loading: JSON object, no duplicate or unknown keys."""

    def reject_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                raise ConfigurationError(f"duplicate config key: {key!r}")
            seen[key] = value
        return seen

    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text, object_pairs_hook=reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a JSON object")
    return TrainConfig.from_dict(data, run_seed=run_seed)


def _default_out(args, leaf: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    base = os.environ.get("PBSD_LAB_OUT", "runs")
    return Path(base) / leaf


def _require_seed(parser, args):
    if args.seed is None:
        parser.error("--seed is required for this subcommand")


def cmd_verify(args) -> int:
    all_pass = True
    for i in range(args.instances):
        instance_seed = args.seed + i
        teacher, rewards, beta = random_instance(instance_seed)

        report = verify_prop1(teacher, rewards, beta, trials=args.trials, seed=instance_seed)
        p1_ok = (
            report.converged
            and report.max_l1 <= PROP1_L1_TOL
            and abs(report.f_gap) <= PROP1_F_TOL
        )
        print(json.dumps({
            "check": "prop1", "instance_seed": instance_seed,
            "gap": report.f_gap, "max_l1": report.max_l1, "pass": p1_ok,
        }, separators=(",", ":")))

        gap, strict = verify_prop2(teacher, rewards, beta)
        p2_ok = gap >= PROP2_FLOOR and (not strict or gap > PROP2_STRICT)
        print(json.dumps({
            "check": "prop2", "instance_seed": instance_seed,
            "gap": gap, "max_l1": 0.0, "pass": p2_ok,
        }, separators=(",", ":")))

        tilt = tilted_policy(teacher, rewards, beta)
        recovered = implied_reward(tilt.probs, teacher, beta)
        centered = rewards - rewards.mean()
        dev = float(np.max(np.abs(recovered - centered)))
        p3_ok = dev <= EQ5_TOL
        print(json.dumps({
            "check": "eq5", "instance_seed": instance_seed,
            "gap": 0.0, "max_l1": dev, "pass": p3_ok,
        }, separators=(",", ":")))

        all_pass = all_pass and p1_ok and p2_ok and p3_ok
    return 0 if all_pass else 1


def cmd_train(args, parser) -> int:
    _require_seed(parser, args)
    config = load_config_file(args.config, run_seed=args.seed)
    out_dir = _default_out(args, f"train_{config.method}_s{config.run_seed}")
    _progress(args, f"training {config.method} for {config.steps} steps -> {out_dir}")
    result = run(config, out_dir=out_dir, quiet=args.quiet)
    final = result.metrics[-1]
    _progress(args, f"final expected reward {final.expected_reward_exact:.4f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = load_config_file(args.config, run_seed=ckpt.seed)
    task = generate_task(config.task_seed, config.task_config())
    report = evaluate(ckpt.params, task, context_mode=args.view)
    print(json.dumps({
        "mean_expected_reward": report.mean_expected_reward,
        "mean_target_mass": report.mean_target_mass,
        "greedy_accuracy": report.greedy_accuracy,
        "per_prompt_expected_reward": report.per_prompt_expected_reward,
        "per_prompt_target_mass": report.per_prompt_target_mass,
        "per_prompt_greedy_correct": report.per_prompt_greedy_correct,
    }, separators=(",", ":")))
    return 0


def cmd_rate(args, parser) -> int:
    _require_seed(parser, args)
    out_dir = _default_out(args, f"rate_d{args.d}_s{args.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(args.seed + j for j in range(args.seeds))
    results = {}
    for design in ("rich", "narrow"):
        _progress(args, f"rate experiment, {design} design, {args.seeds} seeds")
        results[design] = rate_experiment(RateConfig(d=args.d, design=design, seeds=seeds))

    csv_lines = ["n,seed,error_l2,lambda_min,design"]
    for design in ("rich", "narrow"):
        for rec in results[design].records:
            csv_lines.append(
                f"{rec.n},{rec.seed},{rec.error_l2!r},{rec.lambda_min!r},{design}"
            )
    (out_dir / "rate_records.csv").write_text("\n".join(csv_lines) + "\n")

    slope = results["rich"].slope
    band_pass = SLOPE_BAND[0] <= slope <= SLOPE_BAND[1]
    summary = {"slope": slope, "intercept": results["rich"].intercept, "band_pass": band_pass}
    (out_dir / "rate_summary.json").write_text(
        json.dumps(summary, separators=(",", ":"), sort_keys=True) + "\n"
    )
    print(json.dumps(summary, separators=(",", ":"), sort_keys=True))
    return 0 if band_pass else 1


def cmd_analyze(args, parser) -> int:
    _require_seed(parser, args)
    out_dir = _default_out(args, f"analyze_s{args.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    task = generate_task(args.task_seed, TaskConfig())
    params = init_policy(task, seed=args.seed, teacher_bias=args.bias)
    external_params = init_policy(task, seed=args.seed + 1, teacher_bias=args.external_bias)
    student = student_view(params)
    contextual = teacher_view(params, frozen=True)
    external = teacher_view(external_params, frozen=True)
    indices = view_param_indices(student, task)
    diagnostics = teacher_gap_diagnostic(
        student, contextual, external, task,
        n_pairs=args.pairs, beta=args.beta, seed=args.seed, param_indices=indices,
    )
    lines = ["teacher,margin_mean,margin_std,mean_curvature_weight,lambda_min"]
    for diag in diagnostics:
        lines.append(
            f"{diag.label},{diag.margin_mean!r},{diag.margin_std!r},"
            f"{diag.mean_curvature_weight!r},{diag.lambda_min!r}"
        )
    (out_dir / "teacher_gap.csv").write_text("\n".join(lines) + "\n")
    _progress(args, f"teacher gap diagnostic -> {out_dir / 'teacher_gap.csv'}")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out) if args.out else Path(args.metrics).parent / "report"
    written = render_report(args.metrics, out_dir)
    for path in written:
        print(path)
    return 0


def cmd_sweep(args, parser) -> int:
    _require_seed(parser, args)
    config = load_config_file(args.config, run_seed=args.seed)
    betas = [float(b) for b in args.betas.split(",") if b.strip()]
    if not betas:
        raise ConfigurationError("empty beta grid")
    out_dir = _default_out(args, f"sweep_{config.method}_s{args.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for beta in betas:
        sub = out_dir / f"beta_{beta:g}"
        cfg = TrainConfig.from_dict({**config.to_dict(), "beta": beta})
        _progress(args, f"sweep: beta={beta:g}")
        result = run(cfg, out_dir=sub, quiet=args.quiet)
        summary[f"{beta:g}"] = result.metrics[-1].expected_reward_exact
    (out_dir / "sweep_summary.json").write_text(
        json.dumps(summary, separators=(",", ":"), sort_keys=True) + "\n"
    )
    print(json.dumps(summary, separators=(",", ":"), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbsd-lab")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="closed-form optimum and identity checks")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--trials", type=int, default=3)

    p = sub.add_parser("train", help="run a training config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint exactly")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--view", choices=("student", "teacher"), default="student")

    p = sub.add_parser("rate", help="pairwise-MLE concentration experiment")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--seeds", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("analyze", help="contextual vs external teacher diagnostic")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--task-seed", type=int, default=7, dest="task_seed")
    p.add_argument("--pairs", type=int, default=256)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--bias", type=float, default=3.0)
    p.add_argument("--external-bias", type=float, default=8.0, dest="external_bias")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="render metrics JSONL to CSV and SVG")
    p.add_argument("metrics")
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="beta grid over a base config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--betas", default="0.05,0.1,0.5,1.0")
    p.add_argument("--out", default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "rate":
            return cmd_rate(args, parser)
        if args.command == "analyze":
            return cmd_analyze(args, parser)
        if args.command == "report":
            return cmd_report(args)
        if args.command == "sweep":
            return cmd_sweep(args, parser)
        parser.error(f"unknown subcommand: {args.command}")
    except (ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, LabError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
