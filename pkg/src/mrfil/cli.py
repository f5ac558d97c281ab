"""Command-line harness: one subcommand per pipeline stage, plus verification and reporting.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
violation, 3 numerical or other runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ExperimentConfig, load_config
from .errors import ConfigError, MrfilError
from .plotting import learning_curve_svg
from .theory import report_csv, run_verification

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _global_flags(parser, suppress: bool) -> argparse.ArgumentParser:
    # subcommands accept the global flags too; SUPPRESS keeps them from clobbering earlier values
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=dflt(None), help="INI experiment config (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, default=dflt(None), help="run seed; overrides [run] seed")
    parser.add_argument("--out", default=dflt("runs/default"), help="run directory (default: runs/default)")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(argparse.ArgumentParser(add_help=False), suppress=True)
    p = _global_flags(_Parser(prog="mrfil", description="Model-reward imitation learning lab"), suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-demos", parents=[common], help="generate and split expert demonstrations")
    sub.add_parser("train-dynamics", parents=[common], help="train the ensemble and m0, calibrate the reward")
    sub.add_parser("pretrain", parents=[common], help="behaviour cloning then model-based pre-training")
    t = sub.add_parser("train", parents=[common], help="online training in the real environment")
    t.add_argument("--method", choices=("mrfil", "bc"), default="mrfil")
    t.add_argument("--tau", type=float, help="supervised-term weight (default from config)")
    v = sub.add_parser("verify", parents=[common], help="exact checks of the tabular results")
    v.add_argument("--trials", type=int, help="trials per check (overrides [verify] trials)")
    v.add_argument("--bound-multiplier", type=float, help="scale applied to the return-gap bound (test hook)")
    r = sub.add_parser("report", parents=[common], help="aggregate runs into a table and a curve")
    r.add_argument("run_dirs", nargs="+", help="run directories (each holding runs/<label>/eval.csv)")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_gen_demos(cfg, out) -> int:
    pipeline.write_run_header(cfg, out)
    train, held = pipeline.stage_gen_demos(cfg, out)
    print(f"wrote {len(train)} train and {len(held)} eval episodes to {Path(out) / 'demos'}")
    return EXIT_OK


def cmd_train_dynamics(cfg, out) -> int:
    pipeline.write_run_header(cfg, out)
    _, _, reward = pipeline.stage_train_dynamics(cfg, out)
    print(f"reward threshold {reward.threshold:.6g} (quantile {reward.quantile})")
    return EXIT_OK


def cmd_pretrain(cfg, out) -> int:
    pipeline.write_run_header(cfg, out)
    _, _, _, log = pipeline.stage_pretrain(cfg, out)
    print(f"pre-trained on {log.branches} branches, {log.steps} model steps, mean reward {log.mean_reward:.4f}")
    return EXIT_OK


def cmd_train(cfg, out, method: str, tau) -> int:
    pipeline.write_run_header(cfg, out)
    metrics = pipeline.stage_train(cfg, out, method, tau)
    print(f"{method}: {metrics.env_steps} env steps, final eval return {metrics.final_eval:.4f}")
    return EXIT_OK


def cmd_verify(cfg, out, trials, bound_multiplier) -> int:
    vc = cfg.verify
    if trials is not None:
        vc = dataclasses.replace(vc, trials=trials, joint_trials=10 * trials)
    if bound_multiplier is not None:
        vc = dataclasses.replace(vc, bound_multiplier=bound_multiplier)
    rows, summary = run_verification(vc)
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "verify.csv").write_text(report_csv(rows, summary))
    print(f"checks={summary['checks']} violations={summary['violations']} -> {Path(out) / 'verify.csv'}")
    return EXIT_VIOLATION if summary["violations"] else EXIT_OK


def _read_evals(path: Path) -> list[tuple[int, float]]:
    with open(path) as fh:
        return [(int(r["env_steps"]), float(r["eval_return"])) for r in csv.DictReader(fh)]


def collect_runs(run_dirs) -> dict[str, list[list[tuple[int, float]]]]:
    """Map label -> list of eval curves (one per run directory)."""
    found: dict[str, list] = {}
    for d in run_dirs:
        d = Path(d)
        files = sorted(d.glob("runs/*/eval.csv")) or ([d / "eval.csv"] if (d / "eval.csv").exists() else [])
        for f in files:
            found.setdefault(f.parent.name, []).append(_read_evals(f))
    if not found:
        raise ConfigError("no completed runs found (expected runs/<label>/eval.csv)")
    return found


def aggregate(curves: list[list[tuple[int, float]]]) -> list[dict]:
    by_step: dict[int, list[float]] = {}
    for curve in curves:
        for step, ret in curve:
            by_step.setdefault(step, []).append(ret)
    rows = []
    for step in sorted(by_step):
        v = np.array(by_step[step])
        rows.append({"env_steps": step, "n": len(v), "mean": float(v.mean()),
                     "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
                     "min": float(v.min()), "max": float(v.max())})
    return rows


def cmd_report(run_dirs, out) -> int:
    runs = collect_runs(run_dirs)
    Path(out).mkdir(parents=True, exist_ok=True)
    lines = ["label,env_steps,n,mean,std,min,max"]
    finals = ["label,n,final_mean,final_std"]
    series = {}
    for label in sorted(runs):
        agg = aggregate(runs[label])
        lines += [f"{label},{r['env_steps']},{r['n']},{r['mean']:.17g},{r['std']:.17g},"
                  f"{r['min']:.17g},{r['max']:.17g}" for r in agg]
        series[label] = [(r["env_steps"], r["mean"], r["std"]) for r in agg]
        last = np.array([c[-1][1] for c in runs[label] if c])
        sd = float(last.std(ddof=1)) if len(last) > 1 else 0.0
        finals.append(f"{label},{len(last)},{last.mean():.17g},{sd:.17g}")
        print(f"{label:>14}  runs={len(last)}  final={last.mean():.4f} +/- {sd:.4f}")
    (Path(out) / "report.csv").write_text("\n".join(lines) + "\n")
    (Path(out) / "final.csv").write_text("\n".join(finals) + "\n")
    (Path(out) / "curves.svg").write_text(learning_curve_svg(series, "evaluation return vs interactions"))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "report":
            return cmd_report(args.run_dirs, args.out)
        cfg = _config(args)
        out = args.out
        if args.command == "gen-demos":
            return cmd_gen_demos(cfg, out)
        if args.command == "train-dynamics":
            return cmd_train_dynamics(cfg, out)
        if args.command == "pretrain":
            return cmd_pretrain(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out, args.method, args.tau)
        if args.command == "verify":
            return cmd_verify(cfg, out, args.trials, args.bound_multiplier)
    except MrfilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
