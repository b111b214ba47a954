"""Command line entry point: ``scornn run|eval|gradcheck|orthodrift``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from . import config, drift, gradcheck as gc, train


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(config.ExperimentConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                       help=f"override config key {f.name} (default {f.default!r})")


def cmd_run(args) -> int:
    overrides = {f.name: getattr(args, f.name) for f in fields(config.ExperimentConfig)
                 if getattr(args, f.name) is not None}
    try:
        cfg = config.build(args.preset, args.config, overrides).validate()
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = train.run(cfg)
    except train.TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 1
    last = result.rows[-1]
    print(f"done: iteration {last['iteration']} eval_loss {last['eval_loss']:.6g} "
          f"eval_metric {last['eval_metric']:.6g} -> {cfg.out_dir}")
    return 0


def cmd_eval(args) -> int:
    row = train.eval_checkpoint(args.checkpoint, args.out, args.data_dir)
    print(" ".join(f"{k}={v:.6g}" for k, v in row.items()))
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        errs = gc.gradcheck(args.n, args.T, seed, args.step, args.model, args.corrupt_skew)
        print(f"seed {seed}: " + " ".join(f"{k}={v:.3e}" for k, v in errs.items()))
        worst = max(worst, *errs.values())
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def cmd_orthodrift(args) -> int:
    curve = drift.orthodrift(args.n, args.steps, args.precision, args.seed, args.lr, args.lr_skew, args.out)
    if args.steps:
        print(f"final scores: cayley {curve.cayley[-1]:.3e} multiplicative {curve.multiplicative[-1]:.3e}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scornn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train a model and write metrics.csv + checkpoint.npz")
    p.add_argument("--preset", choices=sorted(config.PRESETS))
    p.add_argument("--config", help="flat 'key = value' config file")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its task's test set")
    p.add_argument("checkpoint")
    p.add_argument("--out", help="write the result row as CSV")
    p.add_argument("--data-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with central differences")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--model", choices=("scornn", "lstm"), default="scornn")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--corrupt-skew", action="store_true", help="flip the skew gradient's sign (self-test)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("orthodrift", help="orthogonality drift: scaled Cayley vs. multiplicative updates")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--precision", choices=("double", "single"), default="double")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-skew", type=float, default=1e-4)
    p.add_argument("--out", default="orthodrift.csv")
    p.set_defaults(func=cmd_orthodrift)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
