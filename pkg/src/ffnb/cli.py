"""Command-line entry points: run, synth, eval, sweep."""

import argparse
import json
import sys

from .checkpoint import load_checkpoint
from .config import load_config
from .errors import FfnbError
from .metrics import SWEEP_AXES, evaluate_checkpoint, run_experiment, run_sweep
from .stream import load_stream, save_stream, synth_gaussian_stream

__all__ = ["main"]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ffnb",
        description="Continual-learning benchmark harness over feature-vector task streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train and evaluate one experiment from a config file")
    run.add_argument("--config", required=True, help="path to a JSON run config")
    run.add_argument(
        "--method",
        choices=["ffnb", "naive", "multitask"],
        help="override the config's method",
    )
    run.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. train.epochs=10 (repeatable)",
    )
    run.add_argument("--resume", help="checkpoint file to continue from")
    run.add_argument(
        "--stop-after",
        type=int,
        metavar="N",
        help="stop once N tasks are trained (partial run, checkpointable)",
    )

    synth = sub.add_parser("synth", help="generate a synthetic Gaussian task stream file")
    synth.add_argument("--out", required=True, help="output stream path")
    synth.add_argument("--format", choices=["csv", "json"], default="csv")
    synth.add_argument("--n-tasks", type=int, default=8)
    synth.add_argument("--classes-per-task", type=int, default=1)
    synth.add_argument("--d0", type=int, default=64)
    synth.add_argument("--n-per-class", type=int, default=100)
    synth.add_argument("--separation", type=float, default=8.0)
    synth.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("eval", help="evaluate a saved checkpoint on a stream")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--stream", required=True)
    ev.add_argument("--format", choices=["csv", "json"], default="csv")

    sweep = sub.add_parser("sweep", help="run one experiment per value of one config axis")
    sweep.add_argument("--config", required=True)
    sweep.add_argument(
        "--axis",
        required=True,
        metavar="KEY=V1,V2,...",
        help=f"axis and comma-separated values; axes: {', '.join(SWEEP_AXES)}",
    )
    return parser


def _parse_axis(text):
    key, sep, values = text.partition("=")
    if not sep or not values:
        raise FfnbError(f"--axis must look like p=15,25,35, got {text!r}")
    convert = {
        "p": int,
        "band_size": int,
        "layers": int,
        "weight_decay": float,
        "activation": str,
    }.get(key)
    if convert is None:
        raise FfnbError(f"unknown sweep axis {key!r}; choose from {', '.join(SWEEP_AXES)}")
    try:
        return key, [convert(v) for v in values.split(",")]
    except ValueError as exc:
        raise FfnbError(f"--axis {key}: {exc}") from exc


def _cmd_run(args):
    overrides = list(args.override)
    if args.method:
        overrides.append(f"method={args.method}")
    config = load_config(args.config, overrides)
    report = run_experiment(config, resume=args.resume, stop_after=args.stop_after)
    summary = {
        "method": report["method"],
        "tasks": len(report["union_accuracy"]),
        "final_union_accuracy": report["union_accuracy"][-1] if report["union_accuracy"] else None,
        "avg_incremental_accuracy": report["avg_incremental_accuracy"],
        "output_dir": config.output_dir,
    }
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_synth(args):
    stream = synth_gaussian_stream(
        n_tasks=args.n_tasks,
        classes_per_task=args.classes_per_task,
        d0=args.d0,
        n_per_class=args.n_per_class,
        separation=args.separation,
        seed=args.seed,
    )
    save_stream(stream, args.out, format=args.format)
    n_train = sum(len(t.train) for t in stream.tasks)
    n_test = sum(len(t.test) for t in stream.tasks)
    print(f"wrote {args.out}: {len(stream.tasks)} tasks, d0={stream.d0}, {n_train} train / {n_test} test samples")
    return 0


def _cmd_eval(args):
    state = load_checkpoint(args.checkpoint)
    stream = load_stream(args.stream, format=args.format)
    result = evaluate_checkpoint(state, stream)
    json.dump(result, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def _cmd_sweep(args):
    key, values = _parse_axis(args.axis)
    config = load_config(args.config)
    rows = run_sweep(config, key, values)
    json.dump(rows, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "synth": _cmd_synth,
        "eval": _cmd_eval,
        "sweep": _cmd_sweep,
    }[args.command]
    try:
        return handler(args)
    except FfnbError as exc:
        print(f"ffnb {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ffnb {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
