"""Command-line entry point: ``rdloc <command> [options]``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (solver residual,
training divergence).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness, io
from .classifier import train
from .errors import NumericalError, ValidationError
from .winding import FaultSpec, frequency_response, inject_fault

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _plan(args) -> harness.ExperimentPlan:
    plan = harness.ExperimentPlan()
    if args.config:
        plan = harness.plan_from_config(io.read_config(args.config))
    if args.seed is not None:
        plan = plan.with_seed(args.seed)
    if args.noise is not None:
        plan = replace(plan, noise=args.noise)
    plan.validate()
    return plan


def _out(args, default) -> Path:
    return Path(args.out) if args.out else Path(default)


def _emit(text, path=None):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_simulate(args):
    plan = _plan(args)
    fault = None
    if args.config:
        fault = io.fault_from_config(io.read_config(args.config))
    if args.section is not None:
        fault = FaultSpec(args.section, args.depth if args.depth is not None else 0.0)
    fault = fault or FaultSpec(1, 0.0)
    fr = frequency_response(inject_fault(plan.model, fault), plan.grid())
    _emit(io.curve_to_csv(fr), args.out)
    return EXIT_OK


def cmd_build_dataset(args):
    plan = _plan(args)
    train_ds, test_ds = harness.build_dataset(plan, args.workers)
    out = _out(args, "dataset")
    io.write_dataset(out, train_ds, test_ds)
    print(f"wrote {len(train_ds)} training and {len(test_ds)} test items to {out}")
    return EXIT_OK


def cmd_train(args):
    hyper = _plan(args).hyper
    train_ds, _ = io.read_dataset(args.dataset)
    model, tlog = train(train_ds, hyper)
    out = _out(args, "model")
    out.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(out / "checkpoint.bin", model)
    (out / "training_log.csv").write_text(tlog.to_csv())
    print(f"epochs={len(tlog.losses)} final_loss={tlog.losses[-1]!r} converged={tlog.converged}")
    return EXIT_OK


def cmd_evaluate(args):
    report = harness.evaluate_checkpoint(args.checkpoint, args.dataset)
    _emit(report.to_json(), args.out)
    return EXIT_OK


def cmd_run_experiment(args):
    plan = _plan(args)
    out = _out(args, f"experiment-seed{plan.seed}")
    result = harness.run_experiment(plan, out, args.workers)
    rep = result.report
    if not rep.ok:
        print(f"experiment failed at epoch {rep.diverged_epoch}: {rep.warning}", file=sys.stderr)
        return EXIT_NUMERIC
    print(harness.metrics_text(rep), end="")
    print(f"epochs={rep.epochs} elapsed_s={result.elapsed_s:.2f} out={out}")
    return EXIT_OK


def cmd_locate(args):
    loc = harness.locate(args.checkpoint, args.curve)
    sys.stdout.write(loc.to_text())
    return EXIT_OK


def cmd_export_curves(args):
    plan = _plan(args)
    paths = harness.export_curves(plan, _out(args, "curves"), workers=args.workers)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--seed", type=int, help="training and noise seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--noise", type=float, help="noise amplitude relative to the healthy curve's range")
    common.add_argument("--workers", type=int, default=None, help="threads for curve simulation")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rdloc", description="Radial-deformation fault localisation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write one frequency-response CSV")
    p.add_argument("--section", type=int)
    p.add_argument("--depth", type=float, help="deformation depth in mm")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build-dataset", parents=[common], help="simulate and encode the fault catalog")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", parents=[common], help="train on a dataset directory")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-experiment", parents=[common], help="build, train and evaluate end to end")
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("locate", parents=[common], help="predict the faulted section of a curve")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--curve", required=True)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("export-curves", parents=[common], help="write healthy and faulted curves")
    p.set_defaults(func=cmd_export_curves)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
