"""Batch command-line entry points.

    prkit run --config cfg.json [--seed S] [--out DIR] [--selector SEL]
    prkit sweep --config cfg.json --selector full,base-only [--seed S] [--out DIR]
    prkit check-oracles [--quick] [--out report.json]
    prkit report --out DIR

Exit codes: 0 success, 1 failed checks or aborted run, 2 invalid config.
"""

import argparse
import json
import logging
import sys

from .harness import ConfigError, ExperimentConfig, default_config, \
    report_table, run_experiment, sweep
from .training import SELECTORS, TrainDivergedError
from .verification import check_oracles

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_CONFIG = 2


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(args.config)
    elif args.task:
        config = default_config(args.task)
    else:
        raise ConfigError("need --config or --task")
    doc = config.to_dict()
    if args.seed is not None:
        doc["train"]["seed"] = args.seed
    if args.selector is not None and "," not in args.selector:
        doc["train"]["selector"] = args.selector
    if args.out is not None:
        doc["out_dir"] = args.out
    return ExperimentConfig.from_dict(doc)


def _cmd_run(args) -> int:
    config = _load_config(args)
    result = run_experiment(config)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    if args.selector:
        selectors = [s.strip() for s in args.selector.split(",") if s.strip()]
    else:
        selectors = list(SELECTORS)
    bad = [s for s in selectors if s not in SELECTORS]
    if bad:
        raise ConfigError(f"unknown selectors {bad}; valid: {SELECTORS}")
    results = sweep(config, selectors)
    for (selector, seed), res in sorted(results.items()):
        print(f"{selector}-seed{seed}: {json.dumps(res.final_metrics, sort_keys=True)}")
    return EXIT_OK


def _cmd_check_oracles(args) -> int:
    report = check_oracles(alpha=args.alpha, quick=args.quick)
    doc = report.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    for check in doc["checks"]:
        status = "SKIP" if check["skipped"] else \
            ("PASS" if check["passed"] else "FAIL")
        line = f"[{status}] {check['name']} ({check['seconds']:.2f}s)"
        if check["reason"]:
            line += f" - {check['reason']}"
        print(line)
        if status == "FAIL":
            print(f"        details: {json.dumps(check['details'], sort_keys=True)}")
    print("overall:", "PASS" if doc["passed"] else "FAIL")
    return EXIT_OK if doc["passed"] else EXIT_FAILED


def _cmd_report(args) -> int:
    rows = report_table(args.out or ".")
    if not rows:
        print("no summary.json files found", file=sys.stderr)
        return EXIT_FAILED
    for row in rows:
        metrics = json.dumps(row["final_metrics"], sort_keys=True)
        print(f"{row['run']}: task={row['task']} selector={row['selector']} "
              f"seed={row['seed']} metrics={metrics}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prkit",
        description="Constraint-regularized generative model experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run", _cmd_run), ("sweep", _cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--task", choices=("infill", "grid", "mdp-bridge"),
                       help="use built-in defaults for a task")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--selector",
                       help="variant selector (comma list for sweep)")
        p.set_defaults(fn=fn)

    p = sub.add_parser("check-oracles")
    p.add_argument("--quick", action="store_true",
                   help="skip the five-minute experiment criteria")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out", help="write the machine-readable report here")
    p.set_defaults(fn=_cmd_check_oracles)

    p = sub.add_parser("report")
    p.add_argument("--out", help="directory holding run outputs")
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except TrainDivergedError as err:
        print(f"run aborted: {err}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
