"""``ali-lab`` command-line entry point.

Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 training
aborted on a non-finite value, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import MODEL_KINDS, ConfigError, RunConfig, load_config
from .evaluation import run_oracles
from .runner import (
    EVAL_KINDS,
    MissingArtifact,
    TrainingAborted,
    evaluate,
    generate_data,
    plot_runs,
    search,
    train,
)

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_ABORT, EXIT_MISSING = 0, 1, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file (flags below override it)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--steps", type=int)
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config value, e.g. --set optimizer.lr=5e-4",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ali-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write train/eval CSVs and the mixture JSON")
    _common(p)

    p = sub.add_parser("train", help="train one model to its step budget")
    _common(p)

    p = sub.add_parser("search", help="random hyperparameter sweep with a coverage leaderboard")
    _common(p)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="evaluate the latest checkpoint of a run (--out RUN_DIR)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--which", choices=EVAL_KINDS, default="coverage")

    p = sub.add_parser("plot", help="SVG figure grid, one column per run")
    p.add_argument("runs", nargs="+", help="run directories, already evaluated")
    p.add_argument("--out", help="SVG path (default: <first run>/figure.svg)")

    p = sub.add_parser("oracle", help="exact checks of the optimal-discriminator identities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=100, help="number of random joints")
    p.add_argument("--size", type=int, default=16, help="largest table side")
    return parser


def effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for flag, key in (("seed", "run.seed"), ("model", "run.model"), ("steps", "run.steps")):
        if getattr(args, flag) is not None:
            overrides[key] = str(getattr(args, flag))
    if args.out is not None and args.command == "train":
        overrides["run.output_dir"] = args.out
    return cfg.with_overrides(overrides).validate()


def _print_json(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def run(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "oracle":
        checks = run_oracles(args.runs, args.size, args.seed)
        for c in checks:
            print(c.line())
        return EXIT_OK if all(c.passed for c in checks) else 1

    if cmd == "eval":
        _print_json(evaluate(args.out, args.which))
        return EXIT_OK

    if cmd == "plot":
        out = args.out or str(Path(args.runs[0]) / "figure.svg")
        print(plot_runs(args.runs, out))
        return EXIT_OK

    cfg = effective_config(args)
    if cmd == "generate-data":
        _print_json(generate_data(cfg, args.out or "data"))
    elif cmd == "train":
        manifest = train(cfg)
        _print_json({"run_dir": cfg.run.output_dir, "final_metrics": manifest["final_metrics"]})
    elif cmd == "search":
        summary = search(cfg, args.out or "runs/search", args.runs, args.workers)
        for row in summary["leaderboard"]:
            print(f"{row['rank']:>3} {row['run']}  covered={row['covered']:>2}  loss={row['final_loss']:.4f}")
        _print_json({k: summary[k] for k in ("coverage", "best_run", "failed")})
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    except MissingArtifact as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
