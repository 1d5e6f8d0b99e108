"""Command line entry point.

Exit codes: 0 success, 2 validation error, 3 numeric/solver error, 4 IO error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .config import MODES, PRESETS, ExperimentConfig, preset
from .errors import ConfigurationError, MomnetError
from .pipeline import SWEEP_AXES, run_evaluate, run_generate, run_moment, run_pipeline, run_recover, run_sweep

log = logging.getLogger("momnet")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(io.read_json(args.config))
    if args.seed is not None:
        cfg.network.seed = args.seed
    if args.mode is not None:
        cfg.estimation.mode = args.mode
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override network.seed")
    common.add_argument("--out", help="run directory (default: config output_dir)")
    common.add_argument("--workers", type=int)
    common.add_argument("--mode", choices=MODES, help="override estimation.mode")

    sub.add_parser("generate", parents=[common], help="write network spec and ground-truth weights")
    sub.add_parser("moment", parents=[common], help="estimate the label-score moment matrix")
    sub.add_parser("recover", parents=[common], help="recover the first layer from moment.csv")
    sub.add_parser("evaluate", parents=[common], help="match the recovered rows against ground truth")
    sub.add_parser("pipeline", parents=[common], help="run every stage")
    sw = sub.add_parser("sweep", parents=[common], help="run the pipeline over a grid of values and seeds")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, nargs="*", type=_parse_value)
    sw.add_argument("--seeds", type=int, default=1, help="number of seeds per value")

    pr = sub.add_parser("preset", help="print a named preset config")
    pr.add_argument("name", choices=sorted(PRESETS))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "preset":
            sys.stdout.write(io.dumps(preset(args.name).to_dict()))
            return 0
        cfg = _load_config(args)
        out = Path(cfg.output_dir)
        if args.command == "generate":
            run_generate(cfg, out)
        elif args.command == "moment":
            run_moment(cfg, out)
        elif args.command == "recover":
            run_recover(cfg, out)
        elif args.command == "evaluate":
            summary = run_evaluate(cfg, out)
            sys.stdout.write(io.dumps(summary))
        elif args.command == "pipeline":
            summary = run_pipeline(cfg, out)
            sys.stdout.write(io.dumps(summary))
        elif args.command == "sweep":
            if not args.values:
                raise ConfigurationError("--values needs at least one value")
            rows = run_sweep(cfg, args.axis, args.values, args.seeds, out)
            failed = sum(1 for r in rows if r.get("error"))
            log.info("sweep finished: %d cells, %d failed", len(rows), failed)
    except MomnetError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
