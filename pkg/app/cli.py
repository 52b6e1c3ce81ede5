"""
Command-line runner

    python -m app partition|solve|bound|simulate|bench|sweep [options]

Every subcommand writes its CSV artifacts plus ``manifest.json`` into
``--out-dir``. Files are staged as temporaries and renamed only after the
whole output set has been produced.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ValidationError

from app.core.config import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    settings,
)
from app.core.exceptions import RECOVERABLE_ERRORS, ConfigurationError
from app.models.schemas import BoundParamsDocument
from app.models.trace import RunManifest
from app.services.genbound import evaluate_bound
from app.services.reports import bound_frame, partition_frame, scenario_bound_inputs, solve_frames, trace_frames
from app.tasks.experiment_tasks import METHODS, run_experiment, run_sweep

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12g"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedselect", description="Client selection and resource allocation for wireless FL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_flags=("--config",)):
        p.add_argument(*config_flags, dest="config", metavar="PATH", help="JSON config document")
        p.add_argument("--seed", type=int, help="override system.rng_seed")
        p.add_argument("--out-dir", default=None, help="output directory (default: results directory)")
        p.add_argument("--log-level", default=None, help="logging level (default: settings)")

    common(sub.add_parser("partition", help="label partition table"))

    solve = sub.add_parser("solve", help="one CSRA round with feasibility report")
    common(solve)
    solve.add_argument("--round", type=int, default=0, help="round index of the channel draw")
    solve.add_argument("--oracle", action="store_true", help="also run the brute-force oracle")

    common(sub.add_parser("bound", help="generalization bound breakdown"), ("--config", "--params"))

    for name, help_text in (("simulate", "training run with per-round traces"), ("bench", "paired multi-method run")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--rounds", type=int, help="number of rounds T")
        p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")

    sweep = sub.add_parser("sweep", help="mean costs over values of one config field")
    common(sweep)
    sweep.add_argument("--parameter", required=True, help="dotted config field, e.g. system.total_bandwidth_hz")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--rounds", type=int, help="number of rounds T")
    sweep.add_argument("--methods", help="comma-separated methods")
    return parser


def _read_document(path: Optional[str]) -> Optional[dict]:
    if path is None:
        return None
    file = Path(path)
    if not file.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        return json.loads(file.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def _load_config(args) -> ExperimentConfig:
    config = load_experiment_config(args.config) if args.config else ExperimentConfig()
    return config.with_seed(args.seed)


def _methods(args, default: Sequence[str]) -> List[str]:
    if not getattr(args, "methods", None):
        return list(default)
    return [m.strip() for m in args.methods.split(",") if m.strip()]


def _parse_value(text: str) -> Union[int, float, str, bool]:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def write_outputs(out_dir: Path, frames: Dict[str, pd.DataFrame], manifest: RunManifest) -> List[Path]:
    """Stage every CSV and the manifest as temporaries, then rename them all"""
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, frame in frames.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=out_dir)
            with os.fdopen(fd, "w", newline="") as handle:
                frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT)
            staged.append((tmp, out_dir / f"{name}.csv"))
        fd, tmp = tempfile.mkstemp(prefix=".manifest.", suffix=".tmp", dir=out_dir)
        with os.fdopen(fd, "w") as handle:
            handle.write(manifest.model_dump_json(indent=2))
        staged.append((tmp, out_dir / "manifest.json"))
    except Exception:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


def _bound(args):
    document = _read_document(args.config)
    if isinstance(document, dict) and "client_sizes" in document:
        try:
            params_doc = BoundParamsDocument.model_validate(document)
        except ValidationError as e:
            locations = [".".join(str(x) for x in item["loc"]) for item in e.errors()]
            raise ConfigurationError(f"invalid bound document: {locations}", locations) from e
        return {"bound": bound_frame(evaluate_bound(params_doc.to_params()))}, params_doc, 0
    config = _load_config(args)
    params_doc = BoundParamsDocument.model_validate(scenario_bound_inputs(config))
    return {"bound": bound_frame(evaluate_bound(params_doc.to_params()))}, config, config.system.rng_seed


def dispatch(args) -> Tuple[Dict[str, pd.DataFrame], BaseModel, int]:
    """Compute the artifacts of a parsed command: (frames, model to hash, seed)"""
    if args.command == "bound":
        return _bound(args)
    config = _load_config(args)
    seed = config.system.rng_seed
    if args.command == "partition":
        return {"partition": partition_frame(config)}, config, seed
    if args.command == "solve":
        return solve_frames(config, args.round, args.oracle), config, seed
    if args.command in ("simulate", "bench"):
        default = ("csra",) if args.command == "simulate" else METHODS
        result = run_experiment(config, args.rounds, _methods(args, default))
        return trace_frames(result), config, seed
    if args.command == "sweep":
        values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
        frame = run_sweep(config, args.parameter, values, _methods(args, ("csra",)), args.rounds)
        return {"sweep": frame}, config, seed
    raise ConfigurationError(f"unknown subcommand: {args.command}")


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse ``argv``, run the subcommand and write its outputs

    Returns:
        0 on success, 1 on a domain or configuration failure, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2

    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    started = time.perf_counter()
    try:
        frames, hashed, seed = dispatch(args)
        out_dir = Path(args.out_dir or settings.results_directory)
        manifest = RunManifest(
            config_hash=config_hash(hashed),
            seed=seed,
            subcommand=args.command,
            outputs=[f"{name}.csv" for name in frames],
            tool_version=settings.version,
            duration_seconds=time.perf_counter() - started,
        )
        written = write_outputs(out_dir, frames, manifest)
    except RECOVERABLE_ERRORS as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return 1

    for path in written:
        print(path)
    return 0


def main():
    sys.exit(run_cli())
