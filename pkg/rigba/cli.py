"""Command-line entry point: ``rigba generate|solve|eval|compare|facing|sweep``.

Usage:
    rigba generate [--config=cfg.json] [--seed=7] [--out=runs/scene]
    rigba solve PROBLEM [--mode=traditional|constrained] [--lambda=500] [--out=runs/solve]
    rigba eval SOLVED GROUND_TRUTH [--baseline=report.json] [--out=runs/eval]
    rigba compare [--seeds=10] [--workers=4] [--out=runs/compare]
    rigba facing [--out=runs/facing]
    rigba sweep [--lambdas 0 250 500 1000] [--out=runs/sweep]

Every command prints a JSON summary on stdout. Failures print an error document on stderr and
exit with 2 (configuration), 3 (problem file), 4 (solver), 5 (evaluation) or 1 (anything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import sentry_sdk

from rigba.config import get_settings
from rigba.errors import (
    CheiralityViolation,
    ConfigError,
    DegenerateConfiguration,
    DegenerateScene,
    DomainError,
    EvaluationError,
    GaugeError,
    InsufficientOverlap,
    NotConverged,
    NumericalFailure,
    ParseError,
    PreconditionViolation,
    RigBAError,
)
from rigba.models.enums import SolveMode
from rigba.schemas.experiment import ExperimentConfig, load_experiment_config
from rigba.services.evaluation import (
    evaluate_problem,
    read_report_json,
    write_report_csv,
    write_report_json,
)
from rigba.services.experiment_runner import (
    run_comparison,
    run_facing_study,
    run_lambda_sweep,
    solve_problem,
    write_solve_outputs,
)
from rigba.services.problem_io import read_problem
from rigba.services.scene_sim import generate_scene, write_bundle

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CODES: list[tuple[tuple[type[RigBAError], ...], int]] = [
    ((ConfigError, DegenerateScene, DomainError), 2),
    ((ParseError,), 3),
    (
        (
            NumericalFailure,
            NotConverged,
            GaugeError,
            PreconditionViolation,
            InsufficientOverlap,
            CheiralityViolation,
        ),
        4,
    ),
    ((EvaluationError, DegenerateConfiguration), 5),
]


def exit_code_for(exc: RigBAError) -> int:
    for classes, code in EXIT_CODES:
        if isinstance(exc, classes):
            return code
    return EXIT_UNEXPECTED


def _emit(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, default=str))


def _config(args: argparse.Namespace) -> ExperimentConfig:
    settings = get_settings()
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.lambda_weight is not None:
        overrides["lambda"] = args.lambda_weight
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    return load_experiment_config(
        args.config, overrides, defaults={"output_dir": str(settings.output_dir)}
    )


def cmd_generate(args: argparse.Namespace) -> int:
    config = _config(args)
    bundle = generate_scene(config.scene, config.noise)
    paths = write_bundle(bundle, config.output_dir)
    _emit(
        {
            "seed": bundle.metadata.seed,
            "images": bundle.metadata.n_images,
            "landmarks": bundle.metadata.n_landmarks,
            "observations": bundle.metadata.n_observations,
            "rig_pairs": bundle.metadata.n_rig_pairs,
            "files": {k: str(v) for k, v in paths.items()},
        }
    )
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    config = _config(args)
    initial = read_problem(args.problem)
    problem, report = solve_problem(initial, config)
    paths = write_solve_outputs(problem, report, config.output_dir)
    _emit(
        {
            "mode": config.mode.value,
            "final_pass": report.final_pass,
            "skipped_time_indices": report.skipped_time_indices,
            "termination": report.final.termination.value,
            "final_reprojection_cost": report.final.final_reprojection_cost,
            "final_baseline_cost": report.final.final_baseline_cost,
            "dropped_observations": report.final.dropped_observations,
            "files": {k: str(v) for k, v in paths.items()},
        }
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    solved = read_problem(args.solved)
    reference = read_problem(args.ground_truth)
    baseline = read_report_json(args.baseline) if args.baseline else None
    report = evaluate_problem(solved, reference, label=args.solved.stem, baseline=baseline)
    json_path = write_report_json(report, config.output_dir / "report.json")
    csv_path = write_report_csv([report], config.output_dir / "report.csv")
    _emit({**report.flat(), "files": {"report": str(json_path), "csv": str(csv_path)}})
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    config = _config(args)
    n_seeds = args.seeds if args.seeds is not None else config.n_seeds
    if n_seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {n_seeds}")
    workers = args.workers if args.workers is not None else get_settings().workers
    summary, _ = run_comparison(config, n_seeds, workers, config.output_dir)
    _emit(summary.model_dump(mode="json"))
    return EXIT_OK


def cmd_facing(args: argparse.Namespace) -> int:
    config = _config(args)
    frame = run_facing_study(config, config.output_dir)
    _emit({"facing": frame.to_dict(orient="records")})
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config(args)
    lambdas = args.lambdas if args.lambdas else config.lambdas
    frame = run_lambda_sweep(config, lambdas, config.output_dir)
    _emit({"sweep": frame.to_dict(orient="records")})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="Noise seed")
    common.add_argument("--mode", choices=[m.value for m in SolveMode], help="Adjustment mode")
    common.add_argument("--lambda", dest="lambda_weight", type=float, help="Global constraint weight")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="rigba", description="Constrained bundle adjustment for two-camera rigs"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("generate", parents=[common], help="Write a synthetic scene")
    p.set_defaults(handler=cmd_generate)

    p = commands.add_parser("solve", parents=[common], help="Reconstruct a problem file")
    p.add_argument("problem", type=Path)
    p.set_defaults(handler=cmd_solve)

    p = commands.add_parser("eval", parents=[common], help="Evaluate a solved problem")
    p.add_argument("solved", type=Path)
    p.add_argument("ground_truth", type=Path)
    p.add_argument("--baseline", type=Path, help="Report JSON to compute the improvement against")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("compare", parents=[common], help="Traditional vs constrained over seeds")
    p.add_argument("--seeds", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_compare)

    p = commands.add_parser("facing", parents=[common], help="Drift per mounting direction")
    p.set_defaults(handler=cmd_facing)

    p = commands.add_parser("sweep", parents=[common], help="Metrics over constraint weights")
    p.add_argument("--lambdas", type=float, nargs="+")
    p.set_defaults(handler=cmd_sweep)
    return parser


def _configure(verbose: bool) -> None:
    settings = get_settings()
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    if settings.sentry_dsn:
        sentry_sdk.init(
            dsn=settings.sentry_dsn,
            environment=settings.sentry_environment,
            send_default_pii=False,
        )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure(args.verbose)
    try:
        return int(args.handler(args))
    except RigBAError as exc:
        code = exit_code_for(exc)
        logger.error(f"{args.command} failed: {exc.error}: {exc.message}")
        print(exc.to_response().model_dump_json(indent=2), file=sys.stderr)
        return code
    except Exception as exc:
        logger.error(f"{args.command} failed unexpectedly: {exc}", exc_info=True)
        sentry_sdk.capture_exception(exc)
        print(
            json.dumps({"error": "INTERNAL_ERROR", "message": str(exc), "details": None}),
            file=sys.stderr,
        )
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
