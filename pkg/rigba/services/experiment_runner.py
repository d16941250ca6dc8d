"""Experiment pipelines behind the CLI: solve, compare across seeds, facing study, weight sweep."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from rigba.errors import EvaluationError, RigBAError
from rigba.models.enums import FacingDirection, SolveMode
from rigba.models.problem import RigProblem
from rigba.schemas.experiment import ExperimentConfig
from rigba.schemas.reports import ComparisonSummary, DriftReport, SeedOutcome
from rigba.schemas.solver import IncrementalReport
from rigba.services.evaluation import evaluate_problem, improvement_percent, write_report_json
from rigba.services.incremental import reconstruct_incrementally
from rigba.services.problem_io import write_problem
from rigba.services.rig_constraint import pixel_equivalent_scale
from rigba.services.scene_sim import SceneBundle, generate_scene, write_bundle, write_ply

logger = logging.getLogger(__name__)

SUMMARY_METRICS = (
    "mean_absolute_distance",
    "std_deviation",
    "endpoint_drift",
    "horizontal_drift",
    "vertical_drift",
    "relative_pose_spread",
    "max_rotation_error",
)


def solve_problem(initial: RigProblem, config: ExperimentConfig) -> tuple[RigProblem, IncrementalReport]:
    """Incremental reconstruction of a copy of ``initial`` with the config's weights."""
    problem = initial.copy()
    weights = config.weights
    if config.pixel_scaled_baseline and weights.lambda_weight > 0.0:
        scale = pixel_equivalent_scale(problem)
        weights = weights.model_copy(update={"component_scale": scale})
        logger.debug(f"Baseline component scale: {scale}")
    problem.weights = weights
    problem.refresh_pair_counts()
    report = reconstruct_incrementally(problem, config.solver)
    return problem, report


def trace_frame(report: IncrementalReport) -> pd.DataFrame:
    rows = [{"solve": label, **it.model_dump()} for label, it in report.all_iterations()]
    return pd.DataFrame(
        rows,
        columns=[
            "solve",
            "iteration",
            "reprojection_cost",
            "baseline_cost",
            "effective_weight",
            "total_cost",
            "damping",
            "step_norm",
            "accepted",
        ],
    )


def write_solve_outputs(
    problem: RigProblem, report: IncrementalReport, directory: Path
) -> dict[str, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "solved": write_problem(problem, directory / "solved.rigba"),
        "trace": directory / "trace.csv",
        "report": directory / "solve_report.json",
        "cloud": write_ply(
            np.array([problem.landmarks[i].position for i in sorted(problem.active_landmarks)]),
            directory / "solved.ply",
        ),
    }
    trace_frame(report).to_csv(paths["trace"], index=False)
    paths["report"].write_text(
        json.dumps(report.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
    )
    logger.info(f"Wrote solve outputs to {directory}")
    return paths


def run_mode(
    bundle: SceneBundle, config: ExperimentConfig, mode: SolveMode, directory: Path | None = None
) -> DriftReport:
    """Solve the bundle's initial problem in ``mode`` and evaluate against its ground truth."""
    mode_config = config.for_mode(mode)
    problem, report = solve_problem(bundle.initial, mode_config)
    drift = evaluate_problem(problem, bundle.ground_truth, label=mode.value)
    if directory is not None:
        write_solve_outputs(problem, report, directory)
        write_report_json(drift, directory / "report.json")
    return drift


def run_seed(config: ExperimentConfig, seed: int, directory: Path | None = None) -> SeedOutcome:
    """Traditional and constrained runs on one seeded scene; failures are captured, not raised."""
    seeded = config.with_seed(seed)
    seed_dir = directory / f"seed_{seed}" if directory is not None else None
    try:
        bundle = generate_scene(seeded.scene, seeded.noise)
        if seed_dir is not None:
            write_bundle(bundle, seed_dir)
        traditional = run_mode(
            bundle, seeded, SolveMode.TRADITIONAL, seed_dir / "traditional" if seed_dir else None
        )
        constrained = run_mode(
            bundle, seeded, SolveMode.CONSTRAINED, seed_dir / "constrained" if seed_dir else None
        )
    except RigBAError as exc:
        logger.warning(f"Seed {seed} failed: {exc.error}: {exc.message}")
        return SeedOutcome(seed=seed, error=f"{exc.error}: {exc.message}")
    return SeedOutcome(seed=seed, traditional=traditional, constrained=constrained)


def _per_seed_frame(outcomes: list[SeedOutcome]) -> pd.DataFrame:
    rows = []
    for outcome in outcomes:
        if outcome.error is not None:
            rows.append({"seed": outcome.seed, "mode": None, "error": outcome.error})
            continue
        for report in (outcome.traditional, outcome.constrained):
            assert report is not None
            rows.append({"seed": outcome.seed, "mode": report.label, **report.flat(), "error": None})
    return pd.DataFrame(rows)


def summarize(outcomes: list[SeedOutcome]) -> ComparisonSummary:
    """Means, standard deviations and per-metric win counts across successful seeds."""
    ok = [o for o in outcomes if o.error is None]
    mean: dict[str, dict[str, float]] = {}
    std: dict[str, dict[str, float]] = {}
    better: dict[str, int] = {}
    for metric in SUMMARY_METRICS:
        trad = np.array([_metric(o.traditional, metric) for o in ok], dtype=np.float64)
        cons = np.array([_metric(o.constrained, metric) for o in ok], dtype=np.float64)
        if len(ok) == 0 or np.all(np.isnan(trad)):
            continue
        trad_mean, cons_mean = float(np.nanmean(trad)), float(np.nanmean(cons))
        try:
            improvement = improvement_percent(trad_mean, cons_mean)
        except EvaluationError:
            improvement = math.nan
        mean[metric] = {
            "traditional": trad_mean,
            "constrained": cons_mean,
            "improvement_percent": improvement,
        }
        std[metric] = {"traditional": float(np.nanstd(trad)), "constrained": float(np.nanstd(cons))}
        better[metric] = int(np.sum(cons < trad))
    return ComparisonSummary(
        n_seeds=len(outcomes),
        n_failed=len(outcomes) - len(ok),
        mean=mean,
        std=std,
        constrained_better=better,
    )


def _metric(report: DriftReport | None, metric: str) -> float:
    assert report is not None
    value = report.flat().get(metric)
    return math.nan if value is None else float(value)


def run_comparison(
    config: ExperimentConfig, n_seeds: int, workers: int = 1, directory: Path | None = None
) -> tuple[ComparisonSummary, list[SeedOutcome]]:
    """Traditional versus constrained over ``n_seeds`` consecutive seeds starting at the config seed."""
    seeds = [config.seed + k for k in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_seed, [config] * n_seeds, seeds, [directory] * n_seeds))
    else:
        outcomes = [run_seed(config, seed, directory) for seed in seeds]
    summary = summarize(outcomes)
    logger.info(
        f"Compared {summary.n_seeds} seeds ({summary.n_failed} failed); "
        f"constrained lower endpoint drift in {summary.constrained_better.get('endpoint_drift', 0)}"
    )
    if directory is not None:
        write_comparison(summary, outcomes, directory)
    return summary, outcomes


def write_comparison(
    summary: ComparisonSummary, outcomes: list[SeedOutcome], directory: Path
) -> dict[str, Path]:
    directory.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame(
        [
            {
                "metric": metric,
                "traditional_mean": values["traditional"],
                "traditional_std": summary.std[metric]["traditional"],
                "constrained_mean": values["constrained"],
                "constrained_std": summary.std[metric]["constrained"],
                "improvement_percent": values["improvement_percent"],
                "constrained_better": summary.constrained_better[metric],
            }
            for metric, values in summary.mean.items()
        ]
    )
    paths = {
        "summary_csv": directory / "summary.csv",
        "summary_json": directory / "summary.json",
        "per_seed": directory / "per_seed.csv",
    }
    table.to_csv(paths["summary_csv"], index=False)
    paths["summary_json"].write_text(
        json.dumps(summary.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8"
    )
    _per_seed_frame(outcomes).to_csv(paths["per_seed"], index=False)
    return paths


def run_facing_study(config: ExperimentConfig, directory: Path | None = None) -> pd.DataFrame:
    """Monocular traditional runs on the same seeded scene for each mounting direction."""
    rows = []
    for facing in FacingDirection:
        data = config.model_dump()
        data["scene"]["rig"].update(n_streams=1, facing=facing)
        data["mode"] = SolveMode.TRADITIONAL
        facing_config = ExperimentConfig.model_validate(data)
        try:
            bundle = generate_scene(facing_config.scene, facing_config.noise)
            drift = run_mode(bundle, facing_config, SolveMode.TRADITIONAL)
        except RigBAError as exc:
            logger.warning(f"Facing {facing.value} failed: {exc.message}")
            rows.append({"facing": facing.value, "error": f"{exc.error}: {exc.message}"})
            continue
        rows.append(
            {
                "facing": facing.value,
                "endpoint_drift": drift.endpoint_drift.norm,
                "horizontal_drift": drift.endpoint_drift.horizontal,
                "vertical_drift": drift.endpoint_drift.vertical,
                "mean_absolute_distance": drift.mean_absolute_distance,
                "error": None,
            }
        )
    frame = pd.DataFrame(rows)
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        frame.to_csv(directory / "facing.csv", index=False)
    return frame


def run_lambda_sweep(
    config: ExperimentConfig, lambdas: list[float], directory: Path | None = None
) -> pd.DataFrame:
    """Constrained runs over several global weights on one seeded scene (0 is traditional)."""
    bundle = generate_scene(config.scene, config.noise)
    rows = []
    for value in lambdas:
        data = config.model_dump()
        data["weights"]["lambda_weight"] = value
        if value > 0:
            # lambda_low may not exceed lambda
            data["weights"]["lambda_low"] = min(data["weights"]["lambda_low"], value)
        data["mode"] = SolveMode.CONSTRAINED if value > 0 else SolveMode.TRADITIONAL
        swept = ExperimentConfig.model_validate(data)
        try:
            problem, _ = solve_problem(bundle.initial, swept)
            drift = evaluate_problem(problem, bundle.ground_truth, label=f"lambda_{value:g}")
        except RigBAError as exc:
            logger.warning(f"lambda={value:g} failed: {exc.message}")
            rows.append({"lambda": value, "error": f"{exc.error}: {exc.message}"})
            continue
        rows.append({"lambda": value, **drift.flat(), "error": None})
    frame = pd.DataFrame(rows)
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        frame.to_csv(directory / "sweep.csv", index=False)
    return frame
