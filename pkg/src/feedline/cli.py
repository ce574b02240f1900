"""Command-line experiment driver: train / evaluate / compare / sweep.

Artifacts are CSV files whose first line embeds the instance fingerprint and
seed.  Wall-clock runtimes are reported only with --timings so that default
outputs are byte-for-byte reproducible under a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import lp as lpmod
from .baselines import (
    build_mean_value, build_two_stage, extract_static_plan,
)
from .configio import ConfigError, ExperimentConfig, load_config, parse_config
from .evaluate import (
    EvaluationReport, compare, simulate_policy, simulate_static_plan,
    summary_rows, trajectory_rows,
)
from .instance import (
    STREAM_TWO_STAGE, STREAM_VALIDATION, build_instance, rng_stream, sample_paths,
)
from .model import Level, ModelError, Order, ScenarioConfig, StageScheme, Strategy
from .sddp import (
    PolicyMismatchError, TrainerConfig, TrainingError, load_policy, save_policy,
    train,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3

SWEEP_AXES = (
    "target_rate", "initial_inventory", "sequence_strategy", "sequence_order",
    "stage_scheme", "horizon", "mix",
)


@dataclass(frozen=True)
class ExperimentSpec:
    command: str  # train | evaluate | compare | sweep
    config_path: Path | None
    out_dir: Path
    seed: int | None = None
    workers: int = 1
    timings: bool = False
    policy_path: Path | None = None
    sweep_axis: str | None = None
    sweep_values: tuple[str, ...] = ()
    nt: int | None = None
    paths: int | None = None
    sv: int | None = None
    max_iters: int | None = None
    stall_eps: float | None = None
    stall_window: int | None = None

    def __post_init__(self):
        if self.command not in ("train", "evaluate", "compare", "sweep"):
            raise ValueError(f"unknown command {self.command!r}")
        if self.command == "sweep" and self.sweep_axis not in SWEEP_AXES:
            raise ValueError(
                f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}"
            )


def _load(spec: ExperimentSpec) -> ExperimentConfig:
    if spec.config_path is not None:
        exp = load_config(spec.config_path)
    else:
        exp = parse_config("")  # shipped defaults
    scenario = exp.instance.config
    if spec.seed is not None and spec.seed != scenario.seed:
        scenario = replace(scenario, seed=spec.seed)
        exp = dataclasses.replace(
            exp,
            instance=build_instance(
                scenario, network=exp.instance.network,
                material=exp.instance.material, moisture=exp.instance.moisture,
            ),
        )
    tr = exp.trainer
    updates = {}
    if spec.nt is not None:
        updates["n_realizations"] = spec.nt
    if spec.paths is not None:
        updates["forward_paths"] = spec.paths
    if spec.max_iters is not None:
        updates["max_iterations"] = spec.max_iters
    if spec.stall_eps is not None:
        updates["stall_eps"] = spec.stall_eps
    if spec.stall_window is not None:
        updates["stall_window"] = spec.stall_window
    if spec.seed is not None:
        updates["seed"] = spec.seed
    if updates:
        tr = replace(tr, **updates)
        exp = dataclasses.replace(exp, trainer=tr)
    if spec.sv is not None:
        exp = dataclasses.replace(exp, validation_paths=spec.sv)
    return exp


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict],
               fingerprint: str, seed: int) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# feedline fingerprint={fingerprint} seed={seed}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _train_artifacts(exp: ExperimentConfig, out: Path, timings: bool):
    t0 = time.perf_counter()
    policy, log = train(exp.instance, exp.trainer)
    elapsed = time.perf_counter() - t0
    save_policy(policy, out / "policy.txt")
    rows = [
        {
            "iteration": str(k + 1),
            "lower_bound": f"{lb:.9f}",
            "forward_mean": f"{fm:.9f}",
            "forward_variance": f"{fv:.9f}",
        }
        for k, (lb, fm, fv) in enumerate(
            zip(log.lower_bounds, log.forward_means, log.forward_variances)
        )
    ]
    _write_csv(out / "bounds.csv",
               ["iteration", "lower_bound", "forward_mean", "forward_variance"],
               rows, exp.instance.fingerprint, exp.seed)
    summary = [{
        "stages": str(exp.instance.n_stages),
        "iterations": str(log.iterations),
        "stop_reason": log.stop_reason,
        "lower_bound": f"{log.lower_bounds[-1]:.9f}",
        "statistical_ub": f"{log.final_ub:.9f}",
        "ub_mean": f"{log.final_ub_mean:.9f}",
        "runtime_s": f"{elapsed:.3f}" if timings else "",
    }]
    _write_csv(out / "train_summary.csv", list(summary[0].keys()), summary,
               exp.instance.fingerprint, exp.seed)
    return policy, log, elapsed


def _emit_reports(exp: ExperimentConfig, out: Path, reports, stem: str):
    fields = ["model", "mean_cost", "ci_lo", "ci_hi", "gap_pct",
              "gap_is_absolute", "paths", "infeasible_paths", "runtime_s"]
    _write_csv(out / f"{stem}.csv", fields, summary_rows(reports),
               exp.instance.fingerprint, exp.seed)
    _write_csv(out / f"{stem}_trajectories.csv",
               ["model", "stage", "statistic", "value"],
               trajectory_rows(reports), exp.instance.fingerprint, exp.seed)


def run_train(spec: ExperimentSpec) -> int:
    exp = _load(spec)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _train_artifacts(exp, spec.out_dir, spec.timings)
    return EXIT_OK


def run_evaluate(spec: ExperimentSpec) -> int:
    exp = _load(spec)
    if spec.policy_path is None:
        raise ConfigError("evaluate requires --policy <file> from a prior train run")
    policy = load_policy(spec.policy_path, exp.instance.fingerprint)
    paths = sample_paths(
        exp.instance, exp.validation_paths, rng_stream(exp.seed, STREAM_VALIDATION)
    )
    t0 = time.perf_counter()
    rep = simulate_policy(exp.instance, policy, paths)
    if spec.timings:
        rep.runtime_s = time.perf_counter() - t0
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _emit_reports(exp, spec.out_dir, [rep], "evaluation")
    return EXIT_OK


def compare_models(exp: ExperimentConfig, timings: bool = False
                   ) -> list[EvaluationReport]:
    """Train/solve all three models and evaluate them on shared paths."""
    inst = exp.instance
    t0 = time.perf_counter()
    policy, log = train(inst, exp.trainer)
    t_train = time.perf_counter() - t0

    t0 = time.perf_counter()
    ts_paths = sample_paths(
        inst, exp.two_stage_paths, rng_stream(exp.seed, STREAM_TWO_STAGE)
    )
    ts_prog = build_two_stage(inst, ts_paths)
    ts_sol = lpmod.solve(ts_prog.lp, backend="highs")
    if ts_sol.status != lpmod.OPTIMAL:
        raise TrainingError(f"two-stage extensive form is {ts_sol.status}")
    ts_plan = extract_static_plan(ts_prog, ts_sol)
    t_ts = time.perf_counter() - t0

    t0 = time.perf_counter()
    mv_prog = build_mean_value(inst)
    mv_sol = lpmod.solve(mv_prog.lp, backend="auto")
    if mv_sol.status != lpmod.OPTIMAL:
        raise TrainingError(f"mean-value problem is {mv_sol.status}")
    mv_plan = extract_static_plan(mv_prog, mv_sol)
    t_mv = time.perf_counter() - t0

    paths = sample_paths(
        inst, exp.validation_paths, rng_stream(exp.seed, STREAM_VALIDATION)
    )
    rep_ms = simulate_policy(inst, policy, paths, label="multi_stage")
    rep_ts = simulate_static_plan(inst, ts_plan, paths, label="two_stage")
    rep_mv = simulate_static_plan(inst, mv_plan, paths, label="mean_value")
    rep_ms.meta.update(lower_bound=log.lower_bounds[-1], statistical_ub=log.final_ub,
                       iterations=log.iterations)
    rep_ts.meta.update(objective=ts_sol.objective)
    rep_mv.meta.update(objective=mv_sol.objective)
    if timings:
        rep_ms.runtime_s, rep_ts.runtime_s, rep_mv.runtime_s = t_train, t_ts, t_mv
    return compare([rep_ms, rep_ts, rep_mv], rep_ms)


def run_compare(spec: ExperimentSpec) -> int:
    exp = _load(spec)
    reports = compare_models(exp, timings=spec.timings)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    _emit_reports(exp, spec.out_dir, reports, "compare")
    return EXIT_OK


def _apply_axis(scenario: ScenarioConfig, axis: str, value: str) -> ScenarioConfig:
    if axis == "target_rate":
        return replace(scenario, target_rate=float(value))
    if axis == "initial_inventory":
        setting = value if value in ("empty", "half_full", "full") else float(value)
        return replace(scenario, initial_inventory=setting)
    if axis == "sequence_strategy":
        return replace(scenario, sequence_strategy=Strategy(value))
    if axis == "sequence_order":
        return replace(scenario, sequence_order=Order(value))
    if axis == "stage_scheme":
        return replace(scenario, stage_scheme=StageScheme.parse(value))
    if axis == "horizon":
        return replace(scenario, horizon_bales=int(value))
    if axis == "mix":
        return replace(scenario, mix=parse_mix(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


def parse_mix(text: str) -> dict[Level, float]:
    """Parse "low:60,med:20,high:20" or the shorthand "60/20/20" (L/M/H)."""
    mix: dict[Level, float] = {}
    if ":" in text:
        for part in text.split(","):
            name, _, val = part.partition(":")
            mix[Level(name.strip())] = float(val) / 100.0
    else:
        parts = [float(v) for v in text.split("/")]
        if len(parts) != 3:
            raise ValueError(f"mix shorthand needs three numbers, got {text!r}")
        mix = {
            Level.LOW: parts[0] / 100.0,
            Level.MED: parts[1] / 100.0,
            Level.HIGH: parts[2] / 100.0,
        }
    return mix


def _sweep_point(args: tuple) -> tuple[str, list[dict], str, int]:
    """One compare run for one axis value (executed possibly in a worker)."""
    config_text, source, axis, value, overrides, timings = args
    exp = parse_config(config_text, source=Path(source) if source else None)
    scenario = _apply_axis(exp.instance.config, axis, value)
    inst = build_instance(
        scenario, network=exp.instance.network,
        material=exp.instance.material, moisture=exp.instance.moisture,
    )
    exp = dataclasses.replace(exp, instance=inst)
    if overrides:
        exp = dataclasses.replace(exp, trainer=replace(exp.trainer, **overrides))
    reports = compare_models(exp, timings=timings)
    rows = []
    for row in summary_rows(reports):
        rows.append({"axis": axis, "value": value, **row})
    return value, rows, exp.instance.fingerprint, exp.seed


def run_sweep(spec: ExperimentSpec) -> int:
    if not spec.sweep_values:
        raise ConfigError("sweep requires --values")
    config_text = (
        spec.config_path.read_text() if spec.config_path is not None else ""
    )
    overrides = {}
    if spec.nt is not None:
        overrides["n_realizations"] = spec.nt
    if spec.max_iters is not None:
        overrides["max_iterations"] = spec.max_iters
    if spec.stall_eps is not None:
        overrides["stall_eps"] = spec.stall_eps
    if spec.stall_window is not None:
        overrides["stall_window"] = spec.stall_window
    jobs = [
        (config_text, str(spec.config_path or ""), spec.sweep_axis, value,
         overrides, spec.timings)
        for value in spec.sweep_values
    ]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(job) for job in jobs]

    all_rows: list[dict] = []
    for _, rows, _, _ in results:
        all_rows.extend(rows)
    fields = ["axis", "value", "model", "mean_cost", "ci_lo", "ci_hi", "gap_pct",
              "gap_is_absolute", "paths", "infeasible_paths", "runtime_s"]
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint, seed = results[0][2], results[0][3]
    _write_csv(spec.out_dir / "sweep.csv", fields, all_rows, fingerprint, seed)
    return EXIT_OK


def run(spec: ExperimentSpec) -> int:
    """Dispatch one experiment; returns a process exit code."""
    try:
        if spec.command == "train":
            return run_train(spec)
        if spec.command == "evaluate":
            return run_evaluate(spec)
        if spec.command == "compare":
            return run_compare(spec)
        return run_sweep(spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelError, PolicyMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except lpmod.LpError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="feedline",
        description="Biomass preprocessing-line operations: train and compare "
                    "multi-stage, two-stage, and mean-value policies.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("train", "evaluate", "compare", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="TOML instance config (defaults to the base case)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--workers", type=int,
                       default=int(os.environ.get("FEEDLINE_WORKERS", "1")))
        p.add_argument("--nt", type=int, default=None,
                       help="realizations per stage for training")
        p.add_argument("--paths", type=int, default=None,
                       help="forward paths per training iteration")
        p.add_argument("--sv", type=int, default=None,
                       help="validation sample paths")
        p.add_argument("--max-iters", type=int, default=None)
        p.add_argument("--stall-eps", type=float, default=None)
        p.add_argument("--stall-window", type=int, default=None)
        p.add_argument("--timings", action="store_true",
                       help="fill runtime_s columns (nondeterministic)")
        if name == "evaluate":
            p.add_argument("--policy", type=Path, default=None)
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=SWEEP_AXES)
            p.add_argument("--values", required=True,
                           help="comma-separated axis values")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        spec = ExperimentSpec(
            command=args.command,
            config_path=args.config,
            out_dir=args.out,
            seed=args.seed,
            workers=max(1, args.workers),
            timings=args.timings,
            policy_path=getattr(args, "policy", None),
            sweep_axis=getattr(args, "axis", None),
            sweep_values=tuple(
                v.strip() for v in getattr(args, "values", "").split(",") if v.strip()
            ),
            nt=args.nt,
            paths=args.paths,
            sv=args.sv,
            max_iters=args.max_iters,
            stall_eps=args.stall_eps,
            stall_window=args.stall_window,
        )
    except ValueError as exc:
        print(f"bad arguments: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
