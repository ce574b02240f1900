"""Out-of-sample evaluation of trained policies and static plans.

Every decision source is rolled over the same fresh sample paths; reports
carry per-path costs, per-stage trajectories, two-sided 95% confidence
intervals, and infeasibility counts (static plans can demand inventories the
realized moisture cannot accommodate; such paths are flagged and excluded
from the cost statistics, never fatal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import lp as lpmod
from .baselines import StaticPlan
from .instance import Instance
from .sddp import Policy, PolicyMismatchError
from .stage import (
    build_stage_lp, delivered_mass, extract_state, immediate_cost, shortfall,
)

Z_95 = NormalDist().inv_cdf(0.975)  # two-sided 95%


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvaluationReport:
    label: str
    path_costs: np.ndarray  # feasible paths only
    infeasible_paths: int
    n_paths: int
    stage_inventory: np.ndarray  # per-stage mean total inventory (feasible paths)
    stage_shortfall: np.ndarray  # per-stage mean shortfall (dt)
    stage_attainment: np.ndarray  # per-stage mean delivered/target ratio
    gap_pct: float | None = None  # vs a reference report, CI midpoints
    gap_absolute: bool = False  # set when the reference mean was zero
    runtime_s: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(self.path_costs.mean()) if self.path_costs.size else math.nan

    @property
    def ci(self) -> tuple[float, float]:
        n = self.path_costs.size
        if n == 0:
            return math.nan, math.nan
        if n == 1:
            return self.mean, self.mean
        half = Z_95 * float(self.path_costs.std(ddof=1)) / math.sqrt(n)
        return self.mean - half, self.mean + half



def _warm_solve(lp, cache: dict, key, backend: str, fixings: dict | None = None):
    """Solve with a per-key warm basis; falls back to cold automatically."""
    warm = cache.get(key)
    if warm is not None and warm.shape[0] != lp.n_vars + lp.n_rows:
        warm = None
    if fixings is None:
        sol = lpmod.solve(lp, backend=backend, warm_basis=warm)
    else:
        sol = lpmod.solve_with_fixed(lp, fixings, backend=backend, warm_basis=warm)
    if sol.basis is not None:
        cache[key] = sol.basis
    return sol


def _aggregate(
    label: str,
    costs: list[float | None],
    inventory: np.ndarray,
    short: np.ndarray,
    attain: np.ndarray,
    feasible: np.ndarray,
) -> EvaluationReport:
    ok = np.asarray(feasible, dtype=bool)
    kept = np.array([c for c, f in zip(costs, ok) if f], dtype=float)
    if ok.any():
        inv = inventory[ok].mean(axis=0)
        sho = short[ok].mean(axis=0)
        att = attain[ok].mean(axis=0)
    else:
        inv = np.full(inventory.shape[1], math.nan)
        sho = np.full(short.shape[1], math.nan)
        att = np.full(attain.shape[1], math.nan)
    return EvaluationReport(
        label=label,
        path_costs=kept,
        infeasible_paths=int((~ok).sum()),
        n_paths=int(ok.shape[0]),
        stage_inventory=inv,
        stage_shortfall=sho,
        stage_attainment=att,
    )


def simulate_policy(
    inst: Instance,
    policy: Policy,
    paths: list[list[float]],
    label: str = "multi_stage",
    backend: str = "simplex",
) -> EvaluationReport:
    """Roll the trained cut pools forward over fresh paths; immediate costs only."""
    if policy.instance_fingerprint != inst.fingerprint:
        raise PolicyMismatchError(
            f"policy fingerprint {policy.instance_fingerprint} does not match "
            f"instance {inst.fingerprint}"
        )
    t_count = inst.n_stages
    n = len(paths)
    costs: list[float | None] = []
    inventory = np.zeros((n, t_count))
    short = np.zeros((n, t_count))
    attain = np.zeros((n, t_count))
    feasible = np.ones(n, dtype=bool)
    i0 = inst.initial_inventory()
    bases: dict = {}
    for s, path in enumerate(paths):
        state = i0
        total = 0.0
        for t in range(t_count):
            real = inst.realization(t, path[t])
            prob = build_stage_lp(
                inst.network, inst.config, real, state,
                policy.pools[t], terminal=(t == t_count - 1), condensed=True,
            )
            sol = _warm_solve(prob.lp, bases, t, backend)
            if sol.status != lpmod.OPTIMAL:
                feasible[s] = False
                break
            total += immediate_cost(prob, sol)
            state = extract_state(prob, sol)
            inventory[s, t] = state.sum()
            short[s, t] = shortfall(prob, sol)
            attain[s, t] = (
                delivered_mass(prob, sol) / real.target_mass
                if real.target_mass > 0 else 1.0
            )
        costs.append(total if feasible[s] else None)
    return _aggregate(label, costs, inventory, short, attain, feasible)


def simulate_static_plan(
    inst: Instance,
    plan: StaticPlan,
    paths: list[list[float]],
    label: str | None = None,
    backend: str = "simplex",
) -> EvaluationReport:
    """Evaluate a pinned inventory trajectory path by path, stage by stage.

    A stage whose pinned inventory exceeds the realized capacity (or whose
    pinned balance cannot be met) flags the whole path as infeasible.
    """
    t_count = inst.n_stages
    if plan.n_stages != t_count:
        raise EvaluationError(
            f"plan covers {plan.n_stages} stages, instance has {t_count}"
        )
    n = len(paths)
    costs: list[float | None] = []
    inventory = np.zeros((n, t_count))
    short = np.zeros((n, t_count))
    attain = np.zeros((n, t_count))
    feasible = np.ones(n, dtype=bool)
    i0 = inst.initial_inventory()
    bases: dict = {}
    for s, path in enumerate(paths):
        total = 0.0
        for t in range(t_count):
            real = inst.realization(t, path[t])
            incoming = i0 if t == 0 else plan.inventory[t - 1]
            prob = build_stage_lp(
                inst.network, inst.config, real, incoming,
                cuts=None, terminal=True, clamp_incoming=False, condensed=True,
            )
            fixings = {
                f"I[{sid}]": float(plan.inventory[t][k])
                for k, sid in enumerate(inst.network.storage_ids)
            }
            try:
                sol = _warm_solve(prob.lp, bases, t, backend, fixings=fixings)
            except lpmod.LpError:
                sol = None  # pinned inventory outside the realized capacity
            if sol is None or sol.status != lpmod.OPTIMAL:
                feasible[s] = False
                break
            total += immediate_cost(prob, sol)
            inventory[s, t] = float(plan.inventory[t].sum())
            short[s, t] = shortfall(prob, sol)
            attain[s, t] = (
                delivered_mass(prob, sol) / real.target_mass
                if real.target_mass > 0 else 1.0
            )
        costs.append(total if feasible[s] else None)
    return _aggregate(label or plan.source, costs, inventory, short, attain, feasible)


def truncate_and_repeat(
    full_inst: Instance,
    short_inst: Instance,
    policy: Policy,
    paths: list[list[float]],
    label: str = "truncate_and_repeat",
    backend: str = "simplex",
) -> EvaluationReport:
    """Replay a k-stage policy T/k times over the full horizon.

    Inventory carries across repeats; within each repeat the policy believes
    its own horizon ends, so the usual end-of-horizon drain recurs every k
    stages, which is exactly the behavior this evaluation quantifies.
    """
    if policy.instance_fingerprint != short_inst.fingerprint:
        raise PolicyMismatchError("policy does not match the truncated instance")
    k = short_inst.n_stages
    t_count = full_inst.n_stages
    if t_count % k:
        raise EvaluationError(f"full horizon {t_count} is not divisible by {k}")
    for t in range(t_count):
        full = full_inst.plan.stages[t]
        part = short_inst.plan.stages[t % k]
        if full.level != part.level or abs(full.beta - part.beta) > 1e-12:
            raise EvaluationError(
                f"stage {t}: full-horizon plan ({full.level.value}, {full.beta}) "
                f"does not repeat the {k}-stage plan "
                f"({part.level.value}, {part.beta})"
            )
    n = len(paths)
    costs: list[float | None] = []
    inventory = np.zeros((n, t_count))
    short = np.zeros((n, t_count))
    attain = np.zeros((n, t_count))
    feasible = np.ones(n, dtype=bool)
    i0 = full_inst.initial_inventory()
    bases: dict = {}
    for s, path in enumerate(paths):
        state = i0
        total = 0.0
        for t in range(t_count):
            tk = t % k
            real = full_inst.realization(t, path[t])
            prob = build_stage_lp(
                full_inst.network, full_inst.config, real, state,
                policy.pools[tk], terminal=(tk == k - 1), condensed=True,
            )
            sol = _warm_solve(prob.lp, bases, tk, backend)
            if sol.status != lpmod.OPTIMAL:
                feasible[s] = False
                break
            total += immediate_cost(prob, sol)
            state = extract_state(prob, sol)
            inventory[s, t] = state.sum()
            short[s, t] = shortfall(prob, sol)
            attain[s, t] = (
                delivered_mass(prob, sol) / real.target_mass
                if real.target_mass > 0 else 1.0
            )
        costs.append(total if feasible[s] else None)
    return _aggregate(label, costs, inventory, short, attain, feasible)


def compare(
    reports: list[EvaluationReport], reference: EvaluationReport
) -> list[EvaluationReport]:
    """Attach gap-vs-reference percentages (CI midpoints) to each report."""
    ref_mean = reference.mean
    for rep in reports:
        if rep is reference:
            rep.gap_pct, rep.gap_absolute = 0.0, False
            continue
        if ref_mean == 0.0 or not np.isfinite(ref_mean):
            rep.gap_pct = rep.mean - (ref_mean if np.isfinite(ref_mean) else 0.0)
            rep.gap_absolute = True
        else:
            rep.gap_pct = (rep.mean - ref_mean) / ref_mean * 100.0
            rep.gap_absolute = False
    return reports


def evaluate_plan_on_grids(
    inst: Instance, grids: list[np.ndarray], plan: StaticPlan,
    backend: str = "simplex",
) -> tuple[float, int]:
    """Exact expected cost of a pinned plan on the SAA grids.

    With the trajectory pinned, stages decouple, so the tree expectation
    reduces to the per-stage grid average.  Returns (expected cost, number of
    infeasible stage/realization cells); infeasible cells are excluded from
    the average and counted.
    """
    i0 = inst.initial_inventory()
    total, bad = 0.0, 0
    bases: dict = {}
    for t in range(inst.n_stages):
        incoming = i0 if t == 0 else plan.inventory[t - 1]
        cell = []
        for j in range(grids[t].shape[0]):
            real = inst.realization(t, float(grids[t][j]))
            prob = build_stage_lp(
                inst.network, inst.config, real, incoming,
                cuts=None, terminal=True, clamp_incoming=False, condensed=True,
            )
            fixings = {
                f"I[{sid}]": float(plan.inventory[t][k])
                for k, sid in enumerate(inst.network.storage_ids)
            }
            try:
                sol = _warm_solve(prob.lp, bases, t, backend, fixings=fixings)
            except lpmod.LpError:
                sol = None
            if sol is None or sol.status != lpmod.OPTIMAL:
                bad += 1
                continue
            cell.append(immediate_cost(prob, sol))
        if cell:
            total += float(np.mean(cell))
    return total, bad


# -- CSV emission -------------------------------------------------------------

def summary_rows(reports: list[EvaluationReport]) -> list[dict]:
    rows = []
    for rep in reports:
        lo, hi = rep.ci
        rows.append({
            "model": rep.label,
            "mean_cost": f"{rep.mean:.6f}",
            "ci_lo": f"{lo:.6f}",
            "ci_hi": f"{hi:.6f}",
            "gap_pct": "" if rep.gap_pct is None else f"{rep.gap_pct:.4f}",
            "gap_is_absolute": "yes" if rep.gap_absolute else "no",
            "paths": str(rep.n_paths),
            "infeasible_paths": str(rep.infeasible_paths),
            "runtime_s": "" if rep.runtime_s is None else f"{rep.runtime_s:.3f}",
        })
    return rows


def trajectory_rows(reports: list[EvaluationReport]) -> list[dict]:
    rows = []
    for rep in reports:
        series = {
            "mean_inventory_dt": rep.stage_inventory,
            "mean_shortfall_dt": rep.stage_shortfall,
            "mean_rate_attainment": rep.stage_attainment,
        }
        for stat, values in series.items():
            for t, v in enumerate(values):
                rows.append({
                    "model": rep.label,
                    "stage": str(t + 1),
                    "statistic": stat,
                    "value": f"{v:.6f}",
                })
    return rows
