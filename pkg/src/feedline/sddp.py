"""Training loop: forward simulation, backward cut generation, bounds, stopping.

The trainer keeps one realization grid per stage, drawn once up front (sample
average approximation; the first stage is deterministic at its level mean).
Forward passes sample paths from the grids, backward passes solve every
realization at each trial state and append one averaged cut per stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from . import lp as lpmod
from .instance import (
    Instance, rng_stream, STREAM_FORWARD, STREAM_GRIDS, STREAM_UPPER_BOUND,
)
from .stage import (
    Cut, CutPool, StageProblem, StageRealization, build_stage_lp,
    extract_cut_ingredients, extract_state, immediate_cost,
)

logger = logging.getLogger(__name__)

CONTINUE = "continue"
BOUND_STALL = "bound_stall"
GAP_CLOSED = "gap_closed"
MAX_ITERATIONS = "max_iterations"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    n_realizations: int = 500  # per stage, beyond the deterministic first stage
    forward_paths: int = 1  # paths per iteration
    confidence: float = 0.025  # one-sided alpha for the statistical bound
    stall_eps: float = 1e-4
    stall_window: int = 50
    max_iterations: int = 2000
    gap_tol: float | None = None
    ub_paths: int = 200  # forward batch for the final statistical upper bound
    seed: int | None = None  # defaults to the scenario seed
    backend: str = "simplex"

    def __post_init__(self):
        if self.n_realizations < 1 or self.forward_paths < 1:
            raise ValueError("need at least one realization and one forward path")
        if not 0.0 < self.confidence < 0.5:
            raise ValueError(f"confidence alpha out of (0, 0.5): {self.confidence}")
        if self.stall_eps <= 0 or self.stall_window < 1 or self.max_iterations < 1:
            raise ValueError("bad stall/termination settings")


@dataclass
class BoundsLog:
    lower_bounds: list[float] = field(default_factory=list)
    forward_means: list[float] = field(default_factory=list)
    forward_variances: list[float] = field(default_factory=list)
    stop_reason: str | None = None
    final_ub: float | None = None
    final_ub_mean: float | None = None

    @property
    def iterations(self) -> int:
        return len(self.lower_bounds)

    def check_monotone(self, slack: float = 1e-9) -> bool:
        lbs = self.lower_bounds
        return all(b >= a - slack for a, b in zip(lbs, lbs[1:]))


@dataclass
class Policy:
    pools: list[CutPool]
    grids: list[np.ndarray]
    instance_fingerprint: str
    fingerprint: str
    storage_ids: tuple[str, ...]

    @property
    def n_stages(self) -> int:
        return len(self.pools)


def policy_fingerprint(instance_fp: str, tcfg: TrainerConfig) -> str:
    import hashlib

    seed = tcfg.seed
    blob = f"{instance_fp}|N={tcfg.n_realizations}|seed={seed}"
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def draw_grids(inst: Instance, tcfg: TrainerConfig) -> list[np.ndarray]:
    """One moisture grid per stage; stage 1 is a single deterministic point."""
    seed = tcfg.seed if tcfg.seed is not None else inst.config.seed
    grids: list[np.ndarray] = [np.array([inst.stage_mean_moisture(0)])]
    for t in range(1, inst.n_stages):
        rng = rng_stream(seed, STREAM_GRIDS, t)
        ml = inst.moisture.level(inst.stage_level(t))
        grids.append(
            np.array([inst.moisture.sample(ml.label, rng) for _ in range(tcfg.n_realizations)])
        )
    return grids


def statistical_upper_bound(costs, alpha: float) -> tuple[float, float]:
    """Sample mean and the one-sided (1-alpha) normal upper confidence bound."""
    costs = np.asarray(costs, dtype=float)
    m = costs.shape[0]
    mean = float(costs.mean())
    if m < 2:
        return mean, math.inf
    sd = float(costs.std(ddof=1))
    z = NormalDist().inv_cdf(1.0 - alpha)
    return mean, mean + z * sd / math.sqrt(m)


def check_termination(log: BoundsLog, tcfg: TrainerConfig) -> str:
    """CONTINUE, or the stop reason."""
    if log.iterations >= tcfg.max_iterations:
        return MAX_ITERATIONS
    if tcfg.gap_tol is not None and log.iterations >= 1:
        lb = log.lower_bounds[-1]
        # pool recent forward costs so the gap check also works at M = 1
        recent = log.forward_means[-max(2, tcfg.forward_paths):]
        _, ub = statistical_upper_bound(recent, tcfg.confidence)
        if not np.isfinite(ub):
            ub = recent[-1]
        if ub - lb <= tcfg.gap_tol:
            return GAP_CLOSED
    lbs = log.lower_bounds
    if len(lbs) >= tcfg.stall_window + 1:
        improvements = np.diff(lbs[-(tcfg.stall_window + 1):])
        if np.all(improvements < tcfg.stall_eps):
            return BOUND_STALL
    return CONTINUE


class _StageSolver:
    """Shared stage-solve plumbing with per-(stage, realization) warm bases."""

    def __init__(self, inst: Instance, tcfg: TrainerConfig):
        self.inst = inst
        self.backend = tcfg.backend
        self._real_cache: dict[tuple[int, int], StageRealization] = {}
        self._basis: dict[tuple[int, int], np.ndarray] = {}

    def realization(self, grids, t: int, j: int) -> StageRealization:
        key = (t, j)
        if key not in self._real_cache:
            self._real_cache[key] = self.inst.realization(t, float(grids[t][j]))
        return self._real_cache[key]

    def solve(
        self,
        pools: list[CutPool],
        real: StageRealization,
        incoming: np.ndarray,
        warm_key: tuple[int, int] | None = None,
        clamp: bool = True,
    ) -> tuple[StageProblem, lpmod.LpSolution]:
        t = real.t
        terminal = t == self.inst.n_stages - 1
        prob = build_stage_lp(
            self.inst.network, self.inst.config, real, incoming,
            pools[t] if not terminal else None,
            terminal=terminal, clamp_incoming=clamp, condensed=True,
        )
        warm = None
        if warm_key is not None and self.backend == "simplex":
            warm = self._basis.get(warm_key)
            want = prob.lp.n_vars + prob.lp.n_rows
            if warm is not None and warm.shape[0] < want:
                warm = np.concatenate(
                    [warm, np.zeros(want - warm.shape[0], dtype=np.int8)]
                )  # new cut-row slacks enter basic
            elif warm is not None and warm.shape[0] != want:
                warm = None
        sol = lpmod.solve(prob.lp, backend=self.backend, warm_basis=warm)
        if sol.status != lpmod.OPTIMAL:
            raise TrainingError(
                f"stage {t} LP {sol.status} at incoming inventory "
                f"{np.asarray(incoming).tolist()} (level {real.level.value}, "
                f"moisture {real.moisture:.4f}); the model should have complete "
                f"recourse, so this indicates a configuration bug"
            )
        if warm_key is not None and sol.basis is not None:
            self._basis[warm_key] = sol.basis
        return prob, sol


def forward_pass(
    inst: Instance,
    pools: list[CutPool],
    grids: list[np.ndarray],
    path_indices: list[list[int]],
    solver: _StageSolver,
    initial_inventory: np.ndarray,
) -> tuple[list[list[np.ndarray]], list[float]]:
    """Roll the current policy over sampled paths.

    Returns per-path trial states (state entering each stage) and total
    immediate costs (cost-to-go variable excluded).
    """
    all_states, costs = [], []
    for idx in path_indices:
        states = [np.asarray(initial_inventory, dtype=float)]
        total = 0.0
        for t in range(inst.n_stages):
            real = solver.realization(grids, t, idx[t])
            prob, sol = solver.solve(pools, real, states[t], warm_key=(-1, t))
            total += immediate_cost(prob, sol)
            if t < inst.n_stages - 1:
                states.append(extract_state(prob, sol))
        all_states.append(states)
        costs.append(total)
    return all_states, costs


def backward_pass(
    inst: Instance,
    pools: list[CutPool],
    grids: list[np.ndarray],
    trial_states: list[list[np.ndarray]],
    solver: _StageSolver,
    iteration: int,
) -> None:
    """Append one averaged cut per (stage, trial state), deepest stage first."""
    n_storage = len(inst.network.storage_ids)
    for t in range(inst.n_stages - 1, 0, -1):
        for states in trial_states:
            incoming = states[t]
            n = grids[t].shape[0]
            values = np.empty(n)
            grads = np.empty((n, n_storage))
            for j in range(n):
                real = solver.realization(grids, t, j)
                # chained warm start: adjacent realizations at the same trial
                # state usually share the optimal basis
                prob, sol = solver.solve(
                    pools, real, incoming, warm_key=(-2, t), clamp=False
                )
                values[j], grads[j] = extract_cut_ingredients(prob, sol)
            g = grads.mean(axis=0)
            intercept = float(values.mean() - g @ incoming)
            pools[t - 1].append(
                Cut(intercept, tuple(float(v) for v in g), iteration=iteration)
            )


def train(inst: Instance, tcfg: TrainerConfig) -> tuple[Policy, BoundsLog]:
    """Run SDDP to termination; returns the trained policy and the bound trace."""
    seed = tcfg.seed if tcfg.seed is not None else inst.config.seed
    grids = draw_grids(inst, tcfg)
    pools = [CutPool(len(inst.network.storage_ids)) for _ in range(inst.n_stages)]
    solver = _StageSolver(inst, tcfg)
    i0 = inst.initial_inventory()
    log = BoundsLog()
    rng_fwd = rng_stream(seed, STREAM_FORWARD)

    reason = CONTINUE
    for k in range(1, tcfg.max_iterations + 1):
        paths = [
            [0] + [int(rng_fwd.integers(grids[t].shape[0])) for t in range(1, inst.n_stages)]
            for _ in range(tcfg.forward_paths)
        ]
        states, costs = forward_pass(inst, pools, grids, paths, solver, i0)
        backward_pass(inst, pools, grids, states, solver, iteration=k)

        real0 = solver.realization(grids, 0, 0)
        _, sol0 = solver.solve(pools, real0, i0, warm_key=(0, 0))
        log.lower_bounds.append(float(sol0.objective))
        mean, var = float(np.mean(costs)), float(np.var(costs, ddof=1)) if len(costs) > 1 else 0.0
        log.forward_means.append(mean)
        log.forward_variances.append(var)

        reason = check_termination(log, tcfg)
        if reason != CONTINUE:
            break
    log.stop_reason = reason if reason != CONTINUE else MAX_ITERATIONS

    # final statistical upper bound from a dedicated forward batch
    rng_ub = rng_stream(seed, STREAM_UPPER_BOUND)
    ub_paths = [
        [0] + [int(rng_ub.integers(grids[t].shape[0])) for t in range(1, inst.n_stages)]
        for _ in range(max(2, tcfg.ub_paths))
    ]
    _, ub_costs = forward_pass(inst, pools, grids, ub_paths, solver, i0)
    log.final_ub_mean, log.final_ub = statistical_upper_bound(ub_costs, tcfg.confidence)

    policy = Policy(
        pools=pools,
        grids=grids,
        instance_fingerprint=inst.fingerprint,
        fingerprint=policy_fingerprint(inst.fingerprint, tcfg),
        storage_ids=inst.network.storage_ids,
    )
    logger.info(
        "trained %d stages in %d iterations (%s): LB=%.6f UB=%.6f",
        inst.n_stages, log.iterations, log.stop_reason,
        log.lower_bounds[-1], log.final_ub,
    )
    return policy, log


# -- policy persistence ------------------------------------------------------

POLICY_FORMAT_VERSION = "feedline-policy v1"


class PolicyMismatchError(RuntimeError):
    pass


def save_policy(policy: Policy, path) -> None:
    from .stage import pools_to_lines

    lines = [
        POLICY_FORMAT_VERSION,
        f"fingerprint {policy.fingerprint}",
        f"instance {policy.instance_fingerprint}",
    ]
    for t, grid in enumerate(policy.grids):
        lines.append("grid " + str(t) + " " + " ".join(repr(float(m)) for m in grid))
    lines.extend(pools_to_lines(policy.pools, policy.storage_ids))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path, expected_instance_fingerprint: str | None = None) -> Policy:
    from .stage import pools_from_lines

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != POLICY_FORMAT_VERSION:
        raise PolicyMismatchError(f"not a policy file: {path}")
    fp = lines[1].split()[1]
    inst_fp = lines[2].split()[1]
    if (
        expected_instance_fingerprint is not None
        and inst_fp != expected_instance_fingerprint
    ):
        raise PolicyMismatchError(
            f"policy was trained on instance {inst_fp}, "
            f"got {expected_instance_fingerprint}"
        )
    grids = []
    rest = 3
    for line in lines[3:]:
        if line.startswith("grid "):
            parts = line.split()
            grids.append(np.array([float(v) for v in parts[2:]]))
            rest += 1
        else:
            break
    pools, storage_ids = pools_from_lines(lines[rest:])
    return Policy(
        pools=pools, grids=grids, instance_fingerprint=inst_fp,
        fingerprint=fp, storage_ids=storage_ids,
    )
