"""Comparison models: two-stage extensive form, mean-value LP, and the
deterministic-equivalent tree LP used as an exactness oracle.

All three lay down the exact same stage blocks as the SDDP stage problems, so
objective comparisons across models are apples to apples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .lp import LpBuilder, LinearProgram, LpSolution, OPTIMAL
from .stage import BlockVars, emit_stage_block

TWO_STAGE = "two_stage"
MEAN_VALUE = "mean_value"


class BaselineError(RuntimeError):
    pass


@dataclass(frozen=True)
class StaticPlan:
    """A fixed inventory trajectory: stages x storage nodes, in dt."""

    inventory: np.ndarray
    source: str

    def __post_init__(self):
        if np.any(self.inventory < -1e-12):
            raise BaselineError("static plan has negative inventory")

    @property
    def n_stages(self) -> int:
        return self.inventory.shape[0]


@dataclass
class AssembledProgram:
    """A monolithic LP plus the handles needed to read decisions back."""

    lp: LinearProgram
    inventory_vars: list[dict[str, int]]  # per stage: storage id -> column
    storage_ids: tuple[str, ...]
    kind: str


def build_two_stage(inst: Instance, paths: list[list[float]]) -> AssembledProgram:
    """Extensive-form SAA: inventory levels shared across all sample paths.

    First-stage variables are the per-stage inventory levels; each path gets
    its own speeds, flows, and shortfalls.  Shortfall costs are averaged over
    paths; holding costs are charged once.
    """
    if not paths:
        raise BaselineError("need at least one sample path")
    t_count = inst.n_stages
    if any(len(p) != t_count for p in paths):
        raise BaselineError("every path must cover the full horizon")
    b = LpBuilder()
    storage_ids = inst.network.storage_ids
    shared: list[dict[str, int]] = []
    for t in range(t_count):
        beta = inst.stage_beta(t)
        shared.append({
            sid: b.add_var(
                f"I[{t}][{sid}]", 0.0, np.inf, beta * inst.config.holding_cost
            )
            for sid in storage_ids
        })
    i0 = inst.initial_inventory()
    w = 1.0 / len(paths)
    for s, path in enumerate(paths):
        for t in range(t_count):
            real = inst.realization(t, path[t])
            emit_stage_block(
                b, inst.network, inst.config, real,
                prefix=f"s{s}.t{t}.",
                incoming_const=i0 if t == 0 else None,
                incoming_vars=None if t == 0 else shared[t - 1],
                shared_inventory=shared[t],
                cost_scale=w,
            )
    return AssembledProgram(
        lp=b.build(), inventory_vars=shared, storage_ids=storage_ids,
        kind=TWO_STAGE,
    )


def build_mean_value(inst: Instance) -> AssembledProgram:
    """Deterministic LP with every moisture replaced by its level mean."""
    b = LpBuilder()
    storage_ids = inst.network.storage_ids
    i0 = inst.initial_inventory()
    blocks: list[BlockVars] = []
    inv_vars: list[dict[str, int]] = []
    for t in range(inst.n_stages):
        real = inst.realization(t, inst.stage_mean_moisture(t))
        blk = emit_stage_block(
            b, inst.network, inst.config, real,
            prefix=f"t{t}.",
            incoming_const=i0 if t == 0 else None,
            incoming_vars=None if t == 0 else blocks[t - 1].i,
        )
        blocks.append(blk)
        inv_vars.append(blk.i)
    return AssembledProgram(
        lp=b.build(), inventory_vars=inv_vars, storage_ids=storage_ids,
        kind=MEAN_VALUE,
    )


def tree_node_count(grids: list[np.ndarray]) -> int:
    total, width = 0, 1
    for g in grids:
        width *= g.shape[0]
        total += width
    return total


def build_deterministic_equivalent(
    inst: Instance,
    grids: list[np.ndarray],
    max_nodes: int = 5000,
    start_stage: int = 0,
    incoming: np.ndarray | None = None,
) -> AssembledProgram:
    """One LP over the full scenario tree spanned by the realization grids.

    Exact for the sampled (SAA) problem, so it serves as the oracle for the
    SDDP lower bound on instances small enough to enumerate.  Rooted at
    ``start_stage`` with a given incoming inventory, its optimum is the exact
    expected cost-to-go at that state (the cut-validity oracle).
    """
    sub = grids[start_stage:]
    count = tree_node_count(sub)
    if count > max_nodes:
        raise BaselineError(
            f"scenario tree has {count} nodes, above the cap {max_nodes}"
        )
    b = LpBuilder()
    storage_ids = inst.network.storage_ids
    i0 = inst.initial_inventory() if incoming is None else np.asarray(incoming, float)
    level = []
    counter = 0
    for j in range(sub[0].shape[0]):
        root_real = inst.realization(start_stage, float(sub[0][j]))
        level.append(emit_stage_block(
            b, inst.network, inst.config, root_real,
            prefix=f"n{counter}.", incoming_const=i0,
            cost_scale=1.0 / sub[0].shape[0],
        ))
        counter += 1
    roots = list(level)
    for k in range(1, len(sub)):
        prob_scale = 1.0
        for g in sub[: k + 1]:
            prob_scale /= g.shape[0]
        nxt = []
        for parent in level:
            for j in range(sub[k].shape[0]):
                real = inst.realization(start_stage + k, float(sub[k][j]))
                blk = emit_stage_block(
                    b, inst.network, inst.config, real,
                    prefix=f"n{counter}.",
                    incoming_vars=parent.i,
                    cost_scale=prob_scale,
                )
                nxt.append(blk)
                counter += 1
        level = nxt
    return AssembledProgram(
        lp=b.build(), inventory_vars=[r.i for r in roots], storage_ids=storage_ids,
        kind="deterministic_equivalent",
    )


def exact_cost_to_go(
    inst: Instance, grids: list[np.ndarray], stage: int, incoming: np.ndarray,
    max_nodes: int = 5000,
) -> float:
    """Expected cost-to-go E[Q_stage(incoming, .)] by exact tree enumeration."""
    prog = build_deterministic_equivalent(
        inst, grids, max_nodes=max_nodes, start_stage=stage, incoming=incoming
    )
    from . import lp as lpmod

    sol = lpmod.solve(prog.lp, backend="auto")
    if sol.status != OPTIMAL:
        raise BaselineError(f"cost-to-go oracle LP is {sol.status}")
    return float(sol.objective)


def extract_static_plan(
    prog: AssembledProgram, sol: LpSolution, source: str | None = None
) -> StaticPlan:
    """Pull the first-stage inventory trajectory out of a solved program."""
    if sol.status != OPTIMAL:
        raise BaselineError(f"cannot extract a plan from a {sol.status} solution")
    if prog.kind == "deterministic_equivalent":
        raise BaselineError("the tree LP has adaptive inventories, not a static plan")
    inv = np.array([
        [sol.x[stage_vars[sid]] for sid in prog.storage_ids]
        for stage_vars in prog.inventory_vars
    ])
    return StaticPlan(inventory=np.maximum(inv, 0.0), source=source or prog.kind)
