"""Translate one stage of the instance into a bounded LP and back.

The stage LP realizes the single-stage problem: flow-balance equalities at
transport nodes, speed-to-mass link rows at processing and storage nodes,
inventory balance rows carrying the incoming inventory on the rhs (so their
duals are exactly the subgradients needed for cuts), the shortfall row against
the target delivery, and cut rows bounding the cost-to-go variable.

The same block emitter also lays down per-node blocks for the deterministic
equivalent, the two-stage extensive form, and the mean-value problem, so every
model in the repo shares one set of stage dynamics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import physics
from .lp import GE, LE, EQ, LpBuilder, LinearProgram, LpSolution, OPTIMAL
from .model import Kind, Level, NetworkSpec, ScenarioConfig

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


@dataclass(frozen=True)
class StageRealization:
    """One stage's sampled moisture plus every derived LP coefficient."""

    t: int
    level: Level
    moisture: float
    beta: float
    duration: float  # hours
    local_moisture: dict[str, float]
    density: dict[str, float]  # kg/m^3 at each node
    flow_coef: dict[str, float]  # dt per speed-unit-hour
    speed_bound: dict[str, float]  # speed units
    infeed_cap_mass: dict[str, float]  # dt over the stage, per capped node
    capacity: dict[str, float]  # dt, per storage node
    retained: dict[str, float]  # dry fraction surviving each node
    share: dict[tuple[str, str], float]  # arc split shares
    source_limit: float  # dt available at the infeed
    target_mass: float  # dt the reactor should receive this stage

    def capacity_vector(self, net: NetworkSpec) -> np.ndarray:
        return np.array([self.capacity[j] for j in net.storage_ids])


def stage_duration(
    net: NetworkSpec, phys: physics.MaterialModel, cfg: ScenarioConfig,
    level: Level, beta: float,
) -> float:
    """Hours the system spends on this stage: bale mass over the system feed rate."""
    mass = beta * cfg.bale_dry_mass
    src = net.node(net.source)
    if src.system_feed_rate and level in src.system_feed_rate:
        rate = (
            physics.flow_coefficient(phys, src, 0.0, level)
            * src.system_feed_rate[level]
        )
    else:
        rate = None
        for eid in net.topological_order():
            node = net.node(eid)
            if node.kind == Kind.PROCESSING and node.infeed_limit:
                rate = node.infeed_limit[level]
                break
        if rate is None:
            raise StageError("no system feed rate and no processing infeed cap")
    if rate <= 0:
        raise StageError(f"nonpositive system feed rate {rate} for {level}")
    return mass / rate


def realize(
    net: NetworkSpec,
    phys: physics.MaterialModel,
    cfg: ScenarioConfig,
    t: int,
    level: Level,
    moisture: float,
    beta: float,
) -> StageRealization:
    """Compute every moisture-dependent coefficient for stage ``t``."""
    duration = stage_duration(net, phys, cfg, level, beta)

    # local moisture: bale moisture minus losses accumulated on the way in;
    # at merge points take the maximum-loss (driest, most conservative) path
    drop: dict[str, float] = {}
    for eid in net.topological_order():
        preds = net.predecessors(eid)
        if not preds:
            drop[eid] = 0.0
            continue
        drop[eid] = max(
            drop[u] + physics.moisture_drop(phys, net.node(u).loss_role, level)
            for u in preds
        )
    local = {eid: max(0.0, moisture - d) for eid, d in drop.items()}

    density, coef, speed, caps, capacity, retained = {}, {}, {}, {}, {}, {}
    for e in net.equipment:
        m_here = local[e.id]
        density[e.id] = physics.local_density(phys, e, m_here, level)
        coef[e.id] = physics.flow_coefficient(phys, e, m_here, level)
        speed[e.id] = e.speed_bounds.get(level, np.inf)
        if e.infeed_limit and level in e.infeed_limit:
            caps[e.id] = e.infeed_limit[level] * duration
        retained[e.id] = physics.retained_fraction(phys, e.loss_role, level)
        if e.kind == Kind.STORAGE:
            capacity[e.id] = physics.storage_capacity(
                phys, e.storage_volume, m_here, level
            )

    bypass_frac = phys.bypass.fraction[level]
    share = {(u, v): net.split_share(u, v, bypass_frac) for u, v in net.arcs}

    target = cfg.target_rate * duration if cfg.rate_basis == "per_hour" else cfg.target_rate
    return StageRealization(
        t=t,
        level=level,
        moisture=moisture,
        beta=beta,
        duration=duration,
        local_moisture=local,
        density=density,
        flow_coef=coef,
        speed_bound=speed,
        infeed_cap_mass=caps,
        capacity=capacity,
        retained=retained,
        share=share,
        source_limit=beta * cfg.bale_dry_mass,
        target_mass=target,
    )


@dataclass(frozen=True)
class Cut:
    """Affine under-estimator of an expected cost-to-go: theta >= intercept + g.I."""

    intercept: float
    gradient: tuple[float, ...]
    iteration: int = 0

    def __post_init__(self):
        if not np.isfinite(self.intercept) or not all(
            np.isfinite(g) for g in self.gradient
        ):
            raise StageError("non-finite cut")

    def evaluate(self, inventory: np.ndarray) -> float:
        return self.intercept + float(np.dot(self.gradient, inventory))


class CutPool:
    """Append-only collection of cuts for one stage's cost-to-go variable."""

    def __init__(self, n_storage: int):
        self.n_storage = n_storage
        self.cuts: list[Cut] = []

    def append(self, cut: Cut) -> None:
        if len(cut.gradient) != self.n_storage:
            raise StageError(
                f"cut gradient has {len(cut.gradient)} entries, "
                f"expected {self.n_storage}"
            )
        self.cuts.append(cut)

    def __len__(self) -> int:
        return len(self.cuts)

    def __iter__(self):
        return iter(self.cuts)

    def evaluate(self, inventory: np.ndarray) -> float:
        """Current lower approximation of the expected cost-to-go at a state."""
        if not self.cuts:
            return 0.0
        return max(0.0, max(c.evaluate(inventory) for c in self.cuts))


@dataclass
class BlockVars:
    """Variable/row indices for one emitted stage block."""

    x: dict[str, int]
    v: dict[str, int]
    i: dict[str, int]
    p: int
    theta: int | None
    inv_row: dict[str, int]


def emit_stage_block(
    b: LpBuilder,
    net: NetworkSpec,
    cfg: ScenarioConfig,
    real: StageRealization,
    prefix: str = "",
    *,
    incoming_const: np.ndarray | None = None,
    incoming_vars: dict[str, int] | None = None,
    shared_inventory: dict[str, int] | None = None,
    cost_scale: float = 1.0,
    inventory_cost_scale: float | None = None,
    include_theta: bool = False,
    theta_fixed_zero: bool = False,
    condensed: bool = False,
) -> BlockVars:
    """Lay down one stage's variables and rows into an open builder.

    Incoming inventory enters either as rhs constants (stage LP: duals become
    cut gradients) or as the previous block's inventory variables (tree and
    extensive forms).  ``shared_inventory`` reuses externally owned inventory
    variables (two-stage first stage); capacity is then enforced with rows
    instead of bounds.

    ``condensed`` folds the speed variables into flow bounds
    (X <= flow_coef * duration * speed_bound), which leaves the value function
    and the inventory-row duals unchanged while halving the LP; the training
    and simulation hot paths use it.
    """
    storage_ids = net.storage_ids
    beta = real.beta
    pc = cost_scale * beta * cfg.penalty_cost
    ic = beta * cfg.holding_cost * (
        cost_scale if inventory_cost_scale is None else inventory_cost_scale
    )

    v_var, x_var, i_var = {}, {}, {}
    for e in net.equipment:
        if condensed:
            speed_mass = real.flow_coef[e.id] * real.duration * real.speed_bound[e.id]
            x_cap = min(real.infeed_cap_mass.get(e.id, np.inf), speed_mass)
            x_var[e.id] = b.add_var(f"{prefix}X[{e.id}]", 0.0, x_cap)
            continue
        v_var[e.id] = b.add_var(f"{prefix}V[{e.id}]", 0.0, real.speed_bound[e.id])
        x_cap = real.infeed_cap_mass.get(e.id, np.inf)
        x_var[e.id] = b.add_var(f"{prefix}X[{e.id}]", 0.0, x_cap)
    if shared_inventory is not None:
        i_var = dict(shared_inventory)
        for sid in storage_ids:
            b.add_row(
                f"{prefix}cap[{sid}]", [(i_var[sid], 1.0)], LE, real.capacity[sid]
            )
    else:
        for sid in storage_ids:
            i_var[sid] = b.add_var(f"{prefix}I[{sid}]", 0.0, real.capacity[sid], ic)
    p_var = b.add_var(f"{prefix}p", 0.0, np.inf, pc)
    theta_var = None
    if include_theta:
        theta_var = b.add_var(
            f"{prefix}theta", 0.0, 0.0 if theta_fixed_zero else np.inf, 1.0
        )

    def inflow(eid: str) -> list[tuple[int, float]]:
        terms = []
        for u in net.predecessors(eid):
            w = real.share[(u, eid)] * real.retained[u]
            if w != 0.0:
                terms.append((x_var[u], w))
        return terms

    b.add_row(
        f"{prefix}feed[{net.source}]", [(x_var[net.source], 1.0)], LE,
        real.source_limit,
    )
    inv_row: dict[str, int] = {}
    for e in net.equipment:
        link = real.flow_coef[e.id] * real.duration
        if e.kind == Kind.TRANSPORT:
            if net.predecessors(e.id):
                b.add_row(
                    f"{prefix}bal[{e.id}]",
                    [(x_var[e.id], 1.0)] + [(j, -w) for j, w in inflow(e.id)],
                    EQ, 0.0,
                )
            if not condensed:
                b.add_row(
                    f"{prefix}speedcap[{e.id}]",
                    [(x_var[e.id], 1.0), (v_var[e.id], -link)],
                    LE, 0.0,
                )
        elif e.kind == Kind.PROCESSING:
            if net.predecessors(e.id):
                b.add_row(
                    f"{prefix}feed[{e.id}]",
                    [(x_var[e.id], 1.0)] + [(j, -w) for j, w in inflow(e.id)],
                    LE, 0.0,
                )
            if not condensed:
                b.add_row(
                    f"{prefix}speed[{e.id}]",
                    [(x_var[e.id], 1.0), (v_var[e.id], -link)],
                    EQ, 0.0,
                )
        else:  # storage: discharge link + inventory balance
            if not condensed:
                b.add_row(
                    f"{prefix}speed[{e.id}]",
                    [(x_var[e.id], 1.0), (v_var[e.id], -link)],
                    EQ, 0.0,
                )
            terms = [(i_var[e.id], 1.0)]
            for u in net.storage_in[e.id]:
                w = real.share[(u, e.id)] * real.retained[u]
                terms.append((x_var[u], -w))
            for d in net.storage_out[e.id]:
                terms.append((x_var[d], 1.0))
            k = storage_ids.index(e.id)
            if incoming_vars is not None:
                terms.append((incoming_vars[e.id], -1.0))
                rhs = 0.0
            else:
                rhs = float(incoming_const[k])
            inv_row[e.id] = b.add_row(f"{prefix}inv[{e.id}]", terms, EQ, rhs)

    # per_hour basis: p is the rate shortfall (dt/hr), so the same physical
    # deficit costs the same regardless of how finely stages split a bale
    p_coef = real.duration if cfg.rate_basis == "per_hour" else 1.0
    b.add_row(
        f"{prefix}target",
        [(p_var, p_coef), (x_var[net.reactor_feeder], 1.0)],
        GE, real.target_mass,
    )
    return BlockVars(x=x_var, v=v_var, i=i_var, p=p_var, theta=theta_var,
                     inv_row=inv_row)


@dataclass
class StageProblem:
    """A built stage LP plus the index maps needed to read the solution back."""

    lp: LinearProgram
    real: StageRealization
    x_var: dict[str, int]
    v_var: dict[str, int]
    i_var: dict[str, int]
    p_var: int
    theta_var: int
    inv_row: dict[str, int]
    storage_ids: tuple[str, ...]
    delivered_node: str = field(default="")


def build_stage_lp(
    net: NetworkSpec,
    cfg: ScenarioConfig,
    real: StageRealization,
    incoming: np.ndarray,
    cuts: CutPool | None,
    terminal: bool = False,
    clamp_incoming: bool = True,
    condensed: bool = False,
) -> StageProblem:
    """Assemble the stage LP at one realization and incoming inventory vector."""
    storage_ids = net.storage_ids
    incoming = np.asarray(incoming, dtype=float)
    if incoming.shape != (len(storage_ids),):
        raise StageError(
            f"incoming inventory has shape {incoming.shape}, "
            f"expected ({len(storage_ids)},)"
        )
    if clamp_incoming:
        hi = real.capacity_vector(net)
        clamped = np.clip(incoming, 0.0, hi)
        moved = float(np.abs(clamped - incoming).max()) if incoming.size else 0.0
        if moved > 1e-9:
            logger.warning(
                "stage %d: incoming inventory %s clamped to %s "
                "(moisture-dependent capacity shrank)",
                real.t, incoming.tolist(), clamped.tolist(),
            )
        incoming = clamped

    b = LpBuilder()
    blk = emit_stage_block(
        b, net, cfg, real,
        incoming_const=incoming,
        include_theta=True,
        theta_fixed_zero=terminal,
        condensed=condensed,
    )
    if not terminal and cuts is not None:
        for k, cut in enumerate(cuts):
            terms = [(blk.theta, 1.0)] + [
                (blk.i[sid], -g)
                for sid, g in zip(storage_ids, cut.gradient)
                if g != 0.0
            ]
            b.add_row(f"cut[{k}]", terms, GE, cut.intercept)

    return StageProblem(
        lp=b.build(),
        real=real,
        x_var=blk.x,
        v_var=blk.v,
        i_var=blk.i,
        p_var=blk.p,
        theta_var=blk.theta,
        inv_row=blk.inv_row,
        storage_ids=storage_ids,
        delivered_node=net.reactor_feeder,
    )


def extract_state(prob: StageProblem, sol: LpSolution) -> np.ndarray:
    """End-of-stage inventory vector, clipped to [0, capacity] for solver noise."""
    if sol.status != OPTIMAL:
        raise StageError(f"cannot extract state from a {sol.status} solution")
    out = np.array([sol.x[prob.i_var[sid]] for sid in prob.storage_ids])
    caps = np.array([prob.real.capacity[sid] for sid in prob.storage_ids])
    return np.clip(out, 0.0, caps)


def extract_cut_ingredients(
    prob: StageProblem, sol: LpSolution
) -> tuple[float, np.ndarray]:
    """Stage value and its subgradient with respect to the incoming inventory.

    Valid for any optimal dual: value + g.(I - I_bar) under-estimates the stage
    value function by LP convexity in the rhs.
    """
    if sol.status != OPTIMAL:
        raise StageError(f"cannot extract cut from a {sol.status} solution")
    grad = np.array([sol.duals[prob.inv_row[sid]] for sid in prob.storage_ids])
    return float(sol.objective), grad


def immediate_cost(prob: StageProblem, sol: LpSolution) -> float:
    """Stage cost excluding the cost-to-go variable."""
    return float(sol.objective - sol.x[prob.theta_var])


def delivered_mass(prob: StageProblem, sol: LpSolution) -> float:
    return float(sol.x[prob.x_var[prob.delivered_node]])


def shortfall(prob: StageProblem, sol: LpSolution) -> float:
    return float(sol.x[prob.p_var])


# -- cut pool serialization -------------------------------------------------

CUTS_FORMAT_VERSION = "feedline-cuts v1"


def pools_to_lines(pools: list[CutPool], storage_ids: tuple[str, ...]) -> list[str]:
    lines = [
        CUTS_FORMAT_VERSION,
        f"stages {len(pools)}",
        "storage " + " ".join(storage_ids),
    ]
    for t, pool in enumerate(pools):
        for cut in pool:
            grad = " ".join(repr(float(g)) for g in cut.gradient)
            lines.append(f"cut {t} {cut.iteration} {float(cut.intercept)!r} {grad}")
    return lines


def pools_from_lines(lines: list[str]) -> tuple[list[CutPool], tuple[str, ...]]:
    if not lines or lines[0].strip() != CUTS_FORMAT_VERSION:
        raise StageError(f"unrecognized cut file header: {lines[:1]}")
    n_stages = int(lines[1].split()[1])
    storage_ids = tuple(lines[2].split()[1:])
    pools = [CutPool(len(storage_ids)) for _ in range(n_stages)]
    for line in lines[3:]:
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] != "cut":
            raise StageError(f"bad cut line: {line!r}")
        t, it = int(parts[1]), int(parts[2])
        intercept = float(parts[3])
        grad = tuple(float(g) for g in parts[4:])
        pools[t].append(Cut(intercept, grad, iteration=it))
    return pools, storage_ids
