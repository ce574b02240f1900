"""Domain types for the equipment network, moisture model, and experiments.

All types are immutable after construction and safe to share across workers.
RNG streams are always owned by the caller and passed in explicitly.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class ModelError(ValueError):
    """Raised for invalid domain-type construction or unrealizable requests."""


class SequenceError(ModelError):
    """Raised when a bale sequence cannot be generated as requested."""


class Level(str, enum.Enum):
    LOW = "low"
    MED = "med"
    HIGH = "high"

    @property
    def rank(self) -> int:
        """Wetness order: LOW < MED < HIGH."""
        return {"low": 0, "med": 1, "high": 2}[self.value]


LEVELS = (Level.LOW, Level.MED, Level.HIGH)


@dataclass(frozen=True)
class MoistureLevel:
    """One moisture class: a label plus a closed fraction interval."""

    label: Level
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 < self.lo <= self.hi < 1.0):
            raise ModelError(f"moisture range [{self.lo}, {self.hi}] not inside (0,1)")

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, m: float) -> bool:
        return self.lo <= m <= self.hi


@dataclass(frozen=True)
class MoistureModel:
    """Per-level uniform moisture distributions; stage-wise independent."""

    levels: tuple[MoistureLevel, ...] = (
        MoistureLevel(Level.LOW, 0.03, 0.12),
        MoistureLevel(Level.MED, 0.12, 0.20),
        MoistureLevel(Level.HIGH, 0.20, 0.30),
    )

    def __post_init__(self):
        seen = set()
        for ml in self.levels:
            if ml.label in seen:
                raise ModelError(f"duplicate moisture level {ml.label}")
            seen.add(ml.label)
        ordered = sorted(self.levels, key=lambda ml: ml.lo)
        for a, b in zip(ordered, ordered[1:]):
            if b.lo < a.hi:  # overlap beyond a shared endpoint
                raise ModelError(
                    f"moisture ranges overlap: {a.label} [{a.lo},{a.hi}] vs "
                    f"{b.label} [{b.lo},{b.hi}]"
                )

    def level(self, label: Level) -> MoistureLevel:
        for ml in self.levels:
            if ml.label == label:
                return ml
        raise ModelError(f"no such moisture level {label!r}")

    def sample(self, label: Level, rng: np.random.Generator) -> float:
        return sample_moisture(self.level(label), rng)

    def mean(self, label: Level) -> float:
        return self.level(label).mean


def sample_moisture(level: MoistureLevel, rng: np.random.Generator) -> float:
    """Draw one moisture fraction uniformly from the level's range."""
    if level.lo == level.hi:
        return level.lo
    return float(rng.uniform(level.lo, level.hi))


class Kind(str, enum.Enum):
    PROCESSING = "processing"
    TRANSPORT = "transport"
    STORAGE = "storage"


@dataclass(frozen=True)
class EquipmentSpec:
    """One piece of equipment.

    geometry is the volume moved per speed-unit per hour (m^3); speed_bounds
    cap the speed decision per moisture level; infeed_limit is the optional
    dt/hr intake cap; density_context selects which density regression applies
    to material handled here ("baled", "grinder1", "grinder2"); loss_role names
    the loss-table row applied on exit (None for lossless equipment).
    """

    id: str
    kind: Kind
    geometry: float
    speed_bounds: dict[Level, float]
    infeed_limit: dict[Level, float] | None = None
    storage_volume: float = 0.0
    system_feed_rate: dict[Level, float] | None = None
    density_context: str = "baled"
    loss_role: str | None = None

    def __post_init__(self):
        if self.geometry < 0 or self.storage_volume < 0:
            raise ModelError(f"negative geometry/volume on {self.id}")
        for table in (self.speed_bounds, self.infeed_limit, self.system_feed_rate):
            if table:
                for lvl, v in table.items():
                    if v < 0:
                        raise ModelError(f"negative bound {v} for {lvl} on {self.id}")
        if (self.kind == Kind.STORAGE) != (self.storage_volume > 0):
            raise ModelError(
                f"{self.id}: storage_volume must be positive iff kind is storage"
            )
        bounds = [self.speed_bounds.get(lvl) for lvl in LEVELS]
        known = [b for b in bounds if b is not None]
        if len(known) == 3 and not (bounds[0] >= bounds[1] >= bounds[2] - 1e-12):
            warnings.warn(
                f"{self.id}: speed bounds increase with moisture level "
                f"({bounds}); wetter biomass usually processes slower",
                stacklevel=2,
            )


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """The equipment DAG from the infeed down to the reactor feeder."""

    equipment: tuple[EquipmentSpec, ...]
    arcs: tuple[tuple[str, str], ...]
    reactor_feeder: str
    bypass_split: str | None = None
    bypass_target: str | None = None

    # derived, filled in __post_init__
    incidence_full: np.ndarray = field(init=False, repr=False)
    incidence_transport: np.ndarray = field(init=False, repr=False)
    storage_in: dict[str, tuple[str, ...]] = field(init=False, repr=False)
    storage_out: dict[str, tuple[str, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        ids = [e.id for e in self.equipment]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate equipment ids")
        index = {eid: k for k, eid in enumerate(ids)}
        for u, v in self.arcs:
            if u not in index or v not in index:
                raise ModelError(f"arc ({u},{v}) references unknown equipment")
        if self.reactor_feeder not in index:
            raise ModelError(f"unknown reactor feeder {self.reactor_feeder!r}")

        n, a = len(ids), len(self.arcs)
        inc = np.zeros((n, a))
        for j, (u, v) in enumerate(self.arcs):
            inc[index[u], j] = 1.0
            inc[index[v], j] = -1.0
        transport_rows = [index[e.id] for e in self.equipment if e.kind == Kind.TRANSPORT]
        object.__setattr__(self, "incidence_full", inc)
        object.__setattr__(self, "incidence_transport", inc[transport_rows, :])

        sin: dict[str, tuple[str, ...]] = {}
        sout: dict[str, tuple[str, ...]] = {}
        for e in self.equipment:
            if e.kind == Kind.STORAGE:
                sin[e.id] = tuple(u for u, v in self.arcs if v == e.id)
                sout[e.id] = tuple(v for u, v in self.arcs if u == e.id)
                if not sin[e.id] or not sout[e.id]:
                    raise ModelError(f"storage {e.id} must have feeders and consumers")
        object.__setattr__(self, "storage_in", sin)
        object.__setattr__(self, "storage_out", sout)

        self._check_dag_and_paths()
        if self.bypass_split is not None:
            outs = self.successors(self.bypass_split)
            if len(outs) != 2:
                raise ModelError(f"bypass split {self.bypass_split} must have 2 out-arcs")
            if self.bypass_target not in outs:
                raise ModelError(
                    f"bypass target {self.bypass_target!r} is not fed by the split node"
                )

    def _check_dag_and_paths(self):
        order = self.topological_order()  # raises on cycles
        sources = [e.id for e in self.equipment if not self.predecessors(e.id)]
        if len(sources) != 1:
            raise ModelError(f"expected a single infeed source, found {sources}")
        reach_fwd = {sources[0]}
        for eid in order:
            if eid in reach_fwd:
                reach_fwd.update(self.successors(eid))
        reach_back = {self.reactor_feeder}
        for eid in reversed(order):
            if any(s in reach_back for s in self.successors(eid)):
                reach_back.add(eid)
        stranded = [e.id for e in self.equipment
                    if e.id not in reach_fwd or e.id not in reach_back]
        if stranded:
            raise ModelError(f"equipment off the infeed->reactor path: {stranded}")

    # -- graph helpers ----------------------------------------------------
    def node(self, eid: str) -> EquipmentSpec:
        for e in self.equipment:
            if e.id == eid:
                return e
        raise ModelError(f"no equipment {eid!r}")

    def predecessors(self, eid: str) -> tuple[str, ...]:
        return tuple(u for u, v in self.arcs if v == eid)

    def successors(self, eid: str) -> tuple[str, ...]:
        return tuple(v for u, v in self.arcs if u == eid)

    @property
    def source(self) -> str:
        return next(e.id for e in self.equipment if not self.predecessors(e.id))

    @property
    def storage_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.equipment if e.kind == Kind.STORAGE)

    def topological_order(self) -> list[str]:
        indeg = {e.id: len(self.predecessors(e.id)) for e in self.equipment}
        frontier = sorted(eid for eid, d in indeg.items() if d == 0)
        order: list[str] = []
        while frontier:
            eid = frontier.pop(0)
            order.append(eid)
            for s in self.successors(eid):
                indeg[s] -= 1
                if indeg[s] == 0:
                    frontier.append(s)
            frontier.sort()
        if len(order) != len(self.equipment):
            raise ModelError("equipment graph has a cycle")
        return order

    def split_share(self, u: str, v: str, bypass_fraction: float) -> float:
        """Share of u's output routed along arc (u, v)."""
        if u != self.bypass_split:
            return 1.0
        return bypass_fraction if v == self.bypass_target else 1.0 - bypass_fraction


class Strategy(str, enum.Enum):
    SHORT_PATTERN = "short_pattern"
    LONG_BLOCKS = "long_blocks"
    RANDOM = "random"
    EXPLICIT = "explicit"


class Order(str, enum.Enum):
    HIGH_START = "high_start"
    LOW_START = "low_start"


@dataclass(frozen=True)
class StageScheme:
    """How sequence entries map to decision stages."""

    kind: str  # "per_bale" | "combined" | "detailed"
    parts: int = 1  # bale subdivisions for "detailed"

    def __post_init__(self):
        if self.kind not in ("per_bale", "combined", "detailed"):
            raise ModelError(f"unknown stage scheme {self.kind!r}")
        if self.parts <= 0:
            raise ModelError(f"stage subdivisions must be positive, got {self.parts}")

    @staticmethod
    def parse(text: str) -> "StageScheme":
        if text.startswith("detailed"):
            _, _, k = text.partition(":")
            return StageScheme("detailed", int(k) if k else 3)
        return StageScheme(text)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines one experiment instance."""

    horizon_bales: int = 50
    mix: dict[Level, float] = field(
        default_factory=lambda: {Level.LOW: 0.6, Level.MED: 0.2, Level.HIGH: 0.2}
    )
    sequence_strategy: Strategy = Strategy.SHORT_PATTERN
    sequence_order: Order = Order.HIGH_START
    explicit_sequence: tuple[Level, ...] | None = None
    stage_scheme: StageScheme = StageScheme("per_bale")
    target_rate: float = 2.95  # dt/hr at the reactor
    holding_cost: float = 1.0  # $/dt per stage
    penalty_cost: float = 20.0  # $*hr/dt
    initial_inventory: str | float = "empty"  # empty | half_full | full | dt value
    bale_dry_mass: float = 0.45  # dt
    rate_basis: str = "per_hour"  # per_hour | per_stage_dt
    seed: int = 0

    def __post_init__(self):
        if self.horizon_bales <= 0:
            raise ModelError("horizon must be positive")
        total = 0.0
        for lvl, f in self.mix.items():
            if not 0.0 <= f <= 1.0:
                raise ModelError(f"mix fraction out of [0,1] for {lvl}: {f}")
            total += f
        if abs(total - 1.0) > 1e-9:
            raise ModelError(f"mix fractions sum to {total}, expected 1")
        if self.target_rate <= 0 or self.bale_dry_mass <= 0:
            raise ModelError("target rate and bale mass must be positive")
        if self.rate_basis not in ("per_hour", "per_stage_dt"):
            raise ModelError(f"unknown rate basis {self.rate_basis!r}")
        if isinstance(self.initial_inventory, str):
            if self.initial_inventory not in ("empty", "half_full", "full"):
                raise ModelError(f"unknown initial inventory {self.initial_inventory!r}")
        elif self.initial_inventory < 0:
            raise ModelError("explicit initial inventory must be nonnegative")
        if self.sequence_strategy == Strategy.EXPLICIT:
            if self.explicit_sequence is None:
                raise ModelError("explicit strategy requires explicit_sequence")
            if len(self.explicit_sequence) != self.horizon_bales:
                raise ModelError(
                    f"explicit sequence length {len(self.explicit_sequence)} != "
                    f"horizon {self.horizon_bales}"
                )


@dataclass(frozen=True)
class StageSpec:
    level: Level
    beta: float  # number (or fraction) of bales processed in the stage

    def __post_init__(self):
        if self.beta <= 0:
            raise ModelError("stage weight must be positive")


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[StageSpec, ...]
    horizon_bales: int

    def __post_init__(self):
        if not self.stages:
            raise ModelError("empty stage plan")
        total = sum(s.beta for s in self.stages)
        if abs(total - self.horizon_bales) > 1e-9:
            raise ModelError(
                f"stage weights sum to {total}, expected horizon {self.horizon_bales}"
            )

    def __len__(self) -> int:
        return len(self.stages)

    @property
    def levels(self) -> tuple[Level, ...]:
        return tuple(s.level for s in self.stages)


def _pattern_counts(mix: dict[Level, float], n: int) -> dict[Level, int] | None:
    counts = {}
    for lvl, f in mix.items():
        c = f * n
        if abs(c - round(c)) > 1e-9:
            return None
        counts[lvl] = int(round(c))
    if sum(counts.values()) != n:
        return None
    return counts


def _ordered(counts: dict[Level, int], order: Order) -> list[Level]:
    ranked = sorted(counts, key=lambda l: l.rank, reverse=(order == Order.HIGH_START))
    out: list[Level] = []
    for lvl in ranked:
        out.extend([lvl] * counts[lvl])
    return out


def generate_sequence(config: ScenarioConfig, rng: np.random.Generator) -> list[Level]:
    """Build the bale moisture-level sequence for the whole horizon."""
    mix = {lvl: f for lvl, f in config.mix.items() if f > 0.0}
    horizon = config.horizon_bales

    if config.sequence_strategy == Strategy.EXPLICIT:
        return list(config.explicit_sequence)

    if config.sequence_strategy == Strategy.SHORT_PATTERN:
        pattern = None
        for n in range(1, horizon + 1):
            counts = _pattern_counts(mix, n)
            if counts is not None:
                pattern = _ordered(counts, config.sequence_order)
                break
        if pattern is None:
            raise SequenceError(f"mix {mix} is not realizable as an integer pattern")
        n = len(pattern)
        if horizon % n:
            feasible = n * max(1, math.ceil(horizon / n))
            raise SequenceError(
                f"horizon {horizon} is not a multiple of the pattern length {n}; "
                f"smallest feasible horizon is {feasible}"
            )
        return pattern * (horizon // n)

    if config.sequence_strategy == Strategy.LONG_BLOCKS:
        counts = _pattern_counts(mix, horizon)
        if counts is None:
            raise SequenceError(
                f"mix {mix} does not yield integer bale counts over horizon {horizon}"
            )
        return _ordered(counts, config.sequence_order)

    # Random: draw without replacement from the exact level multiset.
    exact = {lvl: f * horizon for lvl, f in mix.items()}
    counts = {lvl: int(math.floor(c)) for lvl, c in exact.items()}
    leftover = horizon - sum(counts.values())
    by_remainder = sorted(exact, key=lambda l: (exact[l] - counts[l], l.rank), reverse=True)
    for lvl in by_remainder[:leftover]:
        counts[lvl] += 1
    pool = _ordered(counts, config.sequence_order)
    perm = rng.permutation(len(pool))
    return [pool[i] for i in perm]


def build_stage_plan(sequence: list[Level], scheme: StageScheme) -> StagePlan:
    """Map a bale sequence to decision stages with bale-count weights."""
    if not sequence:
        raise ModelError("cannot build a stage plan from an empty sequence")
    stages: list[StageSpec] = []
    if scheme.kind == "per_bale":
        stages = [StageSpec(lvl, 1.0) for lvl in sequence]
    elif scheme.kind == "combined":
        run_level, run = sequence[0], 0
        for lvl in sequence:
            if lvl == run_level:
                run += 1
            else:
                stages.append(StageSpec(run_level, float(run)))
                run_level, run = lvl, 1
        stages.append(StageSpec(run_level, float(run)))
    else:  # detailed
        k = scheme.parts
        for lvl in sequence:
            stages.extend(StageSpec(lvl, 1.0 / k) for _ in range(k))
    return StagePlan(tuple(stages), horizon_bales=len(sequence))
