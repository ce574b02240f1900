"""Experiment instance assembly: network defaults, RNG streams, fingerprints.

An Instance bundles everything deterministic about one experiment (network,
material tables, moisture model, scenario config, bale sequence, stage plan)
plus a fingerprint hash so that policies and reports can be matched to the
exact inputs that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import physics
from .model import (
    EquipmentSpec, Kind, Level, LEVELS, MoistureModel, NetworkSpec,
    ScenarioConfig, StagePlan, build_stage_plan, generate_sequence,
)
from .stage import StageRealization, realize

# reproducibility: every random stream hangs off the scenario seed + a role key
STREAM_SEQUENCE = 0
STREAM_GRIDS = 1
STREAM_FORWARD = 2
STREAM_VALIDATION = 3
STREAM_UPPER_BOUND = 4
STREAM_TWO_STAGE = 5


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


# Table-9 infeed rate limits, dt/hr
INFEED_LIMITS = {
    "grinder1": {Level.LOW: 5.23, Level.MED: 4.53, Level.HIGH: 2.20},
    "grinder2": {Level.LOW: 5.23, Level.MED: 2.80, Level.HIGH: 1.59},
    "pellet_mill": {Level.LOW: 4.76, Level.MED: 3.81, Level.HIGH: 3.34},
    "conveyor_reactor": {Level.LOW: 4.81, Level.MED: 4.81, Level.HIGH: 4.81},
}


def default_network(
    phys: physics.MaterialModel | None = None,
    moisture: MoistureModel | None = None,
    storage_volume: float = 2.0,
    calibration_quantile: float = 0.5,
) -> NetworkSpec:
    """The shipped preprocessing line with calibrated speed bounds.

    Speed bounds are set so each equipment's mass throughput at the
    calibration-quantile moisture of a level equals its reference dt/hr rate
    (the Table-9 infeed cap for grinders and pelleting, a generous multiple
    for conveyors and the bin discharge).  Drier material is less dense, so
    volumetric speed limits bind below the reference rate; that within-level
    variation is the stochasticity the models trade on.
    """
    phys = phys or physics.DEFAULT_MATERIAL
    moisture = moisture or MoistureModel()

    g1 = INFEED_LIMITS["grinder1"]
    pel = INFEED_LIMITS["pellet_mill"]
    nodes = [
        ("infeed_conveyor", Kind.TRANSPORT, "baled", None,
         {l: 2.0 * g1[l] for l in LEVELS}, None),
        ("grinder1", Kind.PROCESSING, "grinder1", "grinder1",
         dict(g1), INFEED_LIMITS["grinder1"]),
        ("screen", Kind.TRANSPORT, "grinder1", None,
         {l: 2.0 * g1[l] for l in LEVELS}, None),
        ("grinder2", Kind.PROCESSING, "grinder2", "grinder2",
         INFEED_LIMITS["grinder2"], INFEED_LIMITS["grinder2"]),
        ("conveyor_g2", Kind.TRANSPORT, "grinder2", None,
         {l: 2.0 * g1[l] for l in LEVELS}, None),
        ("conveyor_bypass", Kind.TRANSPORT, "grinder1", None,
         {l: 2.0 * g1[l] for l in LEVELS}, None),
        ("metering_bin", Kind.STORAGE, "grinder2", None,
         {l: 1.5 * pel[l] for l in LEVELS}, None),
        ("conveyor_bin_out", Kind.TRANSPORT, "grinder2", None,
         {l: 2.0 * pel[l] for l in LEVELS}, None),
        ("pellet_mill", Kind.PROCESSING, "grinder2", "pelleting",
         dict(pel), INFEED_LIMITS["pellet_mill"]),
        ("conveyor_reactor", Kind.TRANSPORT, "grinder2", None,
         {l: 2.0 * pel[l] for l in LEVELS}, INFEED_LIMITS["conveyor_reactor"]),
    ]
    arcs = (
        ("infeed_conveyor", "grinder1"),
        ("grinder1", "screen"),
        ("screen", "grinder2"),
        ("screen", "conveyor_bypass"),
        ("grinder2", "conveyor_g2"),
        ("conveyor_g2", "metering_bin"),
        ("conveyor_bypass", "metering_bin"),
        ("metering_bin", "conveyor_bin_out"),
        ("conveyor_bin_out", "pellet_mill"),
        ("pellet_mill", "conveyor_reactor"),
    )

    # first pass with unbounded speeds, just to evaluate local densities
    provisional = NetworkSpec(
        equipment=tuple(
            EquipmentSpec(
                id=eid, kind=kind, geometry=1.0,
                speed_bounds={l: np.inf for l in LEVELS},
                infeed_limit=caps,
                storage_volume=storage_volume if kind == Kind.STORAGE else 0.0,
                density_context=ctx, loss_role=role,
            )
            for eid, kind, ctx, role, _, caps in nodes
        ),
        arcs=arcs,
        reactor_feeder="conveyor_reactor",
        bypass_split="screen",
        bypass_target="conveyor_bypass",
    )
    cfg = ScenarioConfig()  # only bale mass / target defaults matter here
    q = calibration_quantile
    equipment = []
    for eid, kind, ctx, role, ref_rates, caps in nodes:
        bounds = {}
        for level in LEVELS:
            ml = moisture.level(level)
            m_ref = ml.lo + q * (ml.hi - ml.lo)
            real = realize(provisional, phys, cfg, 0, level, m_ref, 1.0)
            bounds[level] = ref_rates[level] / real.flow_coef[eid]
        equipment.append(
            EquipmentSpec(
                id=eid, kind=kind, geometry=1.0, speed_bounds=bounds,
                infeed_limit=caps,
                storage_volume=storage_volume if kind == Kind.STORAGE else 0.0,
                density_context=ctx, loss_role=role,
            )
        )
    return NetworkSpec(
        equipment=tuple(equipment),
        arcs=arcs,
        reactor_feeder="conveyor_reactor",
        bypass_split="screen",
        bypass_target="conveyor_bypass",
    )


@dataclass(frozen=True)
class Instance:
    network: NetworkSpec
    material: physics.MaterialModel
    moisture: MoistureModel
    config: ScenarioConfig
    sequence: tuple[Level, ...]
    plan: StagePlan
    fingerprint: str

    @property
    def n_stages(self) -> int:
        return len(self.plan)

    def stage_level(self, t: int) -> Level:
        return self.plan.stages[t].level

    def stage_beta(self, t: int) -> float:
        return self.plan.stages[t].beta

    def realization(self, t: int, m: float) -> StageRealization:
        s = self.plan.stages[t]
        return realize(self.network, self.material, self.config, t, s.level, m, s.beta)

    def stage_mean_moisture(self, t: int) -> float:
        return self.moisture.mean(self.plan.stages[t].level)

    def initial_inventory(self) -> np.ndarray:
        """Initial inventory vector, resolved against stage-1 capacity."""
        first = self.realization(0, self.stage_mean_moisture(0))
        caps = first.capacity_vector(self.network)
        setting = self.config.initial_inventory
        if setting == "empty":
            return np.zeros_like(caps)
        if setting == "half_full":
            return 0.5 * caps
        if setting == "full":
            return caps.copy()
        return np.minimum(float(setting), caps)


def sample_paths(
    inst: Instance, n: int, rng: np.random.Generator
) -> list[list[float]]:
    """Fresh moisture sample paths over the plan's level schedule.

    Stage 1 stays at its deterministic level mean (its realization is known
    when decisions start); later stages draw independently from the level's
    uniform distribution.
    """
    paths = []
    for _ in range(n):
        path = [inst.stage_mean_moisture(0)]
        for t in range(1, inst.n_stages):
            path.append(inst.moisture.sample(inst.stage_level(t), rng))
        paths.append(path)
    return paths


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float):
        return float(repr(obj)) if np.isfinite(obj) else str(obj)
    return obj


def _equipment_dict(e: EquipmentSpec) -> dict:
    return {
        "id": e.id, "kind": e.kind.value, "geometry": e.geometry,
        "speed_bounds": {l.value: v for l, v in e.speed_bounds.items()},
        "infeed_limit": {l.value: v for l, v in (e.infeed_limit or {}).items()},
        "storage_volume": e.storage_volume,
        "system_feed_rate": {l.value: v for l, v in (e.system_feed_rate or {}).items()},
        "density_context": e.density_context,
        "loss_role": e.loss_role,
    }


def compute_fingerprint(
    network: NetworkSpec,
    material: physics.MaterialModel,
    moisture: MoistureModel,
    config: ScenarioConfig,
    plan: StagePlan,
) -> str:
    payload = {
        "equipment": [_equipment_dict(e) for e in network.equipment],
        "arcs": list(network.arcs),
        "reactor_feeder": network.reactor_feeder,
        "bypass_split": network.bypass_split,
        "bypass_target": network.bypass_target,
        "material": {
            "baled_density": material.baled_density,
            "g1": [material.grinder1.intercept, material.grinder1.moisture_slope,
                   material.grinder1.particle_slope,
                   {l.value: v for l, v in material.grinder1.rho50.items()}],
            "g2": [material.grinder2.intercept, material.grinder2.moisture_slope,
                   material.grinder2.particle_slope,
                   {l.value: v for l, v in material.grinder2.rho50.items()}],
            "moisture_loss": {r: {l.value: v for l, v in tab.items()}
                              for r, tab in material.losses.moisture_loss.items()},
            "dry_matter_loss": {r: {l.value: v for l, v in tab.items()}
                                for r, tab in material.losses.dry_matter_loss.items()},
            "bypass": {l.value: v for l, v in material.bypass.fraction.items()},
        },
        "moisture": [[ml.label.value, ml.lo, ml.hi] for ml in moisture.levels],
        "config": {
            "horizon": config.horizon_bales,
            "mix": {l.value: f for l, f in config.mix.items()},
            "strategy": config.sequence_strategy.value,
            "order": config.sequence_order.value,
            "scheme": [config.stage_scheme.kind, config.stage_scheme.parts],
            "target_rate": config.target_rate,
            "holding_cost": config.holding_cost,
            "penalty_cost": config.penalty_cost,
            "initial_inventory": config.initial_inventory,
            "bale_dry_mass": config.bale_dry_mass,
            "rate_basis": config.rate_basis,
            "seed": config.seed,
        },
        "plan": [[s.level.value, s.beta] for s in plan.stages],
    }
    blob = json.dumps(_canonical(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_instance(
    config: ScenarioConfig,
    network: NetworkSpec | None = None,
    material: physics.MaterialModel | None = None,
    moisture: MoistureModel | None = None,
) -> Instance:
    material = material or physics.DEFAULT_MATERIAL
    moisture = moisture or MoistureModel()
    network = network or default_network(material, moisture)
    rng = rng_stream(config.seed, STREAM_SEQUENCE)
    sequence = tuple(generate_sequence(config, rng))
    plan = build_stage_plan(list(sequence), config.stage_scheme)
    fp = compute_fingerprint(network, material, moisture, config, plan)
    return Instance(
        network=network, material=material, moisture=moisture, config=config,
        sequence=sequence, plan=plan, fingerprint=fp,
    )
