"""Declarative TOML configuration for instances, trainers, and evaluation.

The file schema mirrors the domain types one to one; unknown keys anywhere are
rejected with their dotted path so typos cannot silently fall back to
defaults.  Every section is optional: an empty file yields the shipped
base-case instance.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import physics
from .instance import Instance, build_instance, default_network
from .model import (
    EquipmentSpec, Kind, Level, ModelError, MoistureLevel, MoistureModel,
    NetworkSpec, Order, ScenarioConfig, StageScheme, Strategy,
)
from .sddp import TrainerConfig


class ConfigError(ValueError):
    """Raised for syntax errors, unknown keys, or out-of-range values."""


_LEVEL_KEYS = {"low": Level.LOW, "med": Level.MED, "high": Level.HIGH}

_SCHEMA = {
    "moisture": {"levels": None},
    "material": {
        "baled_density": None,
        "regression": {
            "grinder1": {"intercept": None, "moisture_slope": None,
                         "particle_slope": None, "rho50": None, "rho_ratio": None},
            "grinder2": {"intercept": None, "moisture_slope": None,
                         "particle_slope": None, "rho50": None, "rho_ratio": None},
        },
        "losses": {"moisture": None, "dry_matter": None},
        "bypass": {"fraction": None},
    },
    "network": {
        "storage_volume": None,
        "calibration_quantile": None,
        "reactor_feeder": None,
        "bypass_split": None,
        "bypass_target": None,
        "arcs": None,
        "equipment": None,
    },
    "scenario": {
        "horizon_bales": None, "mix": None, "sequence_strategy": None,
        "sequence_order": None, "explicit_sequence": None, "stage_scheme": None,
        "target_rate": None, "holding_cost": None, "penalty_cost": None,
        "initial_inventory": None, "bale_dry_mass": None, "rate_basis": None,
        "seed": None,
    },
    "trainer": {
        "n_realizations": None, "forward_paths": None, "confidence": None,
        "stall_eps": None, "stall_window": None, "max_iterations": None,
        "gap_tol": None, "ub_paths": None, "seed": None, "backend": None,
    },
    "evaluation": {
        "paths": None, "two_stage_paths": None,
    },
}

_EQUIPMENT_KEYS = {
    "id", "kind", "geometry", "speed_bounds", "infeed_limit", "storage_volume",
    "system_feed_rate", "density_context", "loss_role",
}


def _reject_unknown(data: dict, schema: dict, path: str = "") -> None:
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown configuration key: {here}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be a table")
            _reject_unknown(value, sub, here)


def _per_level(raw: dict, where: str) -> dict[Level, float]:
    out = {}
    for key, val in raw.items():
        if key not in _LEVEL_KEYS:
            raise ConfigError(f"unknown moisture level {key!r} in {where}")
        out[_LEVEL_KEYS[key]] = float(val)
    return out


@dataclass
class ExperimentConfig:
    """Everything parsed from one configuration file."""

    instance: Instance
    trainer: TrainerConfig
    validation_paths: int = 500
    two_stage_paths: int = 1000
    source: Path | None = None

    @property
    def seed(self) -> int:
        return self.instance.config.seed


def _parse_moisture(raw: dict | None) -> MoistureModel:
    if not raw or "levels" not in raw:
        return MoistureModel()
    levels = []
    for entry in raw["levels"]:
        extra = set(entry) - {"label", "lo", "hi"}
        if extra:
            raise ConfigError(f"unknown keys in moisture level: {sorted(extra)}")
        label = entry["label"]
        if label not in _LEVEL_KEYS:
            raise ConfigError(f"unknown moisture level label {label!r}")
        levels.append(MoistureLevel(_LEVEL_KEYS[label], float(entry["lo"]),
                                    float(entry["hi"])))
    return MoistureModel(tuple(levels))


def _parse_material(raw: dict | None) -> physics.MaterialModel:
    if not raw:
        return physics.DEFAULT_MATERIAL
    base = physics.DEFAULT_MATERIAL

    def regression(which: str, current: physics.RegressionCoefficients):
        sub = (raw.get("regression") or {}).get(which)
        if not sub:
            return current
        return physics.RegressionCoefficients(
            intercept=float(sub.get("intercept", current.intercept)),
            moisture_slope=float(sub.get("moisture_slope", current.moisture_slope)),
            particle_slope=float(sub.get("particle_slope", current.particle_slope)),
            rho50=_per_level(sub["rho50"], f"regression.{which}.rho50")
            if "rho50" in sub else current.rho50,
            rho_ratio=_per_level(sub["rho_ratio"], f"regression.{which}.rho_ratio")
            if "rho_ratio" in sub else current.rho_ratio,
        )

    losses = base.losses
    if "losses" in raw:
        moist = raw["losses"].get("moisture")
        dml = raw["losses"].get("dry_matter")
        losses = physics.LossTable(
            moisture_loss={role: _per_level(tab, f"losses.moisture.{role}")
                           for role, tab in moist.items()}
            if moist else base.losses.moisture_loss,
            dry_matter_loss={role: _per_level(tab, f"losses.dry_matter.{role}")
                             for role, tab in dml.items()}
            if dml else base.losses.dry_matter_loss,
        )
    bypass = base.bypass
    if "bypass" in raw:
        bypass = physics.BypassTable(
            fraction=_per_level(raw["bypass"]["fraction"], "bypass.fraction")
        )
    return physics.MaterialModel(
        grinder1=regression("grinder1", base.grinder1),
        grinder2=regression("grinder2", base.grinder2),
        losses=losses,
        bypass=bypass,
        baled_density=float(raw.get("baled_density", base.baled_density)),
    )


def _parse_equipment(entry: dict) -> EquipmentSpec:
    extra = set(entry) - _EQUIPMENT_KEYS
    if extra:
        raise ConfigError(
            f"unknown keys on equipment {entry.get('id', '?')!r}: {sorted(extra)}"
        )
    kind = Kind(entry["kind"])
    return EquipmentSpec(
        id=entry["id"],
        kind=kind,
        geometry=float(entry.get("geometry", 1.0)),
        speed_bounds=_per_level(entry.get("speed_bounds", {}), "speed_bounds"),
        infeed_limit=_per_level(entry["infeed_limit"], "infeed_limit")
        if "infeed_limit" in entry else None,
        storage_volume=float(entry.get("storage_volume", 0.0)),
        system_feed_rate=_per_level(entry["system_feed_rate"], "system_feed_rate")
        if "system_feed_rate" in entry else None,
        density_context=entry.get("density_context", "baled"),
        loss_role=entry.get("loss_role"),
    )


def _parse_network(
    raw: dict | None, material: physics.MaterialModel, moisture: MoistureModel
) -> NetworkSpec:
    if not raw:
        return default_network(material, moisture)
    if "equipment" not in raw:
        return default_network(
            material, moisture,
            storage_volume=float(raw.get("storage_volume", 2.0)),
            calibration_quantile=float(raw.get("calibration_quantile", 0.5)),
        )
    for key in ("storage_volume", "calibration_quantile"):
        if key in raw:
            raise ConfigError(
                f"network.{key} applies only to the generated default network"
            )
    equipment = tuple(_parse_equipment(e) for e in raw["equipment"])
    return NetworkSpec(
        equipment=equipment,
        arcs=tuple((u, v) for u, v in raw["arcs"]),
        reactor_feeder=raw["reactor_feeder"],
        bypass_split=raw.get("bypass_split"),
        bypass_target=raw.get("bypass_target"),
    )


def _parse_scenario(raw: dict | None) -> ScenarioConfig:
    if raw is None:
        raw = {}
    kwargs = {}
    if "horizon_bales" in raw:
        kwargs["horizon_bales"] = int(raw["horizon_bales"])
    if "mix" in raw:
        kwargs["mix"] = _per_level(raw["mix"], "scenario.mix")
    if "sequence_strategy" in raw:
        kwargs["sequence_strategy"] = Strategy(raw["sequence_strategy"])
    if "sequence_order" in raw:
        kwargs["sequence_order"] = Order(raw["sequence_order"])
    if "explicit_sequence" in raw:
        kwargs["explicit_sequence"] = tuple(
            _LEVEL_KEYS[v] for v in raw["explicit_sequence"]
        )
    if "stage_scheme" in raw:
        kwargs["stage_scheme"] = StageScheme.parse(raw["stage_scheme"])
    for key in ("target_rate", "holding_cost", "penalty_cost", "bale_dry_mass"):
        if key in raw:
            kwargs[key] = float(raw[key])
    if "initial_inventory" in raw:
        v = raw["initial_inventory"]
        kwargs["initial_inventory"] = v if isinstance(v, str) else float(v)
    if "rate_basis" in raw:
        kwargs["rate_basis"] = raw["rate_basis"]
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    try:
        return ScenarioConfig(**kwargs)
    except (ModelError, ValueError) as exc:
        raise ConfigError(f"bad scenario settings: {exc}") from exc


def _parse_trainer(raw: dict | None, scenario_seed: int) -> TrainerConfig:
    raw = raw or {}
    kwargs = {
        "n_realizations": int(raw.get("n_realizations", 500)),
        "forward_paths": int(raw.get("forward_paths", 1)),
        "confidence": float(raw.get("confidence", 0.025)),
        "stall_eps": float(raw.get("stall_eps", 1e-4)),
        "stall_window": int(raw.get("stall_window", 50)),
        "max_iterations": int(raw.get("max_iterations", 2000)),
        "ub_paths": int(raw.get("ub_paths", 100)),
        "seed": int(raw.get("seed", scenario_seed)),
        "backend": raw.get("backend", "simplex"),
    }
    if "gap_tol" in raw:
        kwargs["gap_tol"] = float(raw["gap_tol"])
    try:
        return TrainerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad trainer settings: {exc}") from exc


def parse_config(text: str, source: Path | None = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    _reject_unknown(data, _SCHEMA)

    moisture = _parse_moisture(data.get("moisture"))
    material = _parse_material(data.get("material"))
    network = _parse_network(data.get("network"), material, moisture)
    scenario = _parse_scenario(data.get("scenario"))
    try:
        inst = build_instance(scenario, network=network, material=material,
                              moisture=moisture)
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc
    trainer = _parse_trainer(data.get("trainer"), scenario.seed)
    ev = data.get("evaluation") or {}
    return ExperimentConfig(
        instance=inst,
        trainer=trainer,
        validation_paths=int(ev.get("paths", 500)),
        two_stage_paths=int(ev.get("two_stage_paths", 1000)),
        source=source,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=path)
