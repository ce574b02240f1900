"""Biomass material model: density regressions, bypass split, losses, capacities.

Everything here is a pure function of a moisture sample plus fixed tables, and
is what turns a sampled moisture fraction into LP coefficients.  Flows and
inventories are tracked on a dry-ton basis throughout; wet mass is derived,
never stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import Level, EquipmentSpec

# 1 dry ton = 2000 lb = 907.18474 kg
KG_PER_DT = 907.18474

# average dry bulk density of baled switchgrass, kg/m^3
DRY_BALED_DENSITY = 203.04


class PhysicsError(ValueError):
    """Raised when tables or regression inputs produce unphysical values."""


@dataclass(frozen=True)
class RegressionCoefficients:
    """Affine bulk-density model per grinder: d = a0 + a1*m - a2*rho50.

    ``m`` is the moisture FRACTION in [0, 1]; ``rho50`` (mm) is looked up per
    moisture level.  ``rho_ratio`` is the 90th/10th percentile spread, carried
    as metadata only (it appears in no equation).
    """

    intercept: float
    moisture_slope: float
    particle_slope: float
    rho50: dict[Level, float]
    rho_ratio: dict[Level, float] = field(default_factory=dict)

    def __post_init__(self):
        for v in (self.intercept, self.moisture_slope, self.particle_slope):
            if v != v or abs(v) == float("inf"):
                raise PhysicsError(f"non-finite regression coefficient {v!r}")
        for lvl, r in self.rho50.items():
            if not r > 0:
                raise PhysicsError(f"rho50 must be positive, got {r!r} for {lvl}")

    def density(self, m: float) -> float:
        raise NotImplementedError  # use density_after_grinder (needs the level's rho50)


GRINDER1_REGRESSION = RegressionCoefficients(
    intercept=56.183,
    moisture_slope=65.312,
    particle_slope=8.473,
    rho50={Level.LOW: 1.95, Level.MED: 2.35, Level.HIGH: 1.75},
    rho_ratio={Level.LOW: 12.5, Level.MED: 12.0, Level.HIGH: 10.0},
)

GRINDER2_REGRESSION = RegressionCoefficients(
    intercept=186.348,
    moisture_slope=206.1697,
    particle_slope=110.302,
    rho50={Level.LOW: 0.65, Level.MED: 0.70, Level.HIGH: 0.60},
    rho_ratio={Level.LOW: 6.50, Level.MED: 7.50, Level.HIGH: 9.50},
)


@dataclass(frozen=True)
class LossTable:
    """Moisture loss (percentage points) and dry-matter loss (%) per (role, level).

    Roles are the loss-incurring equipment: "grinder1", "grinder2", "pelleting".
    Dry-matter loss is defined only for the grinders.
    """

    moisture_loss: dict[str, dict[Level, float]]
    dry_matter_loss: dict[str, dict[Level, float]]

    def __post_init__(self):
        for table in (self.moisture_loss, self.dry_matter_loss):
            for role, per_level in table.items():
                for lvl, pct in per_level.items():
                    if not 0.0 <= pct < 100.0:
                        raise PhysicsError(
                            f"loss percentage out of [0,100): {pct!r} for {role}/{lvl}"
                        )
        for role in self.dry_matter_loss:
            if not role.startswith("grinder"):
                raise PhysicsError(f"dry-matter loss defined for non-grinder {role!r}")


DEFAULT_LOSSES = LossTable(
    moisture_loss={
        "grinder1": {Level.LOW: 0.50, Level.MED: 3.00, Level.HIGH: 4.77},
        "grinder2": {Level.LOW: 0.70, Level.MED: 3.00, Level.HIGH: 4.00},
        "pelleting": {Level.LOW: 0.00, Level.MED: 1.50, Level.HIGH: 3.90},
    },
    dry_matter_loss={
        "grinder1": {Level.LOW: 1.50, Level.MED: 1.50, Level.HIGH: 1.50},
        "grinder2": {Level.LOW: 0.50, Level.MED: 0.50, Level.HIGH: 0.50},
    },
)


@dataclass(frozen=True)
class BypassTable:
    """Fraction of grinder-1 output routed around grinder 2, per level."""

    fraction: dict[Level, float]

    def __post_init__(self):
        for lvl, f in self.fraction.items():
            if not 0.0 <= f <= 1.0:
                raise PhysicsError(f"bypass fraction out of [0,1]: {f!r} for {lvl}")


DEFAULT_BYPASS = BypassTable(
    fraction={Level.LOW: 0.857, Level.MED: 0.811, Level.HIGH: 0.928}
)


@dataclass(frozen=True)
class MaterialModel:
    """Bundle of the fixed material tables used by the stage builder."""

    grinder1: RegressionCoefficients = GRINDER1_REGRESSION
    grinder2: RegressionCoefficients = GRINDER2_REGRESSION
    losses: LossTable = DEFAULT_LOSSES
    bypass: BypassTable = DEFAULT_BYPASS
    baled_density: float = DRY_BALED_DENSITY

    def regression(self, grinder: int) -> RegressionCoefficients:
        if grinder == 1:
            return self.grinder1
        if grinder == 2:
            return self.grinder2
        raise PhysicsError(f"no regression for grinder {grinder!r}")


DEFAULT_MATERIAL = MaterialModel()


def density_after_grinder(
    phys: MaterialModel, grinder: int, m: float, level: Level
) -> float:
    """Bulk density (kg/m^3) of biomass leaving the given grinder.

    ``m`` is the moisture fraction of the material being processed there.
    """
    if not 0.0 <= m <= 1.0:
        raise PhysicsError(f"moisture fraction out of [0,1]: {m!r}")
    reg = phys.regression(grinder)
    rho50 = reg.rho50[level]
    d = reg.intercept + reg.moisture_slope * m - reg.particle_slope * rho50
    if d <= 0.0:
        raise PhysicsError(
            f"nonpositive density {d:.4f} kg/m^3 from grinder-{grinder} coefficients "
            f"(a0={reg.intercept}, a1={reg.moisture_slope}, a2={reg.particle_slope}, "
            f"m={m}, rho50={rho50})"
        )
    return d


def local_density(phys: MaterialModel, eq: EquipmentSpec, m: float, level: Level) -> float:
    """Bulk density of the material handled by ``eq`` at local moisture ``m``.

    Equipment upstream of grinder 1 has no regression context and uses the dry
    baled baseline.
    """
    ctx = eq.density_context
    if ctx == "baled":
        return phys.baled_density
    if ctx == "grinder1":
        return density_after_grinder(phys, 1, m, level)
    if ctx == "grinder2":
        return density_after_grinder(phys, 2, m, level)
    raise PhysicsError(f"unknown density context {ctx!r} on {eq.id}")


def flow_coefficient(phys: MaterialModel, eq: EquipmentSpec, m: float, level: Level) -> float:
    """Dry tons moved per speed-unit per hour: gamma * d(m) / KG_PER_DT."""
    return eq.geometry * local_density(phys, eq, m, level) / KG_PER_DT


def bypass_split(phys: MaterialModel, mass: float, level: Level) -> tuple[float, float]:
    """Split grinder-1 output mass (dt) into (to_bypass, to_grinder2).

    Outputs sum to the input exactly: the grinder-2 share is computed as the
    remainder, not an independent product.
    """
    if mass < 0:
        raise PhysicsError(f"negative mass {mass!r}")
    to_bypass = phys.bypass.fraction[level] * mass
    return to_bypass, mass - to_bypass


def apply_losses(
    phys: MaterialModel, mass_dry: float, m: float, role: str, level: Level
) -> tuple[float, float]:
    """Dry mass and moisture fraction after passing the loss-incurring ``role``.

    Dry matter shrinks multiplicatively by the DML percentage; moisture drops
    by percentage points, floored at zero.
    """
    if mass_dry < 0 or not 0.0 <= m <= 1.0:
        raise PhysicsError(f"bad loss inputs mass={mass_dry!r} m={m!r}")
    dml = phys.losses.dry_matter_loss.get(role, {}).get(level, 0.0)
    mloss = phys.losses.moisture_loss.get(role, {}).get(level, 0.0)
    return mass_dry * (1.0 - dml / 100.0), max(0.0, m - mloss / 100.0)


def retained_fraction(phys: MaterialModel, role: str | None, level: Level) -> float:
    """Dry-matter fraction surviving passage through ``role`` (1.0 if lossless)."""
    if role is None:
        return 1.0
    dml = phys.losses.dry_matter_loss.get(role, {}).get(level, 0.0)
    return 1.0 - dml / 100.0


def moisture_drop(phys: MaterialModel, role: str | None, level: Level) -> float:
    """Moisture-fraction drop incurred by passage through ``role``."""
    if role is None:
        return 0.0
    return phys.losses.moisture_loss.get(role, {}).get(level, 0.0) / 100.0


def storage_capacity(
    phys: MaterialModel, volume: float, m: float, level: Level
) -> float:
    """Holding capacity (dt) of a storage volume filled at after-grinder-2 density."""
    if volume < 0:
        raise PhysicsError(f"negative volume {volume!r}")
    if volume == 0.0:
        return 0.0
    return volume * density_after_grinder(phys, 2, m, level) / KG_PER_DT
