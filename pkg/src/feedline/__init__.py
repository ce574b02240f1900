"""Multi-stage stochastic programming for biomass preprocessing operations.

Submodules:
  model      network / moisture / scenario domain types and bale sequencing
  physics    density regressions, bypass split, loss tables, capacities
  lp         bounded-variable LP representation and solvers
  stage      stage-problem construction, cuts, state and dual extraction
  sddp       the training loop with bounds and termination
  baselines  two-stage extensive form, mean-value LP, tree oracle
  evaluate   Monte-Carlo policy and plan evaluation, gap tables
  configio   TOML configuration parsing
  cli        experiment driver (train / evaluate / compare / sweep)
"""

from .instance import Instance, build_instance, default_network, sample_paths
from .model import (
    Level, MoistureLevel, MoistureModel, NetworkSpec, EquipmentSpec,
    ScenarioConfig, StagePlan, StageScheme, Strategy, Order,
    build_stage_plan, generate_sequence, sample_moisture,
)
from .sddp import Policy, TrainerConfig, train

__all__ = [
    "Instance", "build_instance", "default_network", "sample_paths",
    "Level", "MoistureLevel", "MoistureModel", "NetworkSpec", "EquipmentSpec",
    "ScenarioConfig", "StagePlan", "StageScheme", "Strategy", "Order",
    "build_stage_plan", "generate_sequence", "sample_moisture",
    "Policy", "TrainerConfig", "train",
]

__version__ = "0.1.0"
