import numpy as np
import pytest

from feedline.instance import build_instance
from feedline.model import Level, ScenarioConfig, Strategy
from feedline.sddp import TrainerConfig


def make_instance(levels, seed=0, **kwargs):
    """Explicit-sequence instance over the given levels."""
    levels = tuple(levels)
    counts = {lvl: levels.count(lvl) / len(levels) for lvl in set(levels)}
    cfg = ScenarioConfig(
        horizon_bales=len(levels),
        mix=counts,
        sequence_strategy=Strategy.EXPLICIT,
        explicit_sequence=levels,
        seed=seed,
        **kwargs,
    )
    return build_instance(cfg)


def fast_trainer(n_realizations, seed=0, **kwargs) -> TrainerConfig:
    defaults = dict(
        n_realizations=n_realizations,
        stall_eps=1e-9,
        stall_window=8,
        max_iterations=80,
        ub_paths=40,
        seed=seed,
    )
    defaults.update(kwargs)
    return TrainerConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_trained():
    """A 3-stage, 3-realization instance trained to convergence, with grids."""
    from feedline.sddp import draw_grids, train

    inst = make_instance([Level.LOW, Level.HIGH, Level.MED], seed=21)
    tcfg = fast_trainer(3, seed=21, stall_window=10, max_iterations=120)
    policy, log = train(inst, tcfg)
    grids = draw_grids(inst, tcfg)
    return inst, tcfg, policy, log, grids


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
