import math

import numpy as np
import pytest

from feedline import lp as lpmod
from feedline.baselines import build_deterministic_equivalent
from feedline.instance import build_instance, rng_stream
from feedline.model import Level, MoistureLevel, MoistureModel, ScenarioConfig, Strategy
from feedline.sddp import (
    BOUND_STALL, CONTINUE, GAP_CLOSED, MAX_ITERATIONS, BoundsLog, TrainerConfig,
    _StageSolver, backward_pass, check_termination, draw_grids, forward_pass,
    load_policy, policy_fingerprint, save_policy, statistical_upper_bound, train,
    PolicyMismatchError,
)
from conftest import fast_trainer, make_instance

L, M, H = Level.LOW, Level.MED, Level.HIGH


def de_optimum(inst, tcfg):
    grids = draw_grids(inst, tcfg)
    prog = build_deterministic_equivalent(inst, grids)
    sol = lpmod.solve(prog.lp, backend="auto")
    assert sol.status == lpmod.OPTIMAL
    return float(sol.objective)


# -- oracle exactness ---------------------------------------------------------

def test_deterministic_instance_matches_extensive_form():
    # point-mass moisture levels: one realization per stage regardless of N_t
    mm = MoistureModel((
        MoistureLevel(L, 0.07, 0.07),
        MoistureLevel(M, 0.16, 0.16),
        MoistureLevel(H, 0.25, 0.25),
    ))
    cfg = ScenarioConfig(horizon_bales=5, seed=2)
    inst = build_instance(cfg, moisture=mm)
    tcfg = fast_trainer(3, seed=2)
    policy, log = train(inst, tcfg)
    want = de_optimum(inst, tcfg)
    assert log.lower_bounds[-1] == pytest.approx(want, abs=1e-6)
    # M=1 deterministic forward pass reproduces the bound exactly
    assert log.forward_means[-1] == pytest.approx(want, abs=1e-6)
    assert log.final_ub_mean == pytest.approx(want, abs=1e-6)


def test_two_stage_two_realization_oracle():
    inst = make_instance([L, H], seed=13)
    tcfg = fast_trainer(2, seed=13)
    policy, log = train(inst, tcfg)
    assert log.lower_bounds[-1] == pytest.approx(de_optimum(inst, tcfg), abs=1e-6)


def test_three_stage_three_realization_oracle(tiny_trained):
    inst, tcfg, policy, log, grids = tiny_trained
    prog = build_deterministic_equivalent(inst, grids)
    sol = lpmod.solve(prog.lp, backend="auto")
    assert log.lower_bounds[-1] == pytest.approx(sol.objective, abs=1e-6)


def test_grids_first_stage_deterministic(tiny_trained):
    inst, tcfg, policy, log, grids = tiny_trained
    assert grids[0].shape == (1,)
    assert grids[0][0] == inst.stage_mean_moisture(0)
    for t in range(1, inst.n_stages):
        assert grids[t].shape == (tcfg.n_realizations,)
        ml = inst.moisture.level(inst.stage_level(t))
        assert np.all((grids[t] >= ml.lo) & (grids[t] <= ml.hi))


# -- bounds -------------------------------------------------------------------

def test_lower_bound_monotone(tiny_trained):
    _, _, _, log, _ = tiny_trained
    assert log.check_monotone(1e-9)
    diffs = np.diff(log.lower_bounds)
    assert np.all(diffs >= -1e-9)


def test_sandwich_lb_below_ub(tiny_trained):
    _, _, _, log, _ = tiny_trained
    assert log.lower_bounds[-1] <= log.final_ub + 1e-9


def test_early_forward_costs_dominate_final_lb():
    inst = make_instance([L, H, M, L], seed=3)
    tcfg = fast_trainer(3, seed=3)
    _, log = train(inst, tcfg)
    # with empty pools the policy is worse than optimal, never better
    assert log.forward_means[0] >= log.lower_bounds[-1] - 1e-7


def test_cut_tight_at_trial_state():
    inst = make_instance([L, H], seed=31)
    tcfg = fast_trainer(4, seed=31)
    grids = draw_grids(inst, tcfg)
    solver = _StageSolver(inst, tcfg)
    from feedline.stage import CutPool

    pools = [CutPool(1) for _ in range(inst.n_stages)]
    i0 = inst.initial_inventory()
    states, _ = forward_pass(inst, pools, grids, [[0, 1]], solver, i0)
    backward_pass(inst, pools, grids, states, solver, iteration=1)
    trial = states[0][1]
    # one averaged cut appended to the first stage's pool, tight at the trial state
    assert len(pools[0]) == 1
    values = []
    for j in range(grids[1].shape[0]):
        real = solver.realization(grids, 1, j)
        _, sol = solver.solve(pools, real, trial, clamp=False)
        values.append(sol.objective)
    assert pools[0].evaluate(trial) == pytest.approx(np.mean(values), abs=1e-7)


def test_reproducible_bounds_log():
    inst = make_instance([L, M, H], seed=8)
    tcfg = fast_trainer(3, seed=8, max_iterations=30)
    _, log1 = train(inst, tcfg)
    _, log2 = train(inst, tcfg)
    assert log1.lower_bounds == log2.lower_bounds
    assert log1.forward_means == log2.forward_means
    assert log1.final_ub == log2.final_ub


# -- statistical upper bound --------------------------------------------------

def test_ub_zero_variance():
    assert statistical_upper_bound([10.0, 10.0, 10.0], 0.025) == (10.0, 10.0)


def test_ub_hand_arithmetic():
    mean, ub = statistical_upper_bound([1.0, 2.0, 3.0], 0.025)
    assert mean == pytest.approx(2.0, abs=1e-12)
    # 2 + z_{0.025} * 1 / sqrt(3) with z = NormalDist().inv_cdf(0.975)
    assert ub == pytest.approx(3.1315857340761717, abs=1e-9)


def test_ub_single_sample_flagged_infinite():
    mean, ub = statistical_upper_bound([5.0], 0.025)
    assert mean == 5.0 and math.isinf(ub)


def test_ub_never_below_mean(rng):
    for _ in range(20):
        costs = rng.uniform(0, 100, size=int(rng.integers(2, 30)))
        mean, ub = statistical_upper_bound(costs, 0.025)
        assert ub >= mean


# -- termination --------------------------------------------------------------

def _log(lbs, means=None):
    log = BoundsLog()
    log.lower_bounds = list(lbs)
    log.forward_means = list(means or lbs)
    log.forward_variances = [0.0] * len(log.lower_bounds)
    return log


def test_stall_detected():
    tcfg = TrainerConfig(n_realizations=2, stall_eps=1e-4, stall_window=3,
                         max_iterations=100)
    log = _log([1.0, 2.0, 2.0, 2.0, 2.0])
    assert check_termination(log, tcfg) == BOUND_STALL


def test_improving_continues():
    tcfg = TrainerConfig(n_realizations=2, stall_eps=1e-4, stall_window=3,
                         max_iterations=100)
    log = _log([1.0, 2.0, 3.0, 4.0, 5.0])
    assert check_termination(log, tcfg) == CONTINUE


def test_gap_closed():
    tcfg = TrainerConfig(n_realizations=2, stall_eps=1e-9, stall_window=50,
                         max_iterations=100, gap_tol=1e-6, forward_paths=2)
    log = _log([5.0, 5.0], means=[5.0, 5.0])
    assert check_termination(log, tcfg) == GAP_CLOSED


def test_max_iterations():
    tcfg = TrainerConfig(n_realizations=2, stall_eps=1e-9, stall_window=99,
                         max_iterations=4)
    log = _log([1.0, 2.0, 3.0, 4.0])
    assert check_termination(log, tcfg) == MAX_ITERATIONS


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(n_realizations=0)
    with pytest.raises(ValueError):
        TrainerConfig(confidence=0.7)
    with pytest.raises(ValueError):
        TrainerConfig(stall_window=0)


# -- persistence --------------------------------------------------------------

def test_policy_round_trip(tmp_path, tiny_trained):
    inst, tcfg, policy, log, grids = tiny_trained
    path = tmp_path / "policy.txt"
    save_policy(policy, path)
    loaded = load_policy(path, inst.fingerprint)
    assert loaded.fingerprint == policy.fingerprint
    assert loaded.storage_ids == policy.storage_ids
    assert len(loaded.pools) == len(policy.pools)
    for p0, p1 in zip(policy.pools, loaded.pools):
        for c0, c1 in zip(p0, p1):
            assert c0.intercept == c1.intercept
            assert c0.gradient == c1.gradient
    for g0, g1 in zip(policy.grids, loaded.grids):
        assert np.array_equal(g0, g1)


def test_policy_fingerprint_mismatch_fails(tmp_path, tiny_trained):
    inst, tcfg, policy, _, _ = tiny_trained
    path = tmp_path / "policy.txt"
    save_policy(policy, path)
    with pytest.raises(PolicyMismatchError):
        load_policy(path, "deadbeefdeadbeef")
    assert policy_fingerprint(inst.fingerprint, tcfg) != policy_fingerprint(
        "other", tcfg
    )


def test_training_error_on_unknown_backend():
    inst = make_instance([L], seed=0)
    with pytest.raises(lpmod.LpError):
        train(inst, fast_trainer(2, backend="quantum"))
