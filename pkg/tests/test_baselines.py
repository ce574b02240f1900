import itertools

import numpy as np
import pytest

from feedline import lp as lpmod
from feedline.baselines import (
    BaselineError, build_deterministic_equivalent, build_mean_value,
    build_two_stage, exact_cost_to_go, extract_static_plan, tree_node_count,
)
from feedline.evaluate import evaluate_plan_on_grids, simulate_static_plan
from feedline.instance import (
    STREAM_VALIDATION, build_instance, rng_stream, sample_paths,
)
from feedline.model import Level, MoistureLevel, MoistureModel, ScenarioConfig, Strategy
from feedline.sddp import draw_grids
from conftest import fast_trainer, make_instance

L, M, H = Level.LOW, Level.MED, Level.HIGH


def tree_paths(grids):
    return [
        [float(grids[t][i]) for t, i in enumerate(idx)]
        for idx in itertools.product(*[range(len(g)) for g in grids])
    ]


def _opt(prog, backend="auto"):
    sol = lpmod.solve(prog.lp, backend=backend)
    assert sol.status == lpmod.OPTIMAL
    return sol


# -- two-stage ----------------------------------------------------------------

def test_single_path_two_stage_equals_deterministic(tiny_trained):
    inst, tcfg, _, _, grids = tiny_trained
    path = [float(g[0]) for g in grids]
    ts = build_two_stage(inst, [path])
    de = build_deterministic_equivalent(inst, [np.array([m]) for m in path])
    assert _opt(ts).objective == pytest.approx(_opt(de).objective, abs=1e-7)


def test_two_stage_needs_full_paths(tiny_trained):
    inst, _, _, _, _ = tiny_trained
    with pytest.raises(BaselineError):
        build_two_stage(inst, [])
    with pytest.raises(BaselineError):
        build_two_stage(inst, [[0.1]])


def test_restriction_chain_on_shared_tree(tiny_trained):
    inst, tcfg, _, _, grids = tiny_trained
    de_obj = _opt(build_deterministic_equivalent(inst, grids)).objective
    paths = tree_paths(grids)
    ts_prog = build_two_stage(inst, paths)
    ts_sol = _opt(ts_prog)
    assert de_obj <= ts_sol.objective + 1e-7
    mv_prog = build_mean_value(inst)
    mv_plan = extract_static_plan(mv_prog, _opt(mv_prog))
    mv_cost, bad = evaluate_plan_on_grids(inst, grids, mv_plan)
    assert bad == 0
    assert ts_sol.objective <= mv_cost + 1e-7


# -- mean value ---------------------------------------------------------------

def test_mean_value_uses_level_means():
    inst = make_instance([M], seed=4)
    # MED bale: density rows built at m = 0.16 minus upstream losses
    real = inst.realization(0, inst.stage_mean_moisture(0))
    assert inst.stage_mean_moisture(0) == pytest.approx(0.16)
    mv = build_mean_value(inst)
    sol = _opt(mv)
    # same optimum as a one-path tree at exactly the mean
    de = build_deterministic_equivalent(inst, [np.array([0.16])])
    assert sol.objective == pytest.approx(_opt(de).objective, abs=1e-9)


def test_point_mass_levels_make_mv_exact():
    mm = MoistureModel((
        MoistureLevel(L, 0.08, 0.08),
        MoistureLevel(M, 0.16, 0.16),
        MoistureLevel(H, 0.24, 0.24),
    ))
    cfg = ScenarioConfig(horizon_bales=4, seed=9, mix={L: 0.5, H: 0.5},
                         sequence_strategy=Strategy.EXPLICIT,
                         explicit_sequence=(H, L, H, L))
    inst = build_instance(cfg, moisture=mm)
    from feedline.sddp import train

    tcfg = fast_trainer(2, seed=9)
    _, log = train(inst, tcfg)
    mv_obj = _opt(build_mean_value(inst)).objective
    assert mv_obj == pytest.approx(log.lower_bounds[-1], abs=1e-6)


def test_mv_in_sample_leq_out_of_sample():
    # deterministic relaxation is optimistic about its own plan
    inst = make_instance([L, L, H, M, H], seed=6)
    mv = build_mean_value(inst)
    sol = _opt(mv)
    plan = extract_static_plan(mv, sol)
    paths = sample_paths(inst, 400, rng_stream(6, STREAM_VALIDATION))
    rep = simulate_static_plan(inst, plan, paths)
    assert sol.objective <= rep.mean + 1e-9


def test_jensen_direction_for_tree():
    inst = make_instance([L, H, M], seed=14)
    tcfg = fast_trainer(3, seed=14)
    grids = draw_grids(inst, tcfg)
    full = _opt(build_deterministic_equivalent(inst, grids)).objective
    collapsed = [np.array([float(np.mean(g))]) for g in grids]
    mean_tree = _opt(build_deterministic_equivalent(inst, collapsed)).objective
    assert full >= mean_tree - 1e-9


# -- deterministic equivalent -------------------------------------------------

def test_single_stage_tree_is_single_stage_lp(tiny_trained):
    inst, _, _, _, grids = tiny_trained
    from feedline.stage import CutPool, build_stage_lp

    g0 = [grids[0]]
    one = build_instance(
        ScenarioConfig(
            horizon_bales=1, mix={inst.stage_level(0): 1.0},
            sequence_strategy=Strategy.EXPLICIT,
            explicit_sequence=(inst.stage_level(0),), seed=inst.config.seed,
        ),
        network=inst.network, material=inst.material, moisture=inst.moisture,
    )
    de = build_deterministic_equivalent(one, g0)
    prob = build_stage_lp(one.network, one.config,
                          one.realization(0, float(grids[0][0])),
                          one.initial_inventory(), None, terminal=True)
    assert _opt(de).objective == pytest.approx(
        lpmod.solve(prob.lp).objective, abs=1e-9
    )


def test_tree_size_guard():
    inst = make_instance([L, M, H, L, M, H], seed=1)
    grids = [np.array([0.1])] + [np.linspace(0.05, 0.1, 9)] * 5
    assert tree_node_count(grids) > 5000
    with pytest.raises(BaselineError, match="nodes"):
        build_deterministic_equivalent(inst, grids, max_nodes=5000)


def test_exact_cost_to_go_matches_subtree(tiny_trained):
    inst, _, _, _, grids = tiny_trained
    v = exact_cost_to_go(inst, grids, stage=1, incoming=np.array([0.05]))
    assert np.isfinite(v) and v >= 0.0


# -- static plans -------------------------------------------------------------

def test_extract_plan_shapes(tiny_trained):
    inst, _, _, _, grids = tiny_trained
    mv = build_mean_value(inst)
    plan = extract_static_plan(mv, _opt(mv))
    assert plan.inventory.shape == (inst.n_stages, 1)
    assert plan.source == "mean_value"
    de = build_deterministic_equivalent(inst, grids)
    with pytest.raises(BaselineError, match="adaptive"):
        extract_static_plan(de, _opt(de))


def test_all_low_plan_is_zero():
    inst = make_instance([L, L, L, L], seed=2)
    mv = build_mean_value(inst)
    plan = extract_static_plan(mv, _opt(mv))
    assert np.allclose(plan.inventory, 0.0, atol=1e-9)
    ts = build_two_stage(inst, sample_paths(inst, 50, rng_stream(2, 5)))
    plan_ts = extract_static_plan(ts, _opt(ts, backend="highs"))
    assert np.allclose(plan_ts.inventory, 0.0, atol=1e-7)


def test_two_stage_and_mv_plans_differ_under_uncertainty():
    inst = make_instance([L, L, L, M, H] * 2, seed=12)
    ts = build_two_stage(inst, sample_paths(inst, 200, rng_stream(12, 5)))
    plan_ts = extract_static_plan(ts, _opt(ts, backend="highs"))
    mv = build_mean_value(inst)
    plan_mv = extract_static_plan(mv, _opt(mv))
    assert not np.allclose(plan_ts.inventory, plan_mv.inventory, atol=1e-6)


def test_saa_consistency_small():
    # two-stage optima drift by < 2% across growing sample sizes
    inst = make_instance([L, L, L, M, H] * 2, seed=7)
    objs = []
    for s_count in (100, 300):
        paths = sample_paths(inst, s_count, rng_stream(7, 5))
        objs.append(_opt(build_two_stage(inst, paths), backend="highs").objective)
    assert abs(objs[1] - objs[0]) / objs[0] < 0.02
