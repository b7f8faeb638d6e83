import itertools

import numpy as np
import pytest
from scipy.stats import chisquare

from orthomads.driver import TunerConfig, optimize
from orthomads.evaluation import Evaluator, Objective, Stage
from orthomads.exceptions import SearchBudgetSpent
from orthomads.functions import double_well
from orthomads.geometry import Bounds, MeshState
from orthomads.vns import VnsConfig, VnsEvaluator, VnsState, descent, shake, vns_trigger

WELL_BOX = Bounds(lower=(0.0,), upper=(4.0,))


def _fine_state(frame: float = 0.1, mesh: float = 0.01) -> MeshState:
    return MeshState(
        frame_size=np.array([frame]),
        mesh_size=np.array([mesh]),
        shrink_factor=0.5,
        initial_frame=np.array([0.4]),
    )


def test_shake_lands_on_the_requested_shell(rng: np.random.Generator) -> None:
    x = np.array([10.0, 20.0])
    for order in (1, 2, 5):
        for _ in range(100):
            moved = shake(x, order, np.array([0.5, 2.0]), rng)
            z = (moved - x) / np.array([0.5, 2.0])
            assert np.array_equal(z, np.round(z))
            assert np.max(np.abs(z)) == order


def test_shake_is_uniform_over_the_shell() -> None:
    rng = np.random.default_rng(2024)
    shell = [z for z in itertools.product(range(-2, 3), repeat=2) if max(abs(v) for v in z) == 2]
    counts = dict.fromkeys(shell, 0)
    for _ in range(8000):
        z = shake(np.zeros(2), 2, np.ones(2), rng)
        counts[tuple(int(v) for v in z)] += 1
    assert len(shell) == 16
    assert chisquare(list(counts.values())).pvalue > 0.001


def test_shake_stays_in_the_box_on_the_coarse_mesh(rng: np.random.Generator) -> None:
    box = Bounds(lower=(0.0, 0.0), upper=(10.0, 10.0))
    x = np.array([10.0, 0.5])
    for _ in range(50):
        moved = shake(x, 3, np.array([1.0, 1.0]), rng, box)
        assert box.contains(moved)
        z = moved - x
        assert np.array_equal(z, np.round(z))


def test_shake_rejects_order_below_one(rng: np.random.Generator) -> None:
    with pytest.raises(ValueError):
        shake(np.zeros(2), 0, np.ones(2), rng)


def test_trigger_grows_order_on_failure_and_resets_on_success() -> None:
    cfg = VnsConfig(budget_fraction=0.25, initial_order=1, order_increment=1)
    state = VnsState(current_order=1)
    assert vns_trigger(state, cfg, max_evals=100, last_iteration_failed=True)
    assert state.current_order == 2
    assert vns_trigger(state, cfg, max_evals=100, last_iteration_failed=True)
    assert state.current_order == 3
    assert not vns_trigger(state, cfg, max_evals=100, last_iteration_failed=False)
    assert state.current_order == 1


def test_trigger_stops_once_the_vns_budget_is_used() -> None:
    cfg = VnsConfig(budget_fraction=0.25)
    state = VnsState(current_order=1, evals_used=25)
    assert not vns_trigger(state, cfg, max_evals=100, last_iteration_failed=True)


def test_vns_evaluator_caps_fresh_evaluations_only() -> None:
    evaluator = Evaluator(Objective(double_well), WELL_BOX, max_evals=50)
    state = VnsState(current_order=1)
    evaluate = VnsEvaluator(evaluator, state, cap=2)
    evaluate(np.array([1.0]))
    evaluate(np.array([2.0]))
    assert evaluate(np.array([1.0])) == double_well(np.array([1.0]))
    with pytest.raises(SearchBudgetSpent):
        evaluate(np.array([3.0]))
    assert state.evals_used == 2
    assert all(r.stage == Stage.VNS_SEARCH for r in evaluator.trace.records)


def test_descent_escapes_into_the_deep_well() -> None:
    evaluator = Evaluator(Objective(double_well), WELL_BOX, max_evals=200)
    shallow = evaluator.evaluate(np.array([3.0]), Stage.INITIAL)

    def evaluate(x):
        return evaluator.evaluate(x, Stage.VNS_SEARCH)

    start = np.array([1.8])
    found = descent(start, evaluate, _fine_state(), 0.009, evaluator.cache, WELL_BOX)
    assert found.point[0] < 1.2
    assert found.value < shallow
    assert found.value <= double_well(start)


def test_descent_stops_next_to_an_evaluated_point() -> None:
    evaluator = Evaluator(Objective(double_well), WELL_BOX, max_evals=200)
    evaluator.evaluate(np.array([1.9]), Stage.POLL)
    before = evaluator.evaluations

    def evaluate(x):
        return evaluator.evaluate(x, Stage.VNS_SEARCH)

    found = descent(np.array([1.8]), evaluate, _fine_state(), 0.009, evaluator.cache, WELL_BOX)
    assert found.point.tolist() == [1.8]
    assert evaluator.evaluations == before + 1


def _well_config(method: str, seed: int) -> TunerConfig:
    return TunerConfig.for_method(
        method,
        xi=0.5,
        bounds=WELL_BOX,
        x0=(3.0,),
        min_mesh=(1e-6,),
        max_evals=1000,
        seed=seed,
    )


def test_vns_leaves_the_shallow_basin_where_plain_mads_stays() -> None:
    escaped = {"mads": 0, "mads-nm-vns": 0}
    for method in escaped:
        for seed in range(50):
            incumbent, _ = optimize(_well_config(method, seed), Objective(double_well))
            escaped[method] += int(incumbent.point[0] < 2.0)
    assert escaped["mads-nm-vns"] >= 40
    assert escaped["mads"] <= 10
