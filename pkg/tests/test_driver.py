import numpy as np
import pytest

from orthomads.driver import TunerConfig, optimize, poll_step
from orthomads.evaluation import Evaluator, Incumbent, Objective, Stage, TerminalReason, canonical_key
from orthomads.functions import rosenbrock, sphere
from orthomads.geometry import Bounds, initial_sizes, on_mesh, ortho_directions, snap_to_mesh
from orthomads.settings import PUBLISHED_COMPARISON_X0

ROSENBROCK_BOX = Bounds(lower=(-2.0, -2.0), upper=(2.0, 2.0))


def test_config_rejects_start_outside_the_box(svm_box: Bounds) -> None:
    with pytest.raises(ValueError):
        TunerConfig(bounds=svm_box, x0=(0.0, 50.0))


@pytest.mark.parametrize(
    "fields",
    [
        {"min_mesh": (0.0,)},
        {"min_mesh": (1e-3, 1e-3, 1e-3)},
        {"max_evals": 0},
        {"x0": (50.0,)},
        {"shrink_factor": 1.0},
    ],
)
def test_config_rejects_bad_fields(svm_box: Bounds, fields: dict) -> None:
    with pytest.raises(ValueError):
        TunerConfig(**{"bounds": svm_box, "x0": (50.0, 50.0), **fields})


def test_config_defaults(svm_box: Bounds) -> None:
    config = TunerConfig(bounds=svm_box, x0=(50.0, 50.0))
    assert config.eval_budget == 200
    assert config.min_mesh_array.tolist() == [0.009, 0.009]
    assert not config.nm_enabled and config.vns is None


def test_method_presets(svm_box: Bounds) -> None:
    full = TunerConfig.for_method("mads-nm-vns", xi=0.5, bounds=svm_box, x0=(50.0, 50.0))
    assert full.nm_enabled and full.vns.budget_fraction == 0.5
    nm_only = TunerConfig.for_method("mads-nm", bounds=svm_box, x0=(50.0, 50.0))
    assert nm_only.nm_enabled and nm_only.vns is None
    with pytest.raises(ValueError):
        TunerConfig.for_method("bads", bounds=svm_box, x0=(50.0, 50.0))


def _poll_fixture(table: dict):
    box = Bounds(lower=(0.0, 0.0), upper=(100.0, 100.0))
    state = initial_sizes(box)
    incumbent = Incumbent(np.array([50.0, 50.0]), 10.0)
    dirs = ortho_directions(0, 2, seed=0, frame_ratio=state.frame_ratio)
    trials = [snap_to_mesh(incumbent.point + state.mesh_size * d, incumbent.point, state, box) for d in dirs]
    values = {canonical_key(trials[i]): v for i, v in table.items()}
    objective = Objective(lambda x: values.get(canonical_key(x), 20.0))
    evaluator = Evaluator(objective, box, max_evals=100)
    evaluator.cache.insert(incumbent.point, incumbent.value)
    return evaluator, incumbent, state, trials


def test_poll_fails_when_nothing_is_lower() -> None:
    evaluator, incumbent, state, _ = _poll_fixture({0: 10.0})
    outcome = poll_step(evaluator, incumbent, state, 0, seed=0)
    assert not outcome.improved
    assert outcome.incumbent is incumbent
    assert evaluator.evaluations == 4


def test_poll_takes_the_unique_improvement() -> None:
    evaluator, incumbent, state, trials = _poll_fixture({2: 9.9})
    outcome = poll_step(evaluator, incumbent, state, 0, seed=0)
    assert outcome.improved
    assert np.array_equal(outcome.incumbent.point, trials[2])
    assert outcome.incumbent.value == 9.9


@pytest.mark.parametrize(("first", "second", "winner"), [(9.9, 9.0, 3), (9.0, 9.9, 1)])
def test_complete_poll_takes_the_argmin(first: float, second: float, winner: int) -> None:
    evaluator, incumbent, state, trials = _poll_fixture({1: first, 3: second})
    outcome = poll_step(evaluator, incumbent, state, 0, seed=0)
    assert np.array_equal(outcome.incumbent.point, trials[winner])
    assert evaluator.evaluations == 4


def test_opportunistic_poll_stops_at_first_improvement() -> None:
    evaluator, incumbent, state, trials = _poll_fixture({1: 9.9, 3: 9.0})
    outcome = poll_step(evaluator, incumbent, state, 0, seed=0, opportunistic=True)
    assert np.array_equal(outcome.incumbent.point, trials[1])
    assert evaluator.evaluations == 2


def test_budget_of_one_evaluates_only_the_start(svm_box: Bounds) -> None:
    config = TunerConfig(bounds=svm_box, x0=(20.0, 20.0), max_evals=1)
    incumbent, trace = optimize(config, Objective(sphere))
    assert len(trace) == 1
    assert trace.records[0].stage == Stage.INITIAL
    assert trace.terminal_reason == TerminalReason.BUDGET_EXHAUSTED
    assert incumbent.value == sphere(np.array([20.0, 20.0]))


def test_min_mesh_at_initial_mesh_stops_immediately(svm_box: Bounds) -> None:
    min_mesh = tuple(float(v) for v in initial_sizes(svm_box).mesh_size)
    config = TunerConfig(bounds=svm_box, x0=(20.0, 20.0), min_mesh=min_mesh)
    _, trace = optimize(config, Objective(sphere))
    assert len(trace) == 1
    assert trace.iterations == []
    assert trace.terminal_reason == TerminalReason.MESH_CONVERGED


@pytest.mark.parametrize("x0", PUBLISHED_COMPARISON_X0)
def test_plain_mads_finds_the_sphere_minimum(svm_box: Bounds, x0: tuple[float, float]) -> None:
    config = TunerConfig(bounds=svm_box, x0=x0, min_mesh=(1e-6,), max_evals=500, seed=3)
    incumbent, trace = optimize(config, Objective(sphere))
    assert trace.terminal_reason == TerminalReason.MESH_CONVERGED
    assert np.max(np.abs(incumbent.point - 50.0)) <= 1e-3


def test_target_value_ends_the_run(svm_box: Bounds) -> None:
    config = TunerConfig(bounds=svm_box, x0=(10.0, 10.0), min_mesh=(1e-6,), target_value=1.0)
    incumbent, trace = optimize(config, Objective(sphere))
    assert trace.terminal_reason == TerminalReason.TARGET_REACHED
    assert incumbent.value <= 1.0


def _rosenbrock_run(method: str, seed: int = 7):
    config = TunerConfig.for_method(
        method, bounds=ROSENBROCK_BOX, x0=(-1.2, 1.0), min_mesh=(1e-5,), max_evals=400, seed=seed
    )
    return optimize(config, Objective(rosenbrock))


def test_runs_are_reproducible_for_a_fixed_seed() -> None:
    first_incumbent, first = _rosenbrock_run("mads-nm-vns")
    second_incumbent, second = _rosenbrock_run("mads-nm-vns")
    assert first.records == second.records
    assert first.iterations == second.iterations
    assert np.array_equal(first_incumbent.point, second_incumbent.point)

def test_mesh_law_holds_on_seeded_rosenbrock_runs() -> None:
    start = initial_sizes(ROSENBROCK_BOX)
    for seed in range(50):
        _, trace = _rosenbrock_run("mads-nm-vns", seed=seed)
        frame = start.frame_size
        for it in trace.iterations:
            expected = np.minimum(frame / 0.5, start.initial_frame) if it.success else frame * 0.5
            frame, mesh = np.asarray(it.frame_size), np.asarray(it.mesh_size)
            assert np.array_equal(frame, expected)
            assert np.array_equal(mesh, np.minimum(frame, frame * frame))
            assert np.all(mesh <= frame)



@pytest.mark.parametrize("method", ["mads", "mads-nm", "mads-nm-vns"])
def test_trace_invariants(method: str) -> None:
    incumbent, trace = _rosenbrock_run(method)
    best = [r.best_so_far for r in trace.records]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert incumbent.value == min(r.value for r in trace.records)
    assert len(trace) <= 400

    mesh = initial_sizes(ROSENBROCK_BOX).mesh_size
    mesh_by_iteration = {}
    for it in trace.iterations:
        mesh_by_iteration[it.iteration] = (np.asarray(it.center), mesh)
        mesh = np.asarray(it.mesh_size)
    for record in trace.records[1:]:
        if record.iteration in mesh_by_iteration:
            center, delta = mesh_by_iteration[record.iteration]
            assert on_mesh(record.point, center, delta)
            assert ROSENBROCK_BOX.contains(record.point)


def test_nm_success_skips_the_poll() -> None:
    _, trace = _rosenbrock_run("mads-nm")
    skipped = 0
    best_before = trace.records[0].value
    by_iteration: dict[int, list] = {}
    for record in trace.records[1:]:
        by_iteration.setdefault(record.iteration, []).append(record)
    for iteration in sorted(by_iteration):
        records = by_iteration[iteration]
        nm_improved = any(r.stage == Stage.NM_SEARCH and r.value < best_before for r in records)
        if nm_improved:
            assert all(r.stage != Stage.POLL for r in records)
            skipped += 1
        best_before = records[-1].best_so_far
    assert skipped > 0


def test_plain_mads_terminates_for_many_seeds(svm_box: Bounds) -> None:
    rng = np.random.default_rng(0)
    for seed in range(20):
        x0 = tuple(float(v) for v in rng.uniform(0.01, 100.01, 2))
        config = TunerConfig(bounds=svm_box, x0=x0, min_mesh=(1e-4,), max_evals=400, seed=seed)
        incumbent, trace = optimize(config, Objective(sphere))
        assert trace.terminal_reason == TerminalReason.MESH_CONVERGED
        assert incumbent.value <= sphere(np.asarray(x0))
