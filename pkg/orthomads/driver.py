from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from prefect.logging import get_logger

from orthomads.evaluation import (
    Evaluator,
    Incumbent,
    IterationRecord,
    Objective,
    RunTrace,
    Stage,
    StageOutcome,
    TerminalReason,
)
from orthomads.exceptions import BudgetExhausted
from orthomads.geometry import (
    Bounds,
    MeshState,
    initial_sizes,
    ortho_directions,
    snap_to_mesh,
    update_after_iteration,
)
from orthomads.nelder_mead import NmConfig, nm_search_stage
from orthomads.settings import DEFAULT_MIN_MESH, DEFAULT_SHRINK_FACTOR, DEFAULT_XI
from orthomads.vns import VnsConfig, VnsState, vns_search_stage, vns_trigger

logger = get_logger("orthomads.driver")

MadsMethod = Literal["mads", "mads-nm", "mads-nm-vns"]


class TunerConfig(BaseModel):
    """Inputs of one Ortho-MADS run."""

    bounds: Bounds
    x0: tuple[float, ...]
    min_mesh: tuple[float, ...] = (DEFAULT_MIN_MESH,)  # one value or one per dimension
    max_evals: int | None = Field(None, ge=1)  # default 100n
    seed: int = Field(0, ge=0)
    shrink_factor: float = Field(DEFAULT_SHRINK_FACTOR, gt=0.0, lt=1.0)
    vns: VnsConfig | None = None
    nm_enabled: bool = False
    nm: NmConfig = Field(default_factory=NmConfig)
    opportunistic: bool = False
    target_value: float | None = None
    workers: int = Field(1, ge=1)

    @field_validator("min_mesh")
    @classmethod
    def check_min_mesh(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("min_mesh needs at least one value")
        if any(not v > 0 for v in value):
            raise ValueError(f"min_mesh entries must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def check_against_bounds(self) -> "TunerConfig":
        n = self.bounds.dim
        if len(self.x0) != n:
            raise ValueError(f"x0 has {len(self.x0)} coordinates but the bounds have {n}")
        if not self.bounds.contains(self.x0):
            raise ValueError(f"x0 {self.x0} lies outside the bounds")
        if len(self.min_mesh) not in (1, n):
            raise ValueError(f"min_mesh needs 1 or {n} values, got {len(self.min_mesh)}")
        return self

    @property
    def eval_budget(self) -> int:
        return self.max_evals or 100 * self.bounds.dim

    @property
    def min_mesh_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.min_mesh, dtype=float), (self.bounds.dim,)).copy()

    @classmethod
    def for_method(cls, method: MadsMethod, *, xi: float = DEFAULT_XI, **fields) -> "TunerConfig":
        """Config for one of the three compared variants."""
        match method:
            case "mads":
                presets = {"nm_enabled": False, "vns": None}
            case "mads-nm":
                presets = {"nm_enabled": True, "vns": None}
            case "mads-nm-vns":
                presets = {"nm_enabled": True, "vns": VnsConfig(budget_fraction=xi)}
            case _:
                raise ValueError(f"unknown MADS variant {method!r}")
        return cls(**{**presets, **fields})


def poll_step(
    evaluator: Evaluator,
    incumbent: Incumbent,
    state: MeshState,
    iteration: int,
    seed: int,
    *,
    opportunistic: bool = False,
) -> StageOutcome:
    """Evaluate incumbent + δ∘d over the 2n orthogonal directions."""
    dirs = ortho_directions(iteration, len(incumbent.point), seed, frame_ratio=state.frame_ratio)
    trials = [
        snap_to_mesh(incumbent.point + state.mesh_size * d, incumbent.point, state, evaluator.bounds)
        for d in dirs
    ]

    if opportunistic:
        for point in trials:
            value = evaluator.evaluate(point, Stage.POLL)
            if value < incumbent.value:
                return StageOutcome(improved=True, incumbent=Incumbent(point, value))
        return StageOutcome(improved=False, incumbent=incumbent)

    values = evaluator.evaluate_many(trials, Stage.POLL)
    # argmin keeps the first index among ties
    i = int(np.argmin(values))
    if values[i] < incumbent.value:
        return StageOutcome(improved=True, incumbent=Incumbent(trials[i], values[i]))
    return StageOutcome(improved=False, incumbent=incumbent)


def _best_in_trace(trace: RunTrace) -> Incumbent:
    record = min(trace.records, key=lambda r: (r.value, r.eval_index))
    return Incumbent(np.asarray(record.point, dtype=float), record.value)


def optimize(config: TunerConfig, objective: Objective) -> tuple[Incumbent, RunTrace]:
    """Ortho-MADS with the optional VNS and Nelder-Mead search stages.

    Each iteration runs VNS (when armed by the previous iteration), then the
    Nelder-Mead stage, then the poll if no search stage improved. The loop
    stops when any mesh size reaches its minimum, when the target value is
    met, or when the evaluation budget runs out.
    """
    bounds = config.bounds
    evaluator = Evaluator(objective, bounds, config.eval_budget, workers=config.workers)
    trace = evaluator.trace
    state = initial_sizes(bounds, config.shrink_factor)
    min_mesh = config.min_mesh_array
    rng = np.random.default_rng(config.seed)
    vns_state = VnsState(current_order=config.vns.initial_order) if config.vns else None
    vns_armed = False
    incumbent: Incumbent | None = None

    try:
        # Step 1: evaluate the starting point
        x0 = np.asarray(config.x0, dtype=float)
        incumbent = Incumbent(x0, evaluator.evaluate(x0, Stage.INITIAL))

        iteration = 0
        while True:
            # Step 2: stopping checks at the loop head
            if np.any(state.mesh_size <= min_mesh):
                trace.terminal_reason = TerminalReason.MESH_CONVERGED
                break
            if config.target_value is not None and incumbent.value <= config.target_value:
                trace.terminal_reason = TerminalReason.TARGET_REACHED
                break

            evaluator.iteration = iteration
            center = incumbent.point
            success = False

            # Step 3: search stages
            if vns_armed:
                outcome = vns_search_stage(
                    incumbent, evaluator, state, config.vns, vns_state, rng, float(np.min(min_mesh))
                )
                if outcome.improved:
                    incumbent, success = outcome.incumbent, True
            if config.nm_enabled:
                outcome = nm_search_stage(incumbent, evaluator, state, config.nm)
                if outcome.improved:
                    incumbent, success = outcome.incumbent, True

            # Step 4: poll only when every search stage failed
            if not success:
                outcome = poll_step(
                    evaluator, incumbent, state, iteration, config.seed, opportunistic=config.opportunistic
                )
                if outcome.improved:
                    incumbent, success = outcome.incumbent, True

            # Step 5: mesh and VNS updates
            state = update_after_iteration(state, success)
            if vns_state is not None:
                vns_armed = vns_trigger(vns_state, config.vns, evaluator.max_evals, not success)
            trace.iterations.append(
                IterationRecord(
                    iteration=iteration,
                    center=tuple(float(v) for v in center),
                    frame_size=tuple(float(v) for v in state.frame_size),
                    mesh_size=tuple(float(v) for v in state.mesh_size),
                    success=success,
                    vns_order=vns_state.current_order if vns_state else None,
                )
            )
            logger.debug(
                "iteration %d %s f=%.6g delta=%s", iteration, "success" if success else "failure",
                incumbent.value, np.array2string(state.mesh_size, precision=3),
            )
            iteration += 1
    except BudgetExhausted:
        trace.terminal_reason = TerminalReason.BUDGET_EXHAUSTED
        incumbent = _best_in_trace(trace)

    logger.info(
        "%s after %d evaluations: f=%.6g at %s",
        trace.terminal_reason, evaluator.evaluations, incumbent.value, incumbent.point,
    )
    return incumbent, trace
