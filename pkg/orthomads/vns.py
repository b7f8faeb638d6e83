import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from pydantic import BaseModel, Field
from prefect.logging import get_logger

from orthomads.evaluation import EvalCache, Evaluator, Incumbent, Stage, StageOutcome, canonical_key
from orthomads.exceptions import SearchBudgetSpent
from orthomads.geometry import Bounds, MeshState, snap_to_mesh
from orthomads.settings import DEFAULT_XI

logger = get_logger("orthomads.vns")


class VnsConfig(BaseModel):
    """Variable neighbourhood search stage settings.

    ``coarse_mesh`` defaults to the initial frame size Δ⁰ and ``rho`` to the
    smallest stopping mesh size.
    """

    coarse_mesh: tuple[float, ...] | None = None
    rho: float | None = Field(None, gt=0.0)
    budget_fraction: float = Field(DEFAULT_XI, gt=0.0, le=1.0)  # ξ_budget
    initial_order: int = Field(1, ge=1)  # ξ0
    order_increment: int = Field(1, ge=1)  # ξΔ
    max_descent_steps: int | None = Field(None, ge=1)  # default 50n

    def budget_cap(self, max_evals: int) -> int:
        return math.ceil(self.budget_fraction * max_evals)


@dataclass
class VnsState:
    current_order: int
    evals_used: int = 0


class VnsEvaluator:
    """Counts fresh evaluations spent by VNS and refuses them past the cap."""

    def __init__(self, evaluator: Evaluator, vns_state: VnsState, cap: int):
        self.evaluator = evaluator
        self.vns_state = vns_state
        self.cap = cap

    def __call__(self, x) -> float:
        if self.evaluator.is_fresh(x):
            if self.vns_state.evals_used >= self.cap:
                raise SearchBudgetSpent()
            self.vns_state.evals_used += 1
        return self.evaluator.evaluate(x, Stage.VNS_SEARCH)


def shake(x, order: int, coarse_mesh, rng: np.random.Generator, bounds: Bounds | None = None) -> np.ndarray:
    """Random point x + Δ_v∘z with z uniform on the integer shell ‖z‖∞ = order.

    Coordinates leaving the box are pulled back to the outermost coarse mesh
    multiple inside it.
    """
    if order < 1:
        raise ValueError(f"neighbourhood order must be at least 1, got {order}")
    x = np.asarray(x, dtype=float)
    coarse_mesh = np.broadcast_to(np.asarray(coarse_mesh, dtype=float), x.shape)
    while True:
        z = rng.integers(-order, order + 1, size=x.shape[0])
        if int(np.max(np.abs(z))) == order:
            break

    shaken = x + coarse_mesh * z
    if bounds is not None:
        above = shaken > bounds.hi
        below = shaken < bounds.lo
        z = np.where(above, np.floor((bounds.hi - x) / coarse_mesh + 1e-9), z)
        z = np.where(below, np.ceil((bounds.lo - x) / coarse_mesh - 1e-9), z)
        shaken = bounds.clip(x + coarse_mesh * z)
    return shaken


def descent(
    x_prime,
    evaluate: Callable[[np.ndarray], float],
    state: MeshState,
    rho: float,
    cache: EvalCache,
    bounds: Bounds,
    *,
    max_steps: int | None = None,
) -> Incumbent:
    """Compass descent on the fine mesh from x′.

    Steps start at Δ (in whole mesh steps) and halve when no compass neighbour
    improves; the descent ends after a failed sweep of the single-step
    neighbours x ± δⱼeⱼ. A candidate within ρ of a point evaluated before
    the descent began ends it at the current point.
    """
    x_prime = np.asarray(x_prime, dtype=float)
    n = x_prime.shape[0]
    visited = cache.points()

    def near_visited(p: np.ndarray) -> bool:
        if visited.size == 0:
            return False
        return float(np.min(np.max(np.abs(visited - p), axis=1))) <= rho

    current = x_prime
    value = evaluate(current)
    path = {canonical_key(current)}
    steps = np.maximum(1.0, np.floor(state.frame_size / state.mesh_size + 1e-9))
    limit = max_steps or 50 * n
    attempts = 0

    try:
        while attempts < limit:
            moved = False
            for j in range(n):
                for sign in (1.0, -1.0):
                    trial = current.copy()
                    trial[j] += sign * steps[j] * state.mesh_size[j]
                    trial = snap_to_mesh(trial, current, state, bounds)
                    key = canonical_key(trial)
                    if key in path:
                        continue
                    if near_visited(trial):
                        logger.debug("descent stopped near an evaluated point")
                        return Incumbent(current, value)
                    attempts += 1
                    trial_value = evaluate(trial)
                    path.add(key)
                    if trial_value < value:
                        current, value = trial, trial_value
                        moved = True
                        break
                if moved:
                    break
            if not moved:
                if np.all(steps == 1.0):
                    break
                steps = np.maximum(1.0, np.floor(steps / 2.0))
    except SearchBudgetSpent:
        pass
    return Incumbent(current, value)


def vns_search_stage(
    incumbent: Incumbent,
    evaluator: Evaluator,
    state: MeshState,
    cfg: VnsConfig,
    vns_state: VnsState,
    rng: np.random.Generator,
    rho: float,
) -> StageOutcome:
    """Shake on the coarse mesh, then descend on the fine one."""
    coarse = np.asarray(cfg.coarse_mesh, dtype=float) if cfg.coarse_mesh else state.initial_frame
    coarse = np.maximum(coarse, state.mesh_size)
    evaluate = VnsEvaluator(evaluator, vns_state, cfg.budget_cap(evaluator.max_evals))

    shaken = shake(incumbent.point, vns_state.current_order, coarse, rng, evaluator.bounds)
    x_prime = snap_to_mesh(shaken, incumbent.point, state, evaluator.bounds)
    try:
        found = descent(
            x_prime,
            evaluate,
            state,
            cfg.rho or rho,
            evaluator.cache,
            evaluator.bounds,
            max_steps=cfg.max_descent_steps,
        )
    except SearchBudgetSpent:
        return StageOutcome(improved=False, incumbent=incumbent)

    logger.debug(
        "vns order %d: f(x'')=%.6g vs incumbent %.6g", vns_state.current_order, found.value, incumbent.value
    )
    if found.value < incumbent.value:
        return StageOutcome(improved=True, incumbent=found)
    return StageOutcome(improved=False, incumbent=incumbent)


def vns_trigger(vns_state: VnsState, cfg: VnsConfig, max_evals: int, last_iteration_failed: bool) -> bool:
    """Advance the neighbourhood order and decide whether VNS runs next iteration."""
    if not last_iteration_failed:
        vns_state.current_order = cfg.initial_order
        return False
    vns_state.current_order += cfg.order_increment
    return vns_state.evals_used < cfg.budget_fraction * max_evals
