import itertools
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator
from prefect.logging import get_logger

from orthomads.evaluation import Evaluator, Incumbent, Objective, RunTrace, Stage, TerminalReason
from orthomads.exceptions import BudgetExhausted
from orthomads.geometry import Bounds
from orthomads.settings import DEFAULT_BASELINE_BUDGET

logger = get_logger("orthomads.baselines")

BaselineMethod = Literal["grid", "random", "sa"]

# Axis values of the published grid, used when grid_axes="published"
PUBLISHED_GRID_AXIS = (1.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0)


class BaselineConfig(BaseModel):
    """Settings shared by the grid, random and simulated annealing tuners."""

    method: BaselineMethod
    bounds: Bounds
    budget: int = Field(DEFAULT_BASELINE_BUDGET, ge=1)
    seed: int = Field(0, ge=0)
    x0: tuple[float, ...] | None = None
    grid_points: int = Field(10, ge=1)  # per axis
    grid_axes: Literal["even", "published"] = "even"
    refine_rounds: int = Field(3, ge=0)
    initial_temperature: float = Field(1.0, gt=0.0)
    cooling: float = Field(0.95, gt=0.0, lt=1.0)
    step_scale: float = Field(0.2, gt=0.0)  # proposal std per unit of T·(U - L)
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def check_start(self) -> "BaselineConfig":
        if self.x0 is not None and not self.bounds.contains(self.x0):
            raise ValueError(f"x0 {self.x0} lies outside the bounds")
        return self


def grid_axes(cfg: BaselineConfig) -> list[np.ndarray]:
    if cfg.grid_axes == "published":
        return [np.asarray(PUBLISHED_GRID_AXIS) for _ in range(cfg.bounds.dim)]
    return [np.linspace(lo, hi, cfg.grid_points) for lo, hi in zip(cfg.bounds.lower, cfg.bounds.upper)]


def grid_search(objective: Objective, cfg: BaselineConfig) -> tuple[Incumbent, RunTrace]:
    """Every grid point, first axis outermost; ties keep the earliest point."""
    axes = grid_axes(cfg)
    count = math.prod(len(a) for a in axes)
    if count > cfg.budget:
        raise ValueError(f"grid of {count} points exceeds the budget of {cfg.budget}")

    evaluator = Evaluator(objective, cfg.bounds, cfg.budget, workers=cfg.workers)
    points = [np.asarray(p, dtype=float) for p in itertools.product(*axes)]
    values = evaluator.evaluate_many(points, Stage.BASELINE)
    i = int(np.argmin(values))
    evaluator.trace.terminal_reason = TerminalReason.BUDGET_EXHAUSTED
    return Incumbent(points[i], float(values[i])), evaluator.trace


def _best(trace: RunTrace) -> Incumbent:
    record = min(trace.records, key=lambda r: (r.value, r.eval_index))
    return Incumbent(np.asarray(record.point, dtype=float), record.value)


def random_search(objective: Objective, cfg: BaselineConfig) -> tuple[Incumbent, RunTrace]:
    """Uniform samples over half the budget, then rounds in halving boxes around the best point."""
    rng = np.random.default_rng(cfg.seed)
    evaluator = Evaluator(objective, cfg.bounds, cfg.budget, workers=cfg.workers)
    lo, hi = cfg.bounds.lo, cfg.bounds.hi

    first = max(1, cfg.budget // 2)
    rounds = min(cfg.refine_rounds, cfg.budget - first)
    try:
        # Step 1: uniform exploration
        for _ in range(first):
            evaluator.evaluate(rng.uniform(lo, hi), Stage.BASELINE)

        # Step 2: refinement rounds with equal shares of what is left
        remaining = cfg.budget - first
        for r in range(rounds):
            share = remaining // (rounds - r)
            center = _best(evaluator.trace).point
            half = (hi - lo) / 2.0 ** (r + 2)
            box_lo, box_hi = np.maximum(lo, center - half), np.minimum(hi, center + half)
            for _ in range(share):
                evaluator.evaluate(rng.uniform(box_lo, box_hi), Stage.BASELINE)
            remaining -= share
    except BudgetExhausted:
        pass

    evaluator.trace.terminal_reason = TerminalReason.BUDGET_EXHAUSTED
    return _best(evaluator.trace), evaluator.trace


def metropolis_accept(delta: float, temperature: float, u: float) -> bool:
    """Always take a non-worsening move; take a worse one with probability exp(-Δf/T)."""
    if delta <= 0:
        return True
    if temperature <= 0 or not math.isfinite(delta):
        return False
    return u < math.exp(-delta / temperature)


def simulated_annealing(objective: Objective, cfg: BaselineConfig) -> tuple[Incumbent, RunTrace]:
    """Gaussian proposals scaled by T·(U - L), geometric cooling per evaluation."""
    rng = np.random.default_rng(cfg.seed)
    evaluator = Evaluator(objective, cfg.bounds, cfg.budget, workers=cfg.workers)
    lo, hi = cfg.bounds.lo, cfg.bounds.hi
    span = hi - lo

    current = np.asarray(cfg.x0, dtype=float) if cfg.x0 is not None else rng.uniform(lo, hi)
    temperature = cfg.initial_temperature
    proposals = 0
    try:
        value = evaluator.evaluate(current, Stage.BASELINE)
        while evaluator.evaluations < cfg.budget and proposals < 10 * cfg.budget:
            proposals += 1
            step = cfg.step_scale * temperature * span
            candidate = np.clip(current + step * rng.standard_normal(len(current)), lo, hi)
            candidate_value = evaluator.evaluate(candidate, Stage.BASELINE)
            if metropolis_accept(candidate_value - value, temperature, rng.random()):
                current, value = candidate, candidate_value
            temperature *= cfg.cooling
    except BudgetExhausted:
        pass

    evaluator.trace.terminal_reason = TerminalReason.BUDGET_EXHAUSTED
    return _best(evaluator.trace), evaluator.trace


def run_baseline(objective: Objective, cfg: BaselineConfig) -> tuple[Incumbent, RunTrace]:
    logger.info("running %s baseline with budget %d (seed %d)", cfg.method, cfg.budget, cfg.seed)
    match cfg.method:
        case "grid":
            return grid_search(objective, cfg)
        case "random":
            return random_search(objective, cfg)
        case "sa":
            return simulated_annealing(objective, cfg)
