"""Analytic test problems for exercising the tuners without an SVM in the loop."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from orthomads.geometry import Bounds


@dataclass(frozen=True)
class AnalyticProblem:
    name: str
    fn: Callable[[np.ndarray], float]
    bounds: Bounds
    x0: tuple[float, ...]
    minimizer: tuple[float, ...] | None = None


def sphere(x) -> float:
    """Squared distance to (50, ..., 50)."""
    x = np.asarray(x, dtype=float)
    return float(np.sum((x - 50.0) ** 2))


def rosenbrock(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def double_well(x) -> float:
    """Two basins around x = 1 (deep) and x = 3 (shallow), split by a ridge at 2."""
    u = float(np.asarray(x, dtype=float)[0]) - 2.0
    return (u * u - 1.0) ** 2 + 0.25 * u


def rastrigin(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(10.0 * len(x) + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


PROBLEMS = {
    "sphere": AnalyticProblem(
        "sphere", sphere, Bounds(lower=(0.01, 0.01), upper=(100.01, 100.01)), (10.0, 10.0), (50.0, 50.0)
    ),
    "rosenbrock": AnalyticProblem(
        "rosenbrock", rosenbrock, Bounds(lower=(-2.0, -2.0), upper=(2.0, 2.0)), (-1.2, 1.0), (1.0, 1.0)
    ),
    "double_well": AnalyticProblem("double_well", double_well, Bounds(lower=(0.0,), upper=(4.0,)), (3.0,)),
    "rastrigin": AnalyticProblem(
        "rastrigin", rastrigin, Bounds(lower=(-5.12, -5.12), upper=(5.12, 5.12)), (3.0, 3.0), (0.0, 0.0)
    ),
}


def get_problem(name: str) -> AnalyticProblem:
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown function {name!r}; choose from {sorted(PROBLEMS)}") from None
