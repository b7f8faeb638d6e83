import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from prefect.logging import get_logger

from orthomads.exceptions import BudgetExhausted
from orthomads.geometry import Bounds

logger = get_logger("orthomads.evaluation")

# Cache keys round coordinates to this many decimals so that the same mesh
# point reached along different arithmetic paths shares one entry
_KEY_DECIMALS = 12


class Stage(StrEnum):
    INITIAL = "initial"
    NM_SEARCH = "nm_search"
    VNS_SEARCH = "vns_search"
    POLL = "poll"
    BASELINE = "baseline"


class TerminalReason(StrEnum):
    MESH_CONVERGED = "mesh_converged"
    BUDGET_EXHAUSTED = "budget_exhausted"
    TARGET_REACHED = "target_reached"


class Objective:
    """A black-box function of an n-vector, counting its calls.

    NaN results are mapped to +inf so they can never become an incumbent.
    """

    def __init__(self, fn: Callable[[np.ndarray], float], name: str | None = None):
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "objective")
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, x) -> float:
        with self._lock:
            self.calls += 1
        value = float(self.fn(np.asarray(x, dtype=float)))
        return math.inf if math.isnan(value) else value


def canonical_key(x) -> tuple[float, ...]:
    # + 0.0 folds -0.0 into 0.0
    return tuple(float(v) + 0.0 for v in np.round(np.asarray(x, dtype=float), _KEY_DECIMALS))


class EvalCache:
    """Objective values keyed by mesh point, in insertion order. Thread-safe."""

    def __init__(self):
        self._values: dict[tuple[float, ...], float] = {}
        self._points: list[np.ndarray] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, x) -> bool:
        return canonical_key(x) in self._values

    def lookup(self, x) -> float | None:
        return self._values.get(canonical_key(x))

    def insert(self, x, value: float) -> bool:
        """Store a value; an existing entry is never overwritten."""
        key = canonical_key(x)
        with self._lock:
            if key in self._values:
                return False
            self._values[key] = float(value)
            self._points.append(np.asarray(x, dtype=float).copy())
            return True

    def items(self) -> list[tuple[np.ndarray, float]]:
        with self._lock:
            return [(p, self._values[canonical_key(p)]) for p in self._points]

    def points(self) -> np.ndarray:
        with self._lock:
            if not self._points:
                return np.empty((0, 0))
            return np.vstack(self._points)

    def nearest_distance(self, x) -> float:
        """L∞ distance from x to the closest cached point (inf when empty)."""
        points = self.points()
        if points.size == 0:
            return math.inf
        return float(np.min(np.max(np.abs(points - np.asarray(x, dtype=float)), axis=1)))


@dataclass(frozen=True)
class Incumbent:
    point: np.ndarray
    value: float


@dataclass(frozen=True)
class StageOutcome:
    """Result of a search or poll stage: improved is True only on strict decrease."""

    improved: bool
    incumbent: Incumbent


@dataclass(frozen=True)
class TraceRecord:
    eval_index: int
    iteration: int | None
    stage: Stage
    point: tuple[float, ...]
    value: float
    best_so_far: float


@dataclass(frozen=True)
class IterationRecord:
    """Driver state of one iteration, after the mesh update."""

    iteration: int
    center: tuple[float, ...]
    frame_size: tuple[float, ...]
    mesh_size: tuple[float, ...]
    success: bool
    vns_order: int | None = None


@dataclass
class RunTrace:
    records: list[TraceRecord] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    terminal_reason: TerminalReason | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_value(self) -> float:
        return self.records[-1].best_so_far if self.records else math.inf

    def append(self, point, value: float, stage: Stage, iteration: int | None) -> TraceRecord:
        best = min(self.best_value, value)
        record = TraceRecord(
            eval_index=len(self.records),
            iteration=iteration,
            stage=Stage(stage),
            point=tuple(float(v) for v in np.asarray(point, dtype=float)),
            value=float(value),
            best_so_far=float(best),
        )
        self.records.append(record)
        return record

    def to_frame(self, names: Sequence[str] | None = None) -> pd.DataFrame:
        """One row per evaluation: eval_index, stage, coordinates, loss, best_so_far."""
        dim = len(self.records[0].point) if self.records else len(names or ())
        names = list(names) if names else [f"x{j + 1}" for j in range(dim)]
        rows = [
            {
                "eval_index": r.eval_index,
                "stage": str(r.stage),
                **dict(zip(names, r.point)),
                "loss": r.value,
                "best_so_far": r.best_so_far,
            }
            for r in self.records
        ]
        return pd.DataFrame(rows, columns=["eval_index", "stage", *names, "loss", "best_so_far"])


class Evaluator:
    """The only way to the black box: extreme barrier, cache, budget and trace.

    Infeasible points cost nothing and return +inf; cached points return the
    stored value; anything else is evaluated once, counted and traced.
    """

    def __init__(
        self,
        objective: Objective | Callable[[np.ndarray], float],
        bounds: Bounds,
        max_evals: int,
        *,
        cache: EvalCache | None = None,
        trace: RunTrace | None = None,
        workers: int = 1,
    ):
        self.objective = objective if isinstance(objective, Objective) else Objective(objective)
        self.bounds = bounds
        self.max_evals = int(max_evals)
        self.cache = cache if cache is not None else EvalCache()
        self.trace = trace if trace is not None else RunTrace()
        self.workers = max(1, int(workers))
        self.iteration: int | None = None
        self.evaluations = 0

    @property
    def remaining(self) -> int:
        return self.max_evals - self.evaluations

    def is_fresh(self, x) -> bool:
        """Whether evaluating x would spend a black-box call."""
        return self.bounds.contains(x) and x not in self.cache

    def evaluate(self, x, stage: Stage) -> float:
        x = np.asarray(x, dtype=float)
        if not self.bounds.contains(x):
            return math.inf
        cached = self.cache.lookup(x)
        if cached is not None:
            return cached
        if self.evaluations >= self.max_evals:
            raise BudgetExhausted(self.max_evals)
        value = self.objective(x)
        self._commit(x, value, stage)
        return value

    def evaluate_many(self, points: Sequence[np.ndarray], stage: Stage) -> list[float]:
        """Evaluate a batch, possibly on threads, committing in the given order."""
        points = [np.asarray(p, dtype=float) for p in points]
        values: list[float | None] = [None] * len(points)
        fresh: list[int] = []
        pending_keys: set[tuple[float, ...]] = set()
        for i, p in enumerate(points):
            if not self.bounds.contains(p):
                values[i] = math.inf
                continue
            cached = self.cache.lookup(p)
            if cached is not None:
                values[i] = cached
                continue
            key = canonical_key(p)
            if key not in pending_keys:
                pending_keys.add(key)
                fresh.append(i)

        todo = fresh[: max(0, self.remaining)]
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self.objective, [points[i] for i in todo]))
        else:
            results = [self.objective(points[i]) for i in todo]
        for i, value in zip(todo, results):
            self._commit(points[i], value, stage)
        if len(todo) < len(fresh):
            raise BudgetExhausted(self.max_evals)

        for i, p in enumerate(points):
            if values[i] is None:
                values[i] = self.cache.lookup(p)
        return values

    def _commit(self, x: np.ndarray, value: float, stage: Stage) -> None:
        self.cache.insert(x, value)
        self.evaluations += 1
        record = self.trace.append(x, value, stage, self.iteration)
        logger.debug("eval %d [%s] f=%.6g best=%.6g", record.eval_index, stage, value, record.best_so_far)
