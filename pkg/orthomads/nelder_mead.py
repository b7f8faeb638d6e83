import itertools
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import Callable, NamedTuple

import numpy as np
from pydantic import BaseModel, Field
from prefect.logging import get_logger

from orthomads.evaluation import Evaluator, Incumbent, Stage, StageOutcome
from orthomads.exceptions import DegenerateSimplexError, SearchBudgetSpent
from orthomads.geometry import MeshState, snap_to_mesh

logger = get_logger("orthomads.nelder_mead")


class Zone(StrEnum):
    INSIDE_CONTRACTION = "inside_contraction"
    EXPANSION = "expansion"
    REFLECTION = "reflection"
    OUTSIDE_CONTRACTION = "outside_contraction"


class NmConfig(BaseModel):
    """Nelder-Mead search stage settings."""

    expansion: float = Field(2.0, gt=1.0)  # Q_e
    outside_contraction: float = Field(0.5, gt=0.0, lt=1.0)  # |Q_oc|
    inside_contraction: float = Field(0.5, gt=0.0, lt=1.0)  # |Q_ic|
    shrink: float = Field(0.5, gt=0.0, lt=1.0)  # ζ
    max_evals_per_stage: int | None = Field(None, ge=1)  # default 4n
    seed_radius: float = Field(2.0, gt=0.0)  # in units of Δ
    degeneracy_tol: float = Field(1e-12, gt=0.0)
    # Use the printed contraction signs, which swap the inside and outside points
    literal_contraction_signs: bool = False

    def stage_budget(self, n: int) -> int:
        return self.max_evals_per_stage or 4 * n


@dataclass(frozen=True, eq=False)
class Vertex:
    point: np.ndarray
    value: float
    order: int = 0


@dataclass(frozen=True, eq=False)
class Simplex:
    """n+1 vertices sorted by (value, order)."""

    vertices: tuple[Vertex, ...]

    @classmethod
    def from_vertices(cls, vertices, *, validate: bool = True, tol: float = 1e-12) -> "Simplex":
        ordered = tuple(sorted(vertices, key=lambda v: (v.value, v.order)))
        n = len(ordered[0].point)
        if len(ordered) != n + 1:
            raise ValueError(f"a simplex in {n} dimensions needs {n + 1} vertices, got {len(ordered)}")
        simplex = cls(ordered)
        if validate and simplex.relative_volume() <= tol:
            raise ValueError("simplex vertices are affinely dependent")
        return simplex

    @property
    def n(self) -> int:
        return len(self.vertices) - 1

    @property
    def points(self) -> np.ndarray:
        return np.vstack([v.point for v in self.vertices])

    @property
    def values(self) -> np.ndarray:
        return np.array([v.value for v in self.vertices])

    @property
    def best(self) -> Vertex:
        return self.vertices[0]

    @property
    def worst(self) -> Vertex:
        return self.vertices[-1]

    def volume(self) -> float:
        edges = self.points[1:] - self.points[0]
        return abs(float(np.linalg.det(edges))) / math.factorial(self.n)

    def diameter(self) -> float:
        pts = self.points
        return max(float(np.max(np.abs(a - b))) for a, b in itertools.combinations(pts, 2))

    def relative_volume(self) -> float:
        """Volume over diameter^n, scale free."""
        diameter = self.diameter()
        if diameter == 0.0:
            return 0.0
        return self.volume() / diameter**self.n

    def replace_worst(self, vertex: Vertex) -> "Simplex":
        return Simplex.from_vertices((*self.vertices[:-1], vertex), validate=False)


class NmCandidates(NamedTuple):
    reflection: np.ndarray
    expansion: np.ndarray
    outside_contraction: np.ndarray
    inside_contraction: np.ndarray


def best(x_new: Vertex, x: Vertex) -> Vertex:
    return x_new if x_new.value < x.value else x


def centroid(simplex: Simplex) -> np.ndarray:
    """Mean of every vertex but the worst."""
    return simplex.points[:-1].mean(axis=0)


def candidates(x_c, x_n, cfg: NmConfig) -> NmCandidates:
    x_c = np.asarray(x_c, dtype=float)
    x_n = np.asarray(x_n, dtype=float)
    d = x_c - x_n
    if not np.any(d):
        raise DegenerateSimplexError("centroid coincides with the worst vertex")
    outside = x_c + cfg.outside_contraction * d
    inside = x_c - cfg.inside_contraction * d
    if cfg.literal_contraction_signs:
        outside, inside = x_c - cfg.outside_contraction * d, x_c + cfg.inside_contraction * d
    return NmCandidates(
        reflection=x_c + d,
        expansion=x_c + cfg.expansion * d,
        outside_contraction=outside,
        inside_contraction=inside,
    )


def classify_zone(x_r: Vertex, simplex: Simplex) -> Zone:
    values = simplex.values
    if values[-1] < x_r.value:
        return Zone.INSIDE_CONTRACTION
    if x_r.value < values[0]:
        return Zone.EXPANSION
    if int(np.sum(x_r.value < values)) >= 2:
        return Zone.REFLECTION
    return Zone.OUTSIDE_CONTRACTION


def shrink(simplex: Simplex, evaluate: Callable[[np.ndarray], Vertex], cfg: NmConfig) -> Simplex:
    """Pull every vertex but the best toward it by ζ."""
    x0 = simplex.best
    moved = [evaluate(x0.point + cfg.shrink * (v.point - x0.point)) for v in simplex.vertices[1:]]
    return Simplex.from_vertices((x0, *moved), validate=False)


def nm_step(simplex: Simplex, evaluate: Callable[[np.ndarray], Vertex], cfg: NmConfig) -> Simplex:
    """Replace the worst vertex according to the zone of its reflection."""
    worst = simplex.worst
    trial = candidates(centroid(simplex), worst.point, cfg)
    x_r = evaluate(trial.reflection)

    match classify_zone(x_r, simplex):
        case Zone.EXPANSION:
            replacement = best(evaluate(trial.expansion), x_r)
        case Zone.REFLECTION:
            replacement = x_r
        case Zone.OUTSIDE_CONTRACTION:
            replacement = best(evaluate(trial.outside_contraction), x_r)
        case Zone.INSIDE_CONTRACTION:
            x_ic = evaluate(trial.inside_contraction)
            if not x_ic.value < worst.value:
                return shrink(simplex, evaluate, cfg)
            replacement = x_ic
    return simplex.replace_worst(replacement)


def _independent_vertices(incumbent: Incumbent, entries, n: int) -> list[Vertex] | None:
    """Incumbent plus the n best entries keeping the set affinely independent."""
    chosen = [Vertex(incumbent.point, incumbent.value, -1)]
    edges = np.empty((0, n))
    for order, (point, value) in entries:
        if np.array_equal(point, incumbent.point):
            continue
        candidate = np.vstack([edges, point - incumbent.point])
        if np.linalg.matrix_rank(candidate) == len(candidate):
            edges = candidate
            chosen.append(Vertex(point, value, order))
            if len(chosen) == n + 1:
                return chosen
    return None


def initial_simplex(incumbent: Incumbent, evaluator: Evaluator, state: MeshState, cfg: NmConfig) -> Simplex | None:
    """Seed the simplex from cached points near the incumbent, else from the best overall."""
    n = len(incumbent.point)
    ranked = [
        (order, (point, value))
        for order, (point, value) in enumerate(evaluator.cache.items())
        if math.isfinite(value)
    ]
    if len(ranked) < n + 1:
        return None
    ranked.sort(key=lambda e: (e[1][1], e[0]))

    radius = cfg.seed_radius * state.frame_size
    nearby = [e for e in ranked if np.all(np.abs(e[1][0] - incumbent.point) <= radius)]
    for pool in (nearby, ranked):
        vertices = _independent_vertices(incumbent, pool, n)
        if vertices is not None:
            return Simplex.from_vertices(vertices, validate=False)
    return None


def nm_search_stage(incumbent: Incumbent, evaluator: Evaluator, state: MeshState, cfg: NmConfig) -> StageOutcome:
    """Run Nelder-Mead steps on the mesh until the stage budget is spent.

    Every candidate is snapped to the mesh around the incumbent before it is
    evaluated. Proposals count against the stage budget whether or not they
    hit the cache.
    """
    simplex = initial_simplex(incumbent, evaluator, state, cfg)
    if simplex is None:
        logger.debug("nm search skipped: not enough independent cached points")
        return StageOutcome(improved=False, incumbent=incumbent)

    budget = cfg.stage_budget(len(incumbent.point))
    orders = itertools.count(len(evaluator.cache))
    spent = 0
    found = Vertex(incumbent.point, incumbent.value, -1)

    def evaluate(point: np.ndarray) -> Vertex:
        nonlocal spent, found
        if spent >= budget:
            raise SearchBudgetSpent()
        spent += 1
        snapped = snap_to_mesh(point, incumbent.point, state, evaluator.bounds)
        vertex = Vertex(snapped, evaluator.evaluate(snapped, Stage.NM_SEARCH), next(orders))
        found = best(vertex, found)
        return vertex

    start_volume = simplex.volume()
    try:
        while spent < budget:
            simplex = nm_step(simplex, evaluate, cfg)
            if simplex.volume() <= cfg.degeneracy_tol * start_volume:
                logger.debug("nm search stopped: simplex collapsed on the mesh")
                break
    except SearchBudgetSpent:
        pass
    except DegenerateSimplexError:
        logger.debug("nm search stopped: centroid snapped onto the worst vertex")

    if found.value < incumbent.value:
        return StageOutcome(improved=True, incumbent=Incumbent(found.point, found.value))
    return StageOutcome(improved=False, incumbent=incumbent)
