from dataclasses import dataclass, replace

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import qmc

from orthomads.settings import DEFAULT_SHRINK_FACTOR

# Slack, in mesh steps, when converting a bound into an integer multiple
_STEP_EPS = 1e-9


class Bounds(BaseModel):
    """Box L <= x <= U the tuner is allowed to evaluate in."""

    model_config = ConfigDict(frozen=True)

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @model_validator(mode="after")
    def check_box(self) -> "Bounds":
        if len(self.lower) == 0:
            raise ValueError("bounds need at least one dimension")
        if len(self.lower) != len(self.upper):
            raise ValueError(
                f"lower has {len(self.lower)} entries but upper has {len(self.upper)}"
            )
        inverted = [j for j, (lo, hi) in enumerate(zip(self.lower, self.upper)) if not lo < hi]
        if inverted:
            raise ValueError(f"lower must be strictly below upper in dimensions {inverted}")
        return self

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class MeshState:
    """Per-dimension frame size Δ, mesh size δ, shrink factor τ and the cap Δ⁰."""

    frame_size: np.ndarray
    mesh_size: np.ndarray
    shrink_factor: float
    initial_frame: np.ndarray

    @property
    def frame_ratio(self) -> float:
        """Smallest Δ/δ over the dimensions: how many mesh steps fit in the frame."""
        return float(np.min(self.frame_size / self.mesh_size))


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """Poll directions D^k, one direction per column."""

    columns: np.ndarray

    @property
    def frame_bound(self) -> float:
        return float(np.max(np.abs(self.columns)))

    def __len__(self) -> int:
        return self.columns.shape[1]

    def __iter__(self):
        return iter(self.columns.T)


def round_half_away(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.where(values >= 0, np.floor(values + 0.5), -np.floor(-values + 0.5))


def initial_sizes(bounds: Bounds, shrink_factor: float = DEFAULT_SHRINK_FACTOR) -> MeshState:
    """Δ⁰ = (U - L) / 10 per dimension and δ⁰ = Δ⁰."""
    if not 0.0 < shrink_factor < 1.0:
        raise ValueError(f"shrink factor must lie in (0, 1), got {shrink_factor}")
    frame = (bounds.hi - bounds.lo) / 10.0
    return MeshState(
        frame_size=frame,
        mesh_size=frame.copy(),
        shrink_factor=float(shrink_factor),
        initial_frame=frame.copy(),
    )


def update_after_iteration(state: MeshState, poll_succeeded: bool) -> MeshState:
    """Grow the frame by 1/τ (capped at Δ⁰) on success, shrink it by τ otherwise."""
    tau = state.shrink_factor
    if poll_succeeded:
        frame = np.minimum(state.frame_size / tau, state.initial_frame)
    else:
        frame = state.frame_size * tau
    return replace(state, frame_size=frame, mesh_size=np.minimum(frame, frame * frame))


def snap_to_mesh(x, center, state: MeshState, bounds: Bounds) -> np.ndarray:
    """Nearest point of the mesh anchored at ``center``, pulled inside the box.

    Coordinates that fall outside [L, U] after rounding move to the outermost
    mesh multiple still inside the box. ``center`` must be feasible.
    """
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    delta = state.mesh_size
    lo, hi = bounds.lo, bounds.hi

    steps = round_half_away((x - center) / delta)
    point = center + delta * steps

    above = point > hi
    below = point < lo
    if above.any() or below.any():
        steps = np.where(above, np.floor((hi - center) / delta + _STEP_EPS), steps)
        steps = np.where(below, np.ceil((lo - center) / delta - _STEP_EPS), steps)
        point = center + delta * steps
        # one more step inward when the product lands an ulp outside
        point = np.where(point > hi, center + delta * (steps - 1), point)
        point = np.where(point < lo, center + delta * (steps + 1), point)
    return point


def on_mesh(p, center, mesh_size, atol: float = 1e-6) -> bool:
    """True when p - center is an integer multiple of δ in every coordinate."""
    ratio = (np.asarray(p, dtype=float) - np.asarray(center, dtype=float)) / np.asarray(
        mesh_size, dtype=float
    )
    return bool(np.all(np.abs(ratio - round_half_away(ratio)) <= atol))


def ortho_directions(iteration: int, n: int, seed: int, *, frame_ratio: float = 1.0) -> DirectionSet:
    """2n integer directions {H, -H} with pairwise orthogonal columns in H.

    A scrambled Halton point indexed by ``iteration`` gives a direction q on an
    integer grid, and H = ‖q‖²I - 2qqᵀ is the integer Householder matrix of q.
    H is reduced by the gcd of its entries and multiplied by the largest
    integer keeping ‖H‖∞ within ``frame_ratio`` (at least 1), so that
    incumbent + δ∘d stays on the mesh and reaches about Δ.
    """
    if n < 1:
        raise ValueError(f"dimension must be at least 1, got {n}")
    if iteration < 0:
        raise ValueError(f"iteration must be non-negative, got {iteration}")

    halton = qmc.Halton(d=n, scramble=True, seed=seed)
    if iteration:
        halton.fast_forward(iteration)
    v = 2.0 * halton.random(1)[0] - 1.0
    peak = float(np.max(np.abs(v)))
    if peak < 1e-12:
        v = np.zeros(n)
        v[0] = 1.0
        peak = 1.0

    # ‖q‖² <= n * scale² keeps the Householder entries near frame_ratio
    scale = max(1, int(np.floor(np.sqrt(frame_ratio / n))))
    q = round_half_away(scale * v / peak).astype(np.int64)
    householder = int(q @ q) * np.eye(n, dtype=np.int64) - 2 * np.outer(q, q)
    householder //= np.gcd.reduce(np.abs(householder).ravel())
    multiplier = max(1, int(np.floor(frame_ratio / np.max(np.abs(householder)))))
    householder *= multiplier
    return DirectionSet(columns=np.hstack([householder, -householder]).astype(float))


def frame_membership(p, center, state: MeshState, dirs: DirectionSet) -> bool:
    """Whether p lies in the frame of size Δ·b around center.

    The box is closed: whenever δ = Δ the poll points along the widest
    direction land exactly on Δ·b, so the boundary counts as inside.
    """
    offset = np.abs(np.asarray(p, dtype=float) - np.asarray(center, dtype=float))
    reach = state.frame_size * dirs.frame_bound
    return bool(np.all(offset <= reach * (1.0 + 1e-12)))
