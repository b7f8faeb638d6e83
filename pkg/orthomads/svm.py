import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from prefect.logging import get_logger

from orthomads.evaluation import Objective
from orthomads.exceptions import DegenerateFoldsError
from orthomads.settings import DEFAULT_FOLDS

logger = get_logger("orthomads.svm")

# Curvature floor for a pair whose kernel rows coincide
_TAU = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Dense features, contiguous class ids and instance weights summing to one."""

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    label_table: tuple[int, ...]
    name: str = "dataset"

    def __post_init__(self):
        d = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a d x p matrix")
        if self.labels.shape != (d,) or self.weights.shape != (d,):
            raise ValueError(f"labels and weights need {d} entries")
        if len(self.label_table) < 2:
            raise ValueError(f"{self.name} needs at least two classes")
        if np.any(self.weights <= 0) or not math.isclose(float(self.weights.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("weights must be positive and sum to 1")

    @classmethod
    def from_arrays(cls, features, labels, weights=None, name: str = "dataset") -> "Dataset":
        """Map raw integer labels to ids 0..K-1 in ascending label order."""
        features = np.asarray(features, dtype=float)
        table, ids = np.unique(np.asarray(labels, dtype=int), return_inverse=True)
        if weights is None:
            weights = np.full(len(ids), 1.0 / max(len(ids), 1))
        weights = np.asarray(weights, dtype=float)
        return cls(features, ids.astype(int), weights / weights.sum(), tuple(int(v) for v in table), name)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_table)

    @property
    def original_labels(self) -> np.ndarray:
        return np.asarray(self.label_table)[self.labels]

    def subset(self, index, name: str | None = None) -> "Dataset":
        """Rows at ``index`` with renormalized weights, keeping the label table."""
        index = np.asarray(index)
        weights = self.weights[index]
        return Dataset(
            self.features[index], self.labels[index], weights / weights.sum(), self.label_table, name or self.name
        )


@dataclass(frozen=True, eq=False)
class SvmModel:
    """A trained binary RBF machine: support vectors with α > 0 and bias b."""

    alphas: np.ndarray
    labels: np.ndarray  # ±1 per support vector
    support_vectors: np.ndarray
    intercept: float
    gamma: float
    C: float
    converged: bool = True
    iterations: int = 0
    support_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alphas * self.labels

    def decision(self, H) -> np.ndarray:
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if len(self.alphas) == 0:
            return np.full(H.shape[0], self.intercept)
        return rbf_matrix(H, self.support_vectors, self.gamma) @ self.dual_coef + self.intercept


@dataclass(frozen=True, eq=False)
class OvoEnsemble:
    """One machine per class pair (a, b), a < b; machine labels b as +1."""

    classes: tuple[int, ...]
    machines: dict[tuple[int, int], SvmModel] = field(default_factory=dict)


def rbf(h, h2, gamma: float) -> float:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    diff = np.asarray(h, dtype=float) - np.asarray(h2, dtype=float)
    return float(np.exp(-gamma * float(diff @ diff)))


def rbf_matrix(A, B, gamma: float, sq_dists: np.ndarray | None = None) -> np.ndarray:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if sq_dists is None:
        sq_dists = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return np.exp(-gamma * sq_dists)


def dual_objective(alphas, y, kernel) -> float:
    """Σα - ½ Σ αᵢαⱼyᵢyⱼK(hᵢ, hⱼ), the quantity SMO maximizes."""
    ay = np.asarray(alphas) * np.asarray(y)
    return float(np.sum(alphas) - 0.5 * ay @ kernel @ ay)


def _working_set(alpha, grad, y, C):
    """Maximal violating pair (i, j) and its gap."""
    yg = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    up_idx = np.flatnonzero(up)
    low_idx = np.flatnonzero(low)
    i = int(up_idx[np.argmax(yg[up_idx])])
    j = int(low_idx[np.argmin(yg[low_idx])])
    return i, j, float(yg[i] - yg[j])


def _intercept(alpha, grad, y, C) -> float:
    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0
    free = ~upper & ~lower
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = float(np.min(yg[ub_mask])) if ub_mask.any() else math.inf
        lb = float(np.max(yg[lb_mask])) if lb_mask.any() else -math.inf
        rho = (ub + lb) / 2.0 if math.isfinite(ub) and math.isfinite(lb) else (ub if math.isfinite(ub) else lb)
    return -rho


def smo_train(
    features,
    y,
    C: float,
    gamma: float,
    *,
    tol: float = 1e-3,
    max_iter: int | None = None,
    sq_dists: np.ndarray | None = None,
) -> SvmModel:
    """Solve the soft-margin dual with two-variable SMO steps.

    The working pair is the maximal violating pair; training stops once its
    gap drops below ``tol``. Hitting ``max_iter`` returns the current model
    with ``converged=False``.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(y, dtype=float)
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise ValueError("binary training needs labels -1 and +1")

    d = len(y)
    K = rbf_matrix(X, X, gamma, sq_dists)
    Q = np.outer(y, y) * K
    alpha = np.zeros(d)
    grad = -np.ones(d)
    limit = max_iter or max(10_000, 10 * d * d)

    converged = False
    it = 0
    for it in range(limit):
        i, j, gap = _working_set(alpha, grad, y, C)
        if gap < tol:
            converged = True
            break

        curvature = max(K[i, i] + K[j, j] - 2.0 * K[i, j], _TAU)
        bound_i = C - alpha[i] if y[i] > 0 else alpha[i]
        bound_j = alpha[j] if y[j] > 0 else C - alpha[j]
        t = min(gap / curvature, bound_i, bound_j)

        old_i, old_j = alpha[i], alpha[j]
        alpha[i] = (C if y[i] > 0 else 0.0) if t == bound_i else old_i + y[i] * t
        alpha[j] = (0.0 if y[j] > 0 else C) if t == bound_j else old_j - y[j] * t
        grad += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)

    if not converged:
        logger.warning("SMO stalled after %d iterations without meeting tol=%g (C=%g, gamma=%g)", limit, tol, C, gamma)

    support = alpha > 0
    return SvmModel(
        alphas=alpha[support],
        labels=y[support],
        support_vectors=X[support],
        intercept=_intercept(alpha, grad, y, C),
        gamma=float(gamma),
        C=float(C),
        converged=converged,
        iterations=it,
        support_index=np.flatnonzero(support),
    )


def score(model: SvmModel, h) -> float:
    return float(model.decision(np.asarray(h, dtype=float)[None, :])[0])


def hinge_loss(margins, weights) -> float:
    """Σ wᵢ max(0, 1 - mᵢ)."""
    margins = np.asarray(margins, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if margins.shape != weights.shape:
        raise ValueError(f"{len(margins)} margins but {len(weights)} weights")
    return float(np.sum(weights * np.maximum(0.0, 1.0 - margins)))


def _pair_labels(labels, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    covered = np.flatnonzero((labels == a) | (labels == b))
    return covered, np.where(labels[covered] == b, 1.0, -1.0)


def fit_ensemble(dataset: Dataset, C: float, gamma: float, *, tol: float = 1e-3) -> OvoEnsemble:
    classes = tuple(range(dataset.n_classes))
    machines = {}
    for a, b in itertools.combinations(classes, 2):
        covered, y = _pair_labels(dataset.labels, a, b)
        if len(np.unique(y)) < 2:
            continue
        machines[(a, b)] = smo_train(dataset.features[covered], y, C, gamma, tol=tol)
    return OvoEnsemble(classes=classes, machines=machines)


def predict(ens: OvoEnsemble, H) -> np.ndarray:
    """Majority vote over the pairwise machines.

    Ties go to the larger summed |score| of the winning votes, then to the
    smallest class id.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    votes = np.zeros((H.shape[0], len(ens.classes)))
    margins = np.zeros_like(votes)
    rows = np.arange(H.shape[0])
    for (a, b), model in ens.machines.items():
        s = model.decision(H)
        winner = np.where(s > 0, b, a)
        votes[rows, winner] += 1
        margins[rows, winner] += np.abs(s)

    out = np.empty(H.shape[0], dtype=int)
    for r in rows:
        tied = np.flatnonzero(votes[r] == votes[r].max())
        if len(tied) > 1:
            tied = tied[margins[r, tied] == margins[r, tied].max()]
        out[r] = int(tied[0])
    return out


def predict_multiclass(ens: OvoEnsemble, h) -> int:
    return int(predict(ens, np.asarray(h, dtype=float)[None, :])[0])


def accuracy(ens: OvoEnsemble, dataset: Dataset) -> float:
    return float(np.mean(predict(ens, dataset.features) == dataset.labels))


@dataclass(frozen=True)
class Holdout:
    validation: Dataset


@dataclass(frozen=True)
class StratifiedCV:
    k: int = DEFAULT_FOLDS
    seed: int = 0


def minmax_scaler(train: np.ndarray):
    """Scale columns to [0, 1] using the training range; constant columns map to 0."""
    lo = train.min(axis=0)
    span = train.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return lambda X: (X - lo) / span


@dataclass(eq=False)
class _PairTask:
    train_x: np.ndarray
    train_y: np.ndarray
    train_sq: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    val_w: np.ndarray
    cross_sq: np.ndarray


class SvmObjective:
    """Hinge loss on held-out data of an RBF SVM trained at (C, γ).

    Folds (or the single holdout split) and all pairwise squared distances
    are prepared once, so each call only solves the duals.
    """

    def __init__(self, dataset: Dataset, protocol: Holdout | StratifiedCV, *, tol: float = 1e-3, scale: bool = False):
        from orthomads.data_io import stratified_kfold

        self.dataset = dataset
        self.tol = tol
        if isinstance(protocol, Holdout):
            splits = [(dataset, protocol.validation)]
        else:
            folds = stratified_kfold(dataset.labels, protocol.k, protocol.seed)
            splits = []
            for f in range(folds.k):
                train_idx, val_idx = folds.indices(f)
                if len(np.unique(dataset.labels[train_idx])) < dataset.n_classes:
                    logger.warning("fold %d skipped: a class is missing from its training part", f)
                    continue
                splits.append((dataset.subset(train_idx), dataset.subset(val_idx)))
            if not splits:
                raise DegenerateFoldsError(f"all {folds.k} folds of {dataset.name} lack a class in training")
        self.folds = [self._prepare(train, val, scale) for train, val in splits]

    @staticmethod
    def _prepare(train: Dataset, val: Dataset, scale: bool) -> list[_PairTask]:
        train_x, val_x = train.features, val.features
        if scale:
            transform = minmax_scaler(train_x)
            train_x, val_x = transform(train_x), transform(val_x)
        tasks = []
        for a, b in itertools.combinations(range(train.n_classes), 2):
            t_idx, t_y = _pair_labels(train.labels, a, b)
            v_idx, v_y = _pair_labels(val.labels, a, b)
            if len(np.unique(t_y)) < 2 or len(v_idx) == 0:
                continue
            tx, vx = train_x[t_idx], val_x[v_idx]
            tasks.append(
                _PairTask(
                    train_x=tx,
                    train_y=t_y,
                    train_sq=cdist(tx, tx, "sqeuclidean"),
                    val_x=vx,
                    val_y=v_y,
                    val_w=val.weights[v_idx] / val.weights[v_idx].sum(),
                    cross_sq=cdist(vx, tx, "sqeuclidean"),
                )
            )
        return tasks

    def _pair_loss(self, task: _PairTask, C: float, gamma: float) -> float:
        model = smo_train(task.train_x, task.train_y, C, gamma, tol=self.tol, sq_dists=task.train_sq)
        kernel = rbf_matrix(None, None, gamma, task.cross_sq[:, model.support_index])
        decision = kernel @ model.dual_coef + model.intercept
        return hinge_loss(task.val_y * decision, task.val_w)

    def __call__(self, x) -> float:
        C, gamma = (float(v) for v in np.asarray(x, dtype=float)[:2])
        if not (C > 0 and gamma > 0):
            return math.inf
        fold_losses = [
            float(np.mean([self._pair_loss(task, C, gamma) for task in tasks])) for tasks in self.folds if tasks
        ]
        return float(np.mean(fold_losses)) if fold_losses else math.inf


def objective_factory(
    dataset: Dataset,
    protocol: Holdout | StratifiedCV | None = None,
    *,
    tol: float = 1e-3,
    scale: bool = False,
) -> Objective:
    """Objective over (C, γ) for tuning ``dataset``; 3-fold stratified CV by default."""
    inner = SvmObjective(dataset, protocol or StratifiedCV(), tol=tol, scale=scale)
    return Objective(inner, name=f"svm-hinge[{dataset.name}]")
