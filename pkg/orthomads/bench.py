import json
import os
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from prefect import flow, task
from prefect.cache_policies import NO_CACHE
from prefect.futures import wait
from prefect.task_runners import ThreadPoolTaskRunner
from pydantic import BaseModel, Field, field_validator, model_validator

from orthomads.baselines import BaselineConfig, run_baseline
from orthomads.data_io import align_features, conform_labels, make_synthetic, parse_libsvm, stratified_split
from orthomads.driver import TunerConfig, optimize
from orthomads.evaluation import Incumbent, Objective, RunTrace
from orthomads.exceptions import RankingError
from orthomads.functions import get_problem
from orthomads.geometry import Bounds
from orthomads.settings import (
    DEFAULT_BASELINE_BUDGET,
    DEFAULT_FOLDS,
    DEFAULT_LOWER,
    DEFAULT_MIN_MESH,
    DEFAULT_SHRINK_FACTOR,
    DEFAULT_UPPER,
    DEFAULT_X0,
    DEFAULT_XI,
    ORTHOMADS_THREADS,
    PUBLISHED_MIN_MESH_GRID,
    PUBLISHED_X0_GRID,
    PUBLISHED_XI_GRID,
)
from orthomads.svm import Dataset, Holdout, StratifiedCV, accuracy, fit_ensemble, minmax_scaler, objective_factory

# Configuration variables
MADS_METHODS = ("mads", "mads-nm", "mads-nm-vns")
BASELINE_METHODS = ("grid", "random", "sa")
SWEEP_PRESETS = {"xi": PUBLISHED_XI_GRID, "min_mesh": PUBLISHED_MIN_MESH_GRID, "x0": PUBLISHED_X0_GRID}
SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.json"
SWEEP_FILE = "sweep.csv"
FLOAT_FORMAT = "%.17g"

Method = Literal["mads", "mads-nm", "mads-nm-vns", "grid", "random", "sa"]
SweepAxis = Literal["xi", "min_mesh", "x0"]
TieMethod = Literal["average", "dense"]


class ExperimentSpec(BaseModel):
    """One benchmark: a data source, a tuner and its settings, and where results go."""

    dataset: Path | None = None
    validation: Path | None = None
    test: Path | None = None
    synthetic: str | None = None  # kind,n,noise
    function: str | None = None
    folds: int = Field(DEFAULT_FOLDS, ge=2)
    test_fraction: float = Field(0.3, gt=0.0, lt=1.0)
    scale: bool = False
    method: Method = "mads-nm-vns"
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    x0: tuple[float, ...] | None = None
    min_mesh: tuple[float, ...] = (DEFAULT_MIN_MESH,)
    xi: float = Field(DEFAULT_XI, gt=0.0, le=1.0)
    tau: float = Field(DEFAULT_SHRINK_FACTOR, gt=0.0, lt=1.0)
    max_evals: int | None = Field(None, ge=1)
    grid_axes: Literal["even", "published"] = "even"
    seed: int = Field(0, ge=0)
    repeats: int = Field(1, ge=1)
    out: Path = Path("bench-out")

    @field_validator("synthetic")
    @classmethod
    def check_synthetic(cls, value: str | None) -> str | None:
        if value is not None:
            parse_synthetic(value)
        return value

    @model_validator(mode="after")
    def check_source(self) -> "ExperimentSpec":
        sources = [s for s in (self.dataset, self.synthetic, self.function) if s is not None]
        if len(sources) != 1:
            raise ValueError("give exactly one of dataset, synthetic or function")
        if self.dataset is None and (self.validation or self.test):
            raise ValueError("validation and test files need a dataset file")
        for path in (self.dataset, self.validation, self.test):
            if path is not None and not Path(path).is_file():
                raise ValueError(f"no such file: {path}")
        return self

    @property
    def label(self) -> str:
        if self.dataset is not None:
            return Path(self.dataset).stem
        if self.synthetic is not None:
            return parse_synthetic(self.synthetic)[0]
        return self.function


class RepeatResult(BaseModel):
    repeat: int
    seed: int
    best_point: tuple[float, ...]
    best_loss: float
    evaluations: int
    terminal_reason: str
    accuracy: float | None = None
    trace_file: str
    wall_time: float = 0.0


class SummaryRow(BaseModel):
    method: str
    dataset: str
    repeats: int
    accuracy_mean: float | None = None
    accuracy_std: float | None = None
    accuracy_max: float | None = None
    accuracy_median: float | None = None
    accuracy_min: float | None = None
    evals_mean: float
    evals_std: float
    evals_max: float
    evals_median: float
    evals_min: float
    loss_mean: float
    loss_std: float
    loss_max: float
    loss_median: float
    loss_min: float
    terminal_reasons: dict[str, int]


def parse_synthetic(value: str) -> tuple[str, int, float]:
    try:
        kind, size, noise = value.split(",")
        return kind.strip(), int(size), float(noise)
    except ValueError:
        raise ValueError(f"synthetic must look like kind,n,noise, got {value!r}") from None


@dataclass
class Problem:
    """Everything a repeat needs: the objective, its box and start, and the data for test accuracy."""

    objective: Objective
    bounds: Bounds
    x0: tuple[float, ...]
    names: list[str]
    train: Dataset | None = None
    test: Dataset | None = None
    scale: bool = False

    def test_accuracy(self, point) -> float | None:
        if self.test is None:
            return None
        train, test = self.train, self.test
        if self.scale:
            transform = minmax_scaler(train.features)
            train = replace(train, features=transform(train.features))
            test = replace(test, features=transform(test.features))
        C, gamma = (float(v) for v in point)
        return accuracy(fit_ensemble(train, C, gamma), test)


def build_problem(spec: ExperimentSpec) -> Problem:
    if spec.function is not None:
        analytic = get_problem(spec.function)
        bounds = Bounds(lower=spec.lower or analytic.bounds.lower, upper=spec.upper or analytic.bounds.upper)
        return Problem(
            objective=Objective(analytic.fn, name=analytic.name),
            bounds=bounds,
            x0=spec.x0 or analytic.x0,
            names=[f"x{j + 1}" for j in range(bounds.dim)],
        )

    validation = None
    if spec.synthetic is not None:
        kind, size, noise = parse_synthetic(spec.synthetic)
        train, test = stratified_split(make_synthetic(kind, size, noise, spec.seed), spec.test_fraction, spec.seed)
    else:
        train = parse_libsvm(Path(spec.dataset))
        extra = [parse_libsvm(Path(p)) for p in (spec.validation, spec.test) if p is not None]
        train, *extra = align_features(train, *extra)
        extra = [conform_labels(ds, train.label_table) for ds in extra]
        validation = extra.pop(0) if spec.validation is not None else None
        test = extra.pop(0) if spec.test is not None else None
        if test is None:
            train, test = stratified_split(train, spec.test_fraction, spec.seed)

    protocol = Holdout(validation) if validation is not None else StratifiedCV(spec.folds, spec.seed)
    return Problem(
        objective=objective_factory(train, protocol, scale=spec.scale),
        bounds=Bounds(lower=spec.lower or DEFAULT_LOWER, upper=spec.upper or DEFAULT_UPPER),
        x0=spec.x0 or DEFAULT_X0,
        names=["C", "gamma"],
        train=train,
        test=test,
        scale=spec.scale,
    )


def tune(spec: ExperimentSpec, problem: Problem, seed: int) -> tuple[Incumbent, RunTrace]:
    if spec.method in MADS_METHODS:
        config = TunerConfig.for_method(
            spec.method,
            xi=spec.xi,
            bounds=problem.bounds,
            x0=problem.x0,
            min_mesh=spec.min_mesh,
            max_evals=spec.max_evals or (DEFAULT_BASELINE_BUDGET if problem.train is not None else None),
            seed=seed,
            shrink_factor=spec.tau,
            workers=ORTHOMADS_THREADS,
        )
        return optimize(config, problem.objective)
    config = BaselineConfig(
        method=spec.method,
        bounds=problem.bounds,
        budget=spec.max_evals or DEFAULT_BASELINE_BUDGET,
        seed=seed,
        x0=problem.x0 if spec.method == "sa" else None,
        grid_axes=spec.grid_axes,
        workers=ORTHOMADS_THREADS,
    )
    return run_baseline(problem.objective, config)


def write_trace(trace: RunTrace, path: Path, names: list[str]) -> None:
    """Write the trace CSV through a temporary file so readers never see a partial one."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        trace.to_frame(names).to_csv(tmp, index=False, float_format=FLOAT_FORMAT)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_json(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


@task(name="run_repeat", log_prints=True, cache_policy=NO_CACHE)
def run_repeat(spec: ExperimentSpec, repeat: int) -> RepeatResult:
    """Tune once with seed = base seed + repeat and write trace_<repeat>.csv."""
    seed = spec.seed + repeat
    print(f"Repeat {repeat}: {spec.method} on {spec.label} (seed {seed})")
    problem = build_problem(spec)

    start = time.perf_counter()
    incumbent, trace = tune(spec, problem, seed)
    wall_time = time.perf_counter() - start

    trace_file = Path(spec.out) / f"trace_{repeat}.csv"
    write_trace(trace, trace_file, problem.names)
    result = RepeatResult(
        repeat=repeat,
        seed=seed,
        best_point=tuple(float(v) for v in incumbent.point),
        best_loss=float(incumbent.value),
        evaluations=len(trace),
        terminal_reason=str(trace.terminal_reason),
        accuracy=problem.test_accuracy(incumbent.point),
        trace_file=trace_file.name,
        wall_time=wall_time,
    )
    print(f"Repeat {repeat}: loss {result.best_loss:.6g} after {result.evaluations} evaluations ({result.terminal_reason})")
    return result


def _describe(values: pd.Series) -> dict[str, float]:
    return {
        "mean": float(values.mean()),
        "std": float(values.std(ddof=0)),
        "max": float(values.max()),
        "median": float(values.median()),
        "min": float(values.min()),
    }


@task(name="summarize", log_prints=True, cache_policy=NO_CACHE)
def summarize(spec: ExperimentSpec, results: list[RepeatResult]) -> SummaryRow:
    """Aggregate accuracy, evaluation counts and losses over the repeats."""
    frame = pd.DataFrame([r.model_dump() for r in results])
    row: dict[str, Any] = {"method": spec.method, "dataset": spec.label, "repeats": len(results)}
    if frame["accuracy"].notna().all():
        row.update({f"accuracy_{k}": v for k, v in _describe(frame["accuracy"].astype(float)).items()})
    row.update({f"evals_{k}": v for k, v in _describe(frame["evaluations"].astype(float)).items()})
    row.update({f"loss_{k}": v for k, v in _describe(frame["best_loss"].astype(float)).items()})
    row["terminal_reasons"] = {str(k): int(v) for k, v in frame["terminal_reason"].value_counts().sort_index().items()}
    return SummaryRow(**row)


def _remove_outputs(out: Path, repeats: int) -> None:
    for name in [SUMMARY_FILE, TIMING_FILE, *(f"trace_{r}.csv" for r in range(repeats))]:
        (out / name).unlink(missing_ok=True)


@flow(name="orthomads-run", log_prints=True, task_runner=ThreadPoolTaskRunner(max_workers=ORTHOMADS_THREADS))
def run_benchmark(spec: ExperimentSpec) -> SummaryRow:
    """Run every repeat, then write summary.json and timing.json into spec.out."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        # Step 1: repeats, on worker threads when ORTHOMADS_THREADS > 1
        futures = [run_repeat.submit(spec, r) for r in range(spec.repeats)]
        wait(futures)
        results = [f.result() for f in futures]

        # Step 2: aggregate
        summary = summarize(spec, results)

        # Step 3: outputs; wall times stay out of summary.json so reruns match byte for byte
        write_json(
            out / SUMMARY_FILE,
            {
                "summary": summary.model_dump(),
                "repeats": [r.model_dump(exclude={"wall_time"}) for r in results],
            },
        )
        write_json(out / TIMING_FILE, {str(r.repeat): r.wall_time for r in results})
        print(f"Summary written to {out / SUMMARY_FILE}")
        return summary
    except Exception as e:
        print(f"Benchmark failed: {e}")
        _remove_outputs(out, spec.repeats)
        raise e


def _sweep_value(axis: SweepAxis, value) -> Any:
    if axis == "xi":
        return float(value)
    return tuple(float(v) for v in np.atleast_1d(value))


def _sweep_label(axis: SweepAxis, value) -> str:
    return "_".join(f"{float(v):g}" for v in np.atleast_1d(value))


@flow(name="orthomads-sweep", log_prints=True)
def sweep_benchmark(spec: ExperimentSpec, axis: SweepAxis, values: list[Any] | None = None) -> pd.DataFrame:
    """Run the benchmark once per value of ``axis``; a failed value is recorded and skipped."""
    values = SWEEP_PRESETS[axis] if values is None else values
    if not values:
        raise ValueError("sweep needs at least one value")

    rows = []
    for value in values:
        label = _sweep_label(axis, value)
        try:
            sub = ExperimentSpec.model_validate(
                {**spec.model_dump(), axis: _sweep_value(axis, value), "out": Path(spec.out) / f"{axis}={label}"}
            )
            summary = run_benchmark(sub)
            rows.append({"axis": axis, "value": label, **summary.model_dump(exclude={"terminal_reasons"}), "error": None})
        except Exception as e:
            print(f"Sweep value {axis}={label} failed: {e}")
            rows.append({"axis": axis, "value": label, "error": str(e)})

    table = pd.DataFrame(rows)
    Path(spec.out).mkdir(parents=True, exist_ok=True)
    table.to_csv(Path(spec.out) / SWEEP_FILE, index=False, float_format=FLOAT_FORMAT)
    return table


# Criterion -> (summary column, rank 1 goes to the smallest value)
RANK_CRITERIA = {
    "best_mean": ("accuracy_mean", False),
    "worst_mean": ("accuracy_mean", True),
    "best_max": ("accuracy_max", False),
}


def rank_methods(summaries: list[SummaryRow] | pd.DataFrame, tie_method: TieMethod = "average") -> pd.DataFrame:
    """Average per-dataset rank of every method, and the ordinal rank of that average.

    Every method needs a row for every dataset.
    """
    table = summaries if isinstance(summaries, pd.DataFrame) else pd.DataFrame([s.model_dump() for s in summaries])
    if table.empty:
        raise RankingError("no summaries to rank")
    if table.duplicated(["method", "dataset"]).any():
        raise RankingError("more than one summary for some (method, dataset) pair")

    columns = {}
    for criterion, (column, ascending) in RANK_CRITERIA.items():
        pivot = table.pivot(index="dataset", columns="method", values=column).astype(float)
        rows, cols = np.nonzero(pivot.isna().to_numpy())
        gaps = [f"{pivot.columns[c]}/{pivot.index[r]}" for r, c in zip(rows, cols)]
        if gaps:
            raise RankingError(f"missing {column} for {', '.join(sorted(gaps))}")
        ranks = pivot.rank(axis=1, method=tie_method, ascending=ascending)
        average = ranks.mean(axis=0)
        columns[f"{criterion}_avg_rank"] = average
        columns[f"{criterion}_rank"] = average.rank(method="min").astype(int)

    ranking = pd.DataFrame(columns).sort_values(["best_mean_avg_rank"], kind="stable")
    ranking.index.name = "method"
    return ranking


def load_summary(path: Path) -> SummaryRow:
    data = json.loads(Path(path).read_text())
    return SummaryRow.model_validate(data["summary"])


@flow(name="orthomads-rank", log_prints=True)
def rank_benchmark(summary_files: list[Path], out: Path | None = None, tie_method: TieMethod = "average") -> pd.DataFrame:
    """Rank methods across datasets from summary.json files."""
    ranking = rank_methods([load_summary(p) for p in summary_files], tie_method)
    if out is not None:
        ranking.to_csv(out, float_format=FLOAT_FORMAT)
    print(ranking.to_string())
    return ranking
