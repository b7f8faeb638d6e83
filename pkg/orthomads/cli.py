import argparse
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from orthomads.bench import ExperimentSpec, rank_benchmark, run_benchmark, sweep_benchmark
from orthomads.exceptions import OrthoMadsError
from orthomads.settings import DEFAULT_FOLDS, DEFAULT_MIN_MESH, DEFAULT_SHRINK_FACTOR, DEFAULT_XI

EXIT_USAGE = 2


def floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _add_experiment_args(parser: argparse.ArgumentParser) -> None:
    source = parser.add_argument_group("data source (give exactly one)")
    source.add_argument("--dataset", type=Path, help="LIBSVM training file")
    source.add_argument("--synthetic", help="kind,n,noise with kind in blobs, two_moons, double_ring")
    source.add_argument("--function", help="analytic problem: sphere, rosenbrock, double_well, rastrigin")
    parser.add_argument("--validation", type=Path, help="LIBSVM validation file (holdout protocol)")
    parser.add_argument("--test", type=Path, help="LIBSVM test file for reported accuracy")
    parser.add_argument("--folds", type=int, default=DEFAULT_FOLDS)
    parser.add_argument("--scale", action="store_true", help="min-max scale features on the training part")
    parser.add_argument("--method", default="mads-nm-vns", choices=["mads", "mads-nm", "mads-nm-vns", "grid", "random", "sa"])
    parser.add_argument("--lower", type=floats)
    parser.add_argument("--upper", type=floats)
    parser.add_argument("--x0", type=floats)
    parser.add_argument("--min-mesh", type=floats, default=(DEFAULT_MIN_MESH,))
    parser.add_argument("--xi", type=float, default=DEFAULT_XI, help="fraction of the budget granted to VNS")
    parser.add_argument("--tau", type=float, default=DEFAULT_SHRINK_FACTOR)
    parser.add_argument("--max-evals", type=int)
    parser.add_argument("--grid-axes", choices=["even", "published"], default="even")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--repeats", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("bench-out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthomads-bench", description="Tune RBF SVM hyperparameters with Ortho-MADS and baselines."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    _add_experiment_args(commands.add_parser("run", help="run one benchmark"))

    sweep = commands.add_parser("sweep", help="run one benchmark per value of a parameter")
    _add_experiment_args(sweep)
    sweep.add_argument("--axis", required=True, choices=["xi", "min_mesh", "x0"])
    sweep.add_argument(
        "--values",
        help="values separated by ';', coordinates of one x0 by ',' (default: the published grid)",
    )

    rank = commands.add_parser("rank", help="rank methods across datasets")
    rank.add_argument("summaries", nargs="+", type=Path, help="summary.json files")
    rank.add_argument("--tie-method", choices=["average", "dense"], default="average")
    rank.add_argument("--out", type=Path, help="write the ranking CSV here")
    return parser


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    fields = {
        name: getattr(args, name)
        for name in ExperimentSpec.model_fields
        if getattr(args, name, None) is not None
    }
    return ExperimentSpec(**fields)


def parse_sweep_values(text: str | None) -> list | None:
    if text is None or text == "published":
        return None
    return [floats(v) if "," in v else float(v) for v in text.split(";") if v.strip()]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        match args.command:
            case "run":
                run_benchmark(spec_from_args(args))
            case "sweep":
                sweep_benchmark(spec_from_args(args), args.axis, parse_sweep_values(args.values))
            case "rank":
                rank_benchmark(args.summaries, args.out, args.tie_method)
    except (ValidationError, OrthoMadsError, ValueError, OSError, argparse.ArgumentTypeError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
