import json
from pathlib import Path

import pytest

from orthomads.cli import build_parser, main, parse_sweep_values, spec_from_args

pytestmark = pytest.mark.usefixtures("prefect_harness")


def _error_line(stderr: str) -> dict:
    lines = [line for line in stderr.splitlines() if line.startswith('{"error"')]
    return json.loads(lines[-1])


def test_run_on_sphere_converges(tmp_path: Path) -> None:
    out = tmp_path / "sphere"
    code = main(["run", "--function", "sphere", "--method", "mads", "--max-evals", "500", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())["summary"]
    assert summary["terminal_reasons"] == {"mesh_converged": 1}


def test_bad_input_exits_with_a_json_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["run", "--function", "sphere", "--x0", "500,500", "--out", str(tmp_path)])
    assert code == 2
    error = _error_line(capsys.readouterr().err)
    assert set(error) == {"error", "message"}


def test_missing_dataset_file_is_reported(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = main(["run", "--dataset", str(tmp_path / "nope.svm"), "--out", str(tmp_path)])
    assert code == 2
    error = _error_line(capsys.readouterr().err)
    assert error["error"] == "ValidationError"
    assert "nope.svm" in error["message"]


def test_spec_from_args_keeps_defaults_for_unset_options() -> None:
    args = build_parser().parse_args(["run", "--synthetic", "blobs,10,0.2", "--x0", "1,2", "--seed", "3"])
    spec = spec_from_args(args)
    assert spec.synthetic == "blobs,10,0.2"
    assert spec.x0 == (1.0, 2.0)
    assert spec.seed == 3
    assert spec.lower is None
    assert spec.method == "mads-nm-vns"


@pytest.mark.parametrize(
    ("text", "values"),
    [
        (None, None),
        ("published", None),
        ("0.25;0.5", [0.25, 0.5]),
        ("1,2;3,4", [(1.0, 2.0), (3.0, 4.0)]),
    ],
)
def test_parse_sweep_values(text: str | None, values: list | None) -> None:
    assert parse_sweep_values(text) == values


def test_non_numeric_option_is_a_usage_error() -> None:
    with pytest.raises(SystemExit):
        main(["run", "--function", "sphere", "--x0", "a,b"])
