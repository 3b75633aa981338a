import pytest

from app import build_parser, main
from utils.io import REPORT_COLUMNS, write_rows


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("PLATEBEAD_TRACING", "PLATEBEAD_GRID", "PLATEBEAD_MESH", "PLATEBEAD_THREADS"):
        monkeypatch.delenv(name, raising=False)


def test_parser_defaults():
    args = build_parser().parse_args(["optimize", "--out", "runs/x"])
    assert args.method == ["flow"]
    assert args.nfe == 4000 and args.k == 4 and args.step == 0.05
    assert not args.no_rescale
    assert args.validate_df == 1.0 and args.trace is None


def test_parser_trace_and_mesh_options():
    args = build_parser().parse_args(["optimize", "--out", "runs/x", "--trace", "runs/x/trace", "--validate-df", "0.5"])
    assert str(args.trace) == "runs/x/trace" and args.validate_df == 0.5
    args = build_parser().parse_args(["validate", "--pattern", "p.pgm", "--out", "o", "--mesh-obj"])
    assert args.mesh_obj


def test_main_report(tmp_path):
    write_rows(tmp_path / "run" / "comparison.csv", REPORT_COLUMNS,
               [{"method": "random", "seed": 0, "predicted": 1, "validated": 2, "gap": 1, "nfe": 3,
                 "plates": 1, "wall_time": 0.1}])
    assert main(["--threads", "1", "report", "--runs", str(tmp_path / "run"), "--out", str(tmp_path / "sum")]) == 0


def test_main_usage_error(tmp_path):
    assert main(["--threads", "1", "optimize", "--method", "random", "--out", str(tmp_path)]) == 2


def test_main_domain_error(tmp_path):
    code = main(["--threads", "1", "validate", "--pattern", str(tmp_path / "missing.pgm"), "--out", str(tmp_path)])
    assert code == 1
