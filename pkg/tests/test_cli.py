import csv
import io

import pytest

from chebfsai import __version__, cli, experiments
from chebfsai.experiments import RateReport, Status
from chebfsai.matrix_io import read_matrix


def _rows(text):
    body = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(body))))


def test_solve_row_count(tmp_path):
    out = tmp_path / "rates.csv"
    cli.main(["solve", "--problem", "biharmonic", "--levels", "2..4", "--p", "2", "--tmax", "4", "--k", "1..5", "--out", str(out)])
    text = out.read_text()
    assert text.startswith(f"# chebfsai {__version__}\n")
    rows = _rows(text)
    assert [int(r["k"]) for r in rows] == [1, 2, 3, 4, 5]
    assert set(rows[0]) == {"k", "a4_r0_L2_norm", "a4_r0_energy_norm", "a4_r0_residual"}
    assert all(0.0 < float(r["a4_r0_energy_norm"]) < 1.0 for r in rows)


def test_header_echoes_parameters(tmp_path):
    out = tmp_path / "s.csv"
    cli.main(["sanity", "--levels", "2..3", "--tmax", "2..3", "--k", "2", "--nest", "1", "--out", str(out)])
    head = out.read_text().splitlines()[1]
    for item in ("problem=fd", "levels=2..3", "tmax=2..3", "nest=1", "seed=42", "smoother=cheb4"):
        assert item in head.split()
    assert _rows(out.read_text())[0].keys() >= {"a2_r1_L2_norm", "a3_r1_residual"}


def test_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["sanity", "--levels", "2..4", "--tmax", "3", "--k", "1..3", "--seed", "5"]
    cli.main(args + ["--out", str(a)])
    cli.main(args + ["--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_neighborhood_histogram(capsys):
    cli.main(["neighborhood", "--problem", "anisotropic", "--theta", "60", "--kappa", "10", "--levels", "3", "--tmax", "3"])
    text = capsys.readouterr().out
    assert "principal_angle_deg=" in text
    rows = _rows(text)
    freq = {(int(r["dx"]), int(r["dy"])): float(r["frequency"]) for r in rows}
    assert freq[(0, 0)] == 1.0
    assert all(0.0 < f <= 1.0 for f in freq.values())


def test_assemble_exports(tmp_path):
    cli.main(["assemble", "--levels", "1..2", "--out", str(tmp_path)])
    A = read_matrix(tmp_path / "A.mtx")
    P = read_matrix(tmp_path / "P1.mtx")
    assert A.shape[0] == P.shape[0]
    assert (tmp_path / "manifest.txt").read_text().startswith("# chebfsai")


def test_diverged_marker(monkeypatch):
    def fake(*args, **kwargs):
        return RateReport(0.5, 2.0, 0.7, 3, Status.DIVERGED, [], 3)

    monkeypatch.setattr(experiments, "measure_rates", fake)
    prob, Ps = experiments.fd_biharmonic(8, 2)
    cfg = cli.validate(cli.build_parser().parse_args(["sanity", "--levels", "2..3", "--k", "1"]))
    names, rows = cli.rate_rows(cfg, prob, Ps)
    assert rows[0][1:] == [float("inf"), 2.0, float("inf")]


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--levels", "4..2"],
        ["solve", "--levels", "3..3"],
        ["solve", "--k", "0..2"],
        ["solve", "--tmax", "x"],
        ["solve", "--kappa", "0.5"],
        ["solve", "--tau", "2"],
        ["sanity", "--levels", "1..3"],
        ["neighborhood", "--problem", "fd"],
        ["assemble", "--levels", "1..2"],
        ["solve", "--smoother", "jacobi"],
    ],
)
def test_validation_errors_exit_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code != 0
    assert "error" in capsys.readouterr().err
