import json
from pathlib import Path

import numpy as np
import pytest

from homoglab import cli, lab
from homoglab.errors import InvalidInputError, InvalidParameterError, NonConvergenceError
from homoglab.lab import ExperimentConfig, reference_abar


def run_cli(tmp_path, kind, cfg=None, extra=()):
    args = [kind, "--out", str(tmp_path / "out")]
    if cfg is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        args += ["--config", str(path)]
    return cli.main(args + list(extra))


def files(path: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


# ----------------------------------------------------------------- config
def test_config_defaults_and_lambda_key():
    cfg = ExperimentConfig.from_dict({"kind": "solve", "lambda": 2.0, "dim": 2, "eps": [0.25]})
    assert cfg.lam == 2.0 and cfg.resolution == 257
    d = cfg.to_dict()
    assert d["lambda"] == 2.0 and "lam" not in d
    assert ExperimentConfig.from_dict(d).to_dict() == d
    assert ExperimentConfig.from_dict({"kind": "oned-rates"}).eps == lab.DEFAULT_EPS["oned-rates"]


@pytest.mark.parametrize("data,err", [
    ({"kind": "nope"}, InvalidInputError),
    ({"kind": "solve", "colour": 1}, InvalidInputError),
    ({"eps": [0.1]}, InvalidInputError),
    ({"kind": "cell", "eps": [1.5]}, InvalidInputError),
    ({"kind": "solve", "resolution": 100}, InvalidInputError),
    ({"kind": "solve", "dim": 3}, InvalidInputError),
    ({"kind": "solve", "fixture": "marble"}, InvalidInputError),
    ({"kind": "solve", "fixture": "corner", "field": {"kind": "constant"}}, InvalidInputError),
    ({"kind": "solve", "threads": 0}, InvalidInputError),
    ({"kind": "solve", "seeds": []}, InvalidInputError),
    ({"kind": "solve", "regularity": {"theta": 2.0}}, InvalidParameterError),
    ({"kind": "solve", "resolution": 257, "eps": [1 / 64]}, InvalidParameterError),
])
def test_config_validation(data, err):
    with pytest.raises(err):
        ExperimentConfig.from_dict(data)


def test_config_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidInputError):
        ExperimentConfig.load(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(InvalidInputError):
        ExperimentConfig.load(bad)


def test_reference_abar_sources():
    cfg = ExperimentConfig.from_dict({"kind": "cell", "dim": 2})
    abar, src = reference_abar(cfg, cfg.coefficient_field())
    assert src == "analytic" and np.allclose(abar, np.diag([4 / 3, 1.5]))
    cfg = ExperimentConfig.from_dict({"kind": "cell", "dim": 2, "abar": [[1.0, 0.0], [0.0, 2.0]]})
    assert reference_abar(cfg, cfg.coefficient_field())[1] == "config"
    cfg = ExperimentConfig.from_dict({"kind": "cell", "dim": 2, "fixture": "inclusion"})
    abar, src = reference_abar(cfg, cfg.coefficient_field())
    assert src.startswith("computed") and abar[0, 0] == pytest.approx(abar[1, 1])


# --------------------------------------------------------------- the CLI
def test_cli_solve_1d(tmp_path):
    assert run_cli(tmp_path, "solve", {"resolution": 257, "eps": [0.25, 1 / 16]}) == 0
    out = tmp_path / "out"
    assert {"solution_0.csv", "solution_1.csv", "solution_0.svg", "summary.json"} <= set(files(out))
    s = json.loads((out / "summary.json").read_text())
    assert s["config"]["kind"] == "solve" and s["config"]["eps"] == [0.25, 0.0625]
    assert all("wall_time" not in row["report"] for row in s["solves"])
    assert abs(s["solves"][0]["free_boundary"] - 2.367) < 0.05


def test_cli_solve_2d(tmp_path):
    cfg = {"dim": 2, "resolution": 33, "eps": [0.125], "fixture": "inclusion"}
    assert run_cli(tmp_path, "solve", cfg) == 0
    assert (tmp_path / "out" / "solution_0.svg").read_text().lstrip().startswith("<?xml")


def test_cli_flags_override_config(tmp_path):
    assert run_cli(tmp_path, "oned-rates", {"eps": [0.5]}, ["--eps", "0.1,0.05,0.02", "--threads", "2"]) == 0
    s = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert s["config"]["eps"] == [0.1, 0.05, 0.02] and s["config"]["threads"] == 2
    assert set(s["fits"]) == {"gap", "linf_gap"}


def test_cli_cell(tmp_path):
    cfg = {"eps": [1 / 3, 1 / 9, 1 / 27], "cell_resolution": 4}
    assert run_cli(tmp_path, "cell", cfg) == 0
    out = tmp_path / "out"
    assert {"error_curve.csv", "slopes.json", "error_curve.svg", "corrector_set.json"} <= set(files(out))
    slopes = json.loads((out / "slopes.json").read_text())
    assert slopes["E_vs_eps"]["slope"] == pytest.approx(1.0, abs=1e-6)


def test_cli_random_cell(tmp_path):
    cfg = {"dim": 2, "eps": [1 / 3, 1 / 9], "cell_resolution": 2, "m": 1, "seeds": [1, 2],
           "field": {"kind": "checkerboard-random", "lam": 2.0, "phases": [[1.0], [2.0]], "extent": 9}}
    assert run_cli(tmp_path, "cell", cfg) == 0
    rows = (tmp_path / "out" / "error_curve.csv").read_text().splitlines()
    assert rows[0] == "epsilon,E,m,seed" and len(rows) == 1 + 2 * 2


def test_cli_homogenize_sweep(tmp_path):
    assert run_cli(tmp_path, "homogenize-sweep", {"resolution": 1025, "eps": [0.25, 0.125, 0.0625]}) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(lab.SWEEP_COLUMNS) and len(lines) == 4
    slopes = json.loads((tmp_path / "out" / "slopes.json").read_text())
    assert slopes["l2_gap"]["slope"] > 0.5


def test_cli_fb_diagnostics(tmp_path):
    assert run_cli(tmp_path, "fb-diagnostics", {"resolution": 1025}) == 0
    out = tmp_path / "out"
    assert {"contact.csv", "density.csv", "flatness.csv", "flatness.svg", "solution.svg"} <= set(files(out))
    s = json.loads((out / "summary.json").read_text())
    assert "classification" in s and s["halfspace"]["error"] >= 0


def test_cli_example2(tmp_path):
    assert run_cli(tmp_path, "example2", {"eps": [1 / 9, 1 / 27]}) == 0
    s = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert s["x_eps"][0] == pytest.approx(-0.373029302832714, abs=1e-10)
    assert s["field_used"]["kind"] == "smooth-1d"


def test_cli_validation_exit_code(tmp_path, capsys):
    assert run_cli(tmp_path, "solve", {"resolution": 100}) == 2
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err["error"] == "InvalidInputError" and "power of two" in err["message"]
    assert "InvalidInputError" in capsys.readouterr().err


def test_cli_missing_config(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2


def test_cli_nonconvergence_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NonConvergenceError("stalled", residual=0.5, iterations=7)

    monkeypatch.setattr(lab, "solve_vi", boom)
    assert run_cli(tmp_path, "solve", {"resolution": 257}) == 3
    err = json.loads((tmp_path / "out" / "error.json").read_text())
    assert err == {"error": "NonConvergenceError", "message": "stalled", "residual": 0.5, "iterations": 7}


def test_outputs_byte_identical(tmp_path, monkeypatch):
    cfg = {"resolution": 1025, "eps": [0.25, 0.125, 0.0625]}
    got = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        monkeypatch.chdir(d)
        (d / "cfg.json").write_text(json.dumps(cfg))
        assert cli.main(["homogenize-sweep", "--config", "cfg.json", "--out", "out"]) == 0
        got.append(files(d / "out"))
    assert got[0] == got[1]


def test_threads_do_not_change_results(tmp_path):
    outs = []
    for t in (1, 3):
        d = tmp_path / f"t{t}"
        d.mkdir()
        assert run_cli(d, "homogenize-sweep", {"resolution": 1025, "eps": [0.25, 0.125, 0.0625], "threads": t}) == 0
        outs.append(files(d / "out"))
    for name in ("sweep.csv", "slopes.json", "sweep.svg"):
        assert outs[0][name] == outs[1][name]
