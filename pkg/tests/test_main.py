import json
import sqlite3

import numpy as np
import pytest

from fisherflow import main


def _config_file(tmp_path, values: dict):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(values))
    return str(path)


def test_validate_prints_the_echo(tmp_path, capsys):
    assert main.main(["validate", "--config", _config_file(tmp_path, {"experiment": "gmm-prior"})]) == main.EXIT_OK
    echo = json.loads(capsys.readouterr().out)
    assert echo["config"]["components"] == 20
    assert echo["provenance"]["experiment"] == "config file"


def test_validate_reports_a_bad_value(tmp_path, capsys):
    path = _config_file(tmp_path, {"gh_degree": 0})
    assert main.main(["validate", "--config", path]) == main.EXIT_CONFIG_ERROR
    assert "gh_degree" in capsys.readouterr().err


def test_run_with_a_bad_config_is_recorded(tmp_path, capsys):
    registry = str(tmp_path / "runs.db")
    path = _config_file(tmp_path, {"ghdegree": 4})
    code = main.main(["run", "gmm-prior", "--config", path, "--registry", registry, "--seed", "5"])
    assert code == main.EXIT_CONFIG_ERROR
    assert "gh_degree" in capsys.readouterr().err
    with sqlite3.connect(registry) as connection:
        rows = connection.execute("SELECT experiment, seed, exit_status FROM runs").fetchall()
    assert rows == [("gmm-prior", "5", main.EXIT_CONFIG_ERROR)]


@pytest.mark.parametrize("failure", [ValueError("bad shape"), np.linalg.LinAlgError("singular"),
                                     FloatingPointError("overflow")])
def test_unexpected_failures_exit_as_flow_errors_and_are_recorded(tmp_path, capsys, monkeypatch, failure):
    def fail(_):
        raise failure

    monkeypatch.setattr(main.experiments, "run_experiment", fail)
    registry = str(tmp_path / "runs.db")
    code = main.main(["run", "gmm-prior", "--registry", registry, "--seed", "3", "--out", str(tmp_path / "out")])
    assert code == main.EXIT_FLOW_ERROR
    assert type(failure).__name__ in capsys.readouterr().err
    with sqlite3.connect(registry) as connection:
        rows = connection.execute("SELECT experiment, seed, exit_status FROM runs").fetchall()
    assert rows == [("gmm-prior", "3", main.EXIT_FLOW_ERROR)]


def test_flag_out_of_range(tmp_path):
    code = main.main(["run", "gmm-prior", "--gh-degree", "70", "--no-registry", "--out", str(tmp_path)])
    assert code == main.EXIT_CONFIG_ERROR


def test_unknown_experiment_is_rejected_by_the_parser():
    with pytest.raises(SystemExit):
        main.main(["run", "bootstrap"])


def test_flags_map_onto_config_keys():
    args = main.build_parser().parse_args(["run", "funnel", "--num-transforms", "2", "--out", "x"])
    for flag in main.FLAG_KEYS:
        assert hasattr(args, flag)
    assert args.num_transforms == 2


@pytest.mark.slow
def test_linear_equivalence_run(tmp_path, capsys):
    out = tmp_path / "linear"
    registry = str(tmp_path / "runs.db")
    code = main.main(["run", "linear-equivalence", "--horizon", "3", "--out", str(out), "--registry", registry])
    assert code == main.EXIT_OK
    printed = capsys.readouterr().out
    assert "max_particle_deviation" in printed
    assert "Parameters saved successfully." in printed
    written = json.loads((out / "report.json").read_text())
    assert written["results"]["max_particle_deviation"] < 1e-5
    assert "checkpoints/gaussian_0000.json" in written["files"]
    assert (out / "particles_final.csv").read_text().splitlines()[0] == "x_1,x_2"
