import json

import numpy as np
import pytest

from fisherflow import report


@pytest.fixture
def run():
    run = report.RunReport({"config": {"seed": 7}, "provenance": {}}, "abc123", 7)
    run.add_point(0.0, "kl", 1.0 / 3.0)
    run.add_point(0.5, "kl", 0.25)
    run.add_point(0.0, "elbo", -2.0)
    run.set_result("final_kl", np.float64(0.25))
    run.set_result("modes", [True, False])
    return run


def test_format_number_is_lossless():
    assert report.format_number(1.0 / 3.0) == "0.33333333333333331"
    assert float(report.format_number(np.pi)) == np.pi
    assert report.format_number(2) == "2"


def test_series_and_records(run):
    assert run.get_series("kl") == [(0.0, 1.0 / 3.0), (0.5, 0.25)]
    records = run.metric_records()
    assert records == [{"metric": "final_kl", "value": 0.25, "config_hash": "abc123", "seed": 7}]


def test_write_artifacts(run, tmp_path):
    run.set_particles(np.array([[1.0, 2.0], [3.0, 4.0]]))
    run.set_final_params({"mean": np.array([0.5, 1.5])})
    run.add_checkpoint("flow", {"t": 0.0, "mean": np.zeros(2)})
    run.add_checkpoint("flow", {"t": 1.0, "mean": np.ones(2)})
    run.add_file("dataset.csv")
    run.set_wall_clock(1.5)
    directory = run.write(tmp_path / "out")

    lines = (directory / "metrics.csv").read_text().splitlines()
    assert lines[0] == "t,metric,value"
    assert lines[1] == "0,kl,0.33333333333333331"
    assert len(lines) == 4
    assert (directory / "particles_final.csv").read_text().splitlines() == ["x_1,x_2", "1,2", "3,4"]
    assert json.loads((directory / "checkpoints" / "flow_0001.json").read_text()) == {"mean": [1.0, 1.0], "t": 1.0}

    written = json.loads((directory / "report.json").read_text())
    assert written["files"] == ["metrics.csv", "particles_final.csv", "checkpoints/flow_0000.json",
                                "checkpoints/flow_0001.json", "dataset.csv"]
    assert written["results"] == {"final_kl": 0.25, "modes": [True, False]}
    assert written["final_params"] == {"mean": [0.5, 1.5]}
    assert written["wall_clock_seconds"] == 1.5
    assert written["config_hash"] == "abc123"


def test_checkpoint_labels_count_separately(tmp_path):
    run = report.RunReport({}, "h", 0)
    run.add_checkpoint("flow_k1", {"t": 0.0})
    run.add_checkpoint("flow_k10", {"t": 0.0})
    run.add_checkpoint("flow_k1", {"t": 1.0})
    run.write(tmp_path)
    names = sorted(path.name for path in (tmp_path / "checkpoints").iterdir())
    assert names == ["flow_k10_0000.json", "flow_k1_0000.json", "flow_k1_0001.json"]


def test_report_without_particles(tmp_path):
    run = report.RunReport({}, "h", 0)
    run.write(tmp_path)
    assert not (tmp_path / "particles_final.csv").exists()
    assert json.loads((tmp_path / "report.json").read_text())["files"] == ["metrics.csv"]
