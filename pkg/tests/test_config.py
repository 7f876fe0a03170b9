import json
from pathlib import Path

import pytest

from fisherflow import config
from fisherflow import errors
from fisherflow import integrator


def _write(tmp_path, text: str):
    path = tmp_path / "config.json"
    path.write_text(text)
    return path


def test_empty_file_gives_the_defaults(tmp_path):
    cfg = config.validate_config(_write(tmp_path, ""))
    assert cfg.get_experiment() == "linear-equivalence"
    assert cfg.get_gh_degree() == 4
    assert cfg.get_seed() == 0
    assert cfg.get_ode().get_step() == 1e-3
    assert cfg.get_ode().get_method() is integrator.Method.RK4


def test_experiment_defaults_carry_provenance():
    cfg = config.build_config("gmm-prior")
    echo = cfg.echo()
    assert echo["config"]["components"] == 20
    assert echo["provenance"]["components"] == "Experiment setups > Gaussian-mixture prior: mixture size"
    assert echo["provenance"]["seed"] == config.LIBRARY_DEFAULT
    assert echo["provenance"]["horizon"] == config.SOLVER_DEFAULT


def test_flags_override_file_values():
    cfg = config.build_config(None, {"experiment": "nonlinear-range", "seed": 3, "components": 5},
                              {"seed": 9, "components": None})
    assert cfg.get_experiment() == "nonlinear-range"
    assert cfg.get_seed() == 9
    assert cfg.get_components() == 5
    assert cfg.echo()["provenance"]["seed"] == "command line"
    assert cfg.echo()["provenance"]["components"] == "config file"


def test_command_line_experiment_wins():
    cfg = config.build_config("funnel", {"experiment": "logreg"})
    assert cfg.get_experiment() == "funnel"
    assert cfg.get("transform") == "triangular"


def test_integers_are_accepted_for_decimals():
    cfg = config.build_config("gmm-prior", {"horizon": 3})
    assert cfg.get_horizon() == 3.0
    assert isinstance(cfg.get_horizon(), float)


@pytest.mark.parametrize("values,key", [
    ({"gh_degree": 0}, "gh_degree"),
    ({"gh_degree": 65}, "gh_degree"),
    ({"step": -0.1}, "step"),
    ({"seed": -1}, "seed"),
    ({"seed": 2 ** 64}, "seed"),
    ({"mode": "exact"}, "mode"),
    ({"method": "euler"}, "method"),
    ({"components": 0}, "components"),
    ({"dim": 3}, "dim"),
    ({"mc_count": 1}, "mc_count"),
    ({"transform": "spline"}, "transform"),
    ({"transform": "planar", "num_transforms": 0}, "num_transforms"),
    ({"transform": "planar", "num_transforms": 1, "mode": "analytic"}, "mode"),
    ({"gamma": -1.0}, "gamma"),
])
def test_out_of_range_values_name_the_key(values, key):
    with pytest.raises(errors.ConfigError) as info:
        config.build_config("gmm-prior", values)
    assert info.value.key == key
    assert key in str(info.value)


@pytest.mark.parametrize("values,key", [
    ({"seed": True}, "seed"),
    ({"gh_degree": 4.0}, "gh_degree"),
    ({"mode": 1}, "mode"),
    ({"horizon": "long"}, "horizon"),
])
def test_wrong_types_name_the_key(values, key):
    with pytest.raises(errors.ConfigError) as info:
        config.build_config("gmm-prior", values)
    assert info.value.key == key


def test_unknown_key_gets_a_suggestion():
    with pytest.raises(errors.ConfigError) as info:
        config.build_config("gmm-prior", {"ghdegree": 4})
    assert info.value.key == "ghdegree"
    assert "gh_degree" in str(info.value)


def test_unknown_experiment():
    with pytest.raises(errors.ConfigError) as info:
        config.build_config("bootstrap")
    assert info.value.key == "experiment"


def test_funnel_dimension_may_grow():
    assert config.build_config("funnel", {"dim": 10}).get_dim() == 10
    with pytest.raises(errors.ConfigError):
        config.build_config("funnel", {"dim": 1})


def test_invalid_json_reports_the_line(tmp_path):
    path = _write(tmp_path, '{\n  "seed": 1,\n  "gh_degree": \n}')
    with pytest.raises(errors.ConfigError) as info:
        config.load_config_file(path)
    assert "line 4" in str(info.value)


def test_non_object_json(tmp_path):
    with pytest.raises(errors.ConfigError):
        config.load_config_file(_write(tmp_path, "[1, 2]"))


def test_missing_file(tmp_path):
    with pytest.raises(errors.ConfigError):
        config.load_config_file(tmp_path / "absent.json")


def test_hash_ignores_the_output_directory():
    first = config.build_config("gmm-prior", {"output_dir": "a"})
    second = config.build_config("gmm-prior", {"output_dir": "b"})
    third = config.build_config("gmm-prior", {"seed": 1})
    assert first.config_hash() == second.config_hash()
    assert first.config_hash() != third.config_hash()
    assert len(first.config_hash()) == 16


def test_output_directory_default():
    assert str(config.build_config("logreg").get_output_dir()) == "runs/logreg"


def test_echo_is_json_serialisable():
    echo = config.build_config("funnel").echo()
    assert json.loads(json.dumps(echo)) == echo


def test_setup_provenance_names_a_readme_section():
    readme = (Path(__file__).parents[1] / "README.md").read_text(encoding="utf-8")
    for defaults in config.EXPERIMENT_DEFAULTS.values():
        for _, provenance in defaults.values():
            section, _ = provenance.split(":", 1)
            heading, subsection = section.split(" > ")
            assert f"## {heading}" in readme
            assert f"### {subsection}" in readme


def test_logreg_and_funnel_use_the_adaptive_solver():
    logreg = config.build_config("logreg")
    funnel = config.build_config("funnel")
    assert logreg.get_ode().get_method() is integrator.Method.RK45
    assert logreg.get("mode") == "analytic"
    assert funnel.get_ode().get_method() is integrator.Method.RK45
    assert funnel.get("mode") == "stein-psd"


def test_clipped_stein_mode_is_allowed_with_a_transform():
    cfg = config.build_config("gmm-prior", {"transform": "planar", "num_transforms": 2, "mode": "stein-psd"})
    assert cfg.get("mode") == "stein-psd"
