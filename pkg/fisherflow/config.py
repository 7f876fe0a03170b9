"""
Experiment configuration: schema, per-experiment defaults, validation and merging.

Values merge with precedence flags > JSON file > defaults. Every default that belongs to an
experiment setup carries a provenance tag that the config echo reports.

Imports:
    difflib
    hashlib
    json
    errors: Exception hierarchy of the library.
    integrator: ODE solver settings.
    quadrature: Degree limits.

Classes:
    ExperimentConfig

Functions:
    load_config_file, build_config, validate_config
"""

import difflib
import hashlib
import json
import logging
from pathlib import Path

from fisherflow import errors
from fisherflow import integrator
from fisherflow import quadrature

LOGGER = logging.getLogger(__name__)

EXPERIMENTS: tuple[str, ...] = ("linear-equivalence", "gmm-prior", "nonlinear-range", "logreg", "funnel")
MODES: tuple[str, ...] = ("stein", "stein-psd", "analytic")
STEIN_MODES: tuple[str, ...] = ("stein", "stein-psd")
TRANSFORMS: tuple[str, ...] = ("none", "planar", "radial", "triangular")
TWO_DIMENSIONAL: tuple[str, ...] = ("linear-equivalence", "gmm-prior", "nonlinear-range")

SOLVER_DEFAULT: str = "solver default"
LIBRARY_DEFAULT: str = "library default"

# key: (type, default)
SCHEMA: dict[str, tuple[type | tuple[type, ...], object]] = {
    "experiment": (str, "linear-equivalence"),
    "seed": (int, 0),
    "components": (int, 1),
    "gh_degree": (int, 4),
    "mc_count": ((int, type(None)), None),
    "mode": (str, "stein"),
    "method": (str, "rk4"),
    "step": (float, 1e-2),
    "rel_tol": (float, 1e-6),
    "abs_tol": (float, 1e-9),
    "max_steps": (int, 1_000_000),
    "checkpoint_every": (float, 0.5),
    "horizon": (float, 10.0),
    "gamma": (float, 1.0),
    "output_dir": (str, ""),
    "grid_resolution": (int, 500),
    "grid_bound": (float, 15.0),
    "dim": (int, 2),
    "num_points": (int, 500),
    "num_tracers": (int, 10),
    "transform": (str, "none"),
    "num_transforms": (int, 0),
    "baseline_components": (int, 0),
}

# experiment: {key: (value, provenance)}; provenance names the README section under "Experiment setups".
EXPERIMENT_DEFAULTS: dict[str, dict[str, tuple[object, str]]] = {
    "linear-equivalence": {
        "step": (1e-3, "Experiment setups > Linear Gaussian equivalence: RK4 step"),
        "num_tracers": (10, "Experiment setups > Linear Gaussian equivalence: shared particles"),
    },
    "gmm-prior": {
        "components": (20, "Experiment setups > Gaussian-mixture prior: mixture size"),
        "gh_degree": (4, "Experiment setups > Gaussian-mixture prior: Gauss-Hermite degree"),
        "grid_resolution": (500, "Experiment setups > Gaussian-mixture prior: KL grid, desk scale"),
        "grid_bound": (15.0, "Experiment setups > Gaussian-mixture prior: KL grid region"),
    },
    "nonlinear-range": {
        "components": (20, "Experiment setups > Range observation: mixture size"),
        "baseline_components": (1, "Experiment setups > Range observation: single-Gaussian comparison"),
        "grid_resolution": (500, "Experiment setups > Range observation: KL grid, desk scale"),
        "grid_bound": (15.0, "Experiment setups > Range observation: KL grid region"),
    },
    "logreg": {
        "dim": (50, "Experiment setups > Logistic regression: weight dimension"),
        "num_points": (500, "Experiment setups > Logistic regression: synthetic data size"),
        "mode": ("analytic", "Experiment setups > Logistic regression: analytic moments"),
        "method": ("rk45", "Experiment setups > Logistic regression: adaptive solver for the early contraction"),
        "step": (1e-3, "Experiment setups > Logistic regression: initial RK45 step"),
        "horizon": (5.0, "Experiment setups > Logistic regression: 100 ELBO records 0.05 apart"),
        "checkpoint_every": (0.05, "Experiment setups > Logistic regression: ELBO every iteration"),
        "baseline_components": (5, "Experiment setups > Logistic regression: mixture comparison"),
    },
    "funnel": {
        "dim": (30, "Experiment setups > Funnel: dimension"),
        "components": (5, "Experiment setups > Funnel: base mixture size"),
        "mc_count": (300, "Experiment setups > Funnel: Monte-Carlo particles per component"),
        "mode": ("stein-psd", "Experiment setups > Funnel: clipped base curvature"),
        "method": ("rk45", "Experiment setups > Funnel: adaptive solver"),
        "step": (0.01, "Experiment setups > Funnel: initial RK45 step"),
        "transform": ("triangular", "Experiment setups > Funnel: single triangular map"),
        "num_transforms": (1, "Experiment setups > Funnel: single triangular map"),
    },
}


def _type_name(kind) -> str:
    names: dict[type, str] = {int: "n integer", float: " decimal", str: " string", bool: " boolean"}
    if isinstance(kind, tuple):
        return names[kind[0]] + " or null"
    return names[kind]


class ExperimentConfig:
    """
    A validated, fully materialised run configuration.

    Attributes:
        __values (dict[str, object]): Every schema key with its value.
        __provenance (dict[str, str]): Where each value came from.
    """
    def __init__(self, values: dict[str, object], provenance: dict[str, str]) -> None:
        self.__values: dict[str, object] = dict(values)
        self.__provenance: dict[str, str] = dict(provenance)

    def get(self, key: str):
        return self.__values[key]

    def get_experiment(self) -> str:
        return self.__values["experiment"]

    def get_seed(self) -> int:
        return self.__values["seed"]

    def get_components(self) -> int:
        return self.__values["components"]

    def get_gh_degree(self) -> int:
        return self.__values["gh_degree"]

    def get_mc_count(self) -> int | None:
        return self.__values["mc_count"]

    def get_horizon(self) -> float:
        return self.__values["horizon"]

    def get_gamma(self) -> float:
        return self.__values["gamma"]

    def get_dim(self) -> int:
        return self.__values["dim"]

    def get_output_dir(self) -> Path:
        return Path(self.__values["output_dir"] or f"runs/{self.get_experiment()}")

    def get_ode(self) -> integrator.OdeConfig:
        """
        Gets the solver settings.
        """
        return integrator.OdeConfig(self.__values["method"], self.__values["step"], self.__values["rel_tol"],
                                    self.__values["abs_tol"], self.__values["max_steps"],
                                    self.__values["checkpoint_every"])

    def to_dict(self) -> dict[str, object]:
        return dict(sorted(self.__values.items()))

    def echo(self) -> dict:
        """
        Gets the config echo: every value plus where it came from.
        """
        return {"config": self.to_dict(), "provenance": dict(sorted(self.__provenance.items()))}

    def config_hash(self) -> str:
        """
        Gets a short SHA-256 of every setting that affects results.
        """
        relevant: dict[str, object] = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def load_config_file(path: str | Path) -> dict:
    """
    Reads a JSON config object; an empty file is an empty object.

    Args:
        path (str | Path): The file.

    Returns:
        dict: The raw values.

    Raises:
        ConfigError: If the file cannot be read or is not a JSON object.
    """
    try:
        text: str = Path(path).read_text(encoding="utf-8")
    except OSError as error:
        raise errors.ConfigError(f"'{path}'. Config file could not be read: {error}") from error
    if not text.strip():
        return {}
    try:
        values = json.loads(text)
    except json.JSONDecodeError as error:
        raise errors.ConfigError(f"'{path}'. Invalid JSON at line {error.lineno}: {error.msg}") from error
    if not isinstance(values, dict):
        raise errors.ConfigError(f"'{path}'. Config file must hold a JSON object.")
    return values


def _check_key(key: str) -> None:
    if key not in SCHEMA:
        suggestion: list[str] = difflib.get_close_matches(key, SCHEMA.keys(), n=1)
        hint: str = f" Did you mean '{suggestion[0]}'?" if suggestion else ""
        raise errors.ConfigError(f"'{key}'. Unknown config key.{hint}", key)


def _check_type(key: str, value) -> object:
    kind, _ = SCHEMA[key]
    allowed: tuple[type, ...] = kind if isinstance(kind, tuple) else (kind,)
    if isinstance(value, bool):
        raise errors.ConfigError(f"'{value}'. {key} must be a{_type_name(kind)}.", key)
    if float in allowed and isinstance(value, int):
        return float(value)
    if not isinstance(value, allowed):
        raise errors.ConfigError(f"'{value}'. {key} must be a{_type_name(kind)}.", key)
    return value


def _require(condition: bool, key: str, value, message: str) -> None:
    if not condition:
        raise errors.ConfigError(f"'{value}'. {key} {message}", key)


def _check_ranges(values: dict[str, object]) -> None:
    """
    Validates ranges and cross-field rules.

    Raises:
        ConfigError: Naming the first offending key.
    """
    experiment: str = values["experiment"]
    _require(experiment in EXPERIMENTS, "experiment", experiment, f"must be one of {', '.join(EXPERIMENTS)}.")
    _require(0 <= values["seed"] < 2 ** 64, "seed", values["seed"], "must be an integer between 0 and 2^64 - 1.")
    _require(values["components"] >= 1, "components", values["components"], "must be a positive integer.")
    _require(1 <= values["gh_degree"] <= quadrature.MAX_DEGREE, "gh_degree", values["gh_degree"],
             f"must be an integer between 1 and {quadrature.MAX_DEGREE}.")
    _require(values["mc_count"] is None or values["mc_count"] >= 2, "mc_count", values["mc_count"],
             "must be an integer of at least 2 or null.")
    _require(values["mode"] in MODES, "mode", values["mode"], f"must be one of {', '.join(MODES)}.")
    methods: list[str] = [method.value for method in integrator.Method]
    _require(values["method"] in methods, "method", values["method"], f"must be one of {', '.join(methods)}.")
    for key in ("step", "rel_tol", "abs_tol", "checkpoint_every", "horizon", "grid_bound"):
        _require(values[key] > 0.0, key, values[key], "must be a positive decimal.")
    _require(values["max_steps"] >= 1, "max_steps", values["max_steps"], "must be a positive integer.")
    _require(values["gamma"] >= 0.0, "gamma", values["gamma"], "must be a non-negative decimal.")
    _require(values["grid_resolution"] >= 2, "grid_resolution", values["grid_resolution"],
             "must be an integer of at least 2.")
    _require(values["dim"] >= 1, "dim", values["dim"], "must be a positive integer.")
    if experiment in TWO_DIMENSIONAL:
        _require(values["dim"] == 2, "dim", values["dim"], f"must be 2 for the {experiment} experiment.")
    if experiment == "funnel":
        _require(values["dim"] >= 2, "dim", values["dim"], "must be at least 2 for the funnel experiment.")
    _require(values["num_points"] >= 1, "num_points", values["num_points"], "must be a positive integer.")
    _require(values["num_tracers"] >= 1, "num_tracers", values["num_tracers"], "must be a positive integer.")
    _require(values["transform"] in TRANSFORMS, "transform", values["transform"],
             f"must be one of {', '.join(TRANSFORMS)}.")
    _require(values["num_transforms"] >= 0, "num_transforms", values["num_transforms"],
             "must be a non-negative integer.")
    if values["transform"] != "none":
        _require(values["num_transforms"] >= 1, "num_transforms", values["num_transforms"],
                 "must be at least 1 when a transform is selected.")
        _require(values["mode"] in STEIN_MODES, "mode", values["mode"],
                 f"must be one of {', '.join(STEIN_MODES)} when a transform is selected.")
    _require(values["baseline_components"] >= 0, "baseline_components", values["baseline_components"],
             "must be a non-negative integer.")


def build_config(experiment: str | None, file_values: dict | None = None,
                 flag_values: dict | None = None) -> ExperimentConfig:
    """
    Merges defaults, file values and flag values, then validates the result.

    Args:
        experiment (str | None): Experiment name from the command line; None takes it from the file.
        file_values (dict | None): Raw file values.
        flag_values (dict | None): Flag values; None entries are ignored.

    Returns:
        ExperimentConfig: The validated config.

    Raises:
        ConfigError: On unknown keys, wrong types or out-of-range values.
    """
    file_values = dict(file_values or {})
    flag_values = {key: value for key, value in (flag_values or {}).items() if value is not None}
    for key in list(file_values) + list(flag_values):
        _check_key(key)
    if experiment is not None:
        flag_values["experiment"] = experiment
    name = flag_values.get("experiment", file_values.get("experiment", SCHEMA["experiment"][1]))
    _require(name in EXPERIMENTS, "experiment", name, f"must be one of {', '.join(EXPERIMENTS)}.")

    values: dict[str, object] = {key: default for key, (_, default) in SCHEMA.items()}
    provenance: dict[str, str] = {key: LIBRARY_DEFAULT for key in SCHEMA}
    for key in ("method", "step", "rel_tol", "abs_tol", "max_steps", "checkpoint_every", "horizon"):
        provenance[key] = SOLVER_DEFAULT
    for key, (value, tag) in EXPERIMENT_DEFAULTS[name].items():
        values[key] = value
        provenance[key] = tag
    for source, raw in (("config file", file_values), ("command line", flag_values)):
        for key, value in raw.items():
            values[key] = _check_type(key, value)
            provenance[key] = source
    _check_ranges(values)
    LOGGER.debug("Built config for %s", name)
    return ExperimentConfig(values, provenance)


def validate_config(path: str | Path) -> ExperimentConfig:
    """
    Validates a config file and materialises every default.

    Args:
        path (str | Path): JSON config file.

    Returns:
        ExperimentConfig: The normalised config.

    Raises:
        ConfigError: With the offending key.
    """
    return build_config(None, load_config_file(path))
