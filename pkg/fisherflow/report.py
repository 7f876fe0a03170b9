"""
Defines the RunReport class that accumulates metric series and writes run artifacts.

Files written into the output directory:
    metrics.csv          header t,metric,value; numbers with 17 significant digits
    report.json          config echo, metric records, results, final parameters, file list, wall-clock
    particles_final.csv  final particle positions
    checkpoints/*.json   flow-state checkpoints

Imports:
    csv
    json
    numpy

Classes:
    RunReport
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

LOGGER = logging.getLogger(__name__)


def format_number(value: float) -> str:
    """
    Renders a number losslessly with 17 significant digits.
    """
    return f"{float(value):.17g}"


def _plain(value):
    """
    Converts numpy values inside nested containers to JSON-ready Python values.
    """
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class RunReport:
    """
    A class to accumulate the results of one experiment run.

    Attributes:
        __echo (dict): Config echo with provenance.
        __config_hash (str): Hash of the result-affecting settings.
        __seed (int): Run seed.
        __series (list[tuple[float, str, float]]): (t, metric, value) rows in insertion order.
        __results (dict[str, object]): Scalar results.
        __final_params (dict): Final variational parameters.
        __particles (np.ndarray | None): Final particles (M, n).
        __checkpoints (list[tuple[str, dict]]): (file stem, checkpoint) pairs.
        __wall_clock (float): Wall-clock seconds.
    """
    def __init__(self, echo: dict, config_hash: str, seed: int) -> None:
        self.__echo: dict = echo
        self.__config_hash: str = config_hash
        self.__seed: int = seed
        self.__series: list[tuple[float, str, float]] = []
        self.__results: dict[str, object] = {}
        self.__final_params: dict = {}
        self.__particles: np.ndarray | None = None
        self.__checkpoints: list[tuple[str, dict]] = []
        self.__extra_files: list[str] = []
        self.__wall_clock: float = 0.0

    def add_point(self, t: float, metric: str, value: float) -> None:
        """
        Appends one value to a metric series.

        Args:
            t (float): Flow time.
            metric (str): Series name.
            value (float): The value.
        """
        self.__series.append((float(t), metric, float(value)))

    def set_result(self, name: str, value) -> None:
        self.__results[name] = _plain(value)

    def set_final_params(self, params: dict) -> None:
        self.__final_params = _plain(params)

    def set_particles(self, positions: np.ndarray) -> None:
        self.__particles = np.atleast_2d(np.asarray(positions, dtype=float))

    def add_checkpoint(self, label: str, checkpoint: dict) -> None:
        index: int = sum(1 for stem, _ in self.__checkpoints if stem.startswith(f"{label}_"))
        self.__checkpoints.append((f"{label}_{index:04d}", _plain(checkpoint)))

    def add_file(self, name: str) -> None:
        self.__extra_files.append(name)

    def set_wall_clock(self, seconds: float) -> None:
        self.__wall_clock = float(seconds)

    def get_series(self, metric: str) -> list[tuple[float, float]]:
        """
        Gets the (t, value) pairs of one metric.
        """
        return [(t, value) for t, name, value in self.__series if name == metric]

    def get_results(self) -> dict[str, object]:
        return dict(self.__results)

    def get_particles(self) -> np.ndarray | None:
        return self.__particles

    def metric_records(self) -> list[dict]:
        """
        Gets one {metric, value, config_hash, seed} record per numeric result.
        """
        return [{"metric": name, "value": value, "config_hash": self.__config_hash, "seed": self.__seed}
                for name, value in sorted(self.__results.items()) if isinstance(value, (int, float))]

    def to_dict(self) -> dict:
        files: list[str] = ["metrics.csv"]
        if self.__particles is not None:
            files.append("particles_final.csv")
        files += [f"checkpoints/{stem}.json" for stem, _ in self.__checkpoints] + self.__extra_files
        return {"config": self.__echo, "config_hash": self.__config_hash, "seed": self.__seed,
                "metrics": self.metric_records(), "results": self.__results, "final_params": self.__final_params,
                "files": files, "wall_clock_seconds": self.__wall_clock}

    def write(self, output_dir: str | Path) -> Path:
        """
        Writes every artifact into the output directory.

        Args:
            output_dir (str | Path): Target directory, created if missing.

        Returns:
            Path: The directory.
        """
        directory: Path = Path(output_dir)
        (directory / "checkpoints").mkdir(parents=True, exist_ok=True)

        with open(directory / "metrics.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t", "metric", "value"])
            for t, metric, value in self.__series:
                writer.writerow([format_number(t), metric, format_number(value)])

        if self.__particles is not None:
            with open(directory / "particles_final.csv", "w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow([f"x_{i + 1}" for i in range(self.__particles.shape[1])])
                for row in self.__particles:
                    writer.writerow([format_number(value) for value in row])

        for stem, checkpoint in self.__checkpoints:
            with open(directory / "checkpoints" / f"{stem}.json", "w", encoding="utf-8") as handle:
                json.dump(checkpoint, handle, sort_keys=True)

        with open(directory / "report.json", "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, sort_keys=True, indent=2)
        LOGGER.info("Wrote run artifacts to %s", directory)
        return directory
