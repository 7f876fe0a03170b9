"""
Main module to parse the command line and run or validate an experiment.

Imports:
    argparse
    json
    numpy
    config: Experiment configuration.
    errors: Exception hierarchy of the library.
    experiments: Experiment harnesses.
    report: Run artifacts.
    sql_handler: Handles SQL database interactions.

Classes:
    Main

Functions:
    build_parser, main
"""

import argparse
import json
import logging
import sys
import time

import numpy as np

from fisherflow import config
from fisherflow import errors
from fisherflow import experiments
from fisherflow import report
from fisherflow import sql_handler

LOGGER = logging.getLogger(__name__)

EXIT_OK: int = 0
EXIT_CONFIG_ERROR: int = 1
EXIT_FLOW_ERROR: int = 2

# flag destination: config key
FLAG_KEYS: dict[str, str] = {
    "seed": "seed",
    "out": "output_dir",
    "gh_degree": "gh_degree",
    "components": "components",
    "horizon": "horizon",
    "dim": "dim",
    "mode": "mode",
    "transform": "transform",
    "num_transforms": "num_transforms",
}


def build_parser() -> argparse.ArgumentParser:
    """
    Builds the argument parser with the run and validate subcommands.

    Returns:
        argparse.ArgumentParser: The parser.
    """
    parser = argparse.ArgumentParser(prog="fisherflow", description="Variational particle-flow experiments.")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level of the library.")
    subcommands = parser.add_subparsers(dest="command", required=True)

    run = subcommands.add_parser("run", help="Run one experiment and write its artifacts.")
    run.add_argument("experiment", choices=config.EXPERIMENTS)
    run.add_argument("--config", help="JSON config file.")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="Output directory.")
    run.add_argument("--gh-degree", dest="gh_degree", type=int)
    run.add_argument("--components", type=int)
    run.add_argument("--horizon", type=float)
    run.add_argument("--dim", type=int)
    run.add_argument("--mode", choices=config.MODES)
    run.add_argument("--transform", choices=config.TRANSFORMS)
    run.add_argument("--num-transforms", dest="num_transforms", type=int)
    run.add_argument("--registry", default=sql_handler.DEFAULT_DB_NAME, help="SQLite run registry path.")
    run.add_argument("--no-registry", dest="no_registry", action="store_true", help="Do not record the run.")

    validate = subcommands.add_parser("validate", help="Validate a config file and echo every setting.")
    validate.add_argument("--config", required=True, help="JSON config file.")
    return parser


class Main:
    """
    Main class to run one command-line invocation.

    Attributes:
        __args (argparse.Namespace): Parsed arguments.
        __exit_code (int): Process exit code.
    """
    def __init__(self, argv: list[str] | None = None) -> None:
        """
        Parses the arguments and runs the requested subcommand.

        Args:
            argv (list[str] | None): Arguments without the program name. Defaults to sys.argv.
        """
        self.__args: argparse.Namespace = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, self.__args.log_level),
                            format="%(asctime)s %(name)s %(levelname)s: %(message)s")
        if self.__args.command == "validate":
            self.__exit_code: int = self.__validate()
        else:
            self.__exit_code = self.__run()

    def get_exit_code(self) -> int:
        return self.__exit_code

    def __validate(self) -> int:
        """
        Validates the config file and prints the normalised config echo.

        Returns:
            int: Exit code.
        """
        try:
            experiment_config: config.ExperimentConfig = config.validate_config(self.__args.config)
        except errors.ConfigError as error:
            print(f"Invalid config: {error}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        print(json.dumps(experiment_config.echo(), sort_keys=True, indent=2))
        return EXIT_OK

    def __flag_values(self) -> dict[str, object]:
        return {key: getattr(self.__args, flag) for flag, key in FLAG_KEYS.items()}

    def __run(self) -> int:
        """
        Builds the config, runs the experiment and records the run.

        Returns:
            int: Exit code.
        """
        start: float = time.perf_counter()
        config_hash: str = ""
        seed: int = self.__args.seed if self.__args.seed is not None else 0

        # Error handling
        try:
            file_values: dict = config.load_config_file(self.__args.config) if self.__args.config else {}
            experiment_config: config.ExperimentConfig = config.build_config(self.__args.experiment, file_values,
                                                                             self.__flag_values())
            config_hash = experiment_config.config_hash()
            seed = experiment_config.get_seed()
            print("Running experiment...")
            run: report.RunReport = experiments.run_experiment(experiment_config)
            exit_code: int = EXIT_OK
        except errors.ConfigError as error:
            print(f"Invalid config: {error}", file=sys.stderr)
            exit_code = EXIT_CONFIG_ERROR
        except errors.DivergedFlow as error:
            print(f"Flow diverged: {error}", file=sys.stderr)
            exit_code = EXIT_FLOW_ERROR
        except errors.FisherFlowError as error:
            print(f"Flow failed: {error}", file=sys.stderr)
            exit_code = EXIT_FLOW_ERROR
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as error:
            LOGGER.exception("Run of %s failed", self.__args.experiment)
            print(f"Run failed: {type(error).__name__}: {error}", file=sys.stderr)
            exit_code = EXIT_FLOW_ERROR

        if exit_code == EXIT_OK:
            print(f"Artifacts written to {experiment_config.get_output_dir()}")
            for record in run.metric_records():
                print(f"{record['metric']}: {report.format_number(record['value'])}")
        self.__save_run(config_hash, seed, exit_code, time.perf_counter() - start)
        return exit_code

    def __save_run(self, config_hash: str, seed: int, exit_code: int, wall_clock: float) -> None:
        """
        Saves the run to the registry unless it is disabled.
        """
        if self.__args.no_registry:
            return
        handler: sql_handler.SQLHandler = sql_handler.SQLHandler(self.__args.registry)
        handler.save_run((self.__args.experiment, seed, config_hash, exit_code, wall_clock))
        handler.close_connection()
        print("Parameters saved successfully.")


def main(argv: list[str] | None = None) -> int:
    """
    Console entry point.

    Args:
        argv (list[str] | None): Arguments without the program name.

    Returns:
        int: Exit code.
    """
    return Main(argv).get_exit_code()


# Run the main program
if __name__ == "__main__":
    sys.exit(main())
