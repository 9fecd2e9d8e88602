"""
Command-line interface for rcmlab.

One subcommand per experiment, each driven by a JSON configuration file,
plus named profiles for the headline runs.
"""

import argparse
import dataclasses
import json
import logging
import signal
import sys
import traceback
from pathlib import Path
from types import FrameType
from typing import Any, Dict, Optional

from rcmlab import __version__, get_banner
from rcmlab.config import EXPERIMENTS, PROFILES, ExperimentConfig, load_config, parse_config_dict
from rcmlab.exceptions import ConfigError, RcmLabError
from rcmlab.experiments import ExperimentResult, error_document, run_experiment
from rcmlab.output import OutputFormatter, write_json

__all__ = [
    "EXIT_OK",
    "EXIT_INVALID",
    "EXIT_FAILED",
    "EXIT_INTERRUPTED",
    "RcmLabCLI",
    "main",
]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILED = 3
EXIT_INTERRUPTED = 130

EXPERIMENT_HELP = {
    "relax": "Relaxation moments of a local observable under the semigroup",
    "kernel": "On-diagonal heat kernel decay in a single environment",
    "corrector": "Massive corrector moments over a decreasing mass sweep",
    "weights": "Resistance weights, inverse path index and moderation moments",
    "necessity": "Trapping construction where the moment condition fails",
}


class RcmLabCLI:
    """
    Main CLI handler for rcmlab.

    Handles argument parsing, configuration loading, experiment dispatch and
    exit codes.
    """

    def __init__(self) -> None:
        self.parser = self._create_parser()
        self.formatter: Optional[OutputFormatter] = None
        self._interrupted = False

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create the argument parser with all subcommands."""
        parser = argparse.ArgumentParser(
            prog="rcmlab",
            description="rcmlab - random conductance model homogenization lab",
            epilog="""
Examples:
  rcmlab kernel --config kernel.json --out results/kernel
  rcmlab relax --config relax.json --seed 7 --threads 8
  rcmlab profile necessity-3d --out results/necessity

Exit codes: 0 success, 2 invalid configuration, 3 run failure, 130 interrupted
            """,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )

        parser.add_argument(
            "--version",
            action="store_true",
            help="Show version information and exit",
        )

        subparsers = parser.add_subparsers(
            dest="command",
            title="Commands",
            description="Available experiments",
            metavar="<command>",
        )

        for experiment in EXPERIMENTS:
            experiment_parser = subparsers.add_parser(
                experiment,
                help=EXPERIMENT_HELP[experiment],
                description=EXPERIMENT_HELP[experiment],
            )
            experiment_parser.add_argument(
                "-c",
                "--config",
                required=True,
                help="JSON configuration file",
            )
            self._add_run_arguments(experiment_parser)

        profile_parser = subparsers.add_parser(
            "profile",
            help="Run a predefined experiment profile",
            description="Execute a predefined experiment configuration",
            epilog=f"""
Available profiles:
{self._format_profiles()}
            """,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        profile_parser.add_argument(
            "profile",
            choices=list(PROFILES.keys()),
            help="Profile to run",
        )
        self._add_run_arguments(profile_parser)

        return parser

    def _add_run_arguments(self, parser: argparse.ArgumentParser) -> None:
        """Add the overrides shared by every run command."""
        parser.add_argument(
            "-s",
            "--seed",
            type=int,
            help="Master seed (overrides the configuration)",
        )

        parser.add_argument(
            "-o",
            "--out",
            help="Output directory (overrides the configuration)",
        )

        parser.add_argument(
            "-T",
            "--threads",
            type=int,
            help="Worker threads (default: configuration, then CPU count)",
        )

        parser.add_argument(
            "-q",
            "--quiet",
            action="store_true",
            help="Quiet mode: only errors and verdicts",
        )

        parser.add_argument(
            "-v",
            "--verbose",
            action="store_true",
            help="Verbose mode: debug logging",
        )

        parser.add_argument(
            "--no-color",
            action="store_true",
            help="Disable colored output",
        )

    def _format_profiles(self) -> str:
        lines = []
        for name, profile in PROFILES.items():
            lines.append(f"  {name:20} {profile['description']}")
        return "\n".join(lines)

    def _handle_interrupt(self, signum: Optional[int], frame: Optional[FrameType]) -> None:
        """Mark the run interrupted and unwind it."""
        self._interrupted = True
        if self.formatter:
            self.formatter.print()
            self.formatter.print_warning("Run interrupted by user")
        raise KeyboardInterrupt

    def _configure_logging(self, quiet: bool, verbose: bool) -> None:
        level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING
        logging.basicConfig(
            level=level,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
            force=True,
        )

    def run(self, args: Optional[list] = None) -> int:
        """
        Run the CLI with given arguments.

        Args:
            args: Command line arguments (default: sys.argv)

        Returns:
            Exit code (0 success, 2 invalid configuration, 3 run failure,
            130 interrupted)
        """
        signal.signal(signal.SIGINT, self._handle_interrupt)

        try:
            parsed = self.parser.parse_args(args)
        except SystemExit as e:
            return EXIT_OK if e.code in (0, None) else EXIT_INVALID

        if parsed.version:
            self._print_version()
            return EXIT_OK

        if parsed.command is None:
            print(get_banner(False))
            self.parser.print_help()
            return EXIT_OK

        self._configure_logging(parsed.quiet, parsed.verbose)
        self.formatter = OutputFormatter(
            use_color=not parsed.no_color,
            quiet=parsed.quiet,
            verbose=parsed.verbose,
        )

        try:
            cfg = self._load(parsed)
        except ConfigError as e:
            self.formatter.print_error("Invalid configuration:")
            for problem in e.errors:
                self.formatter.print_error(f"  {problem}")
            return EXIT_INVALID

        return self._execute(cfg, parsed)

    def _print_version(self) -> None:
        print(
            f"""
{get_banner(True)}

Version:  {__version__}
Python:   {sys.version.split()[0]}
Platform: {sys.platform}
        """
        )

    def _load(self, args: argparse.Namespace) -> ExperimentConfig:
        """Load the configuration and apply command-line overrides."""
        if args.seed is not None and args.seed < 0:
            raise ConfigError([f"seed must be >= 0, got {args.seed}"])
        if args.command == "profile":
            document: Dict[str, Any] = dict(PROFILES[args.profile]["config"])
            if args.seed is not None:
                document["seed"] = args.seed
            cfg = parse_config_dict(document)
        else:
            cfg = load_config(args.config)
            if cfg.experiment != args.command:
                raise ConfigError(
                    [f"configuration is for '{cfg.experiment}', not '{args.command}'"]
                )
            if args.seed is not None:
                cfg = dataclasses.replace(cfg, seed=args.seed)

        if args.out is not None:
            cfg = dataclasses.replace(cfg, output=args.out)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError([f"threads must be >= 1, got {args.threads}"])
            cfg = dataclasses.replace(cfg, threads=args.threads)
        return cfg

    def _execute(self, cfg: ExperimentConfig, args: argparse.Namespace) -> int:
        """
        Run the experiment and report its outcome.

        Args:
            cfg: Validated configuration
            args: Parsed command line arguments

        Returns:
            Exit code
        """
        assert self.formatter is not None
        formatter = self.formatter

        formatter.print_banner(get_banner(not args.no_color))
        formatter.print_header(
            {
                "Experiment": cfg.experiment,
                "Lattice": f"d={cfg.d}, L={cfg.L}",
                "Replicates": cfg.reps,
                "Seed": cfg.seed,
                "Output": cfg.output,
            }
        )
        if args.command == "profile":
            formatter.print_info(f"Using profile '{args.profile}': {PROFILES[args.profile]['description']}")
        for message in cfg.warnings:
            formatter.print_warning(message)

        try:
            result = run_experiment(cfg)
        except KeyboardInterrupt:
            self._interrupted = True
            return EXIT_INTERRUPTED
        except RcmLabError as e:
            return self._fail(cfg, e, args.verbose)
        except (ValueError, ArithmeticError, OSError) as e:
            return self._fail(cfg, e, args.verbose)

        self._report(result)
        return EXIT_OK

    def _fail(self, cfg: ExperimentConfig, error: BaseException, verbose: bool) -> int:
        """Report a run failure on stderr and in error.json."""
        assert self.formatter is not None
        document = error_document(error, cfg.experiment)
        self.formatter.print_error(str(error))
        print(json.dumps(document, sort_keys=True), file=sys.stderr)
        if verbose:
            traceback.print_exc()
        try:
            target = Path(cfg.output)
            target.mkdir(parents=True, exist_ok=True)
            write_json(target / "error.json", document)
        except OSError as e:
            logger.error("Could not write error.json: %s", e)
        return EXIT_FAILED

    def _report(self, result: ExperimentResult) -> None:
        assert self.formatter is not None
        for name, value in result.verdicts.items():
            if isinstance(value, bool):
                self.formatter.print_verdict(name, value)
            elif name == "moment_condition":
                for verdict in value:
                    self.formatter.print_verdict(
                        f"moment condition q={verdict['q']}", verdict["verdict"] == "PASS", verdict["reason"]
                    )
            else:
                self.formatter.print_debug(f"{name} = {value}")
        self.formatter.print_summary(
            result.experiment,
            [str(result.out_dir / name) for name in result.artifacts],
            result.wall_time,
            len(result.warnings),
        )


def main(args: Optional[list] = None) -> int:
    """
    Main entry point for the CLI.

    Args:
        args: Command line arguments (default: sys.argv)

    Returns:
        Exit code
    """
    cli = RcmLabCLI()
    return cli.run(args)


if __name__ == "__main__":
    sys.exit(main())
