"""
Terminal output formatting and artifact emitters (CSV, manifest JSON, plot data).
"""

import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

from rcmlab.relaxation import MIN_FIT_POINTS, fit_power_law
from rcmlab.utils import format_duration

__all__ = [
    "Colors",
    "supports_color",
    "OutputFormatter",
    "format_float",
    "create_csv_output",
    "write_csv",
    "canonical_json",
    "content_hash",
    "create_manifest",
    "write_json",
    "emit_plot_data",
]

logger = logging.getLogger(__name__)


class Colors:
    """ANSI color codes for terminal output."""

    RED = "\033[91m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    BLUE = "\033[94m"
    MAGENTA = "\033[95m"
    CYAN = "\033[96m"

    BOLD = "\033[1m"
    DIM = "\033[2m"

    RESET = "\033[0m"

    @classmethod
    def disable(cls) -> None:
        """Disable all colors by setting them to empty strings."""
        for name in ("RED", "GREEN", "YELLOW", "BLUE", "MAGENTA", "CYAN", "BOLD", "DIM", "RESET"):
            setattr(cls, name, "")


def supports_color() -> bool:
    """
    Check if the terminal supports ANSI colors.

    Returns:
        True if terminal supports colors, False otherwise
    """
    if not hasattr(sys.stdout, "isatty") or not sys.stdout.isatty():
        return False
    if os.environ.get("NO_COLOR"):
        return False
    return os.environ.get("TERM") != "dumb"


class OutputFormatter:
    """
    Console presentation for experiment runs.

    Keeps output aligned in a standard 80-column terminal; errors always go
    to stderr.
    """

    COLUMN_WIDTH = 80
    LABEL_COL = 14

    def __init__(
        self,
        use_color: bool = True,
        quiet: bool = False,
        verbose: bool = False,
        stream: Optional[TextIO] = None,
    ):
        """
        Initialize the output formatter.

        Args:
            use_color: Enable ANSI color output
            quiet: Quiet mode - only errors and final verdicts
            verbose: Verbose mode - show debug information
            stream: Output stream (default: stdout)
        """
        self.use_color = use_color and supports_color()
        self.quiet = quiet
        self.verbose = verbose
        self.stream = stream if stream is not None else sys.stdout

        if not self.use_color:
            Colors.disable()

    def print(self, message: str = "", end: str = "\n") -> None:
        """Print message to output stream."""
        print(message, end=end, file=self.stream)

    def print_banner(self, banner: str) -> None:
        if not self.quiet:
            self.print(banner)

    def print_header(self, fields: Dict[str, Any]) -> None:
        """
        Print the run header with configuration details.

        Args:
            fields: Ordered label -> value pairs
        """
        if self.quiet:
            return

        self.print(f"{Colors.BOLD}{'═' * self.COLUMN_WIDTH}{Colors.RESET}")
        for label, value in fields.items():
            self.print(f"{Colors.CYAN}{label + ':':<{self.LABEL_COL}}{Colors.RESET}{value}")
        self.print(f"{Colors.BOLD}{'═' * self.COLUMN_WIDTH}{Colors.RESET}")

    def print_verdict(self, name: str, passed: bool, detail: str = "") -> None:
        """Print a PASS/FAIL line; shown even in quiet mode."""
        color = Colors.GREEN if passed else Colors.RED
        label = "PASS" if passed else "FAIL"
        suffix = f" {Colors.DIM}{detail}{Colors.RESET}" if detail else ""
        self.print(f"  {color}{label:<6}{Colors.RESET}{name}{suffix}")

    def print_summary(self, experiment: str, artifacts: Sequence[str], duration: float, warnings: int = 0) -> None:
        """
        Print run summary.

        Args:
            experiment: Experiment kind
            artifacts: Files written
            duration: Wall time in seconds
            warnings: Number of warnings recorded
        """
        if self.quiet:
            return

        self.print()
        self.print(f"{Colors.BOLD}{'═' * self.COLUMN_WIDTH}{Colors.RESET}")
        self.print(f"{Colors.BOLD}{experiment.upper()} COMPLETE{Colors.RESET}")
        self.print(f"{Colors.DIM}{'-' * 40}{Colors.RESET}")
        for path in artifacts:
            self.print(f"  {Colors.GREEN}wrote{Colors.RESET}  {path}")
        if warnings:
            self.print(f"  {Colors.YELLOW}Warnings:{Colors.RESET}  {warnings}")
        self.print(f"  Wall time: {format_duration(duration)}")
        self.print(f"{Colors.BOLD}{'═' * self.COLUMN_WIDTH}{Colors.RESET}")

    def print_error(self, message: str) -> None:
        """Print error message."""
        print(f"{Colors.RED}[ERROR]{Colors.RESET} {message}", file=sys.stderr)

    def print_warning(self, message: str) -> None:
        if not self.quiet:
            self.print(f"{Colors.YELLOW}[WARN]{Colors.RESET} {message}")

    def print_info(self, message: str) -> None:
        if not self.quiet:
            self.print(f"{Colors.CYAN}[INFO]{Colors.RESET} {message}")

    def print_debug(self, message: str) -> None:
        """Print debug message (only in verbose mode)."""
        if self.verbose:
            self.print(f"{Colors.DIM}[DEBUG] {message}{Colors.RESET}")


def format_float(value: float) -> str:
    """Round-trip exact float formatting used in every CSV."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def create_csv_output(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """
    Create CSV text with a fixed header.

    Args:
        header: Column names
        rows: Row values; floats use 17 significant digits

    Returns:
        CSV formatted string ending with a newline
    """
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"Row has {len(row)} values, header has {len(header)}")
        lines.append(",".join(v if isinstance(v, str) else format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    target = Path(path)
    target.write_text(create_csv_output(header, rows))
    return target


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(data: Any) -> str:
    """Git-style blob hash: SHA-1 over b"blob <len>\\0" + canonical JSON."""
    payload = canonical_json(data).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def create_manifest(
    config: Dict[str, Any],
    wall_time: float,
    warnings: List[str],
    verdicts: Dict[str, Any],
    artifacts: List[str],
    version: str,
) -> Dict[str, Any]:
    """
    Create the JSON-serializable run manifest.

    Args:
        config: Config echo
        wall_time: Wall time in seconds
        warnings: Warnings recorded during the run
        verdicts: Named checks and their outcomes
        artifacts: Files written, relative to the output directory
        version: Package version

    Returns:
        Dictionary ready for JSON serialization
    """
    return _json_safe(
        {
            "tool": "rcmlab",
            "version": version,
            "experiment": config.get("experiment"),
            "config": config,
            "config_hash": content_hash(_json_safe(config)),
            "wall_time_seconds": round(wall_time, 3),
            "warnings": warnings,
            "verdicts": verdicts,
            "artifacts": artifacts,
        }
    )


def write_json(path: Union[str, Path], data: Any) -> Path:
    target = Path(path)
    target.write_text(json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n")
    return target


def emit_plot_data(
    times: Sequence[float],
    values: Sequence[float],
    path: Union[str, Path],
    exponent: Optional[float] = None,
) -> int:
    """
    Write gnuplot-ready log-log data: "log10 t  log10 value" per row.

    Rows with a non-positive time or value are dropped and counted.

    Args:
        times: Times
        values: Series values
        path: Output file
        exponent: Decay exponent for the header comment; when omitted it is
            fitted over all kept rows (needs at least 4 of them, else "nan")

    Returns:
        Number of dropped rows

    Raises:
        ValueError: If the series is empty or nothing remains after dropping
        OSError: On I/O failure
    """
    if len(times) == 0 or len(times) != len(values):
        raise ValueError("Plot data needs a non-empty series with one value per time")
    kept = [(t, v) for t, v in zip(times, values) if t > 0 and v > 0]
    dropped = len(times) - len(kept)
    if not kept:
        raise ValueError("Plot data has no positive values to plot")
    if dropped:
        logger.warning("Dropped %d non-positive rows from %s", dropped, path)

    if exponent is None and len(kept) >= MIN_FIT_POINTS:
        kept_times = [t for t, _ in kept]
        window = (min(kept_times), max(kept_times))
        exponent = fit_power_law(kept_times, [v for _, v in kept], window).exponent
    header = "# exponent = " + (format_float(exponent) if exponent is not None else "nan")
    lines = [header, "# log10_t log10_value"]
    lines.extend(f"{format_float(math.log10(t))} {format_float(math.log10(v))}" for t, v in kept)
    Path(path).write_text("\n".join(lines) + "\n")
    return dropped
