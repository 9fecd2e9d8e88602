"""
Experiment pipelines: dispatch a validated configuration to the matching
computation and write CSV, plot-data and manifest artifacts.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from rcmlab import __version__
from rcmlab.config import ExperimentConfig
from rcmlab.corrector import corrector_moment_sweep
from rcmlab.environment import Environment, moment_condition_check, sample_environment
from rcmlab.exceptions import (
    ConfigError,
    DisconnectedError,
    NonConvergedError,
    RcmLabError,
    ScanExhaustedError,
)
from rcmlab.lattice import build_torus
from rcmlab.output import create_manifest, emit_plot_data, write_csv, write_json
from rcmlab.relaxation import (
    NecessityConfig,
    dissipation_check,
    fit_decay,
    fit_power_law,
    necessity_experiment,
    run_relaxation,
)
from rcmlab.semigroup import EvolutionParams, on_diagonal_series, weighted_gradient_energy
from rcmlab.utils import derive_seed
from rcmlab.weights import (
    DetourParams,
    PathCertificate,
    compute_moderation,
    detour_path,
    inverse_index_moment_estimate,
    minimal_resistance,
    moderation_moment_estimate,
    weight_moment_estimate,
)

__all__ = [
    "MASS_TOLERANCE",
    "ExperimentResult",
    "run_experiment",
    "error_document",
]

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-9

# Largest ratio between successive <phi^p> estimates along the mu sweep
SWEEP_RATIO_BOUND = 1.5

FIT_HEADER = ("series_id", "exponent", "stderr", "window_lo", "window_hi", "r2")


@dataclass
class ExperimentResult:
    """Outcome of one experiment run."""

    experiment: str
    out_dir: Path
    artifacts: List[str] = field(default_factory=list)
    verdicts: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    wall_time: float = 0.0


class _WarningCollector(logging.Handler):
    """Collects warnings logged by the library during a run."""

    def __init__(self) -> None:
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


@dataclass
class _Run:
    cfg: ExperimentConfig
    out_dir: Path
    threads: Optional[int]
    result: ExperimentResult

    def write_csv(self, name: str, header: tuple, rows: list) -> None:
        write_csv(self.out_dir / name, header, rows)
        self.result.artifacts.append(name)

    def plot(self, name: str, times: List[float], values: List[float], exponent: Optional[float]) -> None:
        try:
            emit_plot_data(times, values, self.out_dir / name, exponent)
        except ValueError as e:
            logger.warning("Skipped plot data %s: %s", name, e)
            return
        self.result.artifacts.append(name)

    def moment_verdicts(self, q_list: List[float]) -> None:
        verdicts = moment_condition_check(self.cfg.conductance_law, q_list)
        self.result.verdicts["moment_condition"] = [v.to_dict() for v in verdicts]

    def first_environment(self) -> Environment:
        lattice = build_torus(self.cfg.d, self.cfg.L)
        return sample_environment(self.cfg.conductance_law, lattice, derive_seed(self.cfg.seed, 0))


def _fit_row(series_id: str, times: List[float], values: List[float], window: List[float]) -> Optional[tuple]:
    try:
        fit = fit_power_law(times, values, (window[0], window[1]))
    except ValueError as e:
        logger.warning("No decay fit for %s: %s", series_id, e)
        return None
    return (series_id, fit.exponent, fit.stderr, fit.window_lo, fit.window_hi, fit.r2)


def _run_kernel(run: _Run) -> None:
    cfg = run.cfg
    env = run.first_environment()
    params = EvolutionParams(cfg.dt, tuple(cfg.t_grid))
    points = on_diagonal_series(env, params)
    run.write_csv(
        "kernel.csv",
        ("t", "p00", "mass", "l2_half_identity_gap"),
        [(p.t, p.p00, p.mass, p.identity_gap) for p in points],
    )

    times = [p.t for p in points]
    p00 = [p.p00 for p in points]
    fit = _fit_row("p00", times, p00, cfg.fit_window)
    if fit is not None:
        run.write_csv("fit.csv", FIT_HEADER, [fit])
        run.result.verdicts["on_diagonal_exponent"] = fit[1]
    run.plot("kernel_p00.dat", times, p00, fit[1] if fit else None)

    run.result.verdicts["mass_conserved"] = all(abs(p.mass - 1.0) <= MASS_TOLERANCE for p in points)
    run.result.verdicts["half_time_identity"] = max(p.identity_gap for p in points)
    run.moment_verdicts(cfg.q_list)

    if cfg.alpha is not None:
        energy = weighted_gradient_energy(env, params, cfg.alpha)
        run.write_csv(
            "weighted_energy.csv",
            ("t", "energy", "scaled_energy"),
            [(e.t, e.energy, e.scaled) for e in energy],
        )


def _run_relax(run: _Run) -> None:
    cfg = run.cfg
    params = EvolutionParams(cfg.dt, tuple(cfg.t_grid))
    series = run_relaxation(
        cfg.conductance_law,
        cfg.local_observable,
        cfg.p_list,
        params,
        cfg.reps,
        cfg.seed,
        cfg.L,
        run.threads,
    )
    rows = [row for p in sorted(series) for row in series[p].rows()]
    run.write_csv("relax.csv", ("t", "p", "moment", "stderr", "reps"), rows)

    fits = []
    for p in sorted(series):
        s = series[p]
        try:
            fit = fit_decay(s, (cfg.fit_window[0], cfg.fit_window[1]))
        except ValueError as e:
            logger.warning("No decay fit for %s: %s", s.series_id, e)
            fit = None
        if fit is not None:
            fits.append((s.series_id, fit.exponent, fit.stderr, fit.window_lo, fit.window_hi, fit.r2))
            run.result.verdicts[f"decay_exponent_p{p}"] = fit.exponent
        run.plot(f"relax_p{p}.dat", s.times, s.estimates, fit.exponent if fit else None)
    if fits:
        run.write_csv("fit.csv", FIT_HEADER, fits)

    run.result.verdicts["dissipation"] = {str(p): ok for p, ok in dissipation_check(series).items()}
    first = series[sorted(series)[0]]
    run.result.verdicts["moment_condition"] = [v.to_dict() for v in first.moment_verdicts]
    run.result.verdicts["failed_replicates"] = first.failed_reps


def _run_corrector(run: _Run) -> None:
    cfg = run.cfg
    rows = corrector_moment_sweep(
        cfg.conductance_law,
        cfg.direction,
        cfg.mu_list,
        cfg.p_list,
        cfg.reps,
        cfg.seed,
        cfg.L,
        cfg.tol,
        cfg.preconditioner,
        run.threads,
    )
    run.write_csv(
        "corrector.csv",
        ("mu", "p", "moment_estimate", "stderr", "reps_used", "nonconverged_count"),
        [(r.mu, r.p, r.moment_estimate, r.stderr, r.reps_used, r.nonconverged_count) for r in rows],
    )

    ratios: Dict[str, List[float]] = {}
    for p in cfg.p_list:
        raw = [r.moment_estimate**p for r in rows if r.p == p]
        ratios[str(p)] = [b / a if a > 0 else (1.0 if b == 0 else math.inf) for a, b in zip(raw, raw[1:])]
    run.result.verdicts["sweep_ratios"] = ratios
    run.result.verdicts["sweep_bounded"] = all(
        r <= SWEEP_RATIO_BOUND for values in ratios.values() for r in values
    )
    run.result.verdicts["nonconverged"] = sum(r.nonconverged_count for r in rows if r.p == cfg.p_list[0])
    run.moment_verdicts(cfg.q_list)


def _run_weights(run: _Run) -> None:
    cfg = run.cfg
    env = run.first_environment()
    law = cfg.conductance_law

    certs: List[PathCertificate] = []
    disconnected = 0
    for e in range(env.lattice.edge_count):
        try:
            certs.append(minimal_resistance(env, e))
        except DisconnectedError:
            disconnected += 1
    if disconnected:
        logger.warning("%d edges have disconnected endpoints and carry no certificate", disconnected)
    run.write_csv(
        "certificates.csv",
        ("edge", "w", "path_len", "provenance"),
        [(c.edge, c.weight, c.length, c.provenance) for c in certs],
    )

    detour_violations = 0
    exhausted = 0
    for cert in certs:
        try:
            detour = detour_path(env, cert.edge, DetourParams())
        except ScanExhaustedError:
            exhausted += 1
            continue
        if detour.resistance < cert.resistance * (1.0 - 1e-12):
            detour_violations += 1

    moments = weight_moment_estimate(law, cfg.q_list, cfg.reps, cfg.seed, cfg.L, run.threads)
    moments += inverse_index_moment_estimate(law, cfg.q_list, cfg.reps, cfg.seed, cfg.L, run.threads)
    moments += moderation_moment_estimate(
        law, cfg.moderation_q, cfg.r_exponent, cfg.q_list, cfg.reps, cfg.seed, cfg.L, run.threads
    )
    run.write_csv(
        "weight_moments.csv",
        ("quantity", "q", "mean", "stderr", "fail_count"),
        [(m.quantity, m.q, m.mean, m.stderr, m.fail_count) for m in moments],
    )

    verdicts = run.result.verdicts
    verdicts["weights_bounded"] = all(
        env.conductance(c.edge) * (1.0 - 1e-15) <= c.weight <= 1.0 for c in certs
    )
    verdicts["detour_never_beats_optimal"] = detour_violations == 0
    verdicts["detour_scan_exhausted"] = exhausted
    verdicts["disconnected_edges"] = disconnected
    verdicts["flagged_moments"] = sorted({m.q for m in moments if m.flagged})
    if not disconnected:
        stat = compute_moderation(env, cfg.moderation_q, cfg.r_exponent, certs)
        verdicts["moderation"] = {"value": stat.value, "argmax_r": stat.argmax_r}
    run.moment_verdicts(cfg.q_list)


def _run_necessity(run: _Run) -> None:
    cfg = run.cfg
    necessity = NecessityConfig(cfg.d, tuple(cfg.theta), cfg.q, tuple(cfg.t_grid))
    params = EvolutionParams(cfg.dt, tuple(cfg.t_grid))
    outcome = necessity_experiment(
        necessity, params, cfg.reps, cfg.seed, cfg.L, cfg.control, run.threads
    )
    rows = [("necessity", r.t, r.q, r.statistic, r.stderr, r.lower_bound) for r in outcome.rows]
    rows += [("control", r.t, r.q, r.statistic, r.stderr, r.lower_bound) for r in outcome.control_rows]
    run.write_csv("necessity.csv", ("series", "t", "q", "statistic", "stderr", "lower_bound"), rows)
    run.plot(
        "necessity.dat",
        [r.t for r in outcome.rows],
        [r.statistic for r in outcome.rows],
        None,
    )

    verdicts = run.result.verdicts
    verdicts["p0"] = necessity.p0
    verdicts["growth_ratio"] = outcome.growth_ratio
    verdicts["growth_witnessed"] = outcome.growth_witnessed
    if outcome.control_ratio is not None:
        verdicts["control_ratio"] = outcome.control_ratio
        verdicts["control_within_band"] = outcome.control_within_band
    verdicts["moment_condition"] = [
        v.to_dict() for v in moment_condition_check(necessity.law, [float(cfg.q)])
    ]


class _RuntimeFailure(RcmLabError):
    """Numerical failure surfaced from inside a pipeline."""


PIPELINES: Dict[str, Callable[[_Run], None]] = {
    "kernel": _run_kernel,
    "relax": _run_relax,
    "corrector": _run_corrector,
    "weights": _run_weights,
    "necessity": _run_necessity,
}


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[Path] = None,
    threads: Optional[int] = None,
) -> ExperimentResult:
    """
    Run the pipeline of a validated configuration and write its artifacts.

    Args:
        cfg: Validated configuration
        out_dir: Output directory (default: cfg.output)
        threads: Worker threads (default: cfg.threads)

    Returns:
        ExperimentResult listing artifacts, verdicts and warnings

    Raises:
        RcmLabError: On any module failure
    """
    target = Path(out_dir if out_dir is not None else cfg.output)
    target.mkdir(parents=True, exist_ok=True)
    result = ExperimentResult(cfg.experiment, target)
    run = _Run(cfg, target, threads if threads is not None else cfg.threads, result)

    collector = _WarningCollector()
    package_logger = logging.getLogger("rcmlab")
    package_logger.addHandler(collector)
    start = time.time()
    try:
        PIPELINES[cfg.experiment](run)
    except (ValueError, ArithmeticError) as e:
        if isinstance(e, RcmLabError):
            raise
        raise _RuntimeFailure(str(e)) from e
    finally:
        package_logger.removeHandler(collector)

    result.wall_time = time.time() - start
    result.warnings = list(cfg.warnings) + [m for m in collector.messages if m not in cfg.warnings]
    manifest = create_manifest(
        cfg.to_dict(),
        result.wall_time,
        result.warnings,
        result.verdicts,
        list(result.artifacts),
        __version__,
    )
    write_json(target / "manifest.json", manifest)
    result.artifacts.append("manifest.json")
    return result


def error_document(error: BaseException, experiment: Optional[str] = None) -> Dict[str, Any]:
    """Machine-readable description of a failed run."""
    document: Dict[str, Any] = {
        "error": type(error).__name__,
        "message": str(error),
        "experiment": experiment,
    }
    if isinstance(error, ConfigError):
        document["errors"] = error.errors
    elif isinstance(error, NonConvergedError):
        document["residual"] = error.residual
        document["iterations"] = error.iterations
    elif isinstance(error, (DisconnectedError, ScanExhaustedError)):
        document["edge"] = error.edge
    return document
