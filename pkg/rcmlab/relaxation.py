"""
Relaxation experiments: Monte-Carlo moments of the evolved observable, decay
fits, the moment-condition necessity experiment and dissipation checks.

Expectations over the environment are estimated by averaging over the torus
(every vertex x carries a sample u_t(tau_x a) by stationarity) and then over
independent replicates.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats

from rcmlab.ensemble import EnsembleConfig, EnsembleRunner, mean_and_stderr, root_moment
from rcmlab.environment import (
    CenteredConductance,
    ConductanceLaw,
    LocalObservable,
    MomentVerdict,
    PowerLawNearZero,
    evaluate_observable,
    moment_condition_check,
    sample_environment,
)
from rcmlab.lattice import build_torus
from rcmlab.semigroup import EvolutionParams, evolve

__all__ = [
    "MIN_FIT_POINTS",
    "MomentSeries",
    "DecayFit",
    "NecessityConfig",
    "NecessityRow",
    "NecessityResult",
    "run_relaxation",
    "fit_power_law",
    "fit_decay",
    "necessity_experiment",
    "necessity_lower_bound",
    "dissipation_check",
]

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 4

GROWTH_FACTOR = 2.0

DISSIPATION_SLACK = 1e-12


@dataclass
class MomentSeries:
    """
    Estimates of <|u_t|^(2p)>^(1/p) over a time grid.

    Raw (un-rooted) moments and their standard errors are kept next to the
    rooted estimates.
    """

    observable: Dict[str, Any]
    p: int
    times: List[float]
    estimates: List[float]
    stderrs: List[float]
    raw_moments: List[float]
    raw_stderrs: List[float]
    reps: int
    L: int
    d: int
    law: List[Dict[str, Any]]
    seed: int
    failed_reps: int = 0
    moment_verdicts: List[MomentVerdict] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.times)
        if not all(len(c) == n for c in (self.estimates, self.stderrs, self.raw_moments, self.raw_stderrs)):
            raise ValueError("Series columns must have equal length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("Series times must be strictly increasing")
        if any(v < 0 for v in self.estimates):
            raise ValueError("Moment estimates must be non-negative")

    @property
    def series_id(self) -> str:
        return f"{self.observable.get('kind', 'observable')}_p{self.p}"

    def rows(self) -> List[Tuple[float, int, float, float, int]]:
        return [(t, self.p, m, s, self.reps) for t, m, s in zip(self.times, self.estimates, self.stderrs)]


@dataclass(frozen=True)
class DecayFit:
    """Power-law fit value ~ t^-exponent over an inclusive window."""

    exponent: float
    stderr: float
    window_lo: float
    window_hi: float
    r2: float
    points: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.exponent):
            raise ValueError("Fitted exponent is not finite")


def run_relaxation(
    law: ConductanceLaw,
    obs: LocalObservable,
    p_list: Sequence[int],
    params: EvolutionParams,
    reps: int,
    seed: int,
    L: int,
    threads: Optional[int] = None,
) -> Dict[int, MomentSeries]:
    """
    Relax the stationary extension of obs and estimate <|u_t|^(2p)>^(1/p).

    Args:
        law: Conductance law
        obs: Initial observable g
        p_list: Integer moment orders (>= 1)
        params: Time step and output grid
        reps: Number of replicates (>= 2)
        seed: Master seed
        L: Torus side
        threads: Worker threads

    Returns:
        One MomentSeries per p

    Raises:
        ValueError: If reps < 2 or some p is not a positive integer
        SupportError: If obs does not fit the torus
    """
    if reps < 2:
        raise ValueError(f"At least 2 replicates are needed for a standard error, got {reps}")
    orders = [int(p) for p in p_list]
    if not orders or any(p < 1 or p != q for p, q in zip(orders, p_list)):
        raise ValueError(f"Moment orders must be positive integers, got {list(p_list)}")
    lattice = build_torus(law.d, L)
    verdicts = moment_condition_check(law, sorted({float(p) for p in orders}))
    if not all(v.passed for v in verdicts):
        logger.warning(
            "Moment condition fails for q in %s", [v.q for v in verdicts if not v.passed]
        )

    def replicate(index: int, replicate_seed: int) -> np.ndarray:
        env = sample_environment(law, lattice, replicate_seed)
        fields = evolve(env, evaluate_observable(obs, env), params)
        # rows: times, columns: moment orders
        return np.array(
            [[float(np.mean(np.abs(f.values) ** (2 * p))) for p in orders] for f in fields]
        )

    runner = EnsembleRunner(EnsembleConfig(reps=reps, seed=seed, threads=threads))
    outcomes = runner.run(replicate)
    samples = [o.value for o in outcomes if o.ok and o.value is not None]
    if len(samples) < 2:
        raise ValueError(f"Only {len(samples)} replicates succeeded; need at least 2")
    stack = np.stack(samples)

    series = {}
    for k, p in enumerate(orders):
        raw, raw_err, estimates, errs = [], [], [], []
        for j in range(len(params.t_grid)):
            mean, stderr = mean_and_stderr(stack[:, j, k])
            rooted, rooted_err = root_moment(mean, stderr, p)
            raw.append(mean)
            raw_err.append(stderr)
            estimates.append(rooted)
            errs.append(rooted_err)
        series[p] = MomentSeries(
            observable=obs.to_dict(),
            p=p,
            times=list(params.t_grid),
            estimates=estimates,
            stderrs=errs,
            raw_moments=raw,
            raw_stderrs=raw_err,
            reps=len(samples),
            L=L,
            d=law.d,
            law=law.to_dict(),
            seed=seed,
            failed_reps=runner.stats.failed,
            moment_verdicts=verdicts,
        )
    return series


def fit_power_law(
    times: Sequence[float], values: Sequence[float], window: Tuple[float, float]
) -> DecayFit:
    """
    Least-squares fit of log(value) against log(t) over an inclusive window.

    Raises:
        ValueError: With fewer than 4 points in the window or a non-positive value there
    """
    lo, hi = window
    selected = [(t, v) for t, v in zip(times, values) if lo <= t <= hi]
    if len(selected) < MIN_FIT_POINTS:
        raise ValueError(
            f"Decay fit needs at least {MIN_FIT_POINTS} points in [{lo:g}, {hi:g}], got {len(selected)}"
        )
    if any(t <= 0 or v <= 0 for t, v in selected):
        raise ValueError(f"Decay fit window [{lo:g}, {hi:g}] contains non-positive values")
    log_t = np.log([t for t, _ in selected])
    log_v = np.log([v for _, v in selected])
    result = stats.linregress(log_t, log_v)
    return DecayFit(
        exponent=-float(result.slope),
        stderr=float(result.stderr),
        window_lo=selected[0][0],
        window_hi=selected[-1][0],
        r2=float(result.rvalue**2),
        points=len(selected),
    )


def fit_decay(series: MomentSeries, window: Tuple[float, float]) -> DecayFit:
    """Decay exponent of a moment series, reported as a positive rate."""
    return fit_power_law(series.times, series.estimates, window)


@dataclass(frozen=True)
class NecessityConfig:
    """
    Product law PowerLawNearZero(theta_i) with the observable a(e~) - <a(e~)>
    at the edge e~ = (e_1, 2 e_1), which avoids the origin.
    """

    d: int
    theta: Tuple[float, ...]
    q: int
    t_ladder: Tuple[float, ...]

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError(f"Dimension must be at least 1, got d={self.d}")
        theta = tuple(float(t) for t in self.theta)
        if len(theta) == 1:
            theta = theta * self.d
        if len(theta) != self.d or any(t <= 0 for t in theta):
            raise ValueError(f"Need {self.d} positive exponents theta, got {self.theta}")
        object.__setattr__(self, "theta", theta)
        if self.q < 1:
            raise ValueError(f"Moment order must be at least 1, got q={self.q}")
        if not self.t_ladder or any(t <= 0 for t in self.t_ladder):
            raise ValueError("Time ladder must be non-empty with positive times")

    @property
    def p0(self) -> float:
        """Exponent with P(max_i a(e_i) <= s) = s^p0."""
        return sum(self.theta)

    @property
    def law(self) -> ConductanceLaw:
        return ConductanceLaw(tuple(PowerLawNearZero(t) for t in self.theta))

    @property
    def observable(self) -> CenteredConductance:
        offset = (1,) + (0,) * (self.d - 1)
        return CenteredConductance(offset=offset, direction=0)


@dataclass(frozen=True)
class NecessityRow:
    t: float
    q: int
    statistic: float
    stderr: float
    lower_bound: float


@dataclass
class NecessityResult:
    rows: List[NecessityRow]
    growth_ratio: float
    growth_witnessed: bool
    control_rows: List[NecessityRow] = field(default_factory=list)
    control_ratio: Optional[float] = None
    control_within_band: Optional[bool] = None


def necessity_lower_bound(cfg: NecessityConfig, t: float) -> float:
    """
    Lower bound on <|u_t|^(2q)>^(1/q) from trapping near the origin.

    (<(|g| - |g|_inf / t)_+^(2q)> * P(max_i a(e_i) <= t^-2)^2)^(1/q), with the
    first factor integrated over the quantile function of the law.
    """
    if not t > 0:
        raise ValueError(f"Time must be positive, got t={t}")
    obs = cfg.observable
    component = cfg.law.component(obs.direction)
    mean = component.mean()
    cut = obs.sup_norm(cfg.law) / t

    def integrand(u: float) -> float:
        excess = abs(component.ppf(u) - mean) - cut
        return excess ** (2 * cfg.q) if excess > 0 else 0.0

    kinks = sorted({component.cdf(s) for s in (mean - cut, mean, mean + cut) if 0 < s < 1})
    expectation, _ = integrate.quad(integrand, 0.0, 1.0, points=kinks or None, limit=200)
    trapping = min(t**-2.0, 1.0) ** cfg.p0
    return float((expectation * trapping**2) ** (1.0 / cfg.q))


def _scaled_rows(series: MomentSeries, d: int, bound: Optional[NecessityConfig]) -> List[NecessityRow]:
    rows = []
    for t, m, s in zip(series.times, series.estimates, series.stderrs):
        scale = t ** (d / 2)
        lower = scale * necessity_lower_bound(bound, t) if bound is not None else math.nan
        rows.append(NecessityRow(t, series.p, scale * m, scale * s, lower))
    return rows


def _ratio(rows: List[NecessityRow]) -> float:
    first, last = rows[0].statistic, rows[-1].statistic
    if first == 0.0:
        return math.inf if last > 0 else 1.0
    return last / first


def necessity_experiment(
    cfg: NecessityConfig,
    params: Optional[EvolutionParams],
    reps: int,
    seed: int,
    L: int,
    control_law: Optional[ConductanceLaw] = None,
    threads: Optional[int] = None,
) -> NecessityResult:
    """
    S(q, t) = t^(d/2) <|u_t|^(2q)>^(1/q) along the time ladder.

    Growth is witnessed when S(q, t_max) / S(q, t_min) >= 2. With a control
    law, S(1, t) is computed for it as well and checked to stay within a
    factor-2 band.

    Args:
        cfg: Necessity law and observable
        params: Evolution parameters; built from cfg.t_ladder with dt = 1/(4d) when None
        reps: Replicates
        seed: Master seed
        L: Torus side
        control_law: Optional uniformly elliptic comparison law
        threads: Worker threads

    Returns:
        NecessityResult
    """
    if params is None:
        params = EvolutionParams.default(cfg.d, cfg.t_ladder)
    verdicts = moment_condition_check(cfg.law, [float(cfg.q)])
    if verdicts[0].passed:
        logger.warning("Moment condition holds for q=%d; no growth is expected", cfg.q)

    series = run_relaxation(cfg.law, cfg.observable, [cfg.q], params, reps, seed, L, threads)[cfg.q]
    rows = _scaled_rows(series, cfg.d, cfg)
    ratio = _ratio(rows)
    result = NecessityResult(rows, ratio, ratio >= GROWTH_FACTOR)

    if control_law is not None:
        control = run_relaxation(control_law, cfg.observable, [1], params, reps, seed, L, threads)[1]
        control_rows = _scaled_rows(control, cfg.d, None)
        values = [r.statistic for r in control_rows]
        result.control_rows = control_rows
        result.control_ratio = _ratio(control_rows)
        result.control_within_band = min(values) > 0 and max(values) / min(values) <= GROWTH_FACTOR
    return result


def dissipation_check(series: Mapping[int, MomentSeries]) -> Dict[int, bool]:
    """
    Whether each raw moment series t -> <u_t^(2p)> is non-increasing.

    Returns:
        Mapping from p to the verdict
    """
    verdicts = {}
    for p, s in series.items():
        raw = s.raw_moments
        verdicts[p] = all(
            b <= a * (1.0 + DISSIPATION_SLACK) for a, b in zip(raw, raw[1:])
        )
    return verdicts
