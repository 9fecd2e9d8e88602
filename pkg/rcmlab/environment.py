"""
Random conductance environments: laws, sampling, translations, Glauber
resampling, the negative-moment condition and local observables.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy import integrate, special

from rcmlab.exceptions import SupportError
from rcmlab.lattice import (
    EdgeField,
    ScalarField,
    TorusLattice,
    build_torus,
    divergence,
    generator_matrix,
)

__all__ = [
    "Distribution",
    "Constant",
    "Bernoulli",
    "InverseShiftedExponential",
    "Uniform",
    "PowerLawNearZero",
    "ConductanceLaw",
    "Environment",
    "MomentVerdict",
    "LocalObservable",
    "Conductance",
    "CenteredConductance",
    "DivergenceForm",
    "distribution_from_dict",
    "law_from_spec",
    "observable_from_dict",
    "sample_environment",
    "shift",
    "resample_edge",
    "moment_condition_check",
    "monte_carlo_moment",
    "check_support",
    "evaluate_observable",
    "dump_environment",
    "load_environment",
]

logger = logging.getLogger(__name__)

ENVIRONMENT_FORMAT_VERSION = 1
MONTE_CARLO_DRAWS = 10**6

Vertex = Union[int, Sequence[int]]


class Distribution(ABC):
    """Law of a single conductance, supported in [0, 1]."""

    kind: ClassVar[str] = ""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` independent conductances."""

    @abstractmethod
    def cdf(self, s: float) -> float:
        """P(a <= s)."""

    @abstractmethod
    def ppf(self, u: float) -> float:
        """Quantile function."""

    @abstractmethod
    def mean(self) -> float:
        """Closed-form expectation."""

    @abstractmethod
    def variance(self) -> float:
        """Closed-form variance."""

    @abstractmethod
    def support(self) -> Tuple[float, float]:
        """Smallest interval carrying the law."""

    @abstractmethod
    def atom_at_zero(self) -> float:
        """P(a = 0)."""

    @abstractmethod
    def zero_exponent(self) -> float:
        """Exponent k with P(a <= s) ~ s^k as s -> 0 (inf when faster than any power)."""

    @abstractmethod
    def params(self) -> Dict[str, float]:
        """Parameters as a JSON-compatible mapping."""

    def breakpoints(self) -> Tuple[float, ...]:
        """Discontinuities of the CDF inside (0, 1)."""
        return ()

    def survival(self, s: float) -> float:
        return 1.0 - self.cdf(s)

    def median(self) -> float:
        return self.ppf(0.5)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, **self.params()}


@dataclass(frozen=True)
class Constant(Distribution):
    """Deterministic conductance c in (0, 1]."""

    c: float
    kind: ClassVar[str] = "constant"

    def __post_init__(self) -> None:
        if not 0.0 < self.c <= 1.0:
            raise ValueError(f"Constant conductance must lie in (0, 1], got {self.c}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.c))

    def cdf(self, s: float) -> float:
        return 1.0 if s >= self.c else 0.0

    def ppf(self, u: float) -> float:
        return float(self.c)

    def mean(self) -> float:
        return float(self.c)

    def variance(self) -> float:
        return 0.0

    def support(self) -> Tuple[float, float]:
        return (self.c, self.c)

    def atom_at_zero(self) -> float:
        return 0.0

    def zero_exponent(self) -> float:
        return math.inf

    def params(self) -> Dict[str, float]:
        return {"c": self.c}

    def breakpoints(self) -> Tuple[float, ...]:
        return (self.c,) if self.c < 1.0 else ()


@dataclass(frozen=True)
class Bernoulli(Distribution):
    """Two-point law: hi with probability p, lo with probability 1 - p."""

    p: float
    lo: float
    hi: float
    kind: ClassVar[str] = "bernoulli"

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Bernoulli probability must lie in [0, 1], got {self.p}")
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError(
                f"Bernoulli values must satisfy 0 <= lo < hi <= 1, got lo={self.lo}, hi={self.hi}"
            )
        if self.p == 0.0 and self.lo == 0.0:
            raise ValueError("Bernoulli(p=0, lo=0) is a Dirac mass at 0")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.where(rng.random(size) < self.p, self.hi, self.lo).astype(float)

    def cdf(self, s: float) -> float:
        if s < self.lo:
            return 0.0
        if s < self.hi:
            return 1.0 - self.p
        return 1.0

    def ppf(self, u: float) -> float:
        return float(self.lo) if u < 1.0 - self.p else float(self.hi)

    def mean(self) -> float:
        return self.lo + self.p * (self.hi - self.lo)

    def variance(self) -> float:
        return self.p * (1.0 - self.p) * (self.hi - self.lo) ** 2

    def support(self) -> Tuple[float, float]:
        if self.p == 1.0:
            return (self.hi, self.hi)
        if self.p == 0.0:
            return (self.lo, self.lo)
        return (self.lo, self.hi)

    def atom_at_zero(self) -> float:
        return 1.0 - self.p if self.lo == 0.0 else 0.0

    def zero_exponent(self) -> float:
        # An atom at zero keeps the CDF bounded away from 0 near the origin.
        return 0.0 if self.atom_at_zero() > 0.0 else math.inf

    def params(self) -> Dict[str, float]:
        return {"p": self.p, "lo": self.lo, "hi": self.hi}

    def breakpoints(self) -> Tuple[float, ...]:
        return tuple(b for b in (self.lo, self.hi) if 0.0 < b < 1.0)


@dataclass(frozen=True)
class InverseShiftedExponential(Distribution):
    """a = 1 / (1 + E) with E exponential of the given rate."""

    rate: float
    kind: ClassVar[str] = "inverse_shifted_exponential"

    def __post_init__(self) -> None:
        if not self.rate > 0.0:
            raise ValueError(f"Exponential rate must be positive, got {self.rate}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return 1.0 / (1.0 + rng.exponential(1.0 / self.rate, size))

    def cdf(self, s: float) -> float:
        if s <= 0.0:
            return 0.0
        if s >= 1.0:
            return 1.0
        return math.exp(-self.rate * (1.0 / s - 1.0))

    def ppf(self, u: float) -> float:
        if u <= 0.0:
            return 0.0
        return 1.0 / (1.0 - math.log(u) / self.rate)

    def mean(self) -> float:
        # E[1/(1+E)] = rate * e^rate * E1(rate)
        return float(self.rate * special.exp1(self.rate) * math.exp(self.rate))

    def variance(self) -> float:
        second = self.rate - self.rate**2 * math.exp(self.rate) * special.exp1(self.rate)
        return float(second - self.mean() ** 2)

    def support(self) -> Tuple[float, float]:
        return (0.0, 1.0)

    def atom_at_zero(self) -> float:
        return 0.0

    def zero_exponent(self) -> float:
        return math.inf

    def params(self) -> Dict[str, float]:
        return {"rate": self.rate}


@dataclass(frozen=True)
class Uniform(Distribution):
    """Uniform law on [lo, hi] inside [0, 1]."""

    lo: float
    hi: float
    kind: ClassVar[str] = "uniform"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ValueError(
                f"Uniform bounds must satisfy 0 <= lo < hi <= 1, got lo={self.lo}, hi={self.hi}"
            )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size)

    def cdf(self, s: float) -> float:
        return float(min(max((s - self.lo) / (self.hi - self.lo), 0.0), 1.0))

    def ppf(self, u: float) -> float:
        return self.lo + u * (self.hi - self.lo)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    def support(self) -> Tuple[float, float]:
        return (self.lo, self.hi)

    def atom_at_zero(self) -> float:
        return 0.0

    def zero_exponent(self) -> float:
        return 1.0 if self.lo == 0.0 else math.inf

    def params(self) -> Dict[str, float]:
        return {"lo": self.lo, "hi": self.hi}

    def breakpoints(self) -> Tuple[float, ...]:
        return tuple(b for b in (self.lo, self.hi) if 0.0 < b < 1.0)


@dataclass(frozen=True)
class PowerLawNearZero(Distribution):
    """a = U^(1/theta), so that P(a <= s) = s^theta."""

    theta: float
    kind: ClassVar[str] = "power_law_near_zero"

    def __post_init__(self) -> None:
        if not self.theta > 0.0:
            raise ValueError(f"Power-law exponent must be positive, got {self.theta}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.random(size) ** (1.0 / self.theta)

    def cdf(self, s: float) -> float:
        return float(min(max(s, 0.0), 1.0) ** self.theta)

    def ppf(self, u: float) -> float:
        return float(u ** (1.0 / self.theta))

    def mean(self) -> float:
        return self.theta / (self.theta + 1.0)

    def variance(self) -> float:
        return self.theta / (self.theta + 2.0) - self.mean() ** 2

    def support(self) -> Tuple[float, float]:
        return (0.0, 1.0)

    def atom_at_zero(self) -> float:
        return 0.0

    def zero_exponent(self) -> float:
        return float(self.theta)

    def params(self) -> Dict[str, float]:
        return {"theta": self.theta}


DISTRIBUTIONS: Dict[str, type] = {
    cls.kind: cls
    for cls in (Constant, Bernoulli, InverseShiftedExponential, Uniform, PowerLawNearZero)
}


def distribution_from_dict(spec: Dict[str, Any]) -> Distribution:
    """
    Build a distribution from its JSON form, e.g. {"kind": "bernoulli", "p": 0.5, "lo": 0, "hi": 1}.

    Raises:
        ValueError: On unknown kinds, missing or unexpected parameters, or invalid values
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"Law spec must be an object with a 'kind' key, got {spec!r}")
    kind = spec["kind"]
    if kind not in DISTRIBUTIONS:
        raise ValueError(
            f"Unknown law kind '{kind}' (choose from {', '.join(sorted(DISTRIBUTIONS))})"
        )
    params = {k: v for k, v in spec.items() if k != "kind"}
    try:
        return DISTRIBUTIONS[kind](**{k: float(v) for k, v in params.items()})
    except TypeError as e:
        raise ValueError(f"Bad parameters for law '{kind}': {e}") from e


@dataclass(frozen=True)
class ConductanceLaw:
    """Product law: one independent distribution per lattice direction."""

    components: Tuple[Distribution, ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("A conductance law needs at least one direction component")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def d(self) -> int:
        return len(self.components)

    @classmethod
    def isotropic(cls, component: Distribution, d: int) -> ConductanceLaw:
        return cls((component,) * d)

    def component(self, direction: int) -> Distribution:
        return self.components[direction]

    def sup_cdf(self, s: float) -> float:
        """P(max_i a(e_i) <= s) for independent directions."""
        return float(np.prod([c.cdf(s) for c in self.components]))

    def sup_atom_at_zero(self) -> float:
        return float(np.prod([c.atom_at_zero() for c in self.components]))

    def sup_zero_exponent(self) -> float:
        return float(sum(c.zero_exponent() for c in self.components))

    def to_dict(self) -> List[Dict[str, Any]]:
        return [c.to_dict() for c in self.components]


def law_from_spec(spec: Union[Dict[str, Any], List[Dict[str, Any]]], d: int) -> ConductanceLaw:
    """
    Build a per-direction law; a single object is used for every direction.

    Raises:
        ValueError: If the number of components does not match d
    """
    if isinstance(spec, dict):
        return ConductanceLaw.isotropic(distribution_from_dict(spec), d)
    if not isinstance(spec, list) or len(spec) != d:
        raise ValueError(
            f"Law must be one object or a list of {d} per-direction objects"
        )
    return ConductanceLaw(tuple(distribution_from_dict(item) for item in spec))


@dataclass(frozen=True, eq=False)
class Environment:
    """Conductance field on a torus together with the law and seed that produced it."""

    lattice: TorusLattice
    conductances: EdgeField
    law: ConductanceLaw
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.conductances.lattice != self.lattice:
            raise ValueError("Conductance field lives on a different lattice")
        if self.law.d != self.lattice.d:
            raise ValueError(
                f"Law has {self.law.d} direction components but lattice has d={self.lattice.d}"
            )
        values = self.conductances.values
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValueError("Conductances must lie in [0, 1]")

    @property
    def values(self) -> np.ndarray:
        return self.conductances.values

    @cached_property
    def generator(self) -> sp.csr_matrix:
        return generator_matrix(self.lattice, self.values)

    def conductance(self, edge: int) -> float:
        return float(self.values[edge])


def sample_environment(law: ConductanceLaw, lattice: TorusLattice, seed: int) -> Environment:
    """
    Draw independent conductances, direction by direction.

    Args:
        law: Per-direction product law
        lattice: Torus to populate
        seed: Seed (or SeedSequence entropy) of the random stream

    Returns:
        Environment; identical (law, lattice, seed) give bit-identical fields
    """
    if law.d != lattice.d:
        raise ValueError(
            f"Law has {law.d} direction components but lattice has d={lattice.d}"
        )
    rng = np.random.default_rng(seed)
    values = np.empty((lattice.vertex_count, lattice.d))
    for direction, component in enumerate(law.components):
        values[:, direction] = component.sample(rng, lattice.vertex_count)
    return Environment(lattice, EdgeField(lattice, values.reshape(-1)), law, seed)


def _as_coords(lattice: TorusLattice, x: Vertex) -> Tuple[int, ...]:
    if isinstance(x, (int, np.integer)):
        return lattice.coords(int(x))
    coords = tuple(int(c) for c in x)
    if len(coords) != lattice.d:
        raise ValueError(f"Expected {lattice.d} coordinates, got {len(coords)}")
    return coords


def shift(env: Environment, x: Vertex) -> Environment:
    """
    Translate an environment: edge e of the result carries the conductance of x + e.

    Args:
        env: Environment
        x: Vertex index or coordinate tuple (negative coordinates allowed)

    Returns:
        Translated environment
    """
    coords = _as_coords(env.lattice, x)
    grid = env.conductances.by_direction()
    moved = np.roll(grid, shift=tuple(-c for c in coords), axis=tuple(range(env.lattice.d)))
    return Environment(env.lattice, EdgeField(env.lattice, moved.reshape(-1)), env.law, env.seed)


def resample_edge(env: Environment, e: int, seed: int) -> Environment:
    """
    Glauber move: redraw the conductance of one edge from its direction's law.

    Args:
        env: Environment
        e: Edge index
        seed: Seed of the fresh draw

    Returns:
        Environment equal to env except at e
    """
    if not 0 <= e < env.lattice.edge_count:
        raise ValueError(f"Edge {e} out of range (0-{env.lattice.edge_count - 1})")
    component = env.law.component(env.lattice.edge_direction(e))
    values = env.values.copy()
    values[e] = component.sample(np.random.default_rng(seed), 1)[0]
    return Environment(env.lattice, EdgeField(env.lattice, values), env.law, env.seed)


@dataclass
class MomentVerdict:
    """Outcome of the negative-moment check for one exponent q."""

    q: float
    passed: bool
    value: Optional[float] = None
    reason: str = ""
    method: str = "closed-form"
    diverging: bool = False

    @property
    def label(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "q": self.q,
            "verdict": self.label,
            "value": self.value,
            "reason": self.reason,
            "method": self.method,
            "diverging": self.diverging,
        }


def monte_carlo_moment(
    law: ConductanceLaw, q: float, draws: int = MONTE_CARLO_DRAWS, seed: int = 0
) -> MomentVerdict:
    """
    Monte-Carlo estimate of <(max_i a(e_i))^-q> with a divergence flag.

    The running mean is recorded at geometric checkpoints; the estimate is
    flagged as diverging when it is infinite or keeps growing over the last
    checkpoints instead of stabilizing.
    """
    rng = np.random.default_rng(seed)
    samples = np.column_stack([c.sample(rng, draws) for c in law.components])
    sup = samples.max(axis=1)
    with np.errstate(divide="ignore"):
        powers = sup ** (-q)
    cumulative = np.cumsum(powers)
    checkpoints = [draws >> k for k in range(6, -1, -1) if draws >> k > 0]
    running = [cumulative[n - 1] / n for n in checkpoints]
    estimate = float(running[-1])
    tail = running[-4:]
    growing = all(b >= a for a, b in zip(tail, tail[1:])) and tail[-1] > 1.25 * tail[0]
    diverging = not math.isfinite(estimate) or growing
    return MomentVerdict(
        q=q,
        passed=not diverging,
        value=estimate if math.isfinite(estimate) else None,
        reason="running estimate does not stabilize" if diverging else "",
        method="monte-carlo",
        diverging=diverging,
    )


def _closed_form_moment(law: ConductanceLaw, q: float) -> float:
    """1 + q * int_0^1 s^(-q-1) P(sup < s) ds, exact up to quadrature error."""
    points = sorted({b for c in law.components for b in c.breakpoints()})

    def integrand(s: float) -> float:
        cdf = law.sup_cdf(s)
        return q * s ** (-q - 1.0) * cdf if cdf > 0.0 else 0.0

    value, _ = integrate.quad(
        integrand,
        0.0,
        1.0,
        points=points or None,
        limit=400,
    )
    return 1.0 + float(value)


def moment_condition_check(
    law: ConductanceLaw,
    q_list: Sequence[float],
    method: str = "auto",
    draws: int = MONTE_CARLO_DRAWS,
    seed: int = 0,
) -> List[MomentVerdict]:
    """
    Check <(max_i a(e_i))^-q> < infinity for each q.

    Finiteness is decided from the atom of the maximum at zero and the
    polynomial order of its CDF near zero; finite moments are then evaluated
    by quadrature of the closed-form CDF, falling back to Monte Carlo when
    the quadrature does not converge.

    Args:
        law: Per-direction product law
        q_list: Exponents (each >= 1)
        method: "auto" or "monte-carlo"
        draws: Monte-Carlo sample size
        seed: Monte-Carlo seed

    Returns:
        One MomentVerdict per q, in input order

    Raises:
        ValueError: If some q < 1 or the method is unknown
    """
    if method not in ("auto", "monte-carlo"):
        raise ValueError(f"Unknown moment method '{method}'")
    for q in q_list:
        if q < 1:
            raise ValueError(f"Moment exponent must satisfy q >= 1, got q={q}")

    verdicts = []
    atom = law.sup_atom_at_zero()
    exponent = law.sup_zero_exponent()
    for q in q_list:
        if method == "monte-carlo":
            verdicts.append(monte_carlo_moment(law, q, draws, seed))
            continue
        if atom > 0.0:
            verdicts.append(MomentVerdict(q=q, passed=False, reason="P[sup = 0] > 0"))
            continue
        if q >= exponent:
            verdicts.append(
                MomentVerdict(
                    q=q,
                    passed=False,
                    reason=f"P[sup <= s] ~ s^{exponent:g} near 0; moment diverges for q >= {exponent:g}",
                )
            )
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                value = _closed_form_moment(law, q)
            except integrate.IntegrationWarning:
                logger.warning("Quadrature did not converge for q=%s; using Monte Carlo", q)
                verdicts.append(monte_carlo_moment(law, q, draws, seed))
                continue
        verdicts.append(MomentVerdict(q=q, passed=True, value=value))
    return verdicts


class LocalObservable(ABC):
    """Bounded local function g(a) of finitely many conductances."""

    kind: ClassVar[str] = ""

    @property
    @abstractmethod
    def support_size(self) -> int:
        """Number N of conductances g depends on."""

    @abstractmethod
    def support_vertices(self) -> List[Tuple[int, ...]]:
        """Unwrapped coordinates touched by the support, relative to the origin."""

    @abstractmethod
    def stationary_extension(self, env: Environment) -> np.ndarray:
        """Values g(tau_x a) for every vertex x."""

    @abstractmethod
    def sup_norm(self, law: ConductanceLaw) -> float:
        """Essential supremum of |g| under the law."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """JSON form."""


@dataclass(frozen=True)
class Conductance(LocalObservable):
    """g(a) = a(e~) for the edge e~ = (offset, offset + e_direction)."""

    offset: Tuple[int, ...]
    direction: int
    kind: ClassVar[str] = "conductance"

    def __post_init__(self) -> None:
        object.__setattr__(self, "offset", tuple(int(c) for c in self.offset))
        if not 0 <= self.direction < len(self.offset):
            raise ValueError(
                f"Direction {self.direction} out of range for a {len(self.offset)}-dimensional offset"
            )

    @property
    def support_size(self) -> int:
        return 1

    def support_vertices(self) -> List[Tuple[int, ...]]:
        over = list(self.offset)
        over[self.direction] += 1
        return [self.offset, tuple(over)]

    def stationary_extension(self, env: Environment) -> np.ndarray:
        grid = env.conductances.by_direction()[..., self.direction]
        moved = np.roll(grid, shift=tuple(-c for c in self.offset), axis=tuple(range(env.lattice.d)))
        return moved.reshape(-1)

    def sup_norm(self, law: ConductanceLaw) -> float:
        return law.component(self.direction).support()[1]

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "offset": list(self.offset), "direction": self.direction}


@dataclass(frozen=True)
class CenteredConductance(Conductance):
    """g(a) = a(e~) - <a(e~)>, centered with the closed-form law mean."""

    kind: ClassVar[str] = "centered_conductance"

    def stationary_extension(self, env: Environment) -> np.ndarray:
        mean = env.law.component(self.direction).mean()
        return super().stationary_extension(env) - mean

    def sup_norm(self, law: ConductanceLaw) -> float:
        component = law.component(self.direction)
        lo, hi = component.support()
        mean = component.mean()
        return max(hi - mean, mean - lo)


@dataclass(frozen=True)
class DivergenceForm(LocalObservable):
    """g = D*_i f, realized on the torus as the divergence of f-bar on direction-i edges."""

    direction: int
    inner: LocalObservable
    kind: ClassVar[str] = "divergence_form"

    @property
    def support_size(self) -> int:
        return 2 * self.inner.support_size

    def support_vertices(self) -> List[Tuple[int, ...]]:
        vertices = list(self.inner.support_vertices())
        for v in self.inner.support_vertices():
            moved = list(v)
            moved[self.direction] -= 1
            vertices.append(tuple(moved))
        return vertices

    def stationary_extension(self, env: Environment) -> np.ndarray:
        lattice = env.lattice
        if not 0 <= self.direction < lattice.d:
            raise ValueError(f"Direction {self.direction} out of range for d={lattice.d}")
        flux = np.zeros((lattice.vertex_count, lattice.d))
        flux[:, self.direction] = self.inner.stationary_extension(env)
        return divergence(EdgeField(lattice, flux.reshape(-1))).values

    def sup_norm(self, law: ConductanceLaw) -> float:
        return 2.0 * self.inner.sup_norm(law)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "direction": self.direction, "inner": self.inner.to_dict()}


def observable_from_dict(spec: Dict[str, Any], d: int) -> LocalObservable:
    """
    Build an observable from its JSON form.

    Raises:
        ValueError: On unknown kinds or malformed fields
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"Observable spec must be an object with a 'kind' key, got {spec!r}")
    kind = spec["kind"]
    extra = set(spec) - {"kind", "offset", "direction", "inner"}
    if extra:
        raise ValueError(f"Unknown observable keys: {', '.join(sorted(extra))}")
    direction = int(spec.get("direction", 0))
    if kind in (Conductance.kind, CenteredConductance.kind):
        offset = tuple(spec.get("offset", (0,) * d))
        if len(offset) != d:
            raise ValueError(f"Observable offset needs {d} coordinates, got {len(offset)}")
        cls = CenteredConductance if kind == CenteredConductance.kind else Conductance
        return cls(offset=offset, direction=direction)
    if kind == DivergenceForm.kind:
        if "inner" not in spec:
            raise ValueError("divergence_form observable needs an 'inner' observable")
        if not 0 <= direction < d:
            raise ValueError(f"Direction {direction} out of range for d={d}")
        return DivergenceForm(direction=direction, inner=observable_from_dict(spec["inner"], d))
    raise ValueError(f"Unknown observable kind '{kind}'")


def check_support(obs: LocalObservable, lattice: TorusLattice) -> None:
    radius = max(abs(c) for v in obs.support_vertices() for c in v)
    if radius > lattice.L // 2:
        raise SupportError(
            f"Observable support reaches distance {radius} from the origin, "
            f"beyond the minimal-image radius {lattice.L // 2} of an L={lattice.L} torus"
        )


def evaluate_observable(obs: LocalObservable, env: Environment) -> ScalarField:
    """
    Stationary extension of a local observable: vertex x carries g(tau_x a).

    Args:
        obs: Local observable
        env: Environment

    Returns:
        Vertex field g-bar

    Raises:
        SupportError: If the support does not fit in the torus
    """
    check_support(obs, env.lattice)
    return ScalarField(env.lattice, obs.stationary_extension(env))


def dump_environment(env: Environment, path: Union[str, Path]) -> None:
    """
    Write an environment as a JSON header comment followed by (edge, conductance) CSV rows.

    Floats are written with repr so that loading reproduces the field bit for bit.
    """
    header = {
        "format_version": ENVIRONMENT_FORMAT_VERSION,
        "d": env.lattice.d,
        "L": env.lattice.L,
        "law": env.law.to_dict(),
        "seed": env.seed,
    }
    lines = ["# " + json.dumps(header, sort_keys=True), "edge,conductance"]
    lines.extend(f"{e},{float(v)!r}" for e, v in enumerate(env.values))
    Path(path).write_text("\n".join(lines) + "\n")


def load_environment(path: Union[str, Path]) -> Environment:
    """
    Read an environment written by dump_environment.

    Raises:
        ValueError: On a malformed file or unsupported format version
    """
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# "):
        raise ValueError(f"{path}: missing environment header")
    header = json.loads(lines[0][2:])
    if header.get("format_version") != ENVIRONMENT_FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported environment format version {header.get('format_version')}"
        )
    lattice = build_torus(int(header["d"]), int(header["L"]))
    law = law_from_spec(header["law"], lattice.d)
    values = np.empty(lattice.edge_count)
    rows = lines[2:]
    if len(rows) != lattice.edge_count:
        raise ValueError(f"{path}: expected {lattice.edge_count} rows, got {len(rows)}")
    for row in rows:
        edge, value = row.split(",")
        values[int(edge)] = float(value)
    return Environment(lattice, EdgeField(lattice, values), law, header.get("seed"))
