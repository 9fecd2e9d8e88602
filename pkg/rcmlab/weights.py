"""
Minimal-resistance weights, certified paths, detour construction, inverse
path index and the moderation statistic.

Edge costs are resistances 1/a(b); zero-conductance edges are absent from the
resistance graph.
"""

import heapq
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from rcmlab.ensemble import EnsembleConfig, EnsembleRunner, mean_and_stderr
from rcmlab.environment import (
    ConductanceLaw,
    Distribution,
    Environment,
    moment_condition_check,
    sample_environment,
)
from rcmlab.exceptions import DisconnectedError, ScanExhaustedError
from rcmlab.lattice import ScalarField, TorusLattice, build_torus, gradient
from rcmlab.utils import resolve_threads

__all__ = [
    "OPTIMAL",
    "DETOUR",
    "ENERGY_TOLERANCE",
    "PathCertificate",
    "is_connected_path",
    "InversePathIndex",
    "ModerationStatistic",
    "DetourParams",
    "MomentEstimate",
    "minimal_resistance",
    "detour_path",
    "certify_all",
    "build_inverse_index",
    "energy_sides",
    "verify_energy_inequality",
    "compute_moderation",
    "weight_moment_estimate",
    "inverse_index_moment_estimate",
    "moderation_moment_estimate",
]

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
DETOUR = "detour"

ENERGY_TOLERANCE = 1e-12

ORIGIN_VERTEX = 0


@dataclass(frozen=True)
class PathCertificate:
    """Weight w(e) together with the path that certifies it."""

    edge: int
    weight: float
    path: Tuple[int, ...]
    provenance: str
    resistance: float

    def __post_init__(self) -> None:
        if self.provenance not in (OPTIMAL, DETOUR):
            raise ValueError(f"Unknown provenance '{self.provenance}'")
        if not self.path:
            raise ValueError("A certificate path needs at least one edge")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"Weight must lie in (0, 1], got {self.weight}")

    @property
    def length(self) -> int:
        return len(self.path)


def _path_resistance(env: Environment, path: Sequence[int]) -> float:
    return math.fsum(1.0 / env.values[b] for b in path)


def _certificate(env: Environment, edge: int, path: Tuple[int, ...], provenance: str) -> PathCertificate:
    resistance = _path_resistance(env, path)
    # A lone edge certifies w(e) = a(e) exactly
    weight = env.conductance(path[0]) if len(path) == 1 else 1.0 / resistance
    return PathCertificate(edge, weight, path, provenance, resistance)


def is_connected_path(lattice: TorusLattice, edge: int, path: Sequence[int]) -> bool:
    """Whether path is a nearest-neighbor walk from underline(edge) to overline(edge)."""
    start, target = lattice.edge_endpoints(edge)
    current = start
    for b in path:
        under, over = lattice.edge_endpoints(b)
        if current == under:
            current = over
        elif current == over:
            current = under
        else:
            return False
    return current == target


def minimal_resistance(env: Environment, e: int) -> PathCertificate:
    """
    Optimal path between the endpoints of e under edge costs 1/a(b).

    Dijkstra's algorithm over (cost, path) heap entries: among paths of equal
    cost the lexicographically smallest edge-index sequence wins, and costs
    are exactly rounded sums so the comparison does not depend on the order
    edges were added.

    Args:
        env: Environment
        e: Edge index

    Returns:
        PathCertificate with provenance "optimal"

    Raises:
        DisconnectedError: If no positive-conductance path joins the endpoints
    """
    lattice = env.lattice
    start, target = lattice.edge_endpoints(e)
    edges, others = lattice.adjacency
    resistances = np.divide(1.0, env.values, out=np.full(lattice.edge_count, np.inf), where=env.values > 0)

    heap: List[Tuple[float, Tuple[int, ...], int]] = [(0.0, (), start)]
    settled = set()
    while heap:
        cost, path, vertex = heapq.heappop(heap)
        if vertex in settled:
            continue
        settled.add(vertex)
        if vertex == target:
            return _certificate(env, e, path, OPTIMAL)
        for b, other in zip(edges[vertex], others[vertex]):
            if other in settled or not math.isfinite(resistances[b]):
                continue
            extended = path + (int(b),)
            heapq.heappush(
                heap, (math.fsum(resistances[list(extended)]), extended, int(other))
            )
    raise DisconnectedError(e)


@dataclass(frozen=True)
class DetourParams:
    """
    Threshold and search order of the constructive detour.

    epsilon defaults to the median of the law of e's direction (halved when
    the law puts no mass above its median); search_order defaults to the
    remaining directions in increasing order.
    """

    epsilon: Optional[float] = None
    search_order: Optional[Tuple[int, ...]] = None

    def __post_init__(self) -> None:
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"Detour threshold must be positive, got {self.epsilon}")

    def threshold(self, component: Distribution) -> float:
        if self.epsilon is not None:
            eps = self.epsilon
        else:
            eps = component.median()
            if component.survival(eps) <= 0.0:
                eps = eps / 2.0
        if component.survival(eps) <= 0.0:
            raise ValueError(
                f"Detour threshold {eps:g} leaves no mass above it: P(a > eps) = 0"
            )
        return eps

    def order(self, d: int, direction: int) -> Tuple[int, ...]:
        if self.search_order is None:
            return tuple(i for i in range(d) if i != direction)
        for i in self.search_order:
            if not 0 <= i < d:
                raise ValueError(f"Search direction {i} out of range for d={d}")
        return tuple(i for i in self.search_order if i != direction)


def detour_path(env: Environment, e: int, params: DetourParams = DetourParams()) -> PathCertificate:
    """
    Constructive detour around e.

    From underline(e), move k steps along a transverse direction, cross the
    parallel copy of e and come back: the first k whose parallel copy has
    conductance above the threshold (and whose detour avoids zero
    conductances) gives a path of 2k + 1 edges. e itself is returned when
    its conductance already exceeds the threshold.

    Raises:
        ScanExhaustedError: If no usable copy is found within L/2 steps
    """
    lattice = env.lattice
    under, direction = divmod(e, lattice.d)
    eps = params.threshold(env.law.component(direction))
    values = env.values

    if values[e] > eps:
        return _certificate(env, e, (e,), DETOUR)

    over = lattice.neighbor(under, direction)
    max_steps = lattice.L // 2
    for transverse in params.order(lattice.d, direction):
        for k in range(1, max_steps + 1):
            far = lattice.neighbor(under, transverse, k)
            parallel = lattice.edge(far, direction)
            if values[parallel] <= eps:
                continue
            outward = [lattice.edge(lattice.neighbor(under, transverse, m), transverse) for m in range(k)]
            inward = [
                lattice.edge(lattice.neighbor(over, transverse, m), transverse)
                for m in range(k - 1, -1, -1)
            ]
            path = tuple(outward + [parallel] + inward)
            if all(values[b] > 0.0 for b in path):
                return _certificate(env, e, path, DETOUR)
    raise ScanExhaustedError(e, max_steps)


def certify_all(env: Environment, threads: Optional[int] = 1) -> List[PathCertificate]:
    """Optimal certificates for every edge, in edge-index order."""
    workers = resolve_threads(threads)
    edges = range(env.lattice.edge_count)
    if workers == 1:
        return [minimal_resistance(env, e) for e in edges]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda e: minimal_resistance(env, e), edges))


@dataclass(frozen=True)
class InversePathIndex:
    """For every edge b, the set of edges whose certified path uses b."""

    preimages: Dict[int, FrozenSet[int]]

    def preimage(self, b: int) -> FrozenSet[int]:
        return self.preimages.get(b, frozenset())

    def size(self, b: int) -> int:
        return len(self.preimage(b))

    def total(self) -> int:
        return sum(len(s) for s in self.preimages.values())


def build_inverse_index(certs: Sequence[PathCertificate]) -> InversePathIndex:
    """
    Invert the path relation of a full certificate set.

    Raises:
        ValueError: If two certificates share an edge
    """
    seen = set()
    inverse: Dict[int, set] = {}
    for cert in certs:
        if cert.edge in seen:
            raise ValueError(f"Duplicate certificate for edge {cert.edge}")
        seen.add(cert.edge)
        for b in cert.path:
            inverse.setdefault(b, set()).add(cert.edge)
    return InversePathIndex({b: frozenset(s) for b, s in sorted(inverse.items())})


def energy_sides(env: Environment, cert: PathCertificate, f: ScalarField) -> Tuple[float, float]:
    """Return (w(e) |grad f(e)|^2, sum over the path of a(b) |grad f(b)|^2)."""
    grad = gradient(f).values
    lhs = cert.weight * grad[cert.edge] ** 2
    rhs = math.fsum(env.values[b] * grad[b] ** 2 for b in cert.path)
    return float(lhs), rhs


def verify_energy_inequality(env: Environment, cert: PathCertificate, f: ScalarField) -> bool:
    lhs, rhs = energy_sides(env, cert, f)
    return lhs <= rhs + ENERGY_TOLERANCE


@dataclass(frozen=True)
class ModerationStatistic:
    q: float
    r_exponent: float
    value: float
    argmax_r: int


def compute_moderation(
    env: Environment,
    q: float,
    r_exponent: float,
    certs: Optional[Sequence[PathCertificate]] = None,
) -> ModerationStatistic:
    """
    Moderation statistic (max_r r^-d sum_{|overline e| <= r} w(e)^-q)^r_exponent.

    r runs over 1..L//2 and |overline e| is the minimal-image distance of the
    overline endpoint from the origin.

    Args:
        env: Environment
        q: Weight exponent (> 0)
        r_exponent: Outer exponent (> 0)
        certs: Certificates of every edge, computed when omitted

    Returns:
        ModerationStatistic
    """
    if not q > 0:
        raise ValueError(f"Moderation exponent q must be positive, got {q}")
    if not r_exponent > 0:
        raise ValueError(f"Outer exponent must be positive, got {r_exponent}")
    lattice = env.lattice
    if certs is None:
        certs = certify_all(env)
    if len(certs) != lattice.edge_count:
        raise ValueError(f"Expected {lattice.edge_count} certificates, got {len(certs)}")

    weights = np.empty(lattice.edge_count)
    for cert in certs:
        weights[cert.edge] = cert.weight
    overline = lattice.adjacency[1][:, 0::2].reshape(-1)
    distance_squared = lattice.distance_squared[overline]
    powers = weights ** (-q)

    best, best_r = -math.inf, 1
    for r in range(1, lattice.L // 2 + 1):
        average = math.fsum(powers[distance_squared <= r * r]) / r**lattice.d
        if average > best:
            best, best_r = average, r
    return ModerationStatistic(q, r_exponent, best**r_exponent, best_r)


@dataclass
class MomentEstimate:
    """Monte-Carlo estimate of one moment of a weight-related quantity."""

    quantity: str
    q: float
    mean: float
    stderr: float
    fail_count: int
    reps_used: int
    flagged: bool = False


def _central_edge(lattice: TorusLattice) -> int:
    return lattice.edge(ORIGIN_VERTEX, 0)


def _estimates(
    quantity: str,
    exponents: Sequence[float],
    samples: List[float],
    fail_count: int,
    flagged: Dict[float, bool],
) -> List[MomentEstimate]:
    rows = []
    for q in exponents:
        if samples:
            mean, stderr = mean_and_stderr([s**q for s in samples])
        else:
            mean, stderr = math.nan, math.nan
        rows.append(
            MomentEstimate(quantity, q, mean, stderr, fail_count, len(samples), flagged.get(q, False))
        )
    return rows


def weight_moment_estimate(
    law: ConductanceLaw,
    q_list: Sequence[float],
    reps: int,
    seed: int,
    L: int = 9,
    threads: Optional[int] = None,
) -> List[MomentEstimate]:
    """
    Monte-Carlo moments <w(e)^-q> and <|pi(e)|^q> at the edge leaving the origin.

    Estimates for q whose moment condition fails are still computed but
    flagged; disconnected replicates are counted, not fatal.

    Returns:
        Rows for quantity "w_inv" then "path_len", one per q
    """
    lattice = build_torus(law.d, L)
    edge = _central_edge(lattice)

    def replicate(index: int, replicate_seed: int) -> PathCertificate:
        env = sample_environment(law, lattice, replicate_seed)
        return minimal_resistance(env, edge)

    runner = EnsembleRunner(EnsembleConfig(reps=reps, seed=seed, threads=threads))
    outcomes = runner.run(replicate)
    certs = [o.value for o in outcomes if o.ok and o.value is not None]
    fails = runner.stats.failed
    verdicts = moment_condition_check(law, [max(q, 1.0) for q in q_list])
    flagged = {q: not v.passed for q, v in zip(q_list, verdicts)}
    return _estimates(
        "w_inv", q_list, [1.0 / c.weight for c in certs], fails, flagged
    ) + _estimates("path_len", q_list, [float(c.length) for c in certs], fails, flagged)


def inverse_index_moment_estimate(
    law: ConductanceLaw,
    p_list: Sequence[float],
    reps: int,
    seed: int,
    L: int = 7,
    threads: Optional[int] = None,
) -> List[MomentEstimate]:
    """Monte-Carlo moments <|pi^-1(b)|^p> at the edge leaving the origin."""
    lattice = build_torus(law.d, L)
    edge = _central_edge(lattice)

    def replicate(index: int, replicate_seed: int) -> float:
        env = sample_environment(law, lattice, replicate_seed)
        return float(build_inverse_index(certify_all(env)).size(edge))

    runner = EnsembleRunner(EnsembleConfig(reps=reps, seed=seed, threads=threads))
    outcomes = runner.run(replicate)
    samples = [float(o.value) for o in outcomes if o.ok and o.value is not None]
    return _estimates("inverse_index", p_list, samples, runner.stats.failed, {})


def moderation_moment_estimate(
    law: ConductanceLaw,
    q: float,
    r_exponent: float,
    p_list: Sequence[float],
    reps: int,
    seed: int,
    L: int = 7,
    threads: Optional[int] = None,
) -> List[MomentEstimate]:
    """Monte-Carlo moments of the moderation statistic over independent environments."""
    lattice = build_torus(law.d, L)

    def replicate(index: int, replicate_seed: int) -> float:
        env = sample_environment(law, lattice, replicate_seed)
        return compute_moderation(env, q, r_exponent).value

    runner = EnsembleRunner(EnsembleConfig(reps=reps, seed=seed, threads=threads))
    outcomes = runner.run(replicate)
    samples = [float(o.value) for o in outcomes if o.ok and o.value is not None]
    return _estimates("moderation", p_list, samples, runner.stats.failed, {})
