"""
Periodic torus geometry and the discrete calculus built on it.

Vertices of the torus (Z/LZ)^d are indexed row-major over their
coordinates. The edge leaving vertex x in direction e_i has index
x * d + i; its underline endpoint is x and its overline endpoint x + e_i.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from rcmlab.exceptions import LatticeMismatchError

if TYPE_CHECKING:
    from rcmlab.environment import Environment

__all__ = [
    "TorusLattice",
    "ScalarField",
    "EdgeField",
    "WeightSpec",
    "build_torus",
    "gradient",
    "divergence",
    "apply_generator",
    "generator_matrix",
    "weight_factor",
    "weighted_sum",
]


@dataclass(frozen=True)
class TorusLattice:
    """Discrete torus of dimension d and side length L."""

    d: int
    L: int

    def __post_init__(self) -> None:
        """Validate geometry after initialization."""
        if self.d < 1:
            raise ValueError(f"Dimension must be at least 1, got d={self.d}")
        if self.L < 3:
            raise ValueError(
                f"Side length must satisfy L >= 3 so that no two edges join the "
                f"same vertex pair, got L={self.L}"
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def vertex_count(self) -> int:
        return self.L**self.d

    @property
    def edge_count(self) -> int:
        return self.d * self.L**self.d

    def coords(self, vertex: int) -> Tuple[int, ...]:
        """Coordinates of a vertex index."""
        return tuple(int(c) for c in np.unravel_index(vertex, self.shape))

    def vertex(self, coords: Sequence[int]) -> int:
        """Vertex index of (wrapped) coordinates."""
        if len(coords) != self.d:
            raise ValueError(f"Expected {self.d} coordinates, got {len(coords)}")
        wrapped = tuple(int(c) % self.L for c in coords)
        return int(np.ravel_multi_index(wrapped, self.shape))

    def neighbor(self, vertex: int, direction: int, step: int = 1) -> int:
        """Vertex reached from `vertex` by `step` unit moves along e_direction."""
        coords = list(self.coords(vertex))
        coords[direction] += step
        return self.vertex(coords)

    def edge(self, vertex: int, direction: int) -> int:
        """Index of the edge (vertex, vertex + e_direction)."""
        if not 0 <= direction < self.d:
            raise ValueError(f"Direction {direction} out of range for d={self.d}")
        return vertex * self.d + direction

    def edge_direction(self, edge: int) -> int:
        return edge % self.d

    def edge_endpoints(self, edge: int) -> Tuple[int, int]:
        """Return (underline, overline) endpoints of an edge."""
        if not 0 <= edge < self.edge_count:
            raise ValueError(f"Edge {edge} out of range (0-{self.edge_count - 1})")
        under, direction = divmod(edge, self.d)
        return under, self.neighbor(under, direction)

    def incident_edges(self, vertex: int) -> List[Tuple[int, int]]:
        """The 2d edges touching a vertex, as (edge, other endpoint) pairs."""
        incident = []
        for direction in range(self.d):
            incident.append(
                (self.edge(vertex, direction), self.neighbor(vertex, direction))
            )
            below = self.neighbor(vertex, direction, -1)
            incident.append((self.edge(below, direction), below))
        return incident

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Sparse gradient matrix (edges x vertices) with rows +1 at overline, -1 at underline."""
        vertices = np.arange(self.vertex_count)
        grid = vertices.reshape(self.shape)
        rows = []
        cols = []
        vals = []
        for direction in range(self.d):
            over = np.roll(grid, -1, axis=direction).reshape(-1)
            edges = vertices * self.d + direction
            rows.extend([edges, edges])
            cols.extend([over, vertices])
            vals.extend([np.ones(self.vertex_count), -np.ones(self.vertex_count)])
        matrix = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.edge_count, self.vertex_count),
        )
        return matrix.tocsr()

    @cached_property
    def adjacency(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Neighbor table as two (vertex_count, 2d) arrays: incident edge indices
        and the vertex at the other end, in the order of incident_edges.
        """
        vertices = np.arange(self.vertex_count)
        grid = vertices.reshape(self.shape)
        edges = np.empty((self.vertex_count, 2 * self.d), dtype=np.int64)
        others = np.empty((self.vertex_count, 2 * self.d), dtype=np.int64)
        for direction in range(self.d):
            above = np.roll(grid, -1, axis=direction).reshape(-1)
            below = np.roll(grid, 1, axis=direction).reshape(-1)
            edges[:, 2 * direction] = vertices * self.d + direction
            others[:, 2 * direction] = above
            edges[:, 2 * direction + 1] = below * self.d + direction
            others[:, 2 * direction + 1] = below
        return edges, others

    @cached_property
    def distance_squared(self) -> np.ndarray:
        """Squared minimal-image Euclidean distance of every vertex from the origin."""
        axis = np.arange(self.L)
        wrapped = np.minimum(axis, self.L - axis).astype(float) ** 2
        total = np.zeros(self.shape)
        for direction in range(self.d):
            view = [1] * self.d
            view[direction] = self.L
            total = total + wrapped.reshape(view)
        return total.reshape(-1)


def build_torus(d: int, L: int) -> TorusLattice:
    """
    Build a periodic torus lattice.

    Args:
        d: Dimension (>= 1)
        L: Side length (>= 3)

    Returns:
        TorusLattice with L^d vertices and d * L^d edges

    Raises:
        ValueError: If d < 1 or L < 3
    """
    return TorusLattice(d=d, L=L)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values attached to the vertices of a torus."""

    lattice: TorusLattice
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.lattice.vertex_count:
            raise ValueError(
                f"Scalar field needs {self.lattice.vertex_count} values, "
                f"got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("Scalar field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, lattice: TorusLattice) -> ScalarField:
        return cls(lattice, np.zeros(lattice.vertex_count))

    @classmethod
    def constant(cls, lattice: TorusLattice, value: float) -> ScalarField:
        return cls(lattice, np.full(lattice.vertex_count, float(value)))

    @classmethod
    def indicator(cls, lattice: TorusLattice, vertex: int) -> ScalarField:
        """Indicator function of a single vertex."""
        values = np.zeros(lattice.vertex_count)
        values[vertex] = 1.0
        return cls(lattice, values)

    def total(self) -> float:
        return float(np.sum(self.values))

    def grid(self) -> np.ndarray:
        """Values reshaped to the (L,)*d coordinate grid."""
        return self.values.reshape(self.lattice.shape)


@dataclass(frozen=True, eq=False)
class EdgeField:
    """Real values attached to the edges of a torus."""

    lattice: TorusLattice
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape[0] != self.lattice.edge_count:
            raise ValueError(
                f"Edge field needs {self.lattice.edge_count} values, "
                f"got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("Edge field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, lattice: TorusLattice) -> EdgeField:
        return cls(lattice, np.zeros(lattice.edge_count))

    def by_direction(self) -> np.ndarray:
        """View of shape (L,)*d + (d,): entry [x, i] is the edge (x, x + e_i)."""
        return self.values.reshape(self.lattice.shape + (self.lattice.d,))


@dataclass(frozen=True)
class WeightSpec:
    """Parameters of the space-time weight (|x|^2 / (t + 1) + 1)^(alpha / 2)."""

    alpha: float
    t: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.alpha):
            raise ValueError("Weight exponent alpha must be finite")
        if self.t < 0:
            raise ValueError(f"Weight time must be non-negative, got t={self.t}")


def _require_same_lattice(first: TorusLattice, second: TorusLattice) -> None:
    if first != second:
        raise LatticeMismatchError(
            f"Lattice mismatch: (d={first.d}, L={first.L}) vs (d={second.d}, L={second.L})"
        )


def gradient(f: ScalarField) -> EdgeField:
    """
    Discrete gradient: value on edge b is f(overline b) - f(underline b).

    Args:
        f: Vertex field

    Returns:
        Edge field of differences
    """
    return EdgeField(f.lattice, f.lattice.incidence @ f.values)


def divergence(h: EdgeField) -> ScalarField:
    """
    Adjoint of the gradient in l^2: sum_i h(x - e_i, i) - h(x, i).

    Args:
        h: Edge field

    Returns:
        Vertex field with <f, divergence(h)> = <gradient(f), h> for every f
    """
    return ScalarField(h.lattice, h.lattice.incidence.T @ h.values)


def generator_matrix(lattice: TorusLattice, conductances: np.ndarray) -> sp.csr_matrix:
    """Sparse symmetric matrix of f -> divergence(a * gradient(f))."""
    incidence = lattice.incidence
    weighted = sp.diags(np.asarray(conductances, dtype=float)) @ incidence
    return (incidence.T @ weighted).tocsr()


def apply_generator(env: Environment, f: ScalarField) -> ScalarField:
    """
    Apply the divergence-form generator to a vertex field.

    The sign convention returns -sum_{y ~ x} a((x, y)) (f(y) - f(x)), i.e. the
    non-negative operator divergence(a * gradient(f)).

    Args:
        env: Conductance environment
        f: Vertex field on the same lattice

    Returns:
        Generator applied to f

    Raises:
        LatticeMismatchError: If env and f live on different lattices
    """
    _require_same_lattice(env.lattice, f.lattice)
    return ScalarField(f.lattice, env.generator @ f.values)


def weight_factor(lattice: TorusLattice, spec: WeightSpec) -> np.ndarray:
    """Per-vertex omega_alpha(t, x) with |x| the minimal-image distance to the origin."""
    base = lattice.distance_squared / (spec.t + 1.0) + 1.0
    return base ** (spec.alpha / 2.0)


def weighted_sum(f: ScalarField, w: WeightSpec, power: int) -> float:
    """
    Weighted norm sum_x omega_alpha(t, x)^2 |f(x)|^power.

    Args:
        f: Vertex field
        w: Weight parameters
        power: Exponent applied to |f| (>= 1)

    Returns:
        The weighted sum

    Raises:
        ValueError: If power < 1
    """
    if power < 1:
        raise ValueError(f"Power must be at least 1, got {power}")
    omega = weight_factor(f.lattice, w)
    return float(np.sum(omega**2 * np.abs(f.values) ** power))
