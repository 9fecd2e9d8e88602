"""
Explicit Euler evolution of the parabolic equation on the torus, heat-kernel
columns and on-diagonal diagnostics.

With dt <= 1/(2d) and conductances in [0, 1] the transition matrix
P = I - dt * G has non-negative entries and unit row and column sums, so every
step is a convex combination of neighbor values.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from rcmlab.environment import Environment
from rcmlab.exceptions import LatticeMismatchError, StabilityError
from rcmlab.lattice import ScalarField, WeightSpec, gradient, weight_factor
from rcmlab.utils import GRID_TOLERANCE, snap_times, steps_for

__all__ = [
    "DENSE_KERNEL_LIMIT",
    "EvolutionParams",
    "KernelColumn",
    "OnDiagonalPoint",
    "WeightedEnergyPoint",
    "check_stability",
    "transition_matrix",
    "euler_step",
    "evolve",
    "heat_kernel_column",
    "on_diagonal_series",
    "kernel_matrix",
    "check_semigroup",
    "weighted_gradient_energy",
    "homogeneous_return_probability",
]

logger = logging.getLogger(__name__)

# Largest torus for which a dense L^d x L^d kernel is formed
DENSE_KERNEL_LIMIT = 4096

ORIGIN = 0


def check_stability(d: int, dt: float) -> None:
    """
    Raises:
        StabilityError: If dt exceeds the explicit Euler bound 1/(2d)
    """
    bound = 1.0 / (2 * d)
    if dt <= 0:
        raise StabilityError(f"Time step must be positive, got dt={dt}")
    if dt > bound * (1.0 + GRID_TOLERANCE):
        raise StabilityError(
            f"dt = {dt:g} violates the stability bound dt <= 1/(2d) = {bound:.4g} for d={d}"
        )


@dataclass(frozen=True)
class EvolutionParams:
    """Time step and output times, snapped to the dt grid at construction."""

    dt: float
    t_grid: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"Time step must be positive, got dt={self.dt}")
        if len(self.t_grid) == 0:
            raise ValueError("At least one output time is required")
        for a, b in zip(self.t_grid, self.t_grid[1:]):
            if not b > a:
                raise ValueError("Output times must be strictly increasing")
        snapped = tuple(snap_times(self.t_grid, self.dt))
        if len(snapped) != len(self.t_grid):
            raise ValueError(f"Output times collide after snapping to the dt={self.dt} grid")
        object.__setattr__(self, "t_grid", snapped)

    @classmethod
    def default(cls, d: int, t_grid: Sequence[float]) -> "EvolutionParams":
        """Parameters with the default step dt = 1/(4d)."""
        return cls(dt=1.0 / (4 * d), t_grid=tuple(t_grid))

    @property
    def steps(self) -> Tuple[int, ...]:
        return tuple(steps_for(t, self.dt) for t in self.t_grid)

    @property
    def t_max(self) -> float:
        return self.t_grid[-1]


@dataclass(frozen=True)
class KernelColumn:
    """Heat kernel p_t(., y) at one grid time."""

    source: int
    t: float
    values: ScalarField

    @property
    def mass(self) -> float:
        return math.fsum(self.values.values)

    def at(self, x: int) -> float:
        return float(self.values.values[x])


@dataclass(frozen=True)
class OnDiagonalPoint:
    t: float
    p00: float
    mass: float
    half_time_l2: float

    @property
    def identity_gap(self) -> float:
        """|p_t(0,0) - sum_x p_{t/2}(x,0)^2|."""
        return abs(self.p00 - self.half_time_l2)


@dataclass(frozen=True)
class WeightedEnergyPoint:
    t: float
    energy: float
    scaled: float


def transition_matrix(env: Environment, dt: float) -> sp.csr_matrix:
    """Sparse Euler transition matrix I - dt * G."""
    check_stability(env.lattice.d, dt)
    identity = sp.identity(env.lattice.vertex_count, format="csr")
    return (identity - dt * env.generator).tocsr()


def _require_lattice(env: Environment, f: ScalarField) -> None:
    if env.lattice != f.lattice:
        raise LatticeMismatchError("Field and environment live on different lattices")


def euler_step(env: Environment, f: ScalarField, dt: float) -> ScalarField:
    """
    One forward Euler step f - dt * G f.

    Args:
        env: Environment
        f: Vertex field
        dt: Time step (<= 1/(2d))

    Returns:
        Updated field

    Raises:
        StabilityError: If dt violates the stability bound
        LatticeMismatchError: If f lives on another lattice
    """
    _require_lattice(env, f)
    return ScalarField(f.lattice, transition_matrix(env, dt) @ f.values)


def _snapshots(
    transition: sp.csr_matrix, values: np.ndarray, steps: Sequence[int]
) -> Dict[int, np.ndarray]:
    wanted = set(steps)
    current = values
    out: Dict[int, np.ndarray] = {}
    last = max(steps)
    for n in range(last + 1):
        if n in wanted:
            out[n] = current
        if n < last:
            current = transition @ current
    return out


def evolve(env: Environment, f0: ScalarField, params: EvolutionParams) -> List[ScalarField]:
    """
    Evolve f0 with repeated Euler steps and snapshot at every output time.

    Args:
        env: Environment
        f0: Initial field
        params: Time step and output grid

    Returns:
        One field per entry of params.t_grid
    """
    _require_lattice(env, f0)
    transition = transition_matrix(env, params.dt)
    snapshots = _snapshots(transition, f0.values, params.steps)
    return [ScalarField(f0.lattice, snapshots[n]) for n in params.steps]


def heat_kernel_column(env: Environment, y: int, params: EvolutionParams) -> List[KernelColumn]:
    """
    Heat kernel columns p_t(., y) at every output time.

    Raises:
        ValueError: If y is not a vertex of the torus
    """
    lattice = env.lattice
    if not 0 <= y < lattice.vertex_count:
        raise ValueError(f"Vertex {y} out of range (0-{lattice.vertex_count - 1})")
    fields = evolve(env, ScalarField.indicator(lattice, y), params)
    return [KernelColumn(y, t, field) for t, field in zip(params.t_grid, fields)]


def on_diagonal_series(env: Environment, params: EvolutionParams) -> List[OnDiagonalPoint]:
    """
    Return probabilities p_t(0,0) with mass and the half-time identity.

    For n Euler steps the half-time sum is sum_x p_{n//2}(x,0) p_{n - n//2}(x,0),
    which equals p_n(0,0) by the semigroup property and symmetry of the kernel.
    """
    lattice = env.lattice
    transition = transition_matrix(env, params.dt)
    steps = params.steps
    needed = set(steps) | {n // 2 for n in steps} | {n - n // 2 for n in steps}
    columns = _snapshots(
        transition, ScalarField.indicator(lattice, ORIGIN).values, sorted(needed)
    )
    points = []
    for t, n in zip(params.t_grid, steps):
        column = columns[n]
        half = math.fsum(columns[n // 2] * columns[n - n // 2])
        points.append(
            OnDiagonalPoint(
                t=t, p00=float(column[ORIGIN]), mass=math.fsum(column), half_time_l2=half
            )
        )
    return points


def kernel_matrix(env: Environment, t: float, params: EvolutionParams) -> np.ndarray:
    """
    Dense kernel p_t(x, z) at one grid time, for small tori only.

    Column z is the evolved indicator of z.

    Raises:
        ValueError: If the torus has more than DENSE_KERNEL_LIMIT vertices
        OffGridError: If t is not a multiple of dt
    """
    n_vertices = env.lattice.vertex_count
    if n_vertices > DENSE_KERNEL_LIMIT:
        raise ValueError(
            f"Dense kernel needs vertex_count <= {DENSE_KERNEL_LIMIT}, got {n_vertices}"
        )
    transition = transition_matrix(env, params.dt)
    kernel = np.eye(n_vertices)
    for _ in range(steps_for(t, params.dt, strict=True)):
        kernel = transition @ kernel
    return np.asarray(kernel)


def check_semigroup(env: Environment, t: float, s: float, params: EvolutionParams) -> float:
    """
    Deviation max_x |p_{t+s}(x,0) - sum_z p_t(x,z) p_s(z,0)|.

    Args:
        env: Environment
        t: First time (on the dt grid)
        s: Second time (on the dt grid)
        params: Supplies dt

    Returns:
        The maximal deviation

    Raises:
        OffGridError: If t or s is off the dt grid
    """
    n_t = steps_for(t, params.dt, strict=True)
    n_s = steps_for(s, params.dt, strict=True)
    transition = transition_matrix(env, params.dt)
    columns = _snapshots(
        transition, ScalarField.indicator(env.lattice, ORIGIN).values, [n_s, n_t + n_s]
    )
    if env.lattice.vertex_count <= DENSE_KERNEL_LIMIT:
        composed = kernel_matrix(env, t, params) @ columns[n_s]
    else:
        logger.debug("Torus too large for a dense kernel; composing by repeated steps")
        composed = _snapshots(transition, columns[n_s], [n_t])[n_t]
    return float(np.max(np.abs(columns[n_t + n_s] - composed)))


def weighted_gradient_energy(
    env: Environment, params: EvolutionParams, alpha: float
) -> List[WeightedEnergyPoint]:
    """
    Weighted gradient energy of the kernel column at the origin.

    E_t = sum_b omega_alpha(underline b, t)^2 a(b) |grad p_t(b, 0)|^2, reported
    with the rescaled value (1 + t)^(d/2 + 1) E_t.
    """
    lattice = env.lattice
    points = []
    for column in heat_kernel_column(env, ORIGIN, params):
        grad = gradient(column.values).values
        omega = np.repeat(weight_factor(lattice, WeightSpec(alpha, column.t)), lattice.d)
        energy = math.fsum(omega**2 * env.values * grad**2)
        scaled = (1.0 + column.t) ** (lattice.d / 2 + 1) * energy
        points.append(WeightedEnergyPoint(column.t, energy, scaled))
    return points


def homogeneous_return_probability(d: int, L: int, dt: float, steps: int) -> float:
    """
    Closed-form Euler return probability on a torus with unit conductances.

    The Euler symbol is 1 - dt * sum_i 2(1 - cos(2 pi k_i / L)), so
    p_n(0,0) = L^-d sum_k symbol(k)^n.
    """
    check_stability(d, dt)
    axis = 2.0 * (1.0 - np.cos(2.0 * np.pi * np.arange(L) / L))
    total = np.zeros((L,) * d)
    for direction in range(d):
        view = [1] * d
        view[direction] = L
        total = total + axis.reshape(view)
    symbol = 1.0 - dt * total
    return float(np.sum(symbol**steps) / L**d)
