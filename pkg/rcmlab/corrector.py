"""
Massive corrector solves and corrector moment sweeps.

The massive corrector in direction i solves (mu I + G) phi = rhs with
rhs = -divergence(a e_i), i.e. rhs(x) = a(x, x + e_i) - a(x - e_i, x).
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from rcmlab.ensemble import EnsembleConfig, EnsembleRunner, mean_and_stderr, root_moment
from rcmlab.environment import ConductanceLaw, Environment, sample_environment
from rcmlab.exceptions import NonConvergedError
from rcmlab.lattice import EdgeField, ScalarField, build_torus, divergence
from rcmlab.semigroup import transition_matrix

__all__ = [
    "DEFAULT_TOLERANCE",
    "CorrectorSolution",
    "SweepRow",
    "assemble_rhs",
    "corrector_operator",
    "solve_massive_corrector",
    "corrector_moment_sweep",
    "corrector_by_time_integration",
]

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10

MAX_INTEGRATION_STEPS = 10**6

MAX_CG_RESTARTS = 3


@dataclass(frozen=True)
class CorrectorSolution:
    """Massive corrector phi_{e_i, mu} with solver diagnostics."""

    direction: int
    mu: float
    field: ScalarField
    residual: float
    iterations: int

    def energy_sides(self, env: Environment) -> tuple:
        """Return (mu |phi|^2 + <grad phi, a grad phi>, <phi, rhs>)."""
        phi = self.field.values
        grad = env.lattice.incidence @ phi
        lhs = self.mu * math.fsum(phi * phi) + math.fsum(env.values * grad * grad)
        rhs = math.fsum(phi * assemble_rhs(env, self.direction).values)
        return lhs, rhs


def assemble_rhs(env: Environment, i: int) -> ScalarField:
    """
    Corrector right-hand side -divergence(a e_i).

    Args:
        env: Environment
        i: Direction

    Returns:
        Field with value a(x, x + e_i) - a(x - e_i, x) at x
    """
    lattice = env.lattice
    if not 0 <= i < lattice.d:
        raise ValueError(f"Direction {i} out of range for d={lattice.d}")
    flux = np.zeros((lattice.vertex_count, lattice.d))
    flux[:, i] = env.conductances.by_direction()[..., i].reshape(-1)
    return ScalarField(lattice, -divergence(EdgeField(lattice, flux.reshape(-1))).values)


def corrector_operator(env: Environment, mu: float) -> sp.csr_matrix:
    """Sparse symmetric positive definite matrix mu I + G."""
    if not mu > 0:
        raise ValueError(f"Mass must be positive, got mu={mu}")
    identity = sp.identity(env.lattice.vertex_count, format="csr")
    return (mu * identity + env.generator).tocsr()


def _relative_residual(operator: sp.csr_matrix, phi: np.ndarray, rhs: np.ndarray) -> float:
    """Sup-norm of rhs - A phi relative to the sup-norm of rhs."""
    return float(np.max(np.abs(rhs - operator @ phi)) / np.max(np.abs(rhs)))


def solve_massive_corrector(
    env: Environment,
    i: int,
    mu: float,
    tol: float = DEFAULT_TOLERANCE,
    preconditioner: bool = False,
) -> CorrectorSolution:
    """
    Conjugate-gradient solve of (mu I + G) phi = -divergence(a e_i).

    Args:
        env: Environment
        i: Direction
        mu: Mass (> 0)
        tol: Target for the sup-norm residual relative to max|rhs|
        preconditioner: Use the operator diagonal as a Jacobi preconditioner

    Returns:
        CorrectorSolution whose residual is at most tol

    Raises:
        NonConvergedError: If the residual is still above tol after 10 L^d iterations
    """
    operator = corrector_operator(env, mu)
    rhs = assemble_rhs(env, i).values
    if not np.any(rhs):
        return CorrectorSolution(i, mu, ScalarField.zeros(env.lattice), 0.0, 0)

    maxiter = 10 * env.lattice.vertex_count
    jacobi = sp.diags(1.0 / operator.diagonal()) if preconditioner else None
    # |r|_inf <= |r|_2, so this 2-norm target implies the sup-norm one
    cg_rtol = tol * float(np.max(np.abs(rhs)) / np.linalg.norm(rhs))
    iterations = 0

    def count(_: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    phi: Optional[np.ndarray] = None
    residual = math.inf
    for _ in range(MAX_CG_RESTARTS + 1):
        remaining = maxiter - iterations
        if remaining <= 0:
            break
        phi, info = cg(
            operator,
            rhs,
            x0=phi,
            rtol=cg_rtol,
            atol=0.0,
            maxiter=remaining,
            M=jacobi,
            callback=count,
        )
        residual = _relative_residual(operator, phi, rhs)
        if residual <= tol:
            break
        if info != 0:
            break
        # CG's recursive residual drifted from the true one; restart from phi
        logger.debug("Restarting CG at iteration %d (residual=%.2e)", iterations, residual)

    if phi is None or residual > tol:
        raise NonConvergedError(residual, iterations, tol)
    logger.debug("CG converged in %d iterations (mu=%g, residual=%.2e)", iterations, mu, residual)
    return CorrectorSolution(i, mu, ScalarField(env.lattice, phi), residual, iterations)


def corrector_by_time_integration(
    env: Environment,
    i: int,
    mu: float,
    dt: Optional[float] = None,
    tol: float = 1e-8,
) -> CorrectorSolution:
    """
    Massive corrector as a discounted time integral of the relaxation of rhs.

    Sums dt * (1 + mu dt)^-(n+1) P^n rhs over the Euler grid, the discrete
    Laplace transform of the semigroup, whose infinite sum is exactly
    (mu I + G)^-1 rhs. The sum is truncated once the sup-norm tail bound
    drops below tol * max|rhs|.

    Raises:
        NonConvergedError: If the truncation needs more than a million steps
    """
    lattice = env.lattice
    step = dt if dt is not None else 1.0 / (4 * lattice.d)
    transition = transition_matrix(env, step)
    rhs = assemble_rhs(env, i).values
    if not mu > 0:
        raise ValueError(f"Mass must be positive, got mu={mu}")

    discount = 1.0 / (1.0 + mu * step)
    # Tail after N terms is at most discount^N / mu in units of max|rhs|
    needed = math.ceil(math.log(tol * mu) / math.log(discount)) if tol * mu < 1 else 1
    if needed > MAX_INTEGRATION_STEPS:
        raise NonConvergedError(discount**MAX_INTEGRATION_STEPS / mu, MAX_INTEGRATION_STEPS, tol)

    phi = np.zeros(lattice.vertex_count)
    current = rhs.copy()
    weight = step * discount
    for _ in range(needed):
        phi += weight * current
        current = transition @ current
        weight *= discount

    operator = corrector_operator(env, mu)
    residual = _relative_residual(operator, phi, rhs) if np.any(rhs) else 0.0
    return CorrectorSolution(i, mu, ScalarField(lattice, phi), residual, needed)


@dataclass
class SweepRow:
    """Moment estimate <|phi_mu|^p>^(1/p) for one (mu, p)."""

    mu: float
    p: float
    moment_estimate: float
    stderr: float
    reps_used: int
    nonconverged_count: int


def corrector_moment_sweep(
    law: ConductanceLaw,
    i: int,
    mu_list: Sequence[float],
    p_list: Sequence[float],
    reps: int,
    seed: int,
    L: int = 16,
    tol: float = DEFAULT_TOLERANCE,
    preconditioner: bool = False,
    threads: Optional[int] = None,
) -> List[SweepRow]:
    """
    Spatial and ensemble averages of |phi_mu(x)|^p over independent environments.

    Every vertex of a replicate contributes to its spatial average; the
    replicate averages are then combined into a mean with standard error.
    Replicates whose solve does not converge are dropped for that mu and
    counted.

    Args:
        law: Conductance law
        i: Direction
        mu_list: Strictly decreasing positive masses
        p_list: Moment orders (> 0)
        reps: Number of environments
        seed: Master seed
        L: Torus side
        tol: CG tolerance
        preconditioner: Jacobi preconditioning
        threads: Worker threads

    Returns:
        One row per (mu, p), mu-major
    """
    if not mu_list or any(m <= 0 for m in mu_list):
        raise ValueError("Masses must be positive")
    if any(b >= a for a, b in zip(mu_list, mu_list[1:])):
        raise ValueError("Masses must be strictly decreasing")
    if any(p <= 0 for p in p_list):
        raise ValueError("Moment orders must be positive")
    lattice = build_torus(law.d, L)

    def replicate(index: int, replicate_seed: int) -> List[Optional[np.ndarray]]:
        env = sample_environment(law, lattice, replicate_seed)
        per_mu: List[Optional[np.ndarray]] = []
        for mu in mu_list:
            try:
                phi = solve_massive_corrector(env, i, mu, tol, preconditioner).field.values
            except NonConvergedError as e:
                logger.warning("Replicate %d, mu=%g: %s", index, mu, e)
                per_mu.append(None)
                continue
            per_mu.append(np.array([np.mean(np.abs(phi) ** p) for p in p_list]))
        return per_mu

    runner = EnsembleRunner(EnsembleConfig(reps=reps, seed=seed, threads=threads))
    outcomes = runner.run(replicate)
    results = [o.value for o in outcomes if o.ok and o.value is not None]

    rows = []
    for m, mu in enumerate(mu_list):
        accepted = [r[m] for r in results if r[m] is not None]
        dropped = reps - len(accepted)
        for k, p in enumerate(p_list):
            if accepted:
                mean, stderr = mean_and_stderr([a[k] for a in accepted])
                estimate, estimate_err = root_moment(mean, stderr, p)
            else:
                estimate, estimate_err = math.nan, math.nan
            rows.append(SweepRow(mu, p, estimate, estimate_err, len(accepted), dropped))
    return rows
