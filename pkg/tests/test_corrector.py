"""
Unit tests for massive corrector solves and moment sweeps.

Run with: pytest tests/test_corrector.py -v
"""

import numpy as np
import pytest
from scipy.linalg import solve

from rcmlab.corrector import (
    assemble_rhs,
    corrector_by_time_integration,
    corrector_moment_sweep,
    corrector_operator,
    solve_massive_corrector,
)
from rcmlab.environment import ConductanceLaw, Constant, Uniform, sample_environment
from rcmlab.exceptions import NonConvergedError
from rcmlab.lattice import build_torus

from tests.conftest import make_env


class TestAssembleRhs:
    """Tests for the corrector right-hand side."""

    def test_constant_environment(self):
        env = make_env(2, 5, np.full(50, 0.6))
        assert np.all(assemble_rhs(env, 0).values == 0.0)

    def test_hand_evaluation_on_line(self):
        env = make_env(1, 4, [1.0, 0.5, 1.0, 1.0])
        assert assemble_rhs(env, 0).values.tolist() == [0.0, -0.5, 0.5, 0.0]

    def test_sums_to_zero(self, random_env_2d):
        assert abs(assemble_rhs(random_env_2d, 1).total()) < 1e-12

    def test_bad_direction(self, random_env_2d):
        with pytest.raises(ValueError):
            assemble_rhs(random_env_2d, 2)


class TestSolveMassiveCorrector:
    """Tests for the conjugate-gradient corrector solve."""

    def test_constant_environment(self):
        env = make_env(2, 5, np.ones(50))
        solution = solve_massive_corrector(env, 0, 0.1)
        assert np.all(solution.field.values == 0.0)
        assert solution.iterations == 0

    def test_residual_below_tolerance(self, random_env_2d):
        solution = solve_massive_corrector(random_env_2d, 0, 0.05, tol=1e-10)
        operator = corrector_operator(random_env_2d, 0.05)
        rhs = assemble_rhs(random_env_2d, 0).values
        residual = np.max(np.abs(rhs - operator @ solution.field.values)) / np.max(np.abs(rhs))
        assert residual <= 1e-10
        assert solution.residual == pytest.approx(residual)

    @pytest.mark.parametrize("tol", [1e-4, 1e-8, 1e-12])
    @pytest.mark.parametrize("preconditioner", [False, True])
    def test_accepted_solution_meets_sup_norm_tolerance(self, random_env_2d, tol, preconditioner):
        mu = 1e-3
        solution = solve_massive_corrector(
            random_env_2d, 1, mu, tol=tol, preconditioner=preconditioner
        )
        rhs = assemble_rhs(random_env_2d, 1).values
        true_residual = rhs - corrector_operator(random_env_2d, mu) @ solution.field.values
        assert np.max(np.abs(true_residual)) <= tol * np.max(np.abs(rhs))
        assert solution.residual <= tol

    def test_large_mass_limit(self, random_env_2d):
        mu = 1e6
        solution = solve_massive_corrector(random_env_2d, 0, mu)
        rhs = assemble_rhs(random_env_2d, 0).values
        assert np.max(np.abs(solution.field.values - rhs / mu)) <= 1e-5 * np.max(np.abs(rhs))

    def test_matches_dense_solve(self, elliptic_law_2d):
        env = sample_environment(elliptic_law_2d, build_torus(2, 4), 21)
        mu = 0.1
        rhs = assemble_rhs(env, 0).values
        exact = solve(corrector_operator(env, mu).toarray(), rhs, assume_a="pos")
        solution = solve_massive_corrector(env, 0, mu, tol=1e-12)
        assert np.max(np.abs(solution.field.values - exact)) <= 1e-8

    def test_jacobi_preconditioner_agrees(self, random_env_2d):
        plain = solve_massive_corrector(random_env_2d, 1, 0.05, tol=1e-12)
        jacobi = solve_massive_corrector(random_env_2d, 1, 0.05, tol=1e-12, preconditioner=True)
        assert np.allclose(plain.field.values, jacobi.field.values, atol=1e-8)

    def test_energy_identity(self, random_env_2d):
        solution = solve_massive_corrector(random_env_2d, 0, 0.2, tol=1e-12)
        lhs, rhs = solution.energy_sides(random_env_2d)
        assert lhs == pytest.approx(rhs, rel=1e-8)

    def test_rejects_non_positive_mass(self, random_env_2d):
        with pytest.raises(ValueError):
            solve_massive_corrector(random_env_2d, 0, 0.0)

    def test_iteration_cap(self, random_env_2d):
        with pytest.raises(NonConvergedError) as info:
            solve_massive_corrector(random_env_2d, 0, 1e-3, tol=1e-300)
        assert info.value.iterations > 0

    def test_one_dimensional_harmonic_mean(self):
        """Corrector gradient approaches c / a - 1 with c the harmonic mean."""
        law = ConductanceLaw.isotropic(Uniform(0.2, 1.0), 1)
        env = sample_environment(law, build_torus(1, 32), 4)
        solution = solve_massive_corrector(env, 0, 1e-6, tol=1e-12)
        a = env.values
        harmonic = a.size / np.sum(1.0 / a)
        grad = np.roll(solution.field.values, -1) - solution.field.values
        assert grad == pytest.approx(harmonic / a - 1.0, rel=0.02, abs=1e-3)


class TestTimeIntegration:
    """Tests for the corrector as a discounted time integral."""

    def test_agrees_with_conjugate_gradient(self, random_env_2d):
        direct = solve_massive_corrector(random_env_2d, 0, 0.5, tol=1e-12)
        integrated = corrector_by_time_integration(random_env_2d, 0, 0.5, tol=1e-10)
        scale = np.max(np.abs(assemble_rhs(random_env_2d, 0).values))
        assert np.max(np.abs(direct.field.values - integrated.field.values)) <= 1e-8 * scale

    def test_constant_environment(self):
        env = make_env(1, 5, np.full(5, 0.3))
        solution = corrector_by_time_integration(env, 0, 1.0)
        assert np.all(solution.field.values == 0.0)
        assert solution.residual == 0.0

    def test_step_budget(self, random_env_2d):
        with pytest.raises(NonConvergedError):
            corrector_by_time_integration(random_env_2d, 0, 1e-9, tol=1e-12)


class TestMomentSweep:
    """Tests for corrector moment sweeps."""

    def test_constant_law(self):
        law = ConductanceLaw.isotropic(Constant(1.0), 2)
        rows = corrector_moment_sweep(law, 0, [0.1, 0.01], [1, 2], reps=3, seed=0, L=5, threads=1)
        assert len(rows) == 4
        assert all(r.moment_estimate == 0.0 for r in rows)
        assert all(r.reps_used == 3 and r.nonconverged_count == 0 for r in rows)

    def test_rows_are_mass_major(self, elliptic_law_2d):
        rows = corrector_moment_sweep(
            elliptic_law_2d, 0, [0.1, 0.03], [2], reps=4, seed=1, L=6, threads=2
        )
        assert [r.mu for r in rows] == [0.1, 0.03]
        assert all(r.moment_estimate > 0.0 for r in rows)

    def test_thread_count_does_not_change_estimates(self, elliptic_law_2d):
        one = corrector_moment_sweep(elliptic_law_2d, 1, [0.1], [2], reps=4, seed=2, L=6, threads=1)
        many = corrector_moment_sweep(elliptic_law_2d, 1, [0.1], [2], reps=4, seed=2, L=6, threads=3)
        assert one == many

    def test_masses_must_decrease(self, elliptic_law_2d):
        with pytest.raises(ValueError, match="decreasing"):
            corrector_moment_sweep(elliptic_law_2d, 0, [0.01, 0.1], [2], reps=2, seed=0, L=5)
