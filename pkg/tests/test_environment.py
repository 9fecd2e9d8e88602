"""
Unit tests for conductance laws, environments and local observables.

Run with: pytest tests/test_environment.py -v
"""

import math

import numpy as np
import pytest
from scipy import special

from rcmlab.environment import (
    Bernoulli,
    CenteredConductance,
    Conductance,
    ConductanceLaw,
    Constant,
    DivergenceForm,
    InverseShiftedExponential,
    PowerLawNearZero,
    Uniform,
    distribution_from_dict,
    dump_environment,
    evaluate_observable,
    law_from_spec,
    load_environment,
    moment_condition_check,
    monte_carlo_moment,
    observable_from_dict,
    resample_edge,
    sample_environment,
    shift,
)
from rcmlab.exceptions import SupportError
from rcmlab.lattice import build_torus

from tests.conftest import make_env


class TestDistributions:
    """Tests for the one-dimensional conductance laws."""

    def test_constant_rejects_zero(self):
        with pytest.raises(ValueError):
            Constant(0.0)

    def test_bernoulli_rejects_dirac_at_zero(self):
        with pytest.raises(ValueError, match="Dirac"):
            Bernoulli(0.0, 0.0, 1.0)

    def test_bernoulli_moments(self):
        law = Bernoulli(0.5, 0.0, 1.0)
        assert law.mean() == 0.5
        assert law.variance() == 0.25
        assert law.atom_at_zero() == 0.5

    def test_inverse_exponential_mean_matches_samples(self):
        law = InverseShiftedExponential(1.0)
        samples = law.sample(np.random.default_rng(0), 200_000)
        assert samples.mean() == pytest.approx(law.mean(), abs=5e-3)
        assert samples.var() == pytest.approx(law.variance(), abs=5e-3)

    @pytest.mark.parametrize(
        "law",
        [Uniform(0.2, 0.9), InverseShiftedExponential(2.0), PowerLawNearZero(0.5)],
    )
    def test_ppf_inverts_cdf(self, law):
        for u in (0.1, 0.5, 0.9):
            assert law.cdf(law.ppf(u)) == pytest.approx(u, rel=1e-9)

    def test_power_law_cdf(self):
        assert PowerLawNearZero(0.25).cdf(0.0625) == pytest.approx(0.5)

    def test_from_dict(self):
        law = distribution_from_dict({"kind": "uniform", "lo": 0.1, "hi": 0.5})
        assert law == Uniform(0.1, 0.5)

    def test_from_dict_unknown_kind(self):
        with pytest.raises(ValueError):
            distribution_from_dict({"kind": "gamma"})


class TestConductanceLaw:
    """Tests for per-direction product laws."""

    def test_single_spec_is_isotropic(self):
        law = law_from_spec({"kind": "constant", "c": 0.5}, 3)
        assert law.d == 3
        assert all(c == Constant(0.5) for c in law.components)

    def test_list_length_must_match_dimension(self):
        with pytest.raises(ValueError):
            law_from_spec([{"kind": "constant", "c": 1.0}], 2)

    def test_sup_atom_needs_every_direction(self):
        law = ConductanceLaw((Bernoulli(0.5, 0.0, 1.0), InverseShiftedExponential(1.0)))
        assert law.sup_atom_at_zero() == 0.0


class TestSampleEnvironment:
    """Tests for environment sampling, shifting and resampling."""

    def test_constant_law(self):
        law = ConductanceLaw.isotropic(Constant(1.0), 2)
        env = sample_environment(law, build_torus(2, 6), 7)
        assert np.all(env.values == 1.0)

    def test_degenerate_bernoulli(self):
        law = ConductanceLaw.isotropic(Bernoulli(1.0, 0.0, 0.3), 2)
        env = sample_environment(law, build_torus(2, 6), 7)
        assert np.all(env.values == 0.3)

    def test_same_seed_is_bit_identical(self, elliptic_law_2d):
        lattice = build_torus(2, 10)
        first = sample_environment(elliptic_law_2d, lattice, 99)
        second = sample_environment(elliptic_law_2d, lattice, 99)
        assert np.array_equal(first.values, second.values)

    def test_directions_use_their_own_law(self):
        law = ConductanceLaw((Constant(0.5), Constant(1.0)))
        env = sample_environment(law, build_torus(2, 4), 0)
        grid = env.conductances.by_direction()
        assert np.all(grid[..., 0] == 0.5)
        assert np.all(grid[..., 1] == 1.0)

    def test_law_dimension_mismatch(self, elliptic_law_2d):
        with pytest.raises(ValueError):
            sample_environment(elliptic_law_2d, build_torus(3, 4), 0)

    def test_shift_by_zero(self, random_env_2d):
        assert np.array_equal(shift(random_env_2d, 0).values, random_env_2d.values)

    def test_shift_there_and_back(self, random_env_2d):
        moved = shift(shift(random_env_2d, (3, -2)), (-3, 2))
        assert np.array_equal(moved.values, random_env_2d.values)

    def test_shift_on_line(self):
        env = make_env(1, 4, [0.1, 0.2, 0.3, 0.4])
        assert shift(env, 1).values.tolist() == [0.2, 0.3, 0.4, 0.1]

    def test_resample_constant_law(self):
        law = ConductanceLaw.isotropic(Constant(0.7), 2)
        env = sample_environment(law, build_torus(2, 5), 1)
        assert np.array_equal(resample_edge(env, 13, 5).values, env.values)

    def test_resample_touches_one_edge(self, random_env_2d):
        changed = resample_edge(random_env_2d, 10, 2024)
        differing = np.flatnonzero(changed.values != random_env_2d.values)
        assert set(differing.tolist()) <= {10}

    def test_bernoulli_empirical_mean(self):
        law = ConductanceLaw.isotropic(Bernoulli(0.5, 0.0, 1.0), 2)
        env = sample_environment(law, build_torus(2, 64), 2718)
        assert 0.47 <= np.mean(env.values) <= 0.53

    def test_shift_is_group_action(self, random_env_2d):
        x, y = (3, 5), (6, -4)
        combined = shift(random_env_2d, (x[0] + y[0], x[1] + y[1]))
        stepwise = shift(shift(random_env_2d, x), y)
        assert np.array_equal(combined.values, stepwise.values)

    def test_resample_stays_in_support(self):
        law = ConductanceLaw((Bernoulli(0.5, 0.1, 0.9), Uniform(0.2, 1.0)))
        env = sample_environment(law, build_torus(2, 4), 3)
        for seed in range(1000):
            edge = seed % env.lattice.edge_count
            value = resample_edge(env, edge, seed).conductance(edge)
            if env.lattice.edge_direction(edge) == 0:
                assert value in (0.1, 0.9)
            else:
                assert 0.2 <= value <= 1.0


class TestMomentCondition:
    """Tests for the negative-moment check on the maximal conductance."""

    def test_atom_at_zero_fails(self):
        law = ConductanceLaw.isotropic(Bernoulli(0.5, 0.0, 1.0), 3)
        verdicts = moment_condition_check(law, [1.0, 2.0])
        assert [v.label for v in verdicts] == ["FAIL", "FAIL"]
        assert all(v.reason == "P[sup = 0] > 0" for v in verdicts)

    def test_constant_direction_passes(self):
        law = ConductanceLaw((Bernoulli(0.5, 0.0, 1.0), Constant(1.0)))
        for verdict in moment_condition_check(law, [1.0, 4.0, 16.0]):
            assert verdict.passed
            assert verdict.value <= 1.0 + 1e-12

    @pytest.mark.parametrize("q", [1.0, 2.0, 5.0])
    def test_mixed_law_matches_gamma_integral(self, q):
        law = ConductanceLaw(
            (Bernoulli(0.5, 0.0, 1.0), Bernoulli(0.5, 0.0, 1.0), InverseShiftedExponential(1.0))
        )
        # <(1 + E)^q> = e * Gamma(q + 1, 1)
        trapped = math.e * special.gammaincc(q + 1, 1.0) * special.gamma(q + 1)
        expected = 0.75 + 0.25 * trapped
        (verdict,) = moment_condition_check(law, [q])
        assert verdict.passed
        assert verdict.value == pytest.approx(expected, rel=1e-6)

    def test_power_law_threshold(self):
        law = ConductanceLaw.isotropic(PowerLawNearZero(0.25), 3)
        verdicts = moment_condition_check(law, [1.0])
        assert not verdicts[0].passed

    def test_power_law_below_threshold(self):
        law = ConductanceLaw.isotropic(PowerLawNearZero(1.0), 3)
        (verdict,) = moment_condition_check(law, [2.0])
        # P(sup <= s) = s^3 gives <sup^-2> = 3
        assert verdict.passed
        assert verdict.value == pytest.approx(3.0, rel=1e-8)

    def test_rejects_small_exponent(self, elliptic_law_2d):
        with pytest.raises(ValueError):
            moment_condition_check(elliptic_law_2d, [0.5])

    def test_monte_carlo_agrees_for_elliptic_law(self, elliptic_law_2d):
        (closed,) = moment_condition_check(elliptic_law_2d, [2.0])
        estimate = monte_carlo_moment(elliptic_law_2d, 2.0, draws=200_000, seed=3)
        assert estimate.passed
        assert estimate.value == pytest.approx(closed.value, rel=0.02)

    def test_monte_carlo_flags_infinite_moment(self):
        law = ConductanceLaw.isotropic(Bernoulli(0.5, 0.0, 1.0), 2)
        estimate = monte_carlo_moment(law, 1.0, draws=10_000)
        assert estimate.diverging
        assert estimate.label == "FAIL"


class TestObservables:
    """Tests for local observables and their stationary extension."""

    def test_centered_constant_law_vanishes(self):
        law = ConductanceLaw.isotropic(Constant(0.4), 2)
        env = sample_environment(law, build_torus(2, 6), 0)
        g = evaluate_observable(CenteredConductance((0, 0), 0), env)
        assert np.all(g.values == 0.0)

    def test_conductance_reads_shifted_edge(self):
        env = make_env(1, 4, [0.1, 0.2, 0.3, 0.4])
        g = evaluate_observable(Conductance((1,), 0), env)
        assert g.values.tolist() == [0.2, 0.3, 0.4, 0.1]

    def test_centered_mean_is_small(self):
        law = ConductanceLaw.isotropic(Bernoulli(0.5, 0.0, 1.0), 2)
        env = sample_environment(law, build_torus(2, 64), 11)
        g = evaluate_observable(CenteredConductance((0, 0), 0), env)
        stderr = 0.5 / math.sqrt(g.values.size)
        assert abs(g.values.mean()) < 5 * stderr

    def test_divergence_form_has_zero_mean(self, random_env_2d):
        obs = DivergenceForm(0, CenteredConductance((0, 0), 1))
        g = evaluate_observable(obs, random_env_2d)
        assert abs(g.values.sum()) < 1e-12
        assert obs.support_size == 2

    def test_support_must_fit(self):
        env = sample_environment(
            ConductanceLaw.isotropic(Constant(1.0), 2), build_torus(2, 4), 0
        )
        with pytest.raises(SupportError):
            evaluate_observable(Conductance((3, 0), 0), env)

    def test_sup_norm(self):
        law = ConductanceLaw.isotropic(Bernoulli(0.5, 0.2, 1.0), 2)
        assert CenteredConductance((0, 0), 0).sup_norm(law) == pytest.approx(0.4)

    def test_round_trip_through_dict(self):
        spec = {
            "kind": "divergence_form",
            "direction": 1,
            "inner": {"kind": "conductance", "offset": [1, 0], "direction": 0},
        }
        assert observable_from_dict(spec, 2).to_dict() == spec

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="Unknown observable keys"):
            observable_from_dict({"kind": "conductance", "edge": 3}, 2)


class TestEnvironmentFile:
    """Tests for environment dump and reload."""

    def test_reload_is_bit_exact(self, tmp_path, random_env_2d):
        path = tmp_path / "env.csv"
        dump_environment(random_env_2d, path)
        loaded = load_environment(path)
        assert np.array_equal(loaded.values, random_env_2d.values)
        assert loaded.lattice == random_env_2d.lattice
        assert loaded.seed == random_env_2d.seed

    def test_missing_header(self, tmp_path):
        path = tmp_path / "env.csv"
        path.write_text("edge,conductance\n0,1.0\n")
        with pytest.raises(ValueError, match="header"):
            load_environment(path)
