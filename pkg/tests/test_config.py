"""
Unit tests for configuration parsing and validation.

Run with: pytest tests/test_config.py -v
"""

import json

import pytest

from rcmlab.config import (
    EXPERIMENTS,
    PROFILES,
    ExperimentConfig,
    finite_size_limit,
    load_config,
    parse_config,
    parse_config_dict,
)
from rcmlab.environment import Bernoulli, Constant
from rcmlab.exceptions import ConfigError


def minimal(**overrides):
    document = {"schema_version": 1, "experiment": "relax", "d": 2, "L": 8}
    document.update(overrides)
    return document


class TestDefaults:
    """Tests for default filling."""

    def test_minimal_relax(self):
        cfg = parse_config_dict(minimal())
        assert isinstance(cfg, ExperimentConfig)
        assert cfg.dt == 0.125
        assert cfg.reps == 32
        assert cfg.seed == 0
        assert cfg.p_list == [1]
        assert cfg.q_list == [1.0, 2.0, 4.0]
        assert cfg.mu_list == [0.1, 0.03, 0.01]
        assert cfg.fit_window == [4.0, 8.0]
        assert cfg.conductance_law.component(0) == Bernoulli(0.5, 0.2, 1.0)
        assert cfg.local_observable.offset == (0, 0)
        assert cfg.control is None

    def test_kernel_defaults_to_homogeneous_law(self):
        cfg = parse_config_dict(minimal(experiment="kernel"))
        assert cfg.conductance_law.component(1) == Constant(1.0)

    def test_necessity_has_control_law(self):
        cfg = parse_config_dict(minimal(experiment="necessity", d=3, L=8))
        assert cfg.control is not None
        assert cfg.theta == [0.25]
        assert cfg.q == 8

    def test_moderation_exponent_default(self):
        assert parse_config_dict(minimal(d=3)).moderation_q == 4.0

    def test_to_dict_drops_warnings(self):
        data = parse_config_dict(minimal()).to_dict()
        assert "warnings" not in data
        assert data["experiment"] == "relax"
        json.dumps(data)


class TestValidation:
    """Tests for rejected configurations."""

    def test_small_torus(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config_dict(minimal(L=2))
        assert any("L must be" in e for e in excinfo.value.errors)

    def test_unstable_time_step(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config_dict(minimal(d=3, dt=1.0))
        assert any("1/(2d)" in e for e in excinfo.value.errors)

    def test_unknown_keys(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config_dict(minimal(colour="blue"))
        assert excinfo.value.errors == ["unknown keys: colour"]

    def test_missing_keys(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config_dict({"experiment": "relax"})
        assert "missing required keys: schema_version, d, L" in excinfo.value.errors

    def test_collects_every_problem(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_config_dict(minimal(reps=1, seed=-1, mu_list=[0.01, 0.1]))
        keys = [e.split()[0] for e in excinfo.value.errors]
        assert keys == ["reps", "seed", "mu_list"]

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="experiment must be one of"):
            parse_config_dict(minimal(experiment="scan"))

    def test_schema_version(self):
        with pytest.raises(ConfigError, match="schema_version"):
            parse_config_dict(minimal(schema_version=2))

    def test_bad_law(self):
        with pytest.raises(ConfigError, match="law"):
            parse_config_dict(minimal(law={"kind": "cauchy"}))

    def test_observable_must_fit(self):
        obs = {"kind": "conductance", "offset": [5, 0], "direction": 0}
        with pytest.raises(ConfigError, match="observable"):
            parse_config_dict(minimal(L=4, observable=obs))

    def test_booleans_are_not_integers(self):
        with pytest.raises(ConfigError, match="reps"):
            parse_config_dict(minimal(reps=True))

    def test_non_increasing_grid(self):
        with pytest.raises(ConfigError, match="strictly increasing"):
            parse_config_dict(minimal(t_grid=[1.0, 1.0]))

    def test_fit_window_order(self):
        with pytest.raises(ConfigError, match="fit_window"):
            parse_config_dict(minimal(fit_window=[8, 4]))

    def test_error_message_joins_problems(self):
        error = ConfigError(["a", "b"])
        assert str(error) == "a; b"
        assert isinstance(error, ValueError)


class TestTimeGrid:
    """Tests for time grid forms."""

    def test_ladder_object(self):
        cfg = parse_config_dict(minimal(L=64, t_grid={"start": 4, "stop": 64, "points": 5}))
        assert cfg.t_grid[0] == 4.0
        assert cfg.t_grid[-1] == 64.0
        assert all(b > a for a, b in zip(cfg.t_grid, cfg.t_grid[1:]))

    def test_ladder_object_rejects_extra_keys(self):
        with pytest.raises(ConfigError, match="t_grid"):
            parse_config_dict(minimal(t_grid={"start": 1, "stop": 4, "points": 3, "base": 2}))

    def test_explicit_list(self):
        cfg = parse_config_dict(minimal(t_grid=[0, 0.5, 1]))
        assert cfg.t_grid == [0.0, 0.5, 1.0]

    def test_warns_past_finite_size_limit(self, caplog):
        cfg = parse_config_dict(minimal(L=8, t_grid=[1.0, 10.0]))
        assert finite_size_limit(8) == 4.0
        assert len(cfg.warnings) == 1
        assert "wrap-around" in cfg.warnings[0]
        assert "wrap-around" in caplog.text

    def test_no_warning_inside_limit(self):
        assert parse_config_dict(minimal(L=8, t_grid=[1.0, 4.0])).warnings == []


class TestParseText:
    """Tests for text and file entry points."""

    def test_malformed_json(self):
        with pytest.raises(ConfigError, match="malformed JSON"):
            parse_config("{not json")

    def test_not_an_object(self):
        with pytest.raises(ConfigError, match="JSON object"):
            parse_config("[1, 2]")

    def test_load_file(self, tmp_path):
        path = tmp_path / "relax.json"
        path.write_text(json.dumps(minimal(seed=9)))
        assert load_config(path).seed == 9

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.json")


class TestProfiles:
    """Tests for the predefined profiles."""

    @pytest.mark.parametrize("name", sorted(PROFILES))
    def test_profile_parses(self, name):
        profile = PROFILES[name]
        cfg = parse_config_dict(dict(profile["config"]))
        assert cfg.experiment in EXPERIMENTS
        assert profile["description"]

    def test_every_experiment_has_a_profile(self):
        covered = {p["config"]["experiment"] for p in PROFILES.values()}
        assert covered == set(EXPERIMENTS)
