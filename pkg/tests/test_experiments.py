"""
Tests for experiment pipelines and their artifacts.

Run with: pytest tests/test_experiments.py -v
"""

import csv
import json

import pytest

from rcmlab.config import parse_config_dict
from rcmlab.exceptions import ConfigError, DisconnectedError, NonConvergedError, RcmLabError
from rcmlab.experiments import MASS_TOLERANCE, error_document, run_experiment


def config(experiment, tmp_path, **overrides):
    document = {
        "schema_version": 1,
        "experiment": experiment,
        "d": 2,
        "L": 8,
        "reps": 3,
        "seed": 11,
        "output": str(tmp_path / experiment),
        "threads": 2,
    }
    document.update(overrides)
    return parse_config_dict(document)


def read_csv(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


class TestKernelPipeline:
    """Tests for the kernel experiment."""

    def test_artifacts_and_mass(self, tmp_path):
        cfg = config("kernel", tmp_path, L=16, t_grid={"start": 1, "stop": 16, "points": 6}, fit_window=[1, 16])
        result = run_experiment(cfg)

        assert result.artifacts == ["kernel.csv", "fit.csv", "kernel_p00.dat", "manifest.json"]
        rows = read_csv(result.out_dir / "kernel.csv")
        assert all(abs(float(r["mass"]) - 1.0) <= MASS_TOLERANCE for r in rows)
        assert all(float(r["l2_half_identity_gap"]) < 1e-12 for r in rows)
        assert result.verdicts["mass_conserved"] is True
        assert 0.5 < result.verdicts["on_diagonal_exponent"] < 1.1

    def test_manifest(self, tmp_path):
        cfg = config("kernel", tmp_path, t_grid=[1, 2, 10])
        result = run_experiment(cfg)
        manifest = json.loads((result.out_dir / "manifest.json").read_text())
        assert manifest["experiment"] == "kernel"
        assert manifest["config"]["L"] == 8
        assert len(manifest["config_hash"]) == 40
        assert any("wrap-around" in w for w in manifest["warnings"])
        assert any("No decay fit" in w for w in manifest["warnings"])
        assert "kernel.csv" in manifest["artifacts"]

    def test_weighted_energy(self, tmp_path):
        cfg = config("kernel", tmp_path, alpha=1.0, t_grid=[1, 2, 4])
        result = run_experiment(cfg)
        assert "weighted_energy.csv" in result.artifacts
        assert len(read_csv(result.out_dir / "weighted_energy.csv")) == 3

    def test_explicit_out_dir(self, tmp_path):
        cfg = config("kernel", tmp_path, t_grid=[1, 2])
        result = run_experiment(cfg, out_dir=tmp_path / "elsewhere")
        assert (tmp_path / "elsewhere" / "kernel.csv").exists()
        assert result.out_dir == tmp_path / "elsewhere"

    def test_colliding_grid_is_a_run_failure(self, tmp_path):
        cfg = config("kernel", tmp_path, t_grid=[0.1, 0.12])
        with pytest.raises(RcmLabError, match="collide"):
            run_experiment(cfg)


class TestRelaxPipeline:
    """Tests for the relax experiment."""

    def test_artifacts(self, tmp_path):
        cfg = config("relax", tmp_path, t_grid=[0, 1, 2, 3, 4], fit_window=[1, 4], p_list=[1, 2])
        result = run_experiment(cfg)

        rows = read_csv(result.out_dir / "relax.csv")
        assert [r["p"] for r in rows] == ["1"] * 5 + ["2"] * 5
        assert all(r["reps"] == "3" for r in rows)
        assert result.verdicts["dissipation"] == {"1": True, "2": True}
        assert result.verdicts["moment_condition"][0]["verdict"] == "PASS"
        assert "relax_p1.dat" in result.artifacts
        fits = read_csv(result.out_dir / "fit.csv")
        assert [f["series_id"] for f in fits] == ["centered_conductance_p1", "centered_conductance_p2"]

    def test_same_seed_gives_identical_csv(self, tmp_path):
        first = run_experiment(config("relax", tmp_path, t_grid=[0, 1, 2]), out_dir=tmp_path / "a")
        second = run_experiment(config("relax", tmp_path, t_grid=[0, 1, 2], threads=1), out_dir=tmp_path / "b")
        assert (first.out_dir / "relax.csv").read_bytes() == (second.out_dir / "relax.csv").read_bytes()

    def test_degenerate_law_records_failed_moment_condition(self, tmp_path):
        law = {"kind": "bernoulli", "p": 0.5, "lo": 0.0, "hi": 1.0}
        result = run_experiment(config("relax", tmp_path, law=law, t_grid=[0, 1]))
        assert result.verdicts["moment_condition"][0]["verdict"] == "FAIL"
        assert any("Moment condition fails" in w for w in result.warnings)


class TestCorrectorPipeline:
    """Tests for the corrector experiment."""

    def test_sweep(self, tmp_path):
        cfg = config("corrector", tmp_path, L=6, mu_list=[0.5, 0.1], p_list=[1])
        result = run_experiment(cfg)
        rows = read_csv(result.out_dir / "corrector.csv")
        assert [float(r["mu"]) for r in rows] == [0.5, 0.1]
        assert all(int(r["nonconverged_count"]) == 0 for r in rows)
        assert result.verdicts["nonconverged"] == 0
        assert len(result.verdicts["sweep_ratios"]["1"]) == 1


class TestWeightsPipeline:
    """Tests for the weights experiment."""

    def test_elliptic_environment(self, tmp_path):
        cfg = config("weights", tmp_path, L=5, q_list=[1])
        result = run_experiment(cfg)
        certificates = read_csv(result.out_dir / "certificates.csv")
        assert len(certificates) == 50
        assert all(float(c["w"]) <= 1.0 for c in certificates)
        verdicts = result.verdicts
        assert verdicts["weights_bounded"] is True
        assert verdicts["detour_never_beats_optimal"] is True
        assert verdicts["disconnected_edges"] == 0
        assert "moderation" in verdicts
        quantities = {r["quantity"] for r in read_csv(result.out_dir / "weight_moments.csv")}
        assert quantities == {"w_inv", "path_len", "inverse_index", "moderation"}


class TestNecessityPipeline:
    """Tests for the necessity experiment."""

    def test_small_run(self, tmp_path):
        cfg = config("necessity", tmp_path, t_grid=[1, 2, 4], q=2)
        result = run_experiment(cfg)
        rows = read_csv(result.out_dir / "necessity.csv")
        assert [r["series"] for r in rows] == ["necessity"] * 3 + ["control"] * 3
        assert result.verdicts["p0"] == pytest.approx(0.5)
        assert result.verdicts["moment_condition"][0]["verdict"] == "FAIL"
        assert isinstance(result.verdicts["growth_witnessed"], bool)


class TestErrorDocument:
    """Tests for machine-readable failures."""

    def test_config_error(self):
        document = error_document(ConfigError(["a", "b"]), "relax")
        assert document["error"] == "ConfigError"
        assert document["errors"] == ["a", "b"]
        assert document["experiment"] == "relax"

    def test_non_converged(self):
        document = error_document(NonConvergedError(1e-3, 50, 1e-10))
        assert (document["residual"], document["iterations"]) == (1e-3, 50)

    def test_disconnected(self):
        assert error_document(DisconnectedError(7))["edge"] == 7
