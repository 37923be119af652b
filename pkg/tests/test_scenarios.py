import os
from unittest.mock import patch

import numpy as np
import pytest

from afcmemory.comb import analytic_echo_efficiency
from afcmemory.config import Config
from afcmemory.scenarios import (
    SCENARIO_RUNNERS,
    calibrate_d_peak,
    memory_efficiency,
    resolve_d_peak,
    resolve_mu,
    run_all,
    run_scenario,
)

# Coarser grid that still resolves every tooth spacing of the storage sweep
SMALL_GRID = {"grid_points": 2 ** 14}


def make_config(**overrides) -> Config:
    with patch.dict(os.environ, {}, clear=True):
        return Config(**{**SMALL_GRID, **overrides})


def make_measured_config(**overrides) -> Config:
    with patch.dict(os.environ, {}, clear=True):
        return Config.from_dict({"preset": "measured", **SMALL_GRID}, overrides)


class TestCalibration:
    """Tests for d_peak and mu calibration."""

    def setup_method(self):
        """Set up test fixtures."""
        self.config = make_config()

    def test_calibrate_d_peak(self):
        """Test that the calibrated comb reaches the target efficiency."""
        result = calibrate_d_peak(self.config, 0.01)

        assert result["d0"] == self.config.d0
        assert 0 < result["d_peak"] < 2 * self.config.finesse
        assert result["efficiency"] == pytest.approx(0.01, abs=1e-6)

    def test_zero_target(self):
        """Test that a zero target needs no teeth."""
        assert calibrate_d_peak(self.config, 0.0)["d_peak"] == 0.0

    def test_target_out_of_range(self):
        """Test rejection of unreachable targets."""
        with pytest.raises(ValueError, match="outside achievable range"):
            calibrate_d_peak(self.config, 0.5)
        with pytest.raises(ValueError, match=">= 0"):
            calibrate_d_peak(self.config, -0.1)

    def test_resolve_parameters(self):
        """Test configured values against calibration targets."""
        assert resolve_d_peak(self.config) == self.config.d_peak
        assert resolve_mu(self.config) == self.config.mu

        calibrated = make_config(target_efficiency=0.01, target_g2=19.0)
        assert memory_efficiency(calibrated) == pytest.approx(0.01, abs=1e-6)
        assert resolve_mu(calibrated) == pytest.approx(1 / 18)

    def test_calibrate_scenario(self):
        """Test the calibrate scenario report."""
        report = run_scenario("calibrate", make_config(target_efficiency=0.02, g2_coincidences=100))

        assert report.scenario == "calibrate"
        assert report.metrics["efficiency"] == pytest.approx(0.02, abs=1e-6)
        assert report.metrics["mu"] == pytest.approx(1 / 13.1)
        assert report.metrics["g2_check"] > 2
        assert report.assertions["efficiency_residual_small"]
        assert list(report.tables["calibration"]["parameter"]) == ["d_peak", "mu"]

    def test_unreachable_target_fails_scenario(self):
        """Test that calibration errors carry the scenario name."""
        with pytest.raises(RuntimeError, match="Scenario calibrate failed: target efficiency"):
            run_scenario("calibrate", make_config(target_efficiency=0.5))


class TestEchoTrace:
    """Tests for the echo_trace scenario."""

    def test_echo_trace(self):
        """Test echo timing, efficiency and the oracle cross-check."""
        report = run_scenario("echo_trace", make_config(echo_pulses=200_000))

        assert report.metrics["echo_time_s"] == pytest.approx(5e-9, abs=80e-12)
        assert 0 < report.metrics["efficiency"] < analytic_echo_efficiency(1.4, 2, 0.8)
        assert report.metrics["multimode_capacity"] == 40
        for name in ("passive_medium", "echo_presence_matches_comb", "echo_time_within_bin",
                     "oracle_agrees_within_grid_bin"):
            assert report.assertions[name], name

        # Storage sweep covers the longer storage times
        sweep = report.tables["storage_sweep"]
        assert list(sweep["storage_time_s"]) == pytest.approx([5e-9, 10e-9, 20e-9, 50e-9])
        assert set(report.plots) == {"echo_histogram", "storage_sweep"}

    def test_no_teeth(self):
        """Test that a comb without teeth shows no echo and skips the oracle."""
        report = run_scenario("echo_trace", make_config(d_peak=0.0, echo_pulses=50_000))

        assert report.assertions["echo_presence_matches_comb"]
        assert "echo_time_within_bin" not in report.assertions
        assert "oracle_echo_time_s" not in report.metrics
        assert report.metrics["efficiency"] < 1e-4


class TestPolarizationScenarios:
    """Tests for the pol_sweep, visibility_scan and tomography scenarios."""

    def test_pol_sweep_exact(self):
        """Test sweep modulations with infinite statistics."""
        report = run_scenario("pol_sweep", make_config(infinite_statistics=True))

        assert report.metrics["unscrambled_peak_to_peak"] == pytest.approx(0.25)
        assert report.metrics["scrambled_peak_to_peak"] <= 0.07
        assert report.metrics["unscrambled_argmax_deg"] in (0.0, 90.0)
        assert report.passed

        sweep = report.tables["sweep"]
        assert set(sweep["mode"]) == {"unscrambled", "scrambled"}
        assert len(sweep) == 24

    def test_detector_depth_cancels(self):
        """Test that the fiber reference removes the detector polarization dependence."""
        flat = run_scenario("pol_sweep", make_config(infinite_statistics=True, signal_pol_depth=0.0))
        tilted = run_scenario("pol_sweep", make_config(infinite_statistics=True, signal_pol_depth=0.05))

        np.testing.assert_allclose(tilted.tables["sweep"]["normalized"], flat.tables["sweep"]["normalized"],
                                   rtol=1e-12)
        assert tilted.metrics["unscrambled_peak_to_peak"] == pytest.approx(flat.metrics["unscrambled_peak_to_peak"])

    def test_scrambled_argmax_not_identifiable(self):
        """Test that the scrambled maximum follows the drift draw, not the input polarization."""
        still = run_scenario("pol_sweep", make_config(infinite_statistics=True, drift_amplitude=0.0))
        assert still.metrics["scrambled_peak_to_peak"] == pytest.approx(0.0, abs=1e-12)
        assert still.metrics["scrambled_operator_contrast"] == pytest.approx(0.0, abs=1e-12)

        # With drift the maximum moves between seeds while the unscrambled one stays put
        reports = [run_scenario("pol_sweep", make_config(infinite_statistics=True, seed=s)) for s in range(8)]
        assert len({r.metrics["scrambled_argmax_deg"] for r in reports}) > 1
        assert len({r.metrics["unscrambled_argmax_deg"] for r in reports}) == 1

    def test_pol_sweep_exposure_uses_coupling(self):
        """Test that the link transmission scales the photons per setting."""
        full = run_scenario("pol_sweep", make_config(infinite_statistics=True))
        coupled = run_scenario("pol_sweep", make_config(infinite_statistics=True, coupling_transmission=0.25))

        assert coupled.metrics["photons_per_setting"] == pytest.approx(0.25 * full.metrics["photons_per_setting"])
        assert coupled.tables["sweep"]["stored_counts"].sum() == pytest.approx(
            0.25 * full.tables["sweep"]["stored_counts"].sum())

    def test_measured_pol_sweep(self):
        """Test the measured preset sweep with counting noise."""
        report = run_scenario("pol_sweep", make_measured_config())

        assert report.metrics["unscrambled_operator_contrast"] == pytest.approx(0.25)
        assert report.metrics["unscrambled_peak_to_peak"] == pytest.approx(0.25, abs=0.08)
        assert report.metrics["scrambled_peak_to_peak"] < 0.25
        assert report.tables["sweep"]["normalized_err"].max() > 0
        assert report.passed

    def test_ideal_visibility_scan(self):
        """Test unit visibilities for a noiseless analyzer and scrambled pump."""
        config = make_config(infinite_statistics=True, scrambled=True, drift_amplitude=0.0)
        report = run_scenario("visibility_scan", config)

        for arm in ("bypass", "storage"):
            for scan in ("theta", "phi"):
                assert report.metrics[f"fidelity_{arm}_{scan}"] == pytest.approx(1.0, abs=1e-6)
                assert report.assertions[f"ideal_{arm}_{scan}"]
        assert report.passed
        assert len(report.tables["fits"]) == 4
        assert len(report.tables["projections"]) == 2 * 2 * 2 * 12

    def test_visibility_scan_with_leakage(self):
        """Test that analyzer leakage lowers the fidelity to 1 - leakage."""
        config = make_config(infinite_statistics=True, scrambled=True, drift_amplitude=0.0,
                             analyzer_leakage_bypass=0.012, analyzer_leakage_storage=0.016)
        report = run_scenario("visibility_scan", config)

        assert report.metrics["fidelity_bypass_theta"] == pytest.approx(0.988, abs=1e-6)
        assert report.metrics["fidelity_storage_phi"] == pytest.approx(0.984, abs=1e-6)
        assert not any(name.startswith("ideal_") for name in report.assertions)

    def test_measured_visibility_scan(self):
        """Test measured preset fidelities with counting noise against the reference values."""
        report = run_scenario("visibility_scan", make_measured_config())

        for arm in ("bypass", "storage"):
            for scan in ("theta", "phi"):
                fidelity = report.metrics[f"fidelity_{arm}_{scan}"]
                assert fidelity >= 0.97
                assert fidelity == pytest.approx(report.metrics[f"fidelity_{arm}_{scan}_reference"], abs=0.03)
                assert report.metrics[f"fidelity_{arm}_{scan}_err"] > 0
                assert report.assertions[f"fidelity_{arm}_{scan}_above_floor"]

    def test_measured_tomography(self):
        """Test that every measured preset fidelity clears the tomography floor."""
        report = run_scenario("tomography", make_measured_config())

        assert report.assertions["density_matrices_physical"]
        assert report.assertions["fidelities_above_floor"]
        assert report.metrics["min_fidelity"] >= 0.985
        assert report.metrics["mean_fidelity"] < 1.0

    def test_ideal_tomography(self):
        """Test unit fidelities without noise."""
        config = make_config(infinite_statistics=True, scrambled=True, drift_amplitude=0.0)
        report = run_scenario("tomography", config)

        assert report.assertions["density_matrices_physical"]
        assert report.assertions["noiseless_fidelity_unity"]
        assert report.metrics["min_fidelity"] == pytest.approx(1.0)
        assert set(report.metrics["density_matrices"]) == {"H", "V", "D", "A", "R", "L"}
        assert len(report.tables["counts"]) == 6 * 3 * 2

    def test_depolarized_tomography(self):
        """Test fidelity one half for a fully depolarized output."""
        report = run_scenario("tomography", make_config(infinite_statistics=True, depolarized=True))

        assert report.assertions["depolarized_fidelity_half"]
        assert report.metrics["mean_fidelity"] == pytest.approx(0.5)


class TestG2Run:
    """Tests for the g2_run scenario."""

    def test_g2_run(self):
        """Test the bypass and storage cross-correlations."""
        report = run_scenario("g2_run", make_config(g2_coincidences=200))

        assert report.metrics["g2_bypass"] > 2
        assert report.metrics["g2_storage"] > 2
        assert report.metrics["g2_storage_expected"] > report.metrics["g2_bypass_expected"]
        assert report.metrics["coincidences_bypass"] >= 100
        assert report.metrics["corrected_coincidences_bypass"] < report.metrics["coincidences_bypass"]
        assert report.metrics["g2_bypass_reference"] == 14.1
        assert list(report.tables["g2"]["arm"]) == ["bypass", "storage"]

    def test_storage_exceeds_bypass_across_seeds(self):
        """Test that bandwidth thinning raises g2 for nearly every seed."""
        reports = [run_scenario("g2_run", make_config(g2_coincidences=300, seed=s)) for s in range(10)]
        wins = sum(r.metrics["g2_storage"] > r.metrics["g2_bypass"] for r in reports)
        assert wins >= 9

    def test_g2_run_is_deterministic(self):
        """Test that identical configurations give identical payloads."""
        config = make_config(g2_coincidences=100)
        assert run_scenario("g2_run", config).payload_hash() == run_scenario("g2_run", config).payload_hash()

    def test_seed_changes_payload(self):
        """Test that another seed gives another payload."""
        a = run_scenario("g2_run", make_config(g2_coincidences=100))
        b = run_scenario("g2_run", make_config(g2_coincidences=100, seed=7))
        assert a.payload_hash() != b.payload_hash()


class TestRunner:
    """Tests for scenario dispatch."""

    def test_registry(self):
        """Test that every scenario id has a runner."""
        assert set(SCENARIO_RUNNERS) == {"echo_trace", "pol_sweep", "visibility_scan", "tomography",
                                         "g2_run", "calibrate"}

    def test_unknown_scenario(self):
        """Test rejection of an unknown scenario id."""
        with pytest.raises(ValueError, match="Unknown scenario"):
            run_scenario("bogus", make_config())

    def test_invalid_config(self):
        """Test that validation errors are wrapped with the scenario name."""
        with pytest.raises(RuntimeError, match="Scenario g2_run failed: delta_hz must be positive"):
            run_scenario("g2_run", make_config(delta_hz=0))

    def test_run_all_workers(self):
        """Test that parallel runs match sequential runs."""
        config = make_config(infinite_statistics=True, g2_coincidences=100)
        names = ("pol_sweep", "calibrate")

        sequential = run_all(config, names)
        parallel = run_all(config, names, workers=2)

        assert [r.scenario for r in parallel] == list(names)
        assert [r.payload_hash() for r in sequential] == [r.payload_hash() for r in parallel]
