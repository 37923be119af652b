import math

import numpy as np
import pytest
from scipy import stats

from afcmemory.polarization import (
    A,
    D,
    DIATTENUATOR,
    H,
    L,
    R,
    V,
    JonesVector,
    basis_analyzer,
    detector_pol_efficiency,
    hwp_settings,
    memory_polarization_operator,
    pbs_project,
    prepare_qubit,
    scrambled_pump_efficiency,
    scrambler_sample,
    waveplate,
)


class TestJones:
    """Tests for Jones vectors and waveplates."""

    def test_prepare_qubit(self):
        """Test the qubit parameterization."""
        assert prepare_qubit(0.0, 0.0).overlap(H) == pytest.approx(1.0)
        assert prepare_qubit(math.pi / 2, 0.0).overlap(V) == pytest.approx(1.0)
        assert prepare_qubit(math.pi / 4, 0.0).overlap(D) == pytest.approx(1.0)
        assert prepare_qubit(math.pi / 4, math.pi / 2).overlap(R) == pytest.approx(1.0)

    def test_orthogonal(self):
        """Test the orthogonal state."""
        for state in (H, D, R, prepare_qubit(0.3, 1.1)):
            assert abs(state.inner(state.orthogonal())) < 1e-12

    def test_waveplates_are_unitary(self):
        """Test unitarity at arbitrary angles."""
        for angle in np.linspace(0, math.pi, 7):
            assert waveplate("half", angle).is_unitary()
            assert waveplate("quarter", angle).is_unitary()

    def test_half_wave_plate_rotation(self):
        """Test that a half-wave plate at 22.5 degrees maps H to D."""
        out = waveplate("half", math.radians(22.5)).apply(H)
        assert out.overlap(D) == pytest.approx(1.0)

    def test_unknown_waveplate(self):
        """Test rejection of an unknown retarder."""
        with pytest.raises(ValueError, match="Unknown waveplate"):
            waveplate("full", 0.0)

    def test_hwp_settings(self):
        """Test the default half-wave-plate scan."""
        angles = hwp_settings()
        assert len(angles) == 12
        assert angles[1] == pytest.approx(math.radians(15))


class TestProjection:
    """Tests for PBS projection and basis analyzers."""

    @pytest.mark.parametrize("basis,plus,minus", [("HV", H, V), ("DA", D, A), ("RL", R, L)])
    def test_basis_analyzers(self, basis, plus, minus):
        """Test that each analyzer sends its eigenstates to opposite ports."""
        analyzer = basis_analyzer(basis)
        assert pbs_project(plus, analyzer)["p_H"] == pytest.approx(1.0)
        assert pbs_project(minus, analyzer)["p_V"] == pytest.approx(1.0)

    def test_probabilities_sum_to_one(self):
        """Test that port probabilities of a unitary analyzer sum to 1."""
        state = prepare_qubit(0.7, 2.1)
        for basis in ("HV", "DA", "RL"):
            result = pbs_project(state, basis_analyzer(basis))
            assert result["p_H"] + result["p_V"] == pytest.approx(1.0)

    def test_unnormalized_input(self):
        """Test rejection of an unnormalized state."""
        with pytest.raises(ValueError, match="unnormalized input state"):
            pbs_project(JonesVector(1.0, 1.0))

    def test_unknown_basis(self):
        """Test rejection of an unknown basis."""
        with pytest.raises(ValueError, match="Unknown measurement basis"):
            basis_analyzer("XY")


class TestMemoryOperator:
    """Tests for the memory polarization response."""

    def test_scrambler_haar_moment(self):
        """Test the second moment of Haar-random unitaries."""
        unitaries = scrambler_sample(seed=1, n=20000)
        assert all(u.is_unitary(1e-9) for u in unitaries[:100])
        moment = np.mean([abs(u.matrix[0, 0]) ** 2 for u in unitaries])
        assert moment == pytest.approx(0.5, abs=0.01)

    def test_scrambler_haar_phases(self):
        """Test uniform matrix-element phases and moduli of Haar-random unitaries."""
        unitaries = scrambler_sample(seed=5, n=5000)
        elements = np.array([u.matrix[0, 0] for u in unitaries])

        # Phase uniform on [-pi, pi], |u00|^2 uniform on [0, 1]
        assert stats.kstest(np.angle(elements), "uniform", args=(-math.pi, 2 * math.pi)).pvalue > 1e-3
        assert stats.kstest(np.abs(elements) ** 2, "uniform").pvalue > 1e-3

    def test_scrambler_invalid_size(self):
        """Test the minimum sample size."""
        with pytest.raises(ValueError):
            scrambler_sample(seed=1, n=0)

    def test_unscrambled_operator(self):
        """Test transmission along and orthogonal to the pump."""
        op = memory_polarization_operator(False, H, contrast=0.3, drift_amplitude=0.0, seed=0, eta_max=0.1)

        assert op.kind == DIATTENUATOR
        assert op.transmission(H) == pytest.approx(0.1)
        assert op.transmission(V) == pytest.approx(0.07)
        assert op.transmission(D) == pytest.approx(0.085)

    def test_singular_values_within_contrast(self):
        """Test hole-burning singular values between sqrt(1 - contrast) and 1 of the pump efficiency."""
        for pump in (H, D, R):
            op = memory_polarization_operator(False, pump, contrast=0.3, drift_amplitude=0.0, seed=0, eta_max=0.1)
            relative = np.sort(op.singular_values) / math.sqrt(0.1)

            np.testing.assert_allclose(relative, [math.sqrt(0.7), 1.0])
            assert op.transmission_contrast == pytest.approx(0.3)

        # Scrambled response has degenerate singular values
        scrambled = memory_polarization_operator(True, H, contrast=0.3, drift_amplitude=0.07, seed=3, eta_max=0.1)
        assert scrambled.singular_values[0] == pytest.approx(scrambled.singular_values[1])
        assert scrambled.transmission_contrast == pytest.approx(0.0, abs=1e-12)

    def test_scrambled_operator_is_isotropic(self):
        """Test that the scrambled response is polarization independent."""
        op = memory_polarization_operator(True, H, contrast=0.3, drift_amplitude=0.02, seed=4)
        values = [op.transmission(state) for state in (H, V, D, R)]

        assert max(values) == pytest.approx(min(values))
        assert 0.99 <= values[0] <= 1.01

    def test_invalid_contrast(self):
        """Test the contrast and drift ranges."""
        with pytest.raises(ValueError, match="contrast"):
            memory_polarization_operator(False, H, 1.0, 0.0, seed=0)
        with pytest.raises(ValueError, match="drift_amplitude"):
            memory_polarization_operator(True, H, 0.1, 1.0, seed=0)

    def test_scrambled_pump_efficiency(self):
        """Test that averaging over pump polarizations loses half the contrast."""
        unitaries = scrambler_sample(seed=2, n=2000)
        for state in (H, V, D, L):
            assert scrambled_pump_efficiency(state, H, 0.3, unitaries) == pytest.approx(0.85, abs=0.01)

    def test_detector_pol_efficiency(self):
        """Test detector polarization dependence."""
        assert detector_pol_efficiency(H, H, 0.05) == pytest.approx(1.0)
        assert detector_pol_efficiency(V, H, 0.05) == pytest.approx(0.95)
        assert detector_pol_efficiency(D, H, 0.05) == pytest.approx(0.975)
        with pytest.raises(ValueError):
            detector_pol_efficiency(H, H, 1.0)
