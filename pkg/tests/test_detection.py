import numpy as np
import pytest

from afcmemory.detection import (
    FWHM_TO_SIGMA,
    CoincidenceSet,
    DetectorParams,
    DutyCycle,
    TimeTagStream,
    coincide,
    detect_stream,
    tdc_histogram,
    window_sum,
)


class TestDetector:
    """Tests for the detector model."""

    def test_from_fwhm(self):
        """Test the jitter conversion from FWHM."""
        params = DetectorParams.from_fwhm(0.8, 50e-12)
        assert params.jitter_sigma == pytest.approx(50e-12 * FWHM_TO_SIGMA)
        assert params.jitter_sigma == pytest.approx(50e-12 / 2.3548, rel=1e-4)

    def test_invalid_params(self):
        """Test parameter validation."""
        with pytest.raises(ValueError, match="efficiency"):
            DetectorParams(1.2)
        with pytest.raises(ValueError, match="non-negative"):
            DetectorParams(0.5, dark_rate=-1.0)

    def test_efficiency(self):
        """Test that photons survive with the detector efficiency."""
        arrivals = np.arange(100_000) * 1e-8
        stream = detect_stream(arrivals, DetectorParams(0.3), duration=1e-3, seed=1)
        assert len(stream) == pytest.approx(30_000, rel=0.02)

        # Per-photon multipliers scale the efficiency
        stream = detect_stream(arrivals, DetectorParams(1.0), duration=1e-3, seed=1,
                               efficiency_multiplier=np.zeros(len(arrivals)))
        assert len(stream) == 0

    def test_dark_counts(self):
        """Test Poisson dark counts over the observation time."""
        stream = detect_stream(np.array([]), DetectorParams(0.5, dark_rate=1e4), duration=1.0, seed=2)
        assert len(stream) == pytest.approx(1e4, abs=500)
        assert np.all(np.diff(stream.times) >= 0)
        assert np.all(stream.pulse_index == -1)

    def test_dead_time(self):
        """Test non-paralyzable dead time."""
        arrivals = np.array([0.0, 10e-9, 30e-9, 45e-9])
        stream = detect_stream(arrivals, DetectorParams(1.0, dead_time=20e-9), duration=1e-6, seed=3)
        np.testing.assert_allclose(stream.times, [0.0, 30e-9])

    def test_simultaneous_photons_click_once(self):
        """Test that photons in the same instant give one click."""
        stream = detect_stream(np.array([1e-9, 1e-9, 1e-9]), DetectorParams(1.0), duration=1e-6, seed=4)
        assert len(stream) == 1

    def test_jitter(self):
        """Test the jitter spread of click times."""
        arrivals = np.arange(20_000) * 1e-6
        stream = detect_stream(arrivals, DetectorParams(1.0, jitter_sigma=20e-12), duration=1.0, seed=5)
        offsets = stream.times - arrivals
        assert np.std(offsets) == pytest.approx(20e-12, rel=0.05)

    def test_invalid_duration(self):
        """Test rejection of a nonpositive duration."""
        with pytest.raises(ValueError):
            detect_stream(np.array([0.0]), DetectorParams(1.0), duration=0.0, seed=1)


class TestTiming:
    """Tests for histograms and coincidences."""

    def test_tdc_histogram(self):
        """Test start-stop delays landing in their bins."""
        reference = TimeTagStream(np.array([0.0, 1e-6]))
        signal = TimeTagStream(np.array([4.8e-9, 1e-6 + 4.8e-9]))
        histogram = tdc_histogram(signal, reference)

        assert histogram.total == 2
        assert histogram.bin_centers[np.argmax(histogram.counts)] == pytest.approx(4.8e-9)
        assert window_sum(histogram, 4.8e-9) == 2
        assert window_sum(histogram, 0.0) == 0

    def test_zero_bin(self):
        """Test that coincident tags fall in the zero bin."""
        tags = TimeTagStream(np.array([1e-6, 2e-6]))
        histogram = tdc_histogram(tags, tags)
        zero = np.argmin(np.abs(histogram.bin_centers))

        assert histogram.bin_centers[zero] == 0.0
        assert histogram.counts[zero] == 2
        assert list(histogram.to_frame().columns) == ["bin_center_s", "counts"]

    def test_empty_histogram(self):
        """Test an empty stream."""
        histogram = tdc_histogram(TimeTagStream(np.array([])), TimeTagStream(np.array([0.0])))
        assert histogram.total == 0
        with pytest.raises(ValueError):
            window_sum(histogram, 0.0, n_bins=0)

    def test_coincide(self):
        """Test one-to-one matching inside the window."""
        herald = TimeTagStream(np.array([0.0, 1e-6, 2e-6]), n_pulses=3)
        signal = TimeTagStream(np.array([5.1e-9, 1e-6 + 5.3e-9, 3e-6]))
        result = coincide(herald, signal, window=1e-9, expected_delay=5e-9)

        assert result.n_si == 2
        assert result.n_s == 3
        assert result.n_i == 3
        assert result.n_pulses == 3

    def test_coincide_uses_each_tag_once(self):
        """Test that two signals near one herald match only once."""
        herald = TimeTagStream(np.array([0.0]))
        signal = TimeTagStream(np.array([-0.1e-9, 0.1e-9]))
        assert coincide(herald, signal, window=1e-9).n_si == 1
        with pytest.raises(ValueError):
            coincide(herald, signal, window=0.0)

    def test_independent_streams_give_accidentals(self):
        """Test that uncorrelated streams coincide at the accidental rate N_s N_i / N_pulses."""
        rng = np.random.default_rng(21)
        n_pulses = 200_000
        herald_slots = np.flatnonzero(rng.random(n_pulses) < 0.2)
        signal_slots = np.flatnonzero(rng.random(n_pulses) < 0.1)
        herald = TimeTagStream(herald_slots / 80e6, n_pulses=n_pulses)
        signal = TimeTagStream(signal_slots / 80e6)

        result = coincide(herald, signal, window=1e-9)
        assert result.accidentals == pytest.approx(4000, rel=0.05)
        assert result.n_si == pytest.approx(result.accidentals, rel=0.05)
        assert abs(result.corrected) < 0.05 * result.accidentals

    def test_coincidence_set(self):
        """Test accidentals and validation."""
        record = CoincidenceSet(n_si=10, n_s=100, n_i=200, n_pulses=10_000, window=1e-9)
        assert record.accidentals == pytest.approx(2.0)
        assert record.corrected == pytest.approx(8.0)

        with pytest.raises(ValueError, match="coincidences exceed singles"):
            CoincidenceSet(n_si=5, n_s=4, n_i=10, n_pulses=100, window=1e-9)
        with pytest.raises(ValueError, match="non-negative"):
            CoincidenceSet(n_si=0, n_s=-1, n_i=10, n_pulses=100, window=1e-9)


class TestDutyCycle:
    """Tests for duty-cycle bookkeeping."""

    def test_storage_fraction(self):
        """Test wall time and rate scaling."""
        duty = DutyCycle()
        assert duty.period == pytest.approx(1.5)
        assert duty.storage_fraction == pytest.approx(0.7 / 1.5)
        assert duty.wall_time_for(0.7) == pytest.approx(1.5)
        assert duty.scale_rate(1.5) == pytest.approx(0.7)
