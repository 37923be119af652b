import math

import pytest

from afcmemory.detection import DetectorParams, DutyCycle
from afcmemory.heralding import HeraldedLink
from afcmemory.source import PairSourceParams


class TestHeraldedLink:
    """Tests for the HeraldedLink class."""

    def setup_method(self):
        """Set up test fixtures."""
        self.link = HeraldedLink(
            source=PairSourceParams(mu=0.1),
            herald_detector=DetectorParams(1.0),
            signal_detector=DetectorParams(1.0),
            window=1e-9,
            duty=DutyCycle(),
            coupling_transmission=0.5,
        )

    def test_pulses_for(self):
        """Test the pulse budget for a target number of coincidences."""
        n = self.link.pulses_for(1000, 1.0)
        assert abs(n - 11_000) <= 1

        # Thinning to half the pairs needs more pulses
        assert self.link.pulses_for(1000, 1.0, pass_fraction=0.5) > n

        with pytest.raises(ValueError, match="no heralded coincidences"):
            self.link.pulses_for(1000, 0.0)

    def test_lossless_measurement(self):
        """Test that every herald finds its signal without loss."""
        record = self.link.measure(20_000, seed=1, signal_transmission=1.0)
        result = record.coincidences[0]

        assert result.n_si == result.n_s == result.n_i
        assert result.n_i / 20_000 == pytest.approx(0.1 / 1.1, abs=0.01)
        assert record.n_pulses == 20_000
        assert record.active_time == pytest.approx(20_000 / 80e6)

    def test_measurement_is_deterministic(self):
        """Test that the seed fixes the record."""
        a = self.link.measure(5000, seed=2, signal_transmission=0.5)
        b = self.link.measure(5000, seed=2, signal_transmission=0.5)
        assert a.coincidences[0].n_si == b.coincidences[0].n_si
        assert len(a.herald) == len(b.herald)

    def test_port_split(self):
        """Test splitting of signal photons between analyzer ports."""
        record = self.link.measure(40_000, seed=3, signal_transmission=1.0, port_probabilities=(0.5, 0.5))
        heralds = len(record.herald)

        assert len(record.ports) == 2
        for coincidences in record.coincidences:
            assert coincidences.n_si / heralds == pytest.approx(0.52, abs=0.04)

    def test_rates_and_duty_cycle(self):
        """Test rate-only coupling and wall-time bookkeeping."""
        record = self.link.measure(20_000, seed=4, signal_transmission=1.0)

        assert record.wall_time == pytest.approx(record.active_time * 1.5 / 0.7)
        assert record.rate() == pytest.approx(record.coincidences[0].n_si * 0.5 / record.wall_time)
        assert record.equivalent_acquisition_time() == pytest.approx(2 * record.wall_time)

    def test_zero_rate_acquisition_time(self):
        """Test an infinite acquisition time without coincidences."""
        record = self.link.measure(1000, seed=5, signal_transmission=0.0)
        assert record.coincidences[0].n_si == 0
        assert math.isinf(record.equivalent_acquisition_time())

    def test_invalid_inputs(self):
        """Test validation of measurement inputs."""
        with pytest.raises(ValueError, match="port probabilities"):
            self.link.measure(100, seed=1, signal_transmission=1.0, port_probabilities=(0.7, 0.7))
        with pytest.raises(ValueError, match="signal_transmission"):
            self.link.measure(100, seed=1, signal_transmission=1.5)
