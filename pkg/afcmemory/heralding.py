import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .detection import CoincidenceSet, DetectorParams, DutyCycle, TimeTagStream, coincide, detect_stream
from .seeds import derive_seed
from .source import (
    PairSourceParams,
    apply_bandwidth_filter,
    click_probabilities,
    photon_arrival_times,
    sample_pair_emissions,
)

logger = logging.getLogger(__name__)

HERALD_CHANNEL = 0


@dataclass
class LinkRecord:
    """Clicks and coincidences of one heralded measurement."""
    herald: TimeTagStream
    ports: List[TimeTagStream]
    coincidences: List[CoincidenceSet]
    n_pulses: int
    active_time: float
    wall_time: float
    coupling_transmission: float

    def rate(self, port: int = 0) -> float:
        """Coincidence rate over wall time, including rate-only coupling losses."""
        return self.coincidences[port].n_si * self.coupling_transmission / self.wall_time

    def equivalent_acquisition_time(self, port: int = 0) -> float:
        """Wall time the same number of coincidences would take at the reported rate."""
        rate = self.rate(port)
        return self.coincidences[port].n_si / rate if rate > 0 else math.inf


class HeraldedLink:
    """
    Heralded single-photon link from the pair source to the analyzer ports.

    Features:
    - Thermal pair generation with optional bandwidth thinning
    - Idler herald detection on its own detector
    - Signal transmission, port splitting and per-port detection
    - AND-gate coincidences and duty-cycle rate bookkeeping
    """

    def __init__(self, source: PairSourceParams, herald_detector: DetectorParams,
                 signal_detector: DetectorParams, window: float, duty: DutyCycle,
                 coupling_transmission: float = 1.0):
        """
        Initialize the link.

        Args:
            source: Pair source model
            herald_detector: Idler detector (Si-APD)
            signal_detector: Signal detector (SNSPD), one per analyzer port
            window: Coincidence window in seconds
            duty: Memory duty cycle used for wall-time bookkeeping
            coupling_transmission: Rate-only losses, applied to reported rates only
        """
        self.source = source
        self.herald_detector = herald_detector
        self.signal_detector = signal_detector
        self.window = window
        self.duty = duty
        self.coupling_transmission = coupling_transmission

    def pulses_for(self, target_coincidences: int, signal_transmission: float,
                   pass_fraction: Optional[float] = None) -> int:
        """
        Pulse slots needed to expect ``target_coincidences`` heralded signal clicks.

        Args:
            target_coincidences: Desired expected coincidences
            signal_transmission: Signal survival probability before the detector efficiency
            pass_fraction: Bandwidth thinning applied to the pairs, if any

        Returns:
            Number of pulse slots, at least 1
        """
        mu = self.source.mu * (pass_fraction if pass_fraction is not None else 1.0)
        p = click_probabilities(
            mu,
            signal_transmission * self.signal_detector.efficiency,
            self.source.idler_chain_efficiency * self.herald_detector.efficiency,
            self.source.spectral_modes,
        )
        if p["p_si"] <= 0:
            raise ValueError("no heralded coincidences possible with this transmission")
        return max(1, int(math.ceil(target_coincidences / p["p_si"])))

    def measure(self, n_pulses: int, seed: int, signal_transmission: float,
                port_probabilities: Sequence[float] = (1.0,),
                pass_fraction: Optional[float] = None,
                signal_delay: float = 0.0,
                delay_sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None,
                port_multipliers: Optional[Sequence[float]] = None) -> LinkRecord:
        """
        Run one heralded acquisition.

        Args:
            n_pulses: Pulse slots to simulate
            seed: Base seed; every stage derives its own
            signal_transmission: Probability a signal photon reaches the analyzer
            port_probabilities: Probability of exiting through each analyzer port
            pass_fraction: Bandwidth thinning of the pairs, if any
            signal_delay: Fixed signal delay relative to the herald
            delay_sampler: Optional per-photon extra delay (e.g. echo arrival profile)
            port_multipliers: Optional detector efficiency factor per port

        Returns:
            LinkRecord with one stream and coincidence set per port
        """
        probabilities = np.asarray(port_probabilities, dtype=float)
        if np.any(probabilities < 0) or probabilities.sum() > 1 + 1e-12:
            raise ValueError("port probabilities must be non-negative and sum to at most 1")
        if not 0 <= signal_transmission <= 1:
            raise ValueError("signal_transmission must lie in [0, 1]")

        rep_rate = self.source.rep_rate
        active_time = n_pulses / rep_rate

        # Step 1: pairs per pulse, optionally thinned to the memory bandwidth
        pairs = sample_pair_emissions(self.source, n_pulses, derive_seed(seed, "source"))
        if pass_fraction is not None:
            pairs = apply_bandwidth_filter(pairs, pass_fraction, derive_seed(seed, "filter"))

        # Step 2: herald clicks
        idler_times, idler_index = photon_arrival_times(pairs, rep_rate)
        herald = detect_stream(
            idler_times, self.herald_detector, active_time, derive_seed(seed, "herald"),
            efficiency_multiplier=self.source.idler_chain_efficiency,
            pulse_index=idler_index, channel=HERALD_CHANNEL, n_pulses=n_pulses,
        )

        # Step 3: signal photons through the arm and into the analyzer ports
        rng = np.random.default_rng(derive_seed(seed, "signal"))
        surviving = rng.binomial(pairs, signal_transmission)
        signal_times, signal_index = photon_arrival_times(
            surviving, rep_rate, signal_delay, delay_sampler, derive_seed(seed, "delay")
        )
        outcome_p = np.append(probabilities, max(0.0, 1.0 - probabilities.sum()))
        port_of = rng.choice(len(outcome_p), size=len(signal_times), p=outcome_p / outcome_p.sum())

        ports, coincidences = [], []
        multipliers = port_multipliers if port_multipliers is not None else [1.0] * len(probabilities)
        for port in range(len(probabilities)):
            mask = port_of == port
            stream = detect_stream(
                signal_times[mask], self.signal_detector, active_time, derive_seed(seed, "port", port),
                efficiency_multiplier=multipliers[port], pulse_index=signal_index[mask],
                channel=port + 1, n_pulses=n_pulses,
            )
            ports.append(stream)
            coincidences.append(coincide(herald, stream, self.window, expected_delay=signal_delay))

        wall_time = self.duty.wall_time_for(active_time)
        logger.debug(
            f"Link: {n_pulses} pulses, {len(herald)} heralds, coincidences "
            f"{[c.n_si for c in coincidences]}"
        )
        return LinkRecord(herald, ports, coincidences, n_pulses, active_time, wall_time,
                          self.coupling_transmission)
