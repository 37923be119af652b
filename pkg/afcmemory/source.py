import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy import stats

from .seeds import derive_seed

logger = logging.getLogger(__name__)

# Pulses drawn per batch; each batch has its own derived seed
PULSE_BATCH = 1_000_000


@dataclass
class PairSourceParams:
    """
    Statistical model of the pulsed SPDC pair source.

    Attributes:
        mu: Mean pair number per pulse
        rep_rate: Pulse repetition rate in Hz
        signal_bandwidth: Filtered signal bandwidth in Hz
        spectral_modes: Number of thermal modes (1 gives geometric statistics)
        idler_chain_efficiency: Idler transmission before the herald detector
    """
    mu: float
    rep_rate: float = 80e6
    signal_bandwidth: float = 10e9
    spectral_modes: int = 1
    idler_chain_efficiency: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.rep_rate <= 0:
            raise ValueError("rep_rate must be positive")
        if self.spectral_modes < 1:
            raise ValueError("spectral_modes must be >= 1")
        if not 0 <= self.idler_chain_efficiency <= 1:
            raise ValueError("idler_chain_efficiency must lie in [0, 1]")


def thermal_pmf(n: np.ndarray, mu: float, modes: int = 1) -> np.ndarray:
    """P(n) of M-mode thermal statistics; M = 1 gives mu^n / (1+mu)^(n+1)."""
    if mu == 0:
        return (np.asarray(n) == 0).astype(float)
    return stats.nbinom.pmf(n, modes, modes / (modes + mu))


def sample_pair_emissions(params: PairSourceParams, n_pulses: int, seed: int) -> np.ndarray:
    """
    Draw the number of pairs emitted in each pump pulse.

    Args:
        params: Source parameters
        n_pulses: Number of pulse slots, at least 1
        seed: Base seed; each batch of pulses uses a derived seed

    Returns:
        Integer array of pair numbers, one per pulse
    """
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    if params.mu == 0:
        return np.zeros(n_pulses, dtype=np.int64)

    modes = params.spectral_modes
    p = modes / (modes + params.mu)
    batches = []
    for b, start in enumerate(range(0, n_pulses, PULSE_BATCH)):
        size = min(PULSE_BATCH, n_pulses - start)
        rng = np.random.default_rng(derive_seed(seed, "pairs", b))
        batches.append(rng.negative_binomial(modes, p, size=size))
    return np.concatenate(batches).astype(np.int64)


def apply_bandwidth_filter(n_pairs: np.ndarray, pass_fraction: float, seed: int) -> np.ndarray:
    """
    Binomially thin per-pulse pair numbers.

    Pairs whose signal photon falls outside the memory bandwidth no longer
    contribute heralded pairs, so thinning lowers the effective mean
    photon number from mu to pass_fraction * mu.
    """
    if not 0 <= pass_fraction <= 1:
        raise ValueError("pass_fraction must lie in [0, 1]")
    if pass_fraction == 1:
        return np.asarray(n_pairs).copy()
    rng = np.random.default_rng(seed)
    return rng.binomial(n_pairs, pass_fraction)


def photon_arrival_times(counts: np.ndarray, rep_rate: float, delay: float = 0.0,
                         offset_sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None,
                         seed: int = 0):
    """
    Expand per-pulse photon numbers into arrival times.

    Args:
        counts: Photons per pulse
        rep_rate: Pulse repetition rate in Hz
        delay: Fixed delay added to every photon
        offset_sampler: Optional callable drawing extra per-photon delays
        seed: Seed for the offset sampler

    Returns:
        Tuple of (arrival times, pulse indices), sorted by time
    """
    counts = np.asarray(counts)
    pulse_index = np.repeat(np.arange(len(counts)), counts)
    times = pulse_index / rep_rate + delay
    if offset_sampler is not None and len(times):
        times = times + offset_sampler(len(times), np.random.default_rng(seed))
        order = np.argsort(times, kind="stable")
        times, pulse_index = times[order], pulse_index[order]
    return times, pulse_index


def click_probabilities(mu: float, signal_transmission: float, idler_transmission: float,
                        modes: int = 1) -> Dict[str, float]:
    """
    Per-pulse click probabilities of threshold detectors on a thermal pair source.

    Uses the generating function G(x) = E[x^n] = (1 + mu (1 - x) / M)^(-M).

    Returns:
        Dictionary with p_s, p_i and p_si
    """
    def generating(x: float) -> float:
        return (1.0 + mu * (1.0 - x) / modes) ** (-modes)

    no_s = generating(1.0 - signal_transmission)
    no_i = generating(1.0 - idler_transmission)
    neither = generating((1.0 - signal_transmission) * (1.0 - idler_transmission))
    return {
        "p_s": 1.0 - no_s,
        "p_i": 1.0 - no_i,
        "p_si": 1.0 - no_s - no_i + neither,
    }


def expected_g2(mu: float, signal_transmission: float, idler_transmission: float, modes: int = 1) -> float:
    """Cross-correlation expected from click_probabilities."""
    p = click_probabilities(mu, signal_transmission, idler_transmission, modes)
    return p["p_si"] / (p["p_s"] * p["p_i"])


def mu_from_g2(g2: float) -> float:
    """Invert g2 = 1 + 1/mu (ideal threshold detection of a single-mode source)."""
    if g2 <= 1:
        raise ValueError("g2 must exceed 1")
    return 1.0 / (g2 - 1.0)
