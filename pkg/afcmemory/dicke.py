import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .comb import CombProfile, echo_metrics, gaussian_input_spectrum, propagate_wavepacket, transfer_function

logger = logging.getLogger(__name__)

# Upper bound on atoms x time samples evaluated in one block
_BLOCK_ELEMENTS = 2_000_000

# Echoes weaker than this (intensity relative to t = 0) count as absent
NO_ECHO_THRESHOLD = 1e-3


@dataclass
class AtomEnsemble:
    """
    Discrete atoms sharing one collective excitation.

    Attributes:
        detunings: Atomic detunings in Hz
        weights: Excitation amplitudes c_j, normalized so sum(c_j**2) = 1
        positions: Optional longitudinal positions z_j in metres
    """
    detunings: np.ndarray
    weights: np.ndarray
    positions: Optional[np.ndarray] = None

    @property
    def n_atoms(self) -> int:
        return len(self.detunings)


def sample_ensemble(comb: CombProfile, n_atoms: int, seed: int, medium_length: Optional[float] = None) -> AtomEnsemble:
    """
    Draw atoms whose detunings follow the comb absorption probability 1 - exp(-d).

    Args:
        comb: Prepared comb; only detunings inside its bandwidth are used
        n_atoms: Number of atoms, at least 1000
        seed: Seed for the sampler
        medium_length: If set, also draw uniform positions along a medium of this length

    Returns:
        AtomEnsemble with uniform weights

    Raises:
        ValueError: If n_atoms is too small or the comb absorbs nowhere
    """
    if n_atoms < 1000:
        raise ValueError("n_atoms must be >= 1000")
    rng = np.random.default_rng(seed)

    f = comb.grid.frequencies
    inside = np.abs(f) <= comb.bandwidth / 2

    if math.isinf(comb.finesse):
        m = np.arange(math.ceil(-comb.bandwidth / 2 / comb.delta), math.floor(comb.bandwidth / 2 / comb.delta) + 1)
        detunings = m[rng.integers(0, len(m), size=n_atoms)] * comb.delta
    else:
        density = (1.0 - np.exp(-comb.od_samples)) * inside
        total = density.sum()
        if total <= 0:
            raise ValueError("empty comb: no absorption inside the bandwidth")
        idx = rng.choice(len(f), size=n_atoms, p=density / total)
        res = comb.grid.resolution
        detunings = f[idx] + rng.uniform(-res / 2, res / 2, size=n_atoms)

    teeth = np.round(detunings / comb.delta).astype(int)
    per_tooth = np.bincount(teeth - teeth.min())
    if per_tooth[per_tooth > 0].min() < 8:
        logger.warning("Some comb teeth hold fewer than 8 atoms; increase n_atoms")

    weights = np.full(n_atoms, 1.0 / math.sqrt(n_atoms))
    positions = rng.uniform(0.0, medium_length, size=n_atoms) if medium_length else None
    return AtomEnsemble(detunings, weights, positions)


def collective_reemission_intensity(ensemble: AtomEnsemble, t_samples: np.ndarray,
                                    wavevector: Optional[float] = None, workers: int = 1) -> np.ndarray:
    """
    Collective emission intensity |sum_j c_j exp(2i pi delta_j t)|^2, normalized to 1 at t = 0.

    Args:
        ensemble: Atoms and amplitudes
        t_samples: Times in seconds
        wavevector: If set together with positions, include the exp(i k z_j) factors
        workers: Threads evaluating independent time blocks

    Returns:
        Intensity at each requested time
    """
    t = np.atleast_1d(np.asarray(t_samples, dtype=float))
    amplitudes = ensemble.weights.astype(complex)
    if wavevector is not None and ensemble.positions is not None:
        amplitudes = amplitudes * np.exp(1j * wavevector * ensemble.positions)
    norm = np.abs(amplitudes.sum()) ** 2

    block = max(1, _BLOCK_ELEMENTS // max(ensemble.n_atoms, 1))
    starts = range(0, len(t), block)

    def _block(start: int) -> np.ndarray:
        phases = np.exp(2j * np.pi * np.outer(t[start:start + block], ensemble.detunings))
        return np.abs(phases @ amplitudes) ** 2

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block, starts))
    else:
        parts = [_block(start) for start in starts]

    intensity = np.concatenate(parts) if parts else np.empty(0)
    return intensity / norm


def transfer_echo_ratio(comb: CombProfile) -> float:
    """
    Echo-to-initial intensity ratio implied by the transfer function.

    The absorbed spectrum 1 - |H|^2 inside the comb bandwidth is the
    density the oracle samples atoms from; its first harmonic at t = 1/delta
    gives the expected oracle ratio I(1/delta)/I(0).
    """
    transfer = transfer_function(comb, include_dispersion=False)
    f = comb.grid.frequencies
    absorbed = (1.0 - transfer.magnitude ** 2) * (np.abs(f) <= comb.bandwidth / 2)
    total = absorbed.sum()
    if total <= 0:
        return 0.0
    harmonic = np.sum(absorbed * np.exp(2j * np.pi * f / comb.delta))
    return float(np.abs(harmonic) ** 2 / total ** 2)


def compare_engines(comb: CombProfile, n_atoms: int, seed: int, pulse_fwhm: Optional[float] = None) -> Dict[str, float]:
    """
    Cross-check the discrete-atom oracle against FFT propagation.

    Args:
        comb: Comb evaluated by both engines
        n_atoms: Oracle ensemble size
        seed: Oracle sampling seed
        pulse_fwhm: Input pulse bandwidth for the FFT engine, default a quarter of the comb bandwidth

    Returns:
        Dictionary with time_agreement (s), ratio_agreement (relative),
        the per-engine echo times and ratios, and a no_echo flag
    """
    grid = comb.grid
    delta = comb.delta
    pulse_fwhm = pulse_fwhm or comb.bandwidth / 4

    trace = propagate_wavepacket(gaussian_input_spectrum(grid, pulse_fwhm), transfer_function(comb))
    fft_metrics = echo_metrics(trace, delta)
    ratio_fft = transfer_echo_ratio(comb)

    ensemble = sample_ensemble(comb, n_atoms, seed)
    dt = grid.time_step
    steps = np.arange(int(round(0.5 / delta / dt)), int(round(1.5 / delta / dt)) + 1)
    t_scan = steps * dt
    intensity = collective_reemission_intensity(ensemble, t_scan)
    echo_time_oracle = float(t_scan[np.argmax(intensity)])
    ratio_oracle = float(collective_reemission_intensity(ensemble, [1.0 / delta])[0])

    no_echo = ratio_fft < NO_ECHO_THRESHOLD
    if no_echo:
        logger.info("No echo found by either engine (flat or nearly flat comb)")
        time_agreement, ratio_agreement = 0.0, 0.0
    else:
        time_agreement = abs(echo_time_oracle - fft_metrics["echo_time"])
        ratio_agreement = abs(ratio_oracle - ratio_fft) / ratio_fft

    return {
        "time_agreement": time_agreement,
        "ratio_agreement": ratio_agreement,
        "echo_time_oracle": echo_time_oracle,
        "echo_time_fft": fft_metrics["echo_time"],
        "ratio_oracle": ratio_oracle,
        "ratio_fft": ratio_fft,
        "time_bin": dt,
        "no_echo": bool(no_echo),
    }
