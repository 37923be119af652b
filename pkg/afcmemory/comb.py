import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.signal import hilbert

logger = logging.getLogger(__name__)

TOOTH_SHAPES = ("square", "gaussian")

# Tooth shapes are sampled over the nearest tooth and this many neighbours on each side
_GAUSSIAN_NEIGHBOURS = 3


@dataclass(frozen=True)
class FrequencyGrid:
    """
    Uniform detuning axis on which spectra and transfer functions live.

    Detunings are relative to ``center_frequency`` and run from
    ``-span/2`` to ``span/2 - resolution``. The conjugate time axis has
    step ``1/span`` and is centred on t = 0.
    """
    center_frequency: float = 0.0
    span: float = 16e9
    n_points: int = 2 ** 16

    def __post_init__(self):
        if self.span <= 0:
            raise ValueError("grid span must be positive")
        if self.n_points < 2 ** 10 or self.n_points & (self.n_points - 1):
            raise ValueError("grid n_points must be a power of two >= 1024")

    @property
    def resolution(self) -> float:
        return self.span / self.n_points

    @property
    def frequencies(self) -> np.ndarray:
        """Detuning samples in Hz, ascending."""
        return (np.arange(self.n_points) - self.n_points // 2) * self.resolution

    @property
    def time_step(self) -> float:
        return 1.0 / self.span

    @property
    def times(self) -> np.ndarray:
        """Time samples in seconds, ascending, conjugate to ``frequencies``."""
        return (np.arange(self.n_points) - self.n_points // 2) * self.time_step

    def check_resolution(self, delta: float):
        """Raise if the grid cannot resolve teeth spaced by ``delta``."""
        if self.resolution > delta / 16:
            raise ValueError(
                f"grid too coarse: resolution {self.resolution:.3g} Hz exceeds delta/16 = {delta / 16:.3g} Hz"
            )


@dataclass
class CombProfile:
    """Sampled optical-depth spectrum of a prepared atomic frequency comb."""
    delta: float
    finesse: float
    d_peak: float
    d0: float
    bandwidth: float
    tooth_shape: str
    grid: FrequencyGrid
    od_samples: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"frequency_Hz": self.grid.frequencies, "optical_depth": self.od_samples})


@dataclass
class SpectralTransfer:
    """Complex amplitude response H(f) = exp(-d(f)/2 + i phi(f)) on a grid."""
    grid: FrequencyGrid
    amplitude_response: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.amplitude_response)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "frequency_Hz": self.grid.frequencies,
            "real": self.amplitude_response.real,
            "imag": self.amplitude_response.imag,
        })


@dataclass
class TemporalTrace:
    """
    Time-domain field of a propagated wavepacket.

    Attributes:
        t_samples: Sample times in seconds
        amplitude: Complex field amplitude
        input_energy: Energy of the wavepacket before the medium
    """
    t_samples: np.ndarray
    amplitude: np.ndarray
    input_energy: float

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    @property
    def time_step(self) -> float:
        return float(self.t_samples[1] - self.t_samples[0])

    @property
    def energy(self) -> float:
        return float(np.sum(self.intensity) * self.time_step)

    def energy_in(self, t_start: float, t_stop: float) -> float:
        """Energy contained in the closed interval [t_start, t_stop]."""
        mask = (self.t_samples >= t_start) & (self.t_samples <= t_stop)
        return float(np.sum(self.intensity[mask]) * self.time_step)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "time_s": self.t_samples,
            "real": self.amplitude.real,
            "imag": self.amplitude.imag,
        })


def _tooth_pattern(frequencies: np.ndarray, delta: float, finesse: float, shape: str,
                   resolution: float) -> np.ndarray:
    """Unit-height periodic tooth pattern with period ``delta``."""
    if math.isinf(finesse):
        # Delta-like teeth: one grid sample per tooth centre
        pattern = np.zeros_like(frequencies)
        m = np.arange(math.ceil(frequencies[0] / delta), math.floor(frequencies[-1] / delta) + 1)
        idx = np.rint((m * delta - frequencies[0]) / resolution).astype(int)
        pattern[idx[(idx >= 0) & (idx < len(frequencies))]] = 1.0
        return pattern

    if finesse == 1:
        return np.ones_like(frequencies)

    width = delta / finesse
    offset = frequencies - delta * np.round(frequencies / delta)

    if shape == "square":
        return (np.abs(offset) <= width / 2).astype(float)

    # Gaussian teeth with FWHM = width; overlapping tails of the neighbours are summed
    k = np.arange(-_GAUSSIAN_NEIGHBOURS, _GAUSSIAN_NEIGHBOURS + 1)
    pattern = np.exp(-4 * np.log(2) * ((offset[:, None] - k * delta) / width) ** 2).sum(axis=1)
    peak = np.exp(-4 * np.log(2) * ((k * delta) / width) ** 2).sum()
    return pattern / peak


def build_comb(delta: float, finesse: float, d_peak: float, d0: float, bandwidth: float,
               shape: str, grid: FrequencyGrid) -> CombProfile:
    """
    Sample an AFC optical-depth profile on a grid.

    Teeth of width ``delta/finesse`` and depth ``d_peak`` are centred on
    integer multiples of ``delta`` inside ``|f| <= bandwidth/2``. Everywhere
    the background ``d0`` is added. ``finesse = inf`` gives one-sample teeth.

    Args:
        delta: Tooth spacing in Hz
        finesse: Spacing over tooth width, >= 1
        d_peak: Peak optical depth above background
        d0: Background optical depth
        bandwidth: Total comb bandwidth in Hz
        shape: "square" or "gaussian"
        grid: Frequency grid to sample on

    Returns:
        CombProfile with ``od_samples`` filled

    Raises:
        ValueError: On nonpositive delta, coarse grid or invalid depths
    """
    if delta <= 0:
        raise ValueError("nonpositive delta")
    grid.check_resolution(delta)
    if finesse < 1:
        raise ValueError("finesse must be >= 1")
    if d_peak < 0 or d0 < 0:
        raise ValueError("optical depths must be non-negative")
    if shape not in TOOTH_SHAPES:
        raise ValueError(f"Unknown tooth shape '{shape}'")

    f = grid.frequencies
    inside = np.abs(f) <= bandwidth / 2
    teeth = _tooth_pattern(f, delta, finesse, shape, grid.resolution)
    od = d0 + d_peak * teeth * inside

    logger.debug(f"Built {shape} comb: delta={delta:.3g} Hz, F={finesse}, d_peak={d_peak}, d0={d0}")
    return CombProfile(delta, finesse, d_peak, d0, bandwidth, shape, grid, od)


def kramers_kronig_phase(comb: CombProfile, pad_factor: int = 4) -> np.ndarray:
    """
    Dispersive phase paired with the comb absorption by causality.

    The phase is the discrete Hilbert transform of -d(f)/2, computed by FFT
    on a zero-padded copy. The edge level of d is removed first so the
    padding introduces no artificial step.

    Args:
        comb: Absorption profile
        pad_factor: Zero-padding factor, at least 4

    Returns:
        Phase in radians on the comb grid
    """
    od = np.asarray(comb.od_samples, dtype=float)
    if not np.all(np.isfinite(od)):
        raise ValueError("non-finite optical depth samples")
    if pad_factor < 4:
        raise ValueError("pad_factor must be >= 4")

    baseline = 0.5 * (od[0] + od[-1])
    log_amplitude = -(od - baseline) / 2
    n = len(log_amplitude)
    return np.imag(hilbert(log_amplitude, N=pad_factor * n))[:n]


def transfer_function(comb: CombProfile, include_dispersion: bool = True) -> SpectralTransfer:
    """
    Complex amplitude transmission of the comb.

    Args:
        comb: Absorption profile
        include_dispersion: Add the Kramers-Kronig phase; off gives pure absorption

    Returns:
        SpectralTransfer on the comb grid
    """
    phase = kramers_kronig_phase(comb) if include_dispersion else np.zeros_like(comb.od_samples)
    response = np.exp(-comb.od_samples / 2 + 1j * phase)
    return SpectralTransfer(comb.grid, response)


def gaussian_input_spectrum(grid: FrequencyGrid, fwhm: float) -> np.ndarray:
    """Transform-limited Gaussian wavepacket centred on t = 0, unit energy, intensity FWHM ``fwhm``."""
    f = grid.frequencies
    spectrum = np.exp(-2 * np.log(2) * (f / fwhm) ** 2).astype(complex)
    energy = np.sum(np.abs(spectrum) ** 2) * grid.resolution
    return spectrum / np.sqrt(energy)


def _to_time(spectrum: np.ndarray, resolution: float) -> np.ndarray:
    # Field convention E(t) = integral E(f) exp(-2i pi f t) df
    return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(spectrum))) * resolution


def propagate_wavepacket(input_spectrum: np.ndarray, transfer: SpectralTransfer,
                         coherence_time: Optional[float] = None) -> TemporalTrace:
    """
    Propagate a wavepacket through the medium and return the output field.

    Args:
        input_spectrum: Complex input spectrum on the transfer grid
        transfer: Medium response
        coherence_time: If set, fields at t > 0 decay as exp(-t/coherence_time)

    Returns:
        TemporalTrace spanning the full conjugate time window

    Raises:
        ValueError: If the input is not sampled on the transfer grid
    """
    input_spectrum = np.asarray(input_spectrum)
    if input_spectrum.shape != transfer.amplitude_response.shape:
        raise ValueError(
            f"grid mismatch: input has {input_spectrum.shape}, transfer has {transfer.amplitude_response.shape}"
        )

    grid = transfer.grid
    input_energy = float(np.sum(np.abs(input_spectrum) ** 2) * grid.resolution)
    amplitude = _to_time(input_spectrum * transfer.amplitude_response, grid.resolution)

    t = grid.times
    if coherence_time is not None:
        amplitude = amplitude * np.exp(-np.clip(t, 0, None) / coherence_time)

    return TemporalTrace(t, amplitude, input_energy)


def echo_metrics(trace: TemporalTrace, delta: float, window: Optional[float] = None) -> Dict[str, float]:
    """
    Efficiency and timing of the first echo.

    Args:
        trace: Output of propagate_wavepacket
        delta: Tooth spacing; the echo is expected at 1/delta
        window: Full width of the echo and transmission windows, default 1/delta

    Returns:
        Dictionary with efficiency, echo_time and transmitted_fraction

    Raises:
        ValueError: If the echo window is not contained in the trace
    """
    t_echo = 1.0 / delta
    window = t_echo if window is None else window
    if window <= 0:
        raise ValueError("window must be positive")
    t = trace.t_samples
    if t_echo - window / 2 < t[0] or t_echo + window / 2 > t[-1]:
        raise ValueError("echo window outside trace")

    intensity = trace.intensity
    in_echo = np.abs(t - t_echo) <= window / 2
    echo_weight = np.sum(intensity[in_echo])
    echo_time = float(np.sum(t[in_echo] * intensity[in_echo]) / echo_weight) if echo_weight > 0 else float("nan")

    return {
        "efficiency": float(echo_weight * trace.time_step / trace.input_energy),
        "echo_time": echo_time,
        "transmitted_fraction": trace.energy_in(-window / 2, window / 2) / trace.input_energy,
    }


def analytic_echo_efficiency(d_peak: float, finesse: float, d0: float, shape: str = "square") -> float:
    """Closed-form forward AFC recall efficiency."""
    if finesse < 1:
        raise ValueError("finesse must be >= 1")
    if d_peak < 0 or d0 < 0:
        raise ValueError("optical depths must be non-negative")
    if shape not in TOOTH_SHAPES:
        raise ValueError(f"Unknown tooth shape '{shape}'")

    d_eff = d_peak / finesse
    if shape == "square":
        dephasing = np.sinc(1.0 / finesse) ** 2
    else:
        dephasing = math.exp(-7.0 / finesse ** 2)
    return float(d_eff ** 2 * math.exp(-d_eff) * math.exp(-d0) * dephasing)


def simulate_echo(delta: float, finesse: float, d_peak: float, d0: float, bandwidth: float,
                  shape: str, grid: FrequencyGrid, pulse_fwhm: float,
                  include_dispersion: bool = True,
                  coherence_time: Optional[float] = None) -> Dict[str, float]:
    """Build, propagate and measure in one call; convenience for sweeps and calibration."""
    comb = build_comb(delta, finesse, d_peak, d0, bandwidth, shape, grid)
    transfer = transfer_function(comb, include_dispersion)
    trace = propagate_wavepacket(gaussian_input_spectrum(grid, pulse_fwhm), transfer, coherence_time)
    return echo_metrics(trace, delta)


def storage_time_sweep(delta_values: Sequence[float], finesse: float, d_peak: float, d0: float,
                       bandwidth: float, shape: str, grid: FrequencyGrid, pulse_fwhm: float,
                       coherence_time: Optional[float] = None) -> List[Dict[str, float]]:
    """
    Echo time and efficiency for a list of tooth spacings.

    Smaller spacings store longer; with a finite coherence time the
    efficiency falls as the storage time grows.
    """
    rows = []
    for delta in delta_values:
        metrics = simulate_echo(delta, finesse, d_peak, d0, bandwidth, shape, grid, pulse_fwhm,
                                coherence_time=coherence_time)
        rows.append({"delta_hz": float(delta), "storage_time_s": 1.0 / delta, **metrics})
        logger.debug(f"delta={delta:.3g} Hz: echo at {metrics['echo_time']:.4g} s, eta={metrics['efficiency']:.4g}")
    return rows


def temporal_mode_capacity(delta: float, bandwidth: float) -> int:
    """Number of time bins of duration 1/bandwidth that fit in one storage period 1/delta."""
    if delta <= 0 or bandwidth <= 0:
        raise ValueError("delta and bandwidth must be positive")
    return int(math.floor(bandwidth / delta + 1e-9))
