import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass
class DetectorParams:
    """
    Single-photon detector model.

    Attributes:
        efficiency: Detection probability per photon
        jitter_sigma: Gaussian timing jitter standard deviation in seconds
        dark_rate: Dark-count rate in Hz
        dead_time: Dead time after each click in seconds
    """
    efficiency: float
    jitter_sigma: float = 0.0
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.jitter_sigma < 0 or self.dark_rate < 0 or self.dead_time < 0:
            raise ValueError("jitter, dark rate and dead time must be non-negative")

    @classmethod
    def from_fwhm(cls, efficiency: float, jitter_fwhm: float, dark_rate: float = 0.0,
                  dead_time: float = 0.0) -> "DetectorParams":
        """Build from a jitter FWHM, the way detector datasheets quote it."""
        return cls(efficiency, jitter_fwhm * FWHM_TO_SIGMA, dark_rate, dead_time)


@dataclass
class TimeTagStream:
    """Time-ordered clicks of one detector channel."""
    times: np.ndarray
    channel: int = 0
    pulse_index: Optional[np.ndarray] = None
    duration: float = 0.0
    n_pulses: int = 0

    def __len__(self) -> int:
        return len(self.times)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time_s": self.times, "channel": np.full(len(self.times), self.channel)})


@dataclass
class CoincidenceSet:
    """
    Heralded counting record behind one g2 or projection measurement.

    Attributes:
        n_si: Coincidences between signal and herald
        n_s: Signal singles
        n_i: Idler (herald) singles
        n_pulses: Pulse slots covered by the record
        window: Coincidence window in seconds
    """
    n_si: int
    n_s: int
    n_i: int
    n_pulses: int
    window: float

    def __post_init__(self):
        if min(self.n_si, self.n_s, self.n_i, self.n_pulses) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_si > min(self.n_s, self.n_i):
            raise ValueError("coincidences exceed singles")

    @property
    def accidentals(self) -> float:
        """Expected accidental coincidences for uncorrelated streams, N_s N_i / N_pulses."""
        if self.n_pulses == 0:
            return 0.0
        return self.n_s * self.n_i / self.n_pulses

    @property
    def corrected(self) -> float:
        """Coincidences with the expected accidentals subtracted."""
        return self.n_si - self.accidentals


@dataclass
class TdcHistogram:
    """Start-stop histogram of signal-minus-reference delays."""
    bin_centers: np.ndarray
    counts: np.ndarray
    bin_width: float = field(default=80e-12)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_center_s": self.bin_centers, "counts": self.counts})


@dataclass
class DutyCycle:
    """Pump / wait / storage cycle of the memory preparation."""
    pump: float = 0.5
    wait: float = 0.3
    storage: float = 0.7

    @property
    def period(self) -> float:
        return self.pump + self.wait + self.storage

    @property
    def storage_fraction(self) -> float:
        return self.storage / self.period

    def wall_time_for(self, active_seconds: float) -> float:
        """Wall-clock time needed to accumulate ``active_seconds`` of storage windows."""
        return active_seconds / self.storage_fraction

    def scale_rate(self, active_rate: float) -> float:
        """Average rate over wall time for a rate sustained during storage windows."""
        return active_rate * self.storage_fraction


def _enforce_dead_time(times: np.ndarray, dead_time: float) -> np.ndarray:
    """Boolean mask of clicks that survive a non-paralyzable dead time."""
    keep = np.ones(len(times), dtype=bool)
    if len(times) < 2:
        return keep
    gaps = np.diff(times)
    if dead_time > 0 and np.all(gaps >= dead_time):
        return keep
    if dead_time == 0 and np.all(gaps > 0):
        return keep

    last = times[0]
    for k in range(1, len(times)):
        t = times[k]
        if t > last and t - last >= dead_time:
            last = t
        else:
            keep[k] = False
    return keep


def detect_stream(arrival_times: np.ndarray, params: DetectorParams, duration: float, seed: int,
                  efficiency_multiplier: Union[float, np.ndarray] = 1.0,
                  pulse_index: Optional[np.ndarray] = None, channel: int = 0,
                  n_pulses: int = 0) -> TimeTagStream:
    """
    Turn photon arrival times into detector clicks.

    Each photon survives with probability efficiency x multiplier, is
    delayed by Gaussian jitter, dark counts are added as a Poisson
    process over ``duration``, and the dead time is applied last.

    Args:
        arrival_times: Photon arrival times in seconds
        params: Detector model
        duration: Observation time in seconds
        seed: Seed for efficiency, jitter and dark-count draws
        efficiency_multiplier: Extra per-photon efficiency factor (e.g. polarization dependence)
        pulse_index: Optional pulse slot of each photon, carried to the tags
        channel: Channel id of the stream
        n_pulses: Pulse slots covered, carried to the tags

    Returns:
        TimeTagStream sorted in time
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)

    arrival_times = np.asarray(arrival_times, dtype=float)
    if pulse_index is None:
        pulse_index = np.full(len(arrival_times), -1, dtype=np.int64)

    probability = np.clip(params.efficiency * np.asarray(efficiency_multiplier, dtype=float), 0.0, 1.0)
    survive = rng.random(len(arrival_times)) < probability
    times = arrival_times[survive]
    index = pulse_index[survive]
    if params.jitter_sigma > 0:
        times = times + rng.normal(0.0, params.jitter_sigma, size=len(times))

    n_dark = rng.poisson(params.dark_rate * duration) if params.dark_rate > 0 else 0
    if n_dark:
        times = np.concatenate([times, rng.uniform(0.0, duration, size=n_dark)])
        index = np.concatenate([index, np.full(n_dark, -1, dtype=np.int64)])

    order = np.argsort(times, kind="stable")
    times, index = times[order], index[order]
    keep = _enforce_dead_time(times, params.dead_time)

    logger.debug(f"Channel {channel}: {len(arrival_times)} photons -> {int(keep.sum())} clicks ({n_dark} dark)")
    return TimeTagStream(times[keep], channel, index[keep], duration, n_pulses)


def tdc_histogram(stream: TimeTagStream, reference: TimeTagStream, bin_width: float = 80e-12,
                  t_min: float = -2e-9, t_max: float = 20e-9) -> TdcHistogram:
    """
    Histogram of signal-minus-reference delays within [t_min, t_max].

    Bins are centred on integer multiples of ``bin_width``, so a tag
    coincident with its reference lands in the zero bin. Every
    (signal, reference) pair within range contributes one count.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")

    k = np.arange(math.floor(t_min / bin_width), math.ceil(t_max / bin_width) + 1)
    centers = k * bin_width
    edges = np.append(centers - bin_width / 2, centers[-1] + bin_width / 2)
    if len(stream) == 0 or len(reference) == 0:
        return TdcHistogram(centers, np.zeros(len(centers), dtype=np.int64), bin_width)

    ref = reference.times
    sig = stream.times
    lo = np.searchsorted(ref, sig - edges[-1], side="left")
    hi = np.searchsorted(ref, sig - edges[0], side="right")
    n_match = hi - lo

    sig_rep = np.repeat(sig, n_match)
    starts = np.repeat(lo - np.cumsum(n_match) + n_match, n_match)
    ref_idx = starts + np.arange(n_match.sum())
    delays = sig_rep - ref[ref_idx]

    counts, _ = np.histogram(delays, bins=edges)
    return TdcHistogram(centers, counts.astype(np.int64), bin_width)


def window_sum(histogram: TdcHistogram, center: float, n_bins: int = 5) -> int:
    """Counts summed over ``n_bins`` bins centred on the bin nearest ``center``."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    middle = int(np.argmin(np.abs(histogram.bin_centers - center)))
    half = n_bins // 2
    lo, hi = max(0, middle - half), min(len(histogram.counts), middle - half + n_bins)
    return int(histogram.counts[lo:hi].sum())


def coincide(herald: TimeTagStream, signal: TimeTagStream, window: float, expected_delay: float = 0.0,
             n_pulses: Optional[int] = None) -> CoincidenceSet:
    """
    AND-gate coincidence counting with one-to-one greedy matching in time order.

    A herald and a signal tag pair up when
    |t_signal - t_herald - expected_delay| <= window/2; each tag is used at most once.

    Args:
        herald: Idler clicks
        signal: Signal clicks
        window: Full coincidence window in seconds
        expected_delay: Signal delay relative to the herald
        n_pulses: Pulse slots covered; defaults to the herald stream's count

    Returns:
        CoincidenceSet
    """
    if window <= 0:
        raise ValueError("window must be positive")

    h = herald.times
    s = signal.times - expected_delay
    half = window / 2
    i = j = matched = 0
    while i < len(h) and j < len(s):
        gap = s[j] - h[i]
        if gap < -half:
            j += 1
        elif gap > half:
            i += 1
        else:
            matched += 1
            i += 1
            j += 1

    n_pulses = herald.n_pulses if n_pulses is None else n_pulses
    return CoincidenceSet(matched, len(signal), len(herald), n_pulses, window)
