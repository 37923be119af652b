import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

SCENARIOS = ("echo_trace", "pol_sweep", "visibility_scan", "tomography", "g2_run", "calibrate")
PRESETS = ("ideal", "measured")
PRESET_ALIASES = {"paper": "measured"}

# Values the measured preset layers on top of the defaults
MEASURED_PRESET = {
    "target_efficiency": 0.01,
    "scrambled": True,
    "drift_amplitude": 0.07,
    "analyzer_leakage_bypass": 0.012,
    "analyzer_leakage_storage": 0.016,
    "tomography_leakage": 0.005,
    "coupling_transmission": 1.2e-4,
    "pol_sweep_seconds": 3600.0,
}

# Environment variable -> (field, type)
ENVIRONMENT_FIELDS = {
    "AFC_SEED": ("seed", int),
    "AFC_OUT_DIR": ("out_dir", str),
    "AFC_DATABASE_PATH": ("database_path", str),
    "AFC_PRESET": ("preset", str),
}


def canonical_json(data: Any) -> str:
    """Serialize to JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def resolve_preset(name: str) -> str:
    """Canonical preset name; ``paper`` is an alias of ``measured``."""
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}', expected one of {PRESETS + tuple(PRESET_ALIASES)}")
    return name


def environment_overrides() -> Dict[str, Any]:
    """Field values taken from ``AFC_*`` environment variables."""
    overrides = {}
    for variable, (name, kind) in ENVIRONMENT_FIELDS.items():
        value = os.environ.get(variable)
        if value:
            overrides[name] = kind(value)
    return overrides


@dataclass
class Config:
    """
    Configuration for the AFC memory reproduction harness.

    Every field has a default, so an empty JSON document is a valid
    configuration. The defaults describe the reference hardware with an ideal
    analyzer; ``with_preset("measured")`` adds the measured imperfections.

    Attributes:
        seed: Base seed; every scenario derives its own seeds from it
        out_dir: Directory for CSV/JSON outputs
        database_path: DuckDB file collecting all run tables
        preset: Name of the applied preset (ideal or measured)
        delta_hz: Comb tooth spacing
        finesse: Tooth spacing over tooth width
        d_peak: Peak optical depth above background
        d0: Background optical depth
        comb_bandwidth_hz: Total prepared comb bandwidth
        tooth_shape: square or gaussian
        grid_span_hz: Frequency span of the simulation grid
        grid_points: Number of grid samples (power of two)
        include_dispersion: Add the Kramers-Kronig phase to the transfer function
        coherence_time_s: Effective coherence time of the echo
        pulse_fwhm_hz: Spectral intensity FWHM of the signal wavepacket
        target_efficiency: Recall efficiency to calibrate d_peak to, if set
        mu: Mean pair number per pulse
        rep_rate_hz: Pump repetition rate
        spectral_modes: Number of thermal modes of the source
        bandwidth_pass_fraction: Pair fraction inside the memory bandwidth
        target_g2: Cross-correlation to calibrate mu to, if set
        memory_contrast: Hole-burning efficiency contrast
        pump_angle_rad: Linear polarization angle of the pump light
        scrambled: Pump scrambler on for the storage arms
        drift_amplitude: Peak-to-peak relative efficiency drift when scrambled
        coupling_transmission: Link transmission; scales heralded rates and the pol-sweep exposure
    """
    # Run parameters
    seed: int = 42
    out_dir: str = "./results"
    database_path: str = "./results/afc.duckdb"
    preset: str = "ideal"

    # Comb parameters
    delta_hz: float = 200e6
    finesse: float = 2.0
    d_peak: float = 1.4
    d0: float = 0.8
    comb_bandwidth_hz: float = 8e9
    tooth_shape: str = "square"
    grid_span_hz: float = 16e9
    grid_points: int = 2 ** 16
    include_dispersion: bool = True
    coherence_time_s: float = 200e-9
    pulse_fwhm_hz: float = 10e9
    target_efficiency: Optional[float] = None

    # Source parameters
    mu: float = 1.0 / (14.1 - 1.0)
    rep_rate_hz: float = 80e6
    signal_bandwidth_hz: float = 10e9
    spectral_modes: int = 1
    bandwidth_pass_fraction: float = 0.8
    target_g2: Optional[float] = None

    # Detector parameters (idler: Si-APD herald, signal: SNSPD)
    idler_efficiency: float = 0.6
    idler_jitter_fwhm_s: float = 600e-12
    idler_dark_rate_hz: float = 100.0
    idler_dead_time_s: float = 50e-9
    signal_efficiency: float = 0.6
    signal_jitter_fwhm_s: float = 350e-12
    signal_dark_rate_hz: float = 10.0
    signal_dead_time_s: float = 20e-9
    signal_pol_depth: float = 0.05
    tdc_bin_s: float = 80e-12
    echo_sum_bins: int = 5
    coincidence_window_s: float = 1e-9

    # Memory and polarization parameters
    memory_contrast: float = 0.25
    pump_angle_rad: float = 0.0
    scrambled: bool = False
    drift_amplitude: float = 0.07
    scrambler_samples: int = 2000
    hwp_step_deg: float = 15.0
    hwp_settings: int = 12
    analyzer_leakage_bypass: float = 0.0
    analyzer_leakage_storage: float = 0.0
    tomography_leakage: float = 0.0
    depolarized: bool = False

    # Acquisition parameters
    coincidences_per_setting: int = 300
    tomography_counts_per_basis: int = 1000
    g2_coincidences: int = 300
    echo_pulses: int = 4_000_000
    pol_sweep_seconds: float = 60.0
    bootstrap_resamples: int = 200
    infinite_statistics: bool = False
    pump_time_s: float = 0.5
    wait_time_s: float = 0.3
    storage_time_s: float = 0.7
    coupling_transmission: float = 1.0

    @classmethod
    def from_dict(cls, data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None,
                  environment: bool = True) -> "Config":
        """
        Build a configuration from layered sources.

        Layers, lowest precedence first: field defaults, the preset named by
        the merged ``preset`` value, ``data``, the ``AFC_*`` environment and
        ``overrides``. Preset values never replace a field set explicitly in
        any layer.

        Args:
            data: Field values, typically a JSON document; missing fields take their defaults
            overrides: Field values that win over every other layer (command line)
            environment: Read the ``AFC_*`` environment variables

        Returns:
            Config instance with the named preset applied

        Raises:
            ValueError: If a layer holds unknown keys or names an unknown preset
        """
        known = {f.name for f in fields(cls)}
        for layer in (data, overrides or {}):
            unknown = sorted(set(layer) - known)
            if unknown:
                raise ValueError(f"Unknown configuration keys: {', '.join(unknown)}")

        merged = {**data, **(environment_overrides() if environment else {}), **(overrides or {})}
        merged["preset"] = resolve_preset(merged.get("preset", "ideal"))
        return cls(**merged).with_preset(merged["preset"], keep=set(merged) - {"preset"})

    @classmethod
    def from_json(cls, path: str, overrides: Optional[Dict[str, Any]] = None) -> "Config":
        """Load a configuration from a single JSON document."""
        with open(path, "r") as f:
            data = json.load(f)
        logger.debug(f"Loaded configuration from {path}")
        return cls.from_dict(data, overrides)

    def with_preset(self, name: str, keep: Optional[set] = None) -> "Config":
        """
        Return a copy with a named preset applied.

        Args:
            name: Preset name (ideal, measured or its alias paper)
            keep: Field names that must not be overwritten by the preset

        Returns:
            New Config instance
        """
        name = resolve_preset(name)
        changes = {"preset": name}
        if name == "measured":
            changes.update({k: v for k, v in MEASURED_PRESET.items() if not keep or k not in keep})
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """Return all fields as a dictionary."""
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of every field except output locations."""
        payload = self.to_dict()
        payload.pop("out_dir")
        payload.pop("database_path")
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()

    @property
    def storage_duty(self) -> float:
        """Fraction of wall time spent in the storage window."""
        return self.storage_time_s / (self.pump_time_s + self.wait_time_s + self.storage_time_s)

    def validate(self):
        """
        Check the configuration against the domain rules of each module.

        Raises:
            ValueError: If any field is out of range
        """
        if self.delta_hz <= 0:
            raise ValueError("delta_hz must be positive")
        if self.finesse < 1:
            raise ValueError("finesse must be >= 1")
        if self.d_peak < 0 or self.d0 < 0:
            raise ValueError("optical depths must be non-negative")
        if self.tooth_shape not in ("square", "gaussian"):
            raise ValueError(f"Unknown tooth_shape '{self.tooth_shape}'")
        if self.grid_points < 2 ** 10 or self.grid_points & (self.grid_points - 1):
            raise ValueError("grid_points must be a power of two >= 1024")
        if self.grid_span_hz / self.grid_points > self.delta_hz / 16:
            raise ValueError("grid too coarse: resolution must be <= delta_hz/16")
        if self.mu < 0 or self.rep_rate_hz <= 0:
            raise ValueError("mu must be >= 0 and rep_rate_hz > 0")
        if self.spectral_modes < 1:
            raise ValueError("spectral_modes must be >= 1")

        for name in ("bandwidth_pass_fraction", "idler_efficiency", "signal_efficiency",
                     "coupling_transmission"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

        for name in ("memory_contrast", "drift_amplitude", "signal_pol_depth",
                     "analyzer_leakage_bypass", "analyzer_leakage_storage", "tomography_leakage"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValueError(f"{name} must lie in [0, 1)")

        if self.target_efficiency is not None and not 0 <= self.target_efficiency < 1:
            raise ValueError("target_efficiency must lie in [0, 1)")
        if self.target_g2 is not None and self.target_g2 <= 1:
            raise ValueError("target_g2 must exceed 1")
        if self.coincidence_window_s <= 0 or self.tdc_bin_s <= 0:
            raise ValueError("coincidence_window_s and tdc_bin_s must be positive")
        if not math.isfinite(self.coherence_time_s) or self.coherence_time_s <= 0:
            raise ValueError("coherence_time_s must be positive and finite")

    def save(self, path: str):
        """Write the configuration as JSON."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
