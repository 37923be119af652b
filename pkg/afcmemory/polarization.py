import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import unitary_group

logger = logging.getLogger(__name__)

UNITARY = "unitary"
DIATTENUATOR = "diattenuator"

_NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class JonesVector:
    """
    Polarization qubit amplitude pair in the H/V basis.

    A state prepared with angles (theta, phi) reads
    cos(theta)|H> + exp(i phi) sin(theta)|V>.
    """
    h: complex
    v: complex

    @classmethod
    def from_array(cls, values: Sequence[complex]) -> "JonesVector":
        return cls(complex(values[0]), complex(values[1]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.h, self.v], dtype=complex)

    @property
    def norm_squared(self) -> float:
        return abs(self.h) ** 2 + abs(self.v) ** 2

    def normalized(self) -> "JonesVector":
        norm = math.sqrt(self.norm_squared)
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return JonesVector(self.h / norm, self.v / norm)

    def orthogonal(self) -> "JonesVector":
        """State orthogonal to this one, with the same norm."""
        return JonesVector(-np.conj(self.v), np.conj(self.h))

    def inner(self, other: "JonesVector") -> complex:
        """<self|other>"""
        return complex(np.vdot(self.array, other.array))

    def overlap(self, other: "JonesVector") -> float:
        """|<self|other>|^2; global phases never matter."""
        return abs(self.inner(other)) ** 2

    def projector(self) -> np.ndarray:
        return np.outer(self.array, np.conj(self.array))


H = JonesVector(1, 0)
V = JonesVector(0, 1)
D = JonesVector(1 / math.sqrt(2), 1 / math.sqrt(2))
A = JonesVector(1 / math.sqrt(2), -1 / math.sqrt(2))
R = JonesVector(1 / math.sqrt(2), 1j / math.sqrt(2))
L = JonesVector(1 / math.sqrt(2), -1j / math.sqrt(2))


@dataclass(frozen=True)
class JonesMatrix:
    """2x2 complex optical element, tagged unitary or diattenuator."""
    matrix: np.ndarray
    kind: str = UNITARY

    def apply(self, state: JonesVector) -> JonesVector:
        return JonesVector.from_array(self.matrix @ state.array)

    def __matmul__(self, other: "JonesMatrix") -> "JonesMatrix":
        kind = UNITARY if self.kind == UNITARY and other.kind == UNITARY else DIATTENUATOR
        return JonesMatrix(self.matrix @ other.matrix, kind)

    @property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    @property
    def transmission_contrast(self) -> float:
        """Relative spread of power transmission over all inputs, (s_max^2 - s_min^2) / s_max^2."""
        s = self.singular_values
        if s.max() == 0:
            return 0.0
        return float((s.max() ** 2 - s.min() ** 2) / s.max() ** 2)

    def is_unitary(self, tolerance: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix.conj().T @ self.matrix, np.eye(2), atol=tolerance, rtol=0))

    def transmission(self, state: JonesVector) -> float:
        """Power transmitted for an input state, ||M psi||^2 / ||psi||^2."""
        return self.apply(state).norm_squared / state.norm_squared


def prepare_qubit(theta: float, phi: float) -> JonesVector:
    """Polarization qubit cos(theta)|H> + exp(i phi) sin(theta)|V>."""
    return JonesVector(math.cos(theta), np.exp(1j * phi) * math.sin(theta))


def waveplate(kind: str, fast_axis_angle: float) -> JonesMatrix:
    """
    Jones matrix of an ideal retarder rotated to ``fast_axis_angle``.

    Args:
        kind: "half" or "quarter"
        fast_axis_angle: Fast-axis angle from horizontal, in radians

    Returns:
        Unitary JonesMatrix
    """
    c, s = math.cos(fast_axis_angle), math.sin(fast_axis_angle)
    if kind == "half":
        m = np.exp(-1j * math.pi / 2) * np.array([
            [c ** 2 - s ** 2, 2 * c * s],
            [2 * c * s, s ** 2 - c ** 2],
        ], dtype=complex)
    elif kind == "quarter":
        m = np.exp(-1j * math.pi / 4) * np.array([
            [c ** 2 + 1j * s ** 2, (1 - 1j) * s * c],
            [(1 - 1j) * s * c, s ** 2 + 1j * c ** 2],
        ], dtype=complex)
    else:
        raise ValueError(f"Unknown waveplate kind '{kind}'")
    return JonesMatrix(m, UNITARY)


def hwp_settings(step_deg: float = 15.0, count: int = 12) -> np.ndarray:
    """Half-wave-plate angles in radians, ``count`` steps of ``step_deg`` from 0."""
    return np.deg2rad(step_deg * np.arange(count))


# Unitaries that rotate each measurement basis onto the PBS H/V ports
def basis_analyzer(basis: str) -> JonesMatrix:
    if basis == "HV":
        return JonesMatrix(np.eye(2, dtype=complex), UNITARY)
    if basis == "DA":
        return waveplate("half", math.pi / 8)
    if basis == "RL":
        return waveplate("quarter", math.pi / 4)
    raise ValueError(f"Unknown measurement basis '{basis}'")


def pbs_project(state: JonesVector, analyzer: Optional[JonesMatrix] = None) -> Dict[str, float]:
    """
    Port probabilities of a polarizing beam splitter.

    Args:
        state: Normalized input state
        analyzer: Optional unitary placed before the PBS; the ports then
            project onto analyzer^dagger |H> and analyzer^dagger |V>

    Returns:
        Dictionary with p_H and p_V

    Raises:
        ValueError: If the state is not normalized
    """
    if abs(state.norm_squared - 1.0) > _NORM_TOLERANCE:
        raise ValueError(f"unnormalized input state (norm^2 = {state.norm_squared:.6g})")
    if analyzer is not None:
        state = analyzer.apply(state)
    return {"p_H": abs(state.h) ** 2, "p_V": abs(state.v) ** 2}


def scrambler_sample(seed: int, n: int) -> List[JonesMatrix]:
    """
    Haar-random polarization transformations, one per scrambler snapshot.

    Args:
        seed: Sampler seed
        n: Number of unitaries, at least 1

    Returns:
        List of unitary JonesMatrix
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    matrices = np.asarray(unitary_group.rvs(2, size=n, random_state=rng)).reshape(-1, 2, 2)
    return [JonesMatrix(m, UNITARY) for m in matrices]


def memory_polarization_operator(scrambled: bool, pump_state: JonesVector, contrast: float,
                                 drift_amplitude: float, seed: int, eta_max: float = 1.0) -> JonesMatrix:
    """
    Polarization-dependent amplitude response of the memory.

    Unscrambled, hole burning leaves full efficiency along the pump
    polarization and a ``contrast`` fraction less orthogonal to it.
    Scrambled, the response is isotropic with a slow run-to-run drift
    drawn uniformly from +-drift_amplitude/2.

    Args:
        scrambled: Whether the pump polarization scrambler is on
        pump_state: Pump polarization
        contrast: Relative efficiency loss orthogonal to the pump, in [0, 1)
        drift_amplitude: Peak-to-peak relative drift when scrambled, in [0, 1)
        seed: Seed for the drift draw
        eta_max: Efficiency along the pump polarization

    Returns:
        Diattenuator JonesMatrix
    """
    if not 0 <= contrast < 1:
        raise ValueError("contrast must lie in [0, 1)")
    if not 0 <= drift_amplitude < 1:
        raise ValueError("drift_amplitude must lie in [0, 1)")

    if scrambled:
        drift = np.random.default_rng(seed).uniform(-drift_amplitude / 2, drift_amplitude / 2)
        return JonesMatrix(math.sqrt(eta_max * (1 + drift)) * np.eye(2, dtype=complex), DIATTENUATOR)

    pump = pump_state.normalized()
    m = (math.sqrt(eta_max) * pump.projector()
         + math.sqrt(eta_max * (1 - contrast)) * pump.orthogonal().projector())
    return JonesMatrix(m, DIATTENUATOR)


def scrambled_pump_efficiency(state: JonesVector, pump_state: JonesVector, contrast: float,
                              unitaries: Sequence[JonesMatrix]) -> float:
    """Hole-burning efficiency averaged over scrambled pump polarizations U|pump>."""
    values = []
    for u in unitaries:
        pump = u.apply(pump_state)
        op = memory_polarization_operator(False, pump, contrast, 0.0, seed=0)
        values.append(op.transmission(state))
    return float(np.mean(values))


def detector_pol_efficiency(state: JonesVector, axis: JonesVector, depth: float) -> float:
    """Relative detection efficiency 1 - depth * |<axis_perp|state>|^2."""
    if not 0 <= depth < 1:
        raise ValueError("depth must lie in [0, 1)")
    perpendicular = axis.normalized().orthogonal()
    return 1.0 - depth * perpendicular.overlap(state.normalized())
