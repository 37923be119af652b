import logging
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .detection import CoincidenceSet
from .polarization import A, D, H, L, R, V, JonesVector

logger = logging.getLogger(__name__)

# Measurement bases in Stokes order S1, S2, S3
BASES = ("HV", "DA", "RL")
BASIS_OUTCOMES = {"HV": ("H", "V"), "DA": ("D", "A"), "RL": ("R", "L")}
BASIS_STATES = {"HV": (H, V), "DA": (D, A), "RL": (R, L)}

TOMOGRAPHY_TARGETS = {"H": H, "V": V, "D": D, "A": A, "R": R, "L": L}

# Pauli operators paired with the HV, DA and RL bases
PAULI = (
    np.array([[1, 0], [0, -1]], dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
)


@dataclass
class VisibilityFit:
    """
    Cosine fit p(x) = m + A_c cos 2x + A_s sin 2x of a projection curve.

    Attributes:
        visibility: sqrt(A_c^2 + A_s^2) / m, clipped to [0, 1]
        phase: atan2(A_s, A_c), the phase of the fitted fringe
        mean: Fitted mean level m
        visibility_error: Standard error of the visibility
        phase_error: Standard error of the phase
        mean_error: Standard error of the mean level
        residuals: Data minus model at each setting
    """
    visibility: float
    phase: float
    mean: float
    visibility_error: float
    phase_error: float
    mean_error: float
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


@dataclass
class DensityMatrix:
    """2x2 density matrix of a polarization qubit."""
    matrix: np.ndarray

    @classmethod
    def from_stokes(cls, stokes) -> "DensityMatrix":
        m = 0.5 * (np.eye(2, dtype=complex) + sum(s * p for s, p in zip(stokes, PAULI)))
        return cls(m)

    @classmethod
    def pure(cls, state: JonesVector) -> "DensityMatrix":
        return cls(state.normalized().projector())

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def is_physical(self, tolerance: float = 1e-10) -> bool:
        """Hermitian, unit trace and positive semidefinite within tolerance."""
        hermitian = np.allclose(self.matrix, self.matrix.conj().T, atol=tolerance, rtol=0)
        unit_trace = abs(np.trace(self.matrix) - 1) <= tolerance
        return bool(hermitian and unit_trace and self.eigenvalues.min() >= -tolerance)

    def to_dict(self) -> Dict[str, list]:
        return {"real": self.matrix.real.tolist(), "imag": self.matrix.imag.tolist()}


def fit_visibility(settings: np.ndarray, probabilities: np.ndarray,
                   errors: Optional[np.ndarray] = None,
                   scale: Union[float, np.ndarray] = 1.0) -> VisibilityFit:
    """
    Weighted least-squares cosine fit of a projection curve.

    Args:
        settings: Analysis angles x in radians
        probabilities: Measured projection probabilities, rates or counts
        errors: Per-point standard errors. None fits unweighted and scales
            the covariance by the residual variance.
        scale: Counts per unit of ``probabilities`` (e.g. heralds per
            setting); errors are floored at one count, 1/scale

    Returns:
        VisibilityFit

    Raises:
        ValueError: With fewer than four distinct settings or a degenerate design matrix
    """
    x = np.asarray(settings, dtype=float)
    y = np.asarray(probabilities, dtype=float)
    if len(np.unique(np.round(np.mod(x, np.pi), 12))) < 4:
        raise ValueError("need at least 4 distinct settings")

    design = np.column_stack([np.ones_like(x), np.cos(2 * x), np.sin(2 * x)])
    if errors is None:
        sigma = np.ones_like(y)
    else:
        sigma = np.maximum(np.asarray(errors, dtype=float), 1.0 / np.asarray(scale, dtype=float))

    weighted = design / sigma[:, None]
    if np.linalg.matrix_rank(weighted) < 3:
        raise ValueError("degenerate design matrix")
    beta, *_ = np.linalg.lstsq(weighted, y / sigma, rcond=None)
    residuals = y - design @ beta

    covariance = np.linalg.inv(weighted.T @ weighted)
    if errors is None:
        dof = len(y) - 3
        covariance = covariance * (float(residuals @ residuals) / dof if dof > 0 else 0.0)

    m, a_c, a_s = beta
    amplitude = math.hypot(a_c, a_s)
    if m <= 0:
        raise ValueError("fitted mean level is not positive")
    visibility = amplitude / m

    if amplitude > 0:
        grad_v = np.array([-visibility / m, a_c / (amplitude * m), a_s / (amplitude * m)])
        grad_phase = np.array([0.0, -a_s / amplitude ** 2, a_c / amplitude ** 2])
        visibility_error = math.sqrt(max(grad_v @ covariance @ grad_v, 0.0))
        phase_error = math.sqrt(max(grad_phase @ covariance @ grad_phase, 0.0))
    else:
        visibility_error = math.sqrt(max(covariance[1, 1], 0.0)) / m
        phase_error = math.pi

    return VisibilityFit(
        visibility=min(visibility, 1.0),
        phase=math.atan2(a_s, a_c),
        mean=float(m),
        visibility_error=visibility_error,
        phase_error=phase_error,
        mean_error=math.sqrt(max(covariance[0, 0], 0.0)),
        residuals=residuals,
    )


def fidelity_from_visibilities(v_h: float, v_v: float) -> float:
    """Average fidelity (2 + V_H + V_V) / 4 of two complementary projection curves."""
    for name, value in (("v_h", v_h), ("v_v", v_v)):
        if not 0 <= value <= 1:
            raise ValueError(f"{name} must lie in [0, 1]")
    return (2.0 + v_h + v_v) / 4.0


def estimate_g2(counts: CoincidenceSet) -> Dict[str, float]:
    """
    Signal-idler cross-correlation N_si N_pulses / (N_s N_i).

    The standard error assumes independent Poisson counts; a record with
    no coincidences is given a one-count floor for its error.
    """
    if counts.n_s <= 0 or counts.n_i <= 0:
        raise ValueError("zero singles: g2 undefined")

    scale = counts.n_pulses / (counts.n_s * counts.n_i)
    g2 = counts.n_si * scale
    relative = math.sqrt(1.0 / max(counts.n_si, 1) + 1.0 / counts.n_s + 1.0 / counts.n_i)
    std_error = g2 * relative if counts.n_si > 0 else scale
    return {"g2": g2, "std_error": std_error}


def stokes_reconstruct(counts: Mapping[str, Tuple[float, float]]) -> Tuple[np.ndarray, DensityMatrix]:
    """
    Linear-inversion tomography from three projective measurements.

    Args:
        counts: Basis name (HV, DA, RL) to (N_plus, N_minus)

    Returns:
        Stokes vector (S1, S2, S3) and the linear-inversion DensityMatrix

    Raises:
        ValueError: If a basis is missing or has zero total counts
    """
    stokes = []
    for basis in BASES:
        if basis not in counts:
            raise ValueError(f"missing counts for basis {basis}")
        n_plus, n_minus = counts[basis]
        total = n_plus + n_minus
        if total <= 0:
            raise ValueError(f"zero total counts in basis {basis}")
        stokes.append((n_plus - n_minus) / total)

    stokes = np.array(stokes, dtype=float)
    if np.linalg.norm(stokes) > 1:
        logger.debug(f"Stokes vector outside the Bloch ball (|S| = {np.linalg.norm(stokes):.4f})")
    return stokes, DensityMatrix.from_stokes(stokes)


def mle_project(rho_lin: DensityMatrix) -> DensityMatrix:
    """
    Closest physical density matrix in Frobenius norm.

    Eigenvalues are sorted in decreasing order; negative ones are set to
    zero from the smallest upwards and their weight is spread evenly over
    the remaining eigenvalues, keeping the eigenvectors.
    """
    matrix = 0.5 * (rho_lin.matrix + rho_lin.matrix.conj().T)
    values, vectors = np.linalg.eigh(matrix)
    values, vectors = values[::-1], vectors[:, ::-1]

    n = len(values)
    projected = np.zeros(n)
    accumulated = 0.0
    i = n
    while i > 0 and values[i - 1] + accumulated / i < 0:
        accumulated += values[i - 1]
        i -= 1
    for j in range(i):
        projected[j] = values[j] + accumulated / i

    return DensityMatrix(vectors @ np.diag(projected) @ vectors.conj().T)


def state_fidelity(rho: DensityMatrix, target: JonesVector) -> float:
    """<psi|rho|psi> for a normalized target state."""
    psi = target.normalized().array
    return float(np.real(np.conj(psi) @ rho.matrix @ psi))


def reconstruct_fidelity(counts: Mapping[str, Tuple[float, float]], target: JonesVector) -> float:
    """Linear inversion, projection and fidelity in one call."""
    _, rho_lin = stokes_reconstruct(counts)
    return state_fidelity(mle_project(rho_lin), target)


def bootstrap_fidelity(counts: Mapping[str, Tuple[int, int]], target: JonesVector,
                       n_resamples: int, seed: int) -> Dict[str, float]:
    """
    Parametric bootstrap of the reconstructed-state fidelity.

    Each basis is resampled binomially with its observed total and
    plus-outcome frequency.

    Returns:
        Dictionary with mean and std of the resampled fidelities
    """
    if n_resamples < 2:
        raise ValueError("n_resamples must be >= 2")
    rng = np.random.default_rng(seed)

    samples = np.empty(n_resamples)
    for k in range(n_resamples):
        resampled = {}
        for basis in BASES:
            n_plus, n_minus = counts[basis]
            total = int(n_plus + n_minus)
            drawn = rng.binomial(total, n_plus / total)
            resampled[basis] = (drawn, total - drawn)
        samples[k] = reconstruct_fidelity(resampled, target)

    return {"mean": float(samples.mean()), "std": float(samples.std(ddof=1))}


def counts_from_frame(frame: pd.DataFrame) -> Dict[str, Tuple[int, int]]:
    """
    Read a (basis, outcome, counts) table into the stokes_reconstruct format.

    Outcomes may be named by state (H, V, D, A, R, L) or by sign (+, -).
    """
    counts = {}
    for basis in BASES:
        plus_name, minus_name = BASIS_OUTCOMES[basis]
        rows = frame[frame["basis"] == basis]
        if rows.empty:
            raise ValueError(f"missing counts for basis {basis}")
        n_plus = int(rows.loc[rows["outcome"].isin([plus_name, "+"]), "counts"].sum())
        n_minus = int(rows.loc[rows["outcome"].isin([minus_name, "-"]), "counts"].sum())
        counts[basis] = (n_plus, n_minus)
    return counts
