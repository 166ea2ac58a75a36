"""Probabilistic torque-current-angle model of a switched reluctance motor.

The per-coil torque gain (torque per squared current, as a function of rotor
angle) is linear in a parameter vector: ``gain(phi)^T = torque_basis(phi) @
theta``.  The parameters carry a Gaussian distribution ``N(theta_mean,
theta_cov)`` describing tooth-to-tooth or motor-to-motor manufacturing
variation; drawing from it yields the "true" motors used in simulation
studies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ModelError
from .kernel_basis import chordal_distance, matern_kernel

_TWO_PI = 2.0 * math.pi

__all__ = [
    "RadialTorqueBasis",
    "FourierTorqueBasis",
    "ProbabilisticSrmModel",
    "SrmRealization",
    "torque_basis",
    "torque_gain",
    "torque_gain_profile",
    "sample_srm",
    "realization_from_noise",
    "make_nominal_model",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class RadialTorqueBasis:
    """Per-coil radial basis functions, periodic with the tooth pitch.

    Each basis function is a Gaussian bump of the chordal distance between
    the rotor angle and its center on the tooth circle, so periodicity is
    exact.  All coils share the same center/width layout; the parameter
    blocks differ per coil.

    Attributes:
        centers: basis centers in ``[0, 2*pi/tooth_count)`` [rad].
        widths: per-center widths [rad], > 0 (scalar broadcasts).
        tooth_count: rotor tooth count.
        coil_count: number of coils.
    """

    centers: np.ndarray
    widths: np.ndarray
    tooth_count: int
    coil_count: int

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.centers, dtype=float))
        widths = np.broadcast_to(np.asarray(self.widths, dtype=float), centers.shape).copy()
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)
        if np.any(widths <= 0):
            raise ModelError("all radial basis widths must be positive")
        if self.tooth_count < 1 or self.coil_count < 1:
            raise ModelError("tooth_count and coil_count must be positive")

    @property
    def functions_per_coil(self) -> int:
        return self.centers.size

    @property
    def parameter_count(self) -> int:
        return self.coil_count * self.functions_per_coil

    def coil_block(self, phi) -> np.ndarray:
        """Basis function values shared by every coil; shape (..., per_coil)."""
        phi_arr = np.asarray(phi, dtype=float)
        # chordal distance measured in rotor radians: chord / tooth_count
        chord = chordal_distance(phi_arr[..., None], self.centers, self.tooth_count, 1.0)
        dist = chord / self.tooth_count
        return np.exp(-0.5 * (dist / self.widths) ** 2)

    def to_dict(self) -> dict:
        return {
            "type": "radial",
            "centers_rad": self.centers.tolist(),
            "widths_rad": self.widths.tolist(),
            "tooth_count": self.tooth_count,
            "coil_count": self.coil_count,
        }


@dataclass(frozen=True)
class FourierTorqueBasis:
    """Per-coil sine/cosine pairs of the tooth-pitch harmonics.

    Coil ``c`` uses ``sin(j*n_t*phi + phase_offsets[c])`` and
    ``cos(j*n_t*phi + phase_offsets[c])`` for harmonics ``j = 1..harmonic_count``.
    """

    harmonic_count: int
    tooth_count: int
    coil_count: int
    phase_offsets: np.ndarray

    def __post_init__(self):
        offsets = np.atleast_1d(np.asarray(self.phase_offsets, dtype=float))
        object.__setattr__(self, "phase_offsets", offsets)
        if self.harmonic_count < 1:
            raise ModelError("harmonic_count must be >= 1")
        if offsets.size != self.coil_count:
            raise ModelError("need one phase offset per coil")
        if self.tooth_count < 1 or self.coil_count < 1:
            raise ModelError("tooth_count and coil_count must be positive")

    @property
    def functions_per_coil(self) -> int:
        return 2 * self.harmonic_count

    @property
    def parameter_count(self) -> int:
        return self.coil_count * self.functions_per_coil

    def coil_block(self, phi, coil: int) -> np.ndarray:
        phi_arr = np.asarray(phi, dtype=float)
        harmonics = np.arange(1, self.harmonic_count + 1)
        angle = harmonics * self.tooth_count * phi_arr[..., None] + self.phase_offsets[coil]
        block = np.empty(angle.shape[:-1] + (2 * self.harmonic_count,))
        block[..., 0::2] = np.sin(angle)
        block[..., 1::2] = np.cos(angle)
        return block

    def to_dict(self) -> dict:
        return {
            "type": "fourier",
            "harmonic_count": self.harmonic_count,
            "tooth_count": self.tooth_count,
            "coil_count": self.coil_count,
            "phase_offsets_rad": self.phase_offsets.tolist(),
        }


TorqueBasis = RadialTorqueBasis | FourierTorqueBasis


def basis_from_dict(data: dict) -> TorqueBasis:
    kind = data.get("type")
    if kind == "radial":
        return RadialTorqueBasis(
            centers=np.asarray(data["centers_rad"], dtype=float),
            widths=np.asarray(data["widths_rad"], dtype=float),
            tooth_count=int(data["tooth_count"]),
            coil_count=int(data["coil_count"]),
        )
    if kind == "fourier":
        return FourierTorqueBasis(
            harmonic_count=int(data["harmonic_count"]),
            tooth_count=int(data["tooth_count"]),
            coil_count=int(data["coil_count"]),
            phase_offsets=np.asarray(data["phase_offsets_rad"], dtype=float),
        )
    raise ConfigurationError(f"unknown torque basis type {kind!r}")


def torque_basis(phi: float, basis: TorqueBasis) -> np.ndarray:
    """Torque-model basis matrix at one angle; shape (coil_count, parameter_count).

    Row ``c`` holds the basis functions attributed to coil ``c`` in that
    coil's parameter block and zeros elsewhere, mirroring the block layout of
    the commutation basis.
    """
    n_c = basis.coil_count
    per = basis.functions_per_coil
    out = np.zeros((n_c, n_c * per))
    if isinstance(basis, RadialTorqueBasis):
        block = basis.coil_block(float(phi))
        for c in range(n_c):
            out[c, c * per : (c + 1) * per] = block
    else:
        for c in range(n_c):
            out[c, c * per : (c + 1) * per] = basis.coil_block(float(phi), c)
    return out


def torque_gain(phi: float, theta: np.ndarray, basis: TorqueBasis) -> np.ndarray:
    """Per-coil torque gain row at one angle [N*m/A^2]; linear in ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.parameter_count,):
        raise ModelError(
            f"theta has shape {theta.shape}, expected ({basis.parameter_count},)"
        )
    return torque_basis(phi, basis) @ theta


def torque_gain_profile(phis, theta: np.ndarray, basis: TorqueBasis) -> np.ndarray:
    """Per-coil torque gains over an array of angles; shape (len(phis), coil_count)."""
    phis = np.asarray(phis, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.parameter_count,):
        raise ModelError(
            f"theta has shape {theta.shape}, expected ({basis.parameter_count},)"
        )
    per = basis.functions_per_coil
    out = np.empty((phis.size, basis.coil_count))
    if isinstance(basis, RadialTorqueBasis):
        block = basis.coil_block(phis)
        for c in range(basis.coil_count):
            out[:, c] = block @ theta[c * per : (c + 1) * per]
    else:
        for c in range(basis.coil_count):
            out[:, c] = basis.coil_block(phis, c) @ theta[c * per : (c + 1) * per]
    return out


@dataclass(frozen=True)
class ProbabilisticSrmModel:
    """Torque-gain basis plus Gaussian parameter distribution.

    ``theta_cov`` must be symmetric and positive (semi)definite; a
    lower-triangular factor is computed at construction, falling back to a
    clipped symmetric eigendecomposition for near-singular matrices
    (eigenvalues below ``-1e-10 * max_eigenvalue`` are rejected).
    """

    basis: TorqueBasis
    theta_mean: np.ndarray
    theta_cov: np.ndarray
    cov_factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.theta_mean, dtype=float)
        cov = np.asarray(self.theta_cov, dtype=float)
        object.__setattr__(self, "theta_mean", mean)
        object.__setattr__(self, "theta_cov", cov)
        n = self.basis.parameter_count
        if mean.shape != (n,):
            raise ModelError(f"theta_mean has shape {mean.shape}, expected ({n},)")
        if cov.shape != (n, n):
            raise ModelError(f"theta_cov has shape {cov.shape}, expected ({n}, {n})")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ModelError("theta_cov must be symmetric to 1e-12 relative")
        object.__setattr__(self, "cov_factor", _lower_factor(cov))

    @property
    def parameter_count(self) -> int:
        return self.basis.parameter_count

    def with_scaled_cov(self, factor: float) -> "ProbabilisticSrmModel":
        return ProbabilisticSrmModel(
            basis=self.basis, theta_mean=self.theta_mean, theta_cov=factor * self.theta_cov
        )


def _lower_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = -1e-10 * max(1.0, float(eigvals.max(initial=0.0)))
    if eigvals.min() < floor:
        raise ModelError("theta_cov is not positive semidefinite")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


@dataclass(frozen=True)
class SrmRealization:
    """One sampled motor: a concrete parameter vector plus provenance."""

    theta_true: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "theta_true", np.asarray(self.theta_true, dtype=float))


def realization_from_noise(
    model: ProbabilisticSrmModel, noise: np.ndarray, variance_scale: float
) -> SrmRealization:
    """Deterministic map from a standard-normal draw to a motor realization.

    ``theta = theta_mean + sqrt(variance_scale) * L @ noise`` with ``L`` the
    covariance factor.  Sharing ``noise`` across variance scales makes the
    parameter deviation scale exactly with ``sqrt(variance_scale)``.
    """
    if variance_scale < 0:
        raise ValueError(f"variance_scale must be >= 0, got {variance_scale}")
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (model.parameter_count,):
        raise ModelError("noise vector length must match the parameter count")
    theta = model.theta_mean + math.sqrt(variance_scale) * (model.cov_factor @ noise)
    return SrmRealization(theta_true=theta, meta={"variance_scale": variance_scale})


def sample_srm(
    model: ProbabilisticSrmModel, variance_scale: float, rng: np.random.Generator
) -> SrmRealization:
    """Draw one motor from ``N(theta_mean, variance_scale * theta_cov)``.

    A zero variance scale returns the mean exactly; identical generator
    states give deviations that differ only by the ``sqrt(variance_scale)``
    factor across scales.
    """
    noise = rng.standard_normal(model.parameter_count)
    return realization_from_noise(model, noise, variance_scale)


# --- shipped nominal scenarios ------------------------------------------------

_SINE_AMPLITUDE = 1.0  # N*m/A^2


def _sine_model(harmonics: int) -> ProbabilisticSrmModel:
    n_c, n_t = 3, 131
    basis = FourierTorqueBasis(
        harmonic_count=harmonics,
        tooth_count=n_t,
        coil_count=n_c,
        phase_offsets=_TWO_PI * np.arange(n_c) / 3.0,
    )
    per = basis.functions_per_coil
    theta = np.zeros(basis.parameter_count)
    theta[0::per] = _SINE_AMPLITUDE  # first-harmonic sine coefficient of each coil
    cov = 5e-3 * np.eye(basis.parameter_count)
    return ProbabilisticSrmModel(basis=basis, theta_mean=theta, theta_cov=cov)


def _lobed_rbf_model() -> ProbabilisticSrmModel:
    """Three-coil motor with skewed per-tooth gain lobes on a 30-function radial basis.

    The mean parameters are fit deterministically to phase-shifted,
    phase-modulated sinusoids (one positive and one negative lobe per tooth
    with zero crossings).  The covariance is a kernel correlation matrix over
    the basis centers scaled so the parameter standard deviation is 5% of the
    RMS mean parameter, giving smooth correlated perturbations per coil.
    """
    n_c, n_t, per = 3, 131, 30
    pitch = _TWO_PI / n_t
    centers = pitch * np.arange(per) / per
    basis = RadialTorqueBasis(
        centers=centers, widths=1.5 * pitch / per, tooth_count=n_t, coil_count=n_c
    )

    fit_phis = pitch * np.arange(512) / 512
    design = basis.coil_block(fit_phis)  # shared across coils
    gram = design.T @ design + 1e-9 * np.eye(per)
    theta = np.empty(basis.parameter_count)
    x = n_t * fit_phis
    for c in range(n_c):
        shifted = x + _TWO_PI * c / 3.0
        target = _SINE_AMPLITUDE * np.sin(shifted + 0.3 * np.sin(shifted))
        theta[c * per : (c + 1) * per] = np.linalg.solve(gram, design.T @ target)

    rho = chordal_distance(centers[:, None], centers[None, :], n_t, 0.3)
    corr = matern_kernel(rho, 3)
    sigma = 0.05 * float(np.sqrt(np.mean(theta**2)))
    block = sigma**2 * corr + (1e-8 * sigma**2) * np.eye(per)
    cov = np.kron(np.eye(n_c), block)
    return ProbabilisticSrmModel(basis=basis, theta_mean=theta, theta_cov=cov)


_PRESETS = {
    "sine-3coil": lambda: _sine_model(harmonics=1),
    "sine-3coil-uncertain": lambda: _sine_model(harmonics=5),
    "sim-rbf-90": _lobed_rbf_model,
}


def make_nominal_model(preset: str) -> ProbabilisticSrmModel:
    """Build one of the shipped reproducible scenario models by name."""
    try:
        factory = _PRESETS[preset]
    except KeyError:
        raise ConfigurationError(
            f"unknown model preset {preset!r}; available: {sorted(_PRESETS)}"
        ) from None
    return factory()


def save_model(model: ProbabilisticSrmModel, path) -> None:
    payload = {
        "basis": model.basis.to_dict(),
        "theta_mean": model.theta_mean.tolist(),
        "theta_cov": model.theta_cov.tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_model(path) -> ProbabilisticSrmModel:
    try:
        payload = json.loads(Path(path).read_text())
        basis = basis_from_dict(payload["basis"])
        return ProbabilisticSrmModel(
            basis=basis,
            theta_mean=np.asarray(payload["theta_mean"], dtype=float),
            theta_cov=np.asarray(payload["theta_cov"], dtype=float),
        )
    except (KeyError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"malformed model file {path}: {exc}") from exc
