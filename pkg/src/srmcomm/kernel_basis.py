"""Tooth-periodic kernel basis for commutation functions.

Commutation functions are expanded in a basis of smoothness-tunable
exponential kernels evaluated on chordal distances of a circle embedding of
the rotor angle.  The embedding maps one tooth pitch ``2*pi/tooth_count``
onto the full unit circle, so every basis function is periodic with the
tooth pitch by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

#: Largest supported smoothness order.  The kernel polynomial coefficients are
#: exact integer ratios; beyond this order they stop being representable to
#: full double precision and the kernel is indistinguishable from a squared
#: exponential anyway.
MAX_SMOOTHNESS = 20

_TWO_PI = 2.0 * math.pi

__all__ = [
    "MAX_SMOOTHNESS",
    "KernelBasisSpec",
    "matern_kernel",
    "chordal_distance",
    "basis_row",
    "coil_basis",
]


@lru_cache(maxsize=None)
def _kernel_poly_coeffs(smoothness: int) -> tuple[float, ...]:
    """Polynomial coefficients of the kernel in ``t = 2*sqrt(2*mu+1)*rho``.

    Coefficient of ``t**j`` is ``mu! (2*mu-j)! / ((2*mu)! (mu-j)! j!)``,
    computed as exact rationals so the constant term is exactly 1 and the
    kernel evaluates to exactly 1.0 at zero distance.
    """
    mu = smoothness
    coeffs = []
    for j in range(mu + 1):
        c = Fraction(
            math.factorial(mu) * math.factorial(2 * mu - j),
            math.factorial(2 * mu) * math.factorial(mu - j) * math.factorial(j),
        )
        coeffs.append(float(c))
    return tuple(coeffs)


def matern_kernel(rho, smoothness: int):
    """Evaluate the half-integer Matern-family kernel at scaled distance ``rho``.

    k(rho) = exp(-sqrt(2*mu+1)*rho) * polynomial(2*sqrt(2*mu+1)*rho)

    where ``mu = smoothness`` controls differentiability.  The value is 1 at
    ``rho = 0`` and strictly decreasing in ``rho``.  Accepts scalars or
    arrays; negative distances or a negative smoothness raise ``ValueError``.
    """
    if smoothness != int(smoothness) or smoothness < 0:
        raise ValueError(f"smoothness must be a non-negative integer, got {smoothness}")
    if smoothness > MAX_SMOOTHNESS:
        raise ConfigurationError(
            f"smoothness {smoothness} exceeds the supported maximum {MAX_SMOOTHNESS}"
        )
    mu = int(smoothness)
    rho_arr = np.asarray(rho, dtype=float)
    if np.any(rho_arr < 0):
        raise ValueError("distance must be non-negative")
    scale = math.sqrt(2 * mu + 1)
    t = 2.0 * scale * rho_arr
    coeffs = _kernel_poly_coeffs(mu)
    poly = np.full_like(t, coeffs[mu])
    for j in range(mu - 1, -1, -1):
        poly = poly * t + coeffs[j]
    value = np.exp(-scale * rho_arr) * poly
    return value if value.ndim else float(value)


def chordal_distance(phi, phi_center, tooth_count: int, length_scale: float):
    """Scaled chordal distance between two rotor angles on the tooth circle.

    Both angles are embedded as ``[sin(phi*n_t), cos(phi*n_t)]`` on the unit
    circle; the result is the Euclidean distance between the embeddings
    divided by ``length_scale``.  Uses the chord identity
    ``|x1 - x2| = 2*|sin((phi - phi_center)*n_t/2)|`` with the angle
    difference reduced modulo one tooth pitch, which is exactly periodic and
    stays well conditioned for large angles.
    """
    if length_scale <= 0:
        raise ValueError(f"length_scale must be positive, got {length_scale}")
    delta = (np.asarray(phi, dtype=float) - np.asarray(phi_center, dtype=float)) * tooth_count
    delta = np.mod(delta, _TWO_PI)
    rho = 2.0 * np.abs(np.sin(0.5 * delta)) / length_scale
    return rho if rho.ndim else float(rho)


@dataclass(frozen=True)
class KernelBasisSpec:
    """Grid of tooth-periodic kernel basis centers plus hyperparameters.

    Attributes:
        center_grid: strictly increasing center angles in ``[0, 2*pi/n_t)`` [rad].
        length_scale: chordal-distance scale of the kernel, > 0.
        smoothness: non-negative integer kernel smoothness order.
        tooth_count: number of rotor teeth, >= 1.
        coil_count: number of stator coils, >= 1.
    """

    center_grid: np.ndarray
    length_scale: float
    smoothness: int
    tooth_count: int
    coil_count: int

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.center_grid, dtype=float))
        object.__setattr__(self, "center_grid", centers)
        if centers.ndim != 1 or centers.size < 1:
            raise ConfigurationError("center_grid must be a non-empty 1-D array")
        if self.tooth_count < 1 or self.tooth_count != int(self.tooth_count):
            raise ConfigurationError(f"tooth_count must be a positive integer, got {self.tooth_count}")
        if self.coil_count < 1 or self.coil_count != int(self.coil_count):
            raise ConfigurationError(f"coil_count must be a positive integer, got {self.coil_count}")
        if self.length_scale <= 0:
            raise ConfigurationError(f"length_scale must be positive, got {self.length_scale}")
        if self.smoothness < 0 or self.smoothness != int(self.smoothness):
            raise ConfigurationError(f"smoothness must be a non-negative integer, got {self.smoothness}")
        if self.smoothness > MAX_SMOOTHNESS:
            raise ConfigurationError(
                f"smoothness {self.smoothness} exceeds the supported maximum {MAX_SMOOTHNESS}"
            )
        pitch = _TWO_PI / self.tooth_count
        if np.any(centers < 0) or np.any(centers >= pitch):
            raise ConfigurationError("all centers must lie in [0, 2*pi/tooth_count)")
        if centers.size > 1 and np.any(np.diff(centers) <= 0):
            raise ConfigurationError("centers must be strictly increasing")

    @classmethod
    def evenly_spaced(
        cls,
        basis_count: int,
        tooth_count: int,
        coil_count: int,
        length_scale: float = 0.3,
        smoothness: int = 3,
        start: float = 0.0,
    ) -> "KernelBasisSpec":
        """Spec with ``basis_count`` centers evenly spaced over one tooth pitch."""
        pitch = _TWO_PI / tooth_count
        centers = start + pitch * np.arange(basis_count) / basis_count
        return cls(
            center_grid=centers,
            length_scale=length_scale,
            smoothness=smoothness,
            tooth_count=tooth_count,
            coil_count=coil_count,
        )

    @property
    def basis_count(self) -> int:
        return self.center_grid.size

    @property
    def tooth_pitch(self) -> float:
        return _TWO_PI / self.tooth_count

    def to_dict(self) -> dict:
        return {
            "center_grid_rad": self.center_grid.tolist(),
            "length_scale": self.length_scale,
            "smoothness": self.smoothness,
            "tooth_count": self.tooth_count,
            "coil_count": self.coil_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KernelBasisSpec":
        try:
            return cls(
                center_grid=np.asarray(data["center_grid_rad"], dtype=float),
                length_scale=float(data["length_scale"]),
                smoothness=int(data["smoothness"]),
                tooth_count=int(data["tooth_count"]),
                coil_count=int(data["coil_count"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"kernel basis spec missing key {exc}") from exc


def basis_row(phi, spec: KernelBasisSpec):
    """Kernel basis row evaluated at rotor angle(s) ``phi``.

    For scalar ``phi`` returns shape ``(basis_count,)``; for an array of
    angles returns ``(len(phi), basis_count)``.  Every entry lies in (0, 1].
    """
    phi_arr = np.asarray(phi, dtype=float)
    rho = chordal_distance(
        phi_arr[..., None], spec.center_grid, spec.tooth_count, spec.length_scale
    )
    return matern_kernel(rho, spec.smoothness)


def coil_basis(phi: float, spec: KernelBasisSpec) -> np.ndarray:
    """Block-diagonal per-coil basis matrix at a single rotor angle.

    Row ``c`` holds the kernel basis row in the columns belonging to coil
    ``c`` and zeros elsewhere, so multiplying by a stacked coefficient vector
    evaluates every coil's function independently.  Shape is
    ``(coil_count, coil_count * basis_count)``.
    """
    row = basis_row(float(phi), spec)
    return np.kron(np.eye(spec.coil_count), row)
