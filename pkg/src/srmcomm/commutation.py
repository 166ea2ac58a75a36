"""Commutation function evaluation and the conventional benchmark.

A commutation function maps rotor angle and desired torque to per-coil
squared-current commands.  Two families live here:

* designed functions: kernel-basis expansions with separate coefficient
  vectors for positive and negative torque, scaled linearly by the torque
  setpoint;
* the conventional benchmark: a torque sharing function (a smooth partition
  of unity over the tooth pitch) times the saturated inverse of the nominal
  per-coil torque gain.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .kernel_basis import KernelBasisSpec, basis_row
from .srm_model import (
    ProbabilisticSrmModel,
    TorqueBasis,
    torque_gain,
    torque_gain_profile,
)

_TWO_PI = 2.0 * math.pi

__all__ = [
    "CommutationParams",
    "SaturationLimits",
    "TsfSpec",
    "eval_commutation",
    "commutation_profile",
    "realized_torque",
    "torque_mismatch_profile",
    "torque_shares",
    "ConventionalCommutation",
    "eval_conventional",
    "export_lookup_table",
]

#: clamp magnitudes above this fraction of |T*| trigger a warning
_CLAMP_REPORT_FRACTION = 1e-6


@dataclass(frozen=True)
class CommutationParams:
    """Optimized coefficient vectors for both torque signs, bound to a basis."""

    alpha_plus: np.ndarray
    alpha_minus: np.ndarray
    basis: KernelBasisSpec

    def __post_init__(self):
        plus = np.asarray(self.alpha_plus, dtype=float)
        minus = np.asarray(self.alpha_minus, dtype=float)
        object.__setattr__(self, "alpha_plus", plus)
        object.__setattr__(self, "alpha_minus", minus)
        n_half = self.basis.coil_count * self.basis.basis_count
        if plus.shape != (n_half,) or minus.shape != (n_half,):
            raise ConfigurationError(
                f"coefficient vectors must have length {n_half}, got {plus.shape} / {minus.shape}"
            )

    @classmethod
    def from_stacked(cls, alpha: np.ndarray, basis: KernelBasisSpec) -> "CommutationParams":
        alpha = np.asarray(alpha, dtype=float)
        n_half = basis.coil_count * basis.basis_count
        if alpha.shape != (2 * n_half,):
            raise ConfigurationError(f"stacked alpha must have length {2 * n_half}")
        return cls(alpha_plus=alpha[:n_half], alpha_minus=alpha[n_half:], basis=basis)

    def feasibility_margin(self, phis) -> float:
        """Smallest commanded squared current over the given angles (both signs)."""
        f_plus, f_minus = commutation_profile(self, phis)
        return float(min(f_plus.min(), f_minus.min()))

    def to_dict(self) -> dict:
        return {
            "basis": self.basis.to_dict(),
            "alpha_plus": self.alpha_plus.tolist(),
            "alpha_minus": self.alpha_minus.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "CommutationParams":
        try:
            return cls(
                alpha_plus=np.asarray(data["alpha_plus"], dtype=float),
                alpha_minus=np.asarray(data["alpha_minus"], dtype=float),
                basis=KernelBasisSpec.from_dict(data["basis"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"commutation parameter file missing key {exc}") from exc

    @classmethod
    def load(cls, path) -> "CommutationParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def commutation_profile(params: CommutationParams, phis) -> tuple[np.ndarray, np.ndarray]:
    """Unclamped per-coil functions of angle for both signs; shapes (len, n_c)."""
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    rows = basis_row(phis, params.basis)  # (len, n_alpha)
    n_alpha = params.basis.basis_count
    n_c = params.basis.coil_count
    f_plus = np.empty((phis.size, n_c))
    f_minus = np.empty((phis.size, n_c))
    for c in range(n_c):
        block = slice(c * n_alpha, (c + 1) * n_alpha)
        f_plus[:, c] = rows @ params.alpha_plus[block]
        f_minus[:, c] = rows @ params.alpha_minus[block]
    return f_plus, f_minus


def eval_commutation(phi: float, torque_setpoint: float, params: CommutationParams) -> np.ndarray:
    """Per-coil squared-current commands [A^2] for one angle and setpoint.

    Scales the sign-matched coefficient set linearly with the setpoint and
    clamps at zero from below; a clamp larger than 1e-6 of |setpoint| is
    reported as a warning (it indicates negativity of the designed function
    between constraint grid points).
    """
    f_plus, f_minus = commutation_profile(params, phi)
    if torque_setpoint >= 0:
        u = f_plus[0] * torque_setpoint
    else:
        u = -f_minus[0] * torque_setpoint
    clamp = -float(u.min())
    if clamp > _CLAMP_REPORT_FRACTION * abs(torque_setpoint):
        warnings.warn(
            f"commutation output clamped by {clamp:.3e} at angle {phi:.6f}",
            RuntimeWarning,
            stacklevel=2,
        )
    return np.maximum(u, 0.0)


def realized_torque(phi: float, currents_sq: np.ndarray, theta_true: np.ndarray, basis: TorqueBasis) -> float:
    """Torque [N*m] produced by the squared currents on a concrete motor."""
    return float(torque_gain(phi, theta_true, basis) @ np.asarray(currents_sq, dtype=float))


def torque_mismatch_profile(
    params: CommutationParams, theta_true: np.ndarray, basis: TorqueBasis, phis
) -> tuple[np.ndarray, np.ndarray]:
    """True relative torque ratio of both signs over the given angles.

    Returns ``(gain . f_plus, gain . f_minus)`` per angle; the relative
    torque errors are the first array minus 1 and the second plus 1.
    """
    phis = np.atleast_1d(np.asarray(phis, dtype=float))
    gains = torque_gain_profile(phis, theta_true, basis)
    f_plus, f_minus = commutation_profile(params, phis)
    return (gains * f_plus).sum(axis=1), (gains * f_minus).sum(axis=1)


@dataclass(frozen=True)
class SaturationLimits:
    """Clamp band applied to the inverted nominal gain [A^2/(N*m)]."""

    x_min: float
    x_max: float

    def __post_init__(self):
        if self.x_min > self.x_max:
            raise ConfigurationError("saturation requires x_min <= x_max")

    def apply(self, x):
        return np.clip(x, self.x_min, self.x_max)


@dataclass(frozen=True)
class TsfSpec:
    """Torque sharing function: smooth partition of unity over the tooth pitch.

    Each coil owns one sector of tooth phase; shares transition between
    adjacent sectors with raised-cosine ramps spanning ``overlap_fraction``
    of the tooth pitch, so the shares sum to exactly one everywhere.
    ``sector_centers`` (tooth-phase radians, one per coil) default to evenly
    spaced positions; the conventional benchmark aligns them with the peaks
    of the nominal per-coil gain.
    """

    overlap_fraction: float
    coil_count: int
    tooth_count: int
    sector_centers: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.overlap_fraction <= 0.5:
            raise ConfigurationError("overlap_fraction must lie in (0, 0.5]")
        if self.coil_count < 1 or self.tooth_count < 1:
            raise ConfigurationError("coil_count and tooth_count must be positive")
        if self.sector_centers is not None:
            centers = np.asarray(self.sector_centers, dtype=float)
            if centers.shape != (self.coil_count,):
                raise ConfigurationError("need one sector center per coil")
            object.__setattr__(self, "sector_centers", np.mod(centers, _TWO_PI))

    @property
    def centers(self) -> np.ndarray:
        if self.sector_centers is not None:
            return self.sector_centers
        return np.mod(0.5 * math.pi + _TWO_PI * np.arange(self.coil_count) / self.coil_count, _TWO_PI)

    @property
    def ramp_width(self) -> float:
        return self.overlap_fraction * _TWO_PI  # tooth phase spans 2*pi per pitch


def _arc_midpoint(x: np.ndarray, values: np.ndarray) -> float:
    """Circular midpoint of the region where ``values`` is positive.

    For a single positive arc per period (the lobe-per-tooth case) this is
    the midpoint between its zero crossings, located by linear interpolation;
    otherwise it falls back to the circular mean weighted by the positive
    part.  Centering sectors here keeps the share ramps inside the region
    where the coil can actually produce torque of the requested sign.
    """
    signs = values > 0.0
    flips = np.nonzero(signs != np.roll(signs, -1))[0]
    if flips.size == 2:
        crossings = []
        for idx in flips:
            nxt = (idx + 1) % x.size
            v0, v1 = values[idx], values[nxt]
            frac = v0 / (v0 - v1) if v0 != v1 else 0.5
            gap = np.mod(x[nxt] - x[idx], _TWO_PI)
            crossings.append((x[idx] + frac * gap, signs[nxt]))
        start = next(c for c, rising in crossings if rising)
        end = next(c for c, rising in crossings if not rising)
        return float(np.mod(start + 0.5 * np.mod(end - start, _TWO_PI), _TWO_PI))
    weights = np.maximum(values, 0.0)
    if weights.sum() == 0.0:
        return 0.0
    return float(
        np.mod(math.atan2(float(weights @ np.sin(x)), float(weights @ np.cos(x))), _TWO_PI)
    )


def _circular_interval(x, a, b):
    """Signed distances of tooth phase ``x`` into the circular interval [a, b].

    Positive inside the interval.  Distances wrap at the midpoint of the
    complement arc, so points approaching a boundary from outside get small
    negative values while points deep inside keep large positive ones (even
    for sectors spanning half the circle).
    """
    length = np.mod(b - a, _TWO_PI)
    cut = math.pi + 0.5 * length  # midpoint of the complement, measured from a
    into_left = np.mod(x - a, _TWO_PI)
    into_left = np.where(into_left <= cut, into_left, into_left - _TWO_PI)
    into_right = np.mod(b - x, _TWO_PI)
    into_right = np.where(into_right <= cut, into_right, into_right - _TWO_PI)
    return into_left, into_right


def _entry_ramp(distance, width):
    """Raised-cosine ramp from 0 to 1 over [-width/2, width/2]."""
    scaled = np.clip(distance / width, -0.5, 0.5)
    return 0.5 * (1.0 + np.sin(math.pi * scaled))


def _share_profile(spec: TsfSpec, x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Partition-of-unity shares at tooth phases ``x``; shape (len(x), n_c)."""
    n_c = spec.coil_count
    if n_c == 1:
        return np.ones(x.shape + (1,))
    order = np.argsort(centers)
    sorted_centers = centers[order]
    gaps = np.diff(np.append(sorted_centers, sorted_centers[0] + _TWO_PI))
    width = spec.ramp_width
    if width > gaps.min() + 1e-12:
        raise ConfigurationError(
            "overlap_fraction too large: transition ramps of adjacent sectors overlap"
        )
    boundaries = sorted_centers + 0.5 * gaps  # right boundary of each sorted sector
    shares = np.empty(x.shape + (n_c,))
    for j, coil in enumerate(order):
        left = boundaries[j - 1]
        right = boundaries[j]
        d_left, d_right = _circular_interval(x, left, right)
        shares[..., coil] = _entry_ramp(d_left, width) * _entry_ramp(d_right, width)
    return shares


def torque_shares(phi: float, spec: TsfSpec) -> np.ndarray:
    """Per-coil torque shares in [0, 1] at one rotor angle; they sum to one."""
    x = np.mod(np.asarray(float(phi)) * spec.tooth_count, _TWO_PI)
    return _share_profile(spec, np.atleast_1d(x), spec.centers)[0]


@dataclass(frozen=True)
class ConventionalCommutation:
    """Benchmark commutation: torque shares times saturated nominal-gain inverse.

    Coil sectors are aligned with the extrema of each coil's nominal gain
    (peaks for positive torque, troughs for negative), which keeps the share
    zero wherever the coil cannot produce torque of the requested sign for
    lobe-per-tooth gain shapes.  Within its sector the command inverts the
    nominal gain exactly, up to the saturation band.
    """

    theta_nominal: np.ndarray
    basis: TorqueBasis
    tsf: TsfSpec
    saturation: SaturationLimits
    centers_plus: np.ndarray = field(init=False, repr=False, compare=False)
    centers_minus: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "theta_nominal", np.asarray(self.theta_nominal, dtype=float))
        if self.tsf.sector_centers is not None:
            plus = self.tsf.sector_centers
            minus = np.mod(plus + math.pi, _TWO_PI)
        else:
            pitch = _TWO_PI / self.basis.tooth_count
            scan = pitch * np.arange(4096) / 4096
            x = np.mod(scan * self.basis.tooth_count, _TWO_PI)
            gains = torque_gain_profile(scan, self.theta_nominal, self.basis)
            plus = np.array([_arc_midpoint(x, gains[:, c]) for c in range(gains.shape[1])])
            minus = np.array([_arc_midpoint(x, -gains[:, c]) for c in range(gains.shape[1])])
        object.__setattr__(self, "centers_plus", plus)
        object.__setattr__(self, "centers_minus", minus)

    #: default transition width as a fraction of the tooth pitch; the
    #: benchmark switches sharply, as power-optimal sharing functions do
    DEFAULT_OVERLAP = 0.05

    @classmethod
    def from_model(
        cls,
        model: ProbabilisticSrmModel,
        overlap_fraction: float = DEFAULT_OVERLAP,
        saturation: SaturationLimits | None = None,
    ) -> "ConventionalCommutation":
        tsf = TsfSpec(
            overlap_fraction=overlap_fraction,
            coil_count=model.basis.coil_count,
            tooth_count=model.basis.tooth_count,
        )
        if saturation is None:
            pitch = _TWO_PI / model.basis.tooth_count
            scan = pitch * np.arange(4096) / 4096
            peak = float(np.abs(torque_gain_profile(scan, model.theta_mean, model.basis)).max())
            saturation = SaturationLimits(x_min=0.0, x_max=10.0 / peak)
        return cls(
            theta_nominal=model.theta_mean,
            basis=model.basis,
            tsf=tsf,
            saturation=saturation,
        )

    def profile(self, phis) -> tuple[np.ndarray, np.ndarray]:
        """Per-coil commands per unit |setpoint| for both signs; shapes (len, n_c)."""
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        x = np.mod(phis * self.basis.tooth_count, _TWO_PI)
        gains = torque_gain_profile(phis, self.theta_nominal, self.basis)
        with np.errstate(divide="ignore", over="ignore"):
            inverse = np.where(gains != 0.0, 1.0 / gains, np.inf)
        shares_plus = _share_profile(self.tsf, x, self.centers_plus)
        shares_minus = _share_profile(self.tsf, x, self.centers_minus)
        w_plus = shares_plus * self.saturation.apply(inverse)
        w_minus = shares_minus * self.saturation.apply(-inverse)
        return w_plus, w_minus

    def __call__(self, phi: float, torque_setpoint: float) -> np.ndarray:
        if torque_setpoint == 0.0:
            return np.zeros(self.basis.coil_count)
        w_plus, w_minus = self.profile(phi)
        w = w_plus[0] if torque_setpoint > 0 else w_minus[0]
        return w * abs(torque_setpoint)


def eval_conventional(
    phi: float,
    torque_setpoint: float,
    theta_nominal: np.ndarray,
    basis: TorqueBasis,
    tsf: TsfSpec,
    saturation: SaturationLimits,
) -> np.ndarray:
    """Functional form of the conventional benchmark for one evaluation."""
    conv = ConventionalCommutation(
        theta_nominal=theta_nominal, basis=basis, tsf=tsf, saturation=saturation
    )
    return conv(phi, torque_setpoint)


def export_lookup_table(params: CommutationParams, path, points: int = 1024) -> None:
    """Dense per-angle lookup table (commands per unit torque) as CSV."""
    pitch = params.basis.tooth_pitch
    phis = pitch * np.arange(points) / points
    f_plus, f_minus = commutation_profile(params, phis)
    n_c = params.basis.coil_count
    header = (
        ["phi_rad"]
        + [f"f_plus_coil_{c + 1}" for c in range(n_c)]
        + [f"f_minus_coil_{c + 1}" for c in range(n_c)]
    )
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for k in range(points):
            writer.writerow(
                [repr(float(phis[k]))]
                + [repr(float(v)) for v in f_plus[k]]
                + [repr(float(v)) for v in f_minus[k]]
            )
