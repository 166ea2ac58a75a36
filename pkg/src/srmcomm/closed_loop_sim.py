"""Discrete-time closed-loop tracking simulation.

The loop per sample: tracking error -> discrete PID -> torque setpoint ->
commutation -> squared currents -> true motor torque -> double-integrator
mechanics ``angle(s)/torque(s) = 1/(s(s+1))`` advanced one exact
zero-order-hold step.  Metrics are windowed RMS tracking errors over the
last full tooth of travel, combined over both motion directions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .errors import ConfigurationError, DesignError
from .srm_model import SrmRealization, TorqueBasis, torque_gain, torque_gain_profile

_TWO_PI = 2.0 * math.pi

__all__ = [
    "PlantDiscrete",
    "discretize_plant",
    "PidDiscrete",
    "design_pid",
    "ReferenceSpec",
    "build_reference",
    "DirectTorqueResponse",
    "TabulatedTorqueResponse",
    "PerfectTorqueResponse",
    "DirectionTrace",
    "SimResult",
    "simulate_tracking",
    "compute_e_rms",
    "write_sim_csv",
    "write_sim_summary",
]


@dataclass(frozen=True)
class PlantDiscrete:
    """Exact zero-order-hold discretization of the rotor mechanics.

    State is ``[angle rad, angular velocity rad/s]``; input is torque [N*m]
    held constant over each step.
    """

    a12: float
    a22: float
    b1: float
    b2: float
    step_s: float

    @property
    def transition(self) -> np.ndarray:
        return np.array([[1.0, self.a12], [0.0, self.a22]])

    @property
    def input_matrix(self) -> np.ndarray:
        return np.array([[self.b1], [self.b2]])

    def step(self, angle: float, velocity: float, torque: float) -> tuple[float, float]:
        return (
            angle + self.a12 * velocity + self.b1 * torque,
            self.a22 * velocity + self.b2 * torque,
        )


def discretize_plant(step_s: float) -> PlantDiscrete:
    """Zero-order-hold matrices of ``1/(s(s+1))`` in closed form.

    ``transition = [[1, 1-e^-h], [0, e^-h]]``,
    ``input = [h-(1-e^-h), 1-e^-h]`` for step ``h``; exact for piecewise
    constant torque, so no integration error accumulates at any rate.
    """
    if step_s <= 0:
        raise ConfigurationError("sample step must be positive")
    decay = math.exp(-step_s)
    rise = -math.expm1(-step_s)  # 1 - e^-h without cancellation
    return PlantDiscrete(a12=rise, a22=decay, b1=step_s - rise, b2=rise, step_s=step_s)


@dataclass(frozen=True)
class PidDiscrete:
    """Second-order discrete controller (PID with filtered derivative).

    Difference equation in transposed direct form II:
    ``u_k = b0 e_k + z1``, ``z1' = b1 e_k - a1 u_k + z2``,
    ``z2' = b2 e_k - a2 u_k``.
    """

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    step_s: float
    bandwidth_hz: float


def _pid_continuous_coeffs(bandwidth_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Serial loop-shaped PID: integrator a decade down, lead spanning the
    crossover (zero at wc/3, filter pole at 3 wc), unit gain placeholder."""
    wc = _TWO_PI * bandwidth_hz
    wi, wd, wt = wc / 10.0, wc / 3.0, 3.0 * wc
    # C(s) = (wt/wd) * (s + wi)(s + wd) / (s (s + wt))
    num = (wt / wd) * np.array([1.0, wi + wd, wi * wd])
    den = np.array([1.0, wt, 0.0])
    return num, den


def _freq_response(num: np.ndarray, den: np.ndarray, omega: float) -> complex:
    s = 1j * omega
    return np.polyval(num, s) / np.polyval(den, s)


def design_pid(bandwidth_hz: float, step_s: float) -> PidDiscrete:
    """Design the tracking controller for the rotor mechanics at a bandwidth.

    The proportional gain normalizes the loop magnitude to one at the
    bandwidth frequency; the controller is then mapped to discrete time by
    the trapezoidal transform and the linearized closed loop (unit torque
    gain) is checked for stability.
    """
    if bandwidth_hz <= 0 or step_s <= 0:
        raise ConfigurationError("bandwidth and sample step must be positive")
    if bandwidth_hz > 0.05 / step_s:
        raise ConfigurationError(
            f"bandwidth {bandwidth_hz} Hz too high for sample step {step_s} s"
        )
    num, den = _pid_continuous_coeffs(bandwidth_hz)
    wc = _TWO_PI * bandwidth_hz
    plant_gain = _freq_response(np.array([1.0]), np.array([1.0, 1.0, 0.0]), wc)
    loop_gain = abs(_freq_response(num, den, wc) * plant_gain)
    kp = 1.0 / loop_gain
    num = kp * num

    b, a = scipy.signal.bilinear(num, den, fs=1.0 / step_s)
    pid = PidDiscrete(
        b0=float(b[0]),
        b1=float(b[1]),
        b2=float(b[2]),
        a1=float(a[1]),
        a2=float(a[2]),
        step_s=step_s,
        bandwidth_hz=bandwidth_hz,
    )
    radius = _closed_loop_spectral_radius(pid, discretize_plant(step_s))
    if radius >= 1.0:
        raise DesignError(f"closed loop unstable: spectral radius {radius:.6f}")
    return pid


def _closed_loop_spectral_radius(pid: PidDiscrete, plant: PlantDiscrete) -> float:
    # controller in controllable canonical form
    ac = np.array([[-pid.a1, -pid.a2], [1.0, 0.0]])
    bc = np.array([[1.0], [0.0]])
    cc = np.array([[pid.b1 - pid.a1 * pid.b0, pid.b2 - pid.a2 * pid.b0]])
    dc = pid.b0
    ap = plant.transition
    bp = plant.input_matrix
    cp = np.array([[1.0, 0.0]])
    top = np.hstack([ap - bp * dc @ cp, bp @ cc])
    bottom = np.hstack([-bc @ cp, ac])
    closed = np.vstack([top, bottom])
    return float(np.max(np.abs(np.linalg.eigvals(closed))))


@dataclass(frozen=True)
class ReferenceSpec:
    """Constant-velocity tracking reference over a span of teeth.

    Holds the start position for ``hold_s`` seconds (letting the loop
    settle), then ramps at ``velocity_teeth_per_s`` until ``span_teeth``
    teeth of travel are covered.
    """

    velocity_teeth_per_s: float
    span_teeth: float
    hold_s: float
    tooth_count: int

    def __post_init__(self):
        if self.velocity_teeth_per_s <= 0 or self.span_teeth <= 0:
            raise ConfigurationError("reference velocity and span must be positive")
        if self.hold_s < 0:
            raise ConfigurationError("hold time must be non-negative")
        if self.tooth_count < 1:
            raise ConfigurationError("tooth_count must be positive")

    @property
    def tooth_pitch(self) -> float:
        return _TWO_PI / self.tooth_count


def build_reference(spec: ReferenceSpec, step_s: float, direction: int) -> np.ndarray:
    """Sampled reference trace for one motion direction (+1 or -1)."""
    if direction not in (1, -1):
        raise ConfigurationError("direction must be +1 or -1")
    ramp_s = spec.span_teeth / spec.velocity_teeth_per_s
    total = int(round((spec.hold_s + ramp_s) / step_s)) + 1
    t = step_s * np.arange(total)
    speed = direction * spec.velocity_teeth_per_s * spec.tooth_pitch
    return speed * np.clip(t - spec.hold_s, 0.0, ramp_s)


class DirectTorqueResponse:
    """Exact per-step torque map: commutation then the true gain row.

    When the end-of-step angle is supplied, the gain is averaged between the
    step's start and end angles while the current command stays frozen at
    the start angle; this reproduces the small sampling-induced torque
    ripple of a sampled commutation driving a moving rotor.
    """

    def __init__(self, commutation, theta_true: np.ndarray, basis: TorqueBasis):
        self._commutation = commutation
        self._theta = np.asarray(theta_true, dtype=float)
        self._basis = basis

    def torque(self, phi: float, setpoint: float, phi_end: float | None = None) -> float:
        currents = self._commutation(phi, setpoint)
        gain = torque_gain(phi, self._theta, self._basis)
        if phi_end is not None:
            gain = 0.5 * (gain + torque_gain(phi_end, self._theta, self._basis))
        return float(gain @ currents)

    def currents(self, phi: float, setpoint: float) -> np.ndarray:
        return self._commutation(phi, setpoint)


class PerfectTorqueResponse:
    """Idealized commutation: the realized torque equals the setpoint."""

    def torque(self, phi: float, setpoint: float, phi_end: float | None = None) -> float:
        return setpoint

    currents = None


class TabulatedTorqueResponse:
    """Dense per-tooth lookup of per-coil gains and unit-setpoint commands.

    Commutation functions and gains are smooth and tooth-periodic, so they
    are tabulated once per (motor, commutation) pair and linearly
    interpolated per step; this is what keeps large Monte Carlo studies
    fast.  Built by probing the commutation at unit setpoints (valid because
    commands scale linearly with the setpoint magnitude per sign).  Supplying
    the end-of-step angle to :meth:`torque` averages the gain over the step
    path while the command stays frozen, as in the direct response.
    """

    def __init__(
        self,
        gain_table: np.ndarray,
        w_plus: np.ndarray,
        w_minus: np.ndarray,
        tooth_count: int,
    ):
        gain_table = np.asarray(gain_table, dtype=float)
        w_plus = np.asarray(w_plus, dtype=float)
        w_minus = np.asarray(w_minus, dtype=float)
        if gain_table.ndim != 2 or gain_table.shape != w_plus.shape or gain_table.shape != w_minus.shape:
            raise ConfigurationError("gain and command tables must share shape (points, coils)")
        self.tooth_count = tooth_count
        self.gain_table = gain_table
        self.w_plus = w_plus
        self.w_minus = w_minus
        points = gain_table.shape[0]
        self._scale = points / _TWO_PI
        # closed tables (first row appended) as flat lists for the hot loop
        closed = lambda a: np.vstack([a, a[:1]])
        self._gains = [col.tolist() for col in closed(gain_table).T]
        self._wp = [col.tolist() for col in closed(w_plus).T]
        self._wm = [col.tolist() for col in closed(w_minus).T]

    @classmethod
    def from_commutation(
        cls, commutation, theta_true: np.ndarray, basis: TorqueBasis, points: int = 8192
    ) -> "TabulatedTorqueResponse":
        pitch = _TWO_PI / basis.tooth_count
        phis = pitch * np.arange(points) / points
        gains = torque_gain_profile(phis, theta_true, basis)
        profile = getattr(commutation, "profile", None)
        if profile is not None:
            w_plus, w_minus = profile(phis)
        else:
            w_plus = np.empty((points, basis.coil_count))
            w_minus = np.empty((points, basis.coil_count))
            for k, phi in enumerate(phis):
                w_plus[k] = commutation(phi, 1.0)
                w_minus[k] = commutation(phi, -1.0)
        # squared-current commands cannot be negative; clamp tiny dips between
        # constraint grid points exactly like the per-step evaluation does
        return cls(
            gain_table=gains,
            w_plus=np.maximum(np.asarray(w_plus, dtype=float), 0.0),
            w_minus=np.maximum(np.asarray(w_minus, dtype=float), 0.0),
            tooth_count=basis.tooth_count,
        )

    def torque(self, phi: float, setpoint: float, phi_end: float | None = None) -> float:
        scale = self._scale
        pos0 = ((phi * self.tooth_count) % _TWO_PI) * scale
        i0 = int(pos0)
        f0 = pos0 - i0
        commands = self._wp if setpoint >= 0 else self._wm
        total = 0.0
        if phi_end is None:
            for g, w in zip(self._gains, commands):
                g0 = g[i0] + f0 * (g[i0 + 1] - g[i0])
                total += g0 * (w[i0] + f0 * (w[i0 + 1] - w[i0]))
        else:
            pos1 = ((phi_end * self.tooth_count) % _TWO_PI) * scale
            i1 = int(pos1)
            f1 = pos1 - i1
            for g, w in zip(self._gains, commands):
                g0 = g[i0] + f0 * (g[i0 + 1] - g[i0])
                g1 = g[i1] + f1 * (g[i1 + 1] - g[i1])
                total += 0.5 * (g0 + g1) * (w[i0] + f0 * (w[i0 + 1] - w[i0]))
        return total * abs(setpoint)

    def currents(self, phi: float, setpoint: float) -> np.ndarray:
        x = (phi * self.tooth_count) % _TWO_PI
        idx = int(x * self._scale) % self.gain_table.shape[0]
        w = self.w_plus if setpoint >= 0 else self.w_minus
        return w[idx] * abs(setpoint)


@dataclass(frozen=True)
class DirectionTrace:
    """Traces and windowed metric of a single-direction tracking run."""

    direction: int
    time_s: np.ndarray
    reference_rad: np.ndarray
    angle_rad: np.ndarray
    error_rad: np.ndarray
    torque_cmd_nm: np.ndarray
    e_rms: float
    window_start: int
    aborted: bool


@dataclass(frozen=True)
class SimResult:
    """Both-direction tracking study of one motor/commutation pair."""

    run_plus: DirectionTrace
    run_minus: DirectionTrace
    e_rms_plus: float
    e_rms_minus: float
    e_rms: float
    aborted: bool

    @classmethod
    def from_runs(cls, run_plus: DirectionTrace, run_minus: DirectionTrace) -> "SimResult":
        combined = math.sqrt(0.5 * (run_plus.e_rms**2 + run_minus.e_rms**2))
        return cls(
            run_plus=run_plus,
            run_minus=run_minus,
            e_rms_plus=run_plus.e_rms,
            e_rms_minus=run_minus.e_rms,
            e_rms=combined,
            aborted=run_plus.aborted or run_minus.aborted,
        )


def compute_e_rms(
    error: np.ndarray, reference: np.ndarray, tooth_pitch: float
) -> tuple[float, int]:
    """Windowed RMS tracking error over the last full tooth of travel.

    The window opens at the first sample where the reference has covered all
    but one tooth of its total travel (the rotor entering its final tooth)
    and closes at the last sample.  Requires at least two teeth of travel.
    """
    error = np.asarray(error, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if error.shape != reference.shape:
        raise ConfigurationError("error and reference traces must align")
    travel = abs(reference[-1] - reference[0])
    if travel < 2.0 * tooth_pitch:
        raise ConfigurationError(
            f"trace covers {travel / tooth_pitch:.2f} teeth; need at least 2"
        )
    progress = np.abs(reference - reference[0])
    start = int(np.searchsorted(progress, travel - tooth_pitch, side="left"))
    window = error[start:]
    return float(np.sqrt(np.mean(window**2))), start


_ABORT_ERROR_RAD = 1.0


def _run_direction(
    torque_map,
    pid: PidDiscrete,
    plant: PlantDiscrete,
    reference: np.ndarray,
    direction: int,
    tooth_pitch: float,
    gain_averaging: bool,
) -> DirectionTrace:
    n = reference.shape[0]
    ref_list = reference.tolist()
    errors = [0.0] * n
    angles = [0.0] * n
    torques = [0.0] * n

    b0, b1, b2 = pid.b0, pid.b1, pid.b2
    a1, a2 = pid.a1, pid.a2
    a12, a22 = plant.a12, plant.a22
    in1, in2 = plant.b1, plant.b2
    torque_of = torque_map.torque

    angle = 0.0
    velocity = 0.0
    z1 = 0.0
    z2 = 0.0
    aborted = False
    last = n
    for k in range(n):
        e = ref_list[k] - angle
        angles[k] = angle
        errors[k] = e
        if e > _ABORT_ERROR_RAD or e < -_ABORT_ERROR_RAD:
            aborted = True
            last = k + 1
            break
        setpoint = b0 * e + z1
        z1 = b1 * e - a1 * setpoint + z2
        z2 = b2 * e - a2 * setpoint
        torques[k] = setpoint
        if gain_averaging:
            # the command is held while the rotor sweeps roughly a12*velocity;
            # the torque term of the intra-step motion is negligible
            torque = torque_of(angle, setpoint, angle + a12 * velocity)
        else:
            torque = torque_of(angle, setpoint)
        angle = angle + a12 * velocity + in1 * torque
        velocity = a22 * velocity + in2 * torque

    time_s = plant.step_s * np.arange(last)
    error_arr = np.asarray(errors[:last])
    ref_arr = reference[:last]
    if aborted:
        e_rms, start = math.inf, last
    else:
        e_rms, start = compute_e_rms(error_arr, ref_arr, tooth_pitch)
    return DirectionTrace(
        direction=direction,
        time_s=time_s,
        reference_rad=ref_arr,
        angle_rad=np.asarray(angles[:last]),
        error_rad=error_arr,
        torque_cmd_nm=np.asarray(torques[:last]),
        e_rms=e_rms,
        window_start=start,
        aborted=aborted,
    )


def simulate_tracking(
    realization: SrmRealization | np.ndarray,
    commutation,
    pid: PidDiscrete,
    plant: PlantDiscrete,
    ref_spec: ReferenceSpec,
    basis: TorqueBasis,
    table_points: int | None = 8192,
    gain_averaging: bool = True,
) -> SimResult:
    """Closed-loop tracking in both motion directions for one motor.

    ``commutation`` is a callable ``(phi, setpoint) -> squared currents`` or
    an object exposing a vectorized ``profile``; passing a torque-response
    object (anything with a ``torque`` method) uses it directly.  With
    ``table_points`` set the torque map is tabulated once over a tooth for
    speed; ``None`` evaluates the commutation every step.

    ``gain_averaging`` averages the true gain over each step's angle path
    while the current command stays frozen at the sampled angle, reproducing
    the small sampling-induced torque ripple of a real sampled driver; with
    ``False`` the gain is frozen at the sampled angle too and a commutation
    that inverts the model exactly produces exactly zero error.
    """
    if abs(pid.step_s - plant.step_s) > 1e-15:
        raise ConfigurationError("controller and plant sample steps differ")
    if hasattr(commutation, "torque"):
        torque_map = commutation
    else:
        theta = realization.theta_true if isinstance(realization, SrmRealization) else realization
        if table_points is None:
            torque_map = DirectTorqueResponse(commutation, theta, basis)
        else:
            torque_map = TabulatedTorqueResponse.from_commutation(
                commutation, theta, basis, points=table_points
            )
    runs = {}
    for direction in (1, -1):
        reference = build_reference(ref_spec, plant.step_s, direction)
        runs[direction] = _run_direction(
            torque_map, pid, plant, reference, direction, ref_spec.tooth_pitch, gain_averaging
        )
    return SimResult.from_runs(runs[1], runs[-1])


def write_sim_csv(result: SimResult, path) -> None:
    """Both direction traces in long form (RFC-4180, '.' decimals)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["direction", "time_s", "reference_rad", "angle_rad", "error_rad", "torque_cmd_nm"]
        )
        for run in (result.run_plus, result.run_minus):
            for k in range(run.time_s.shape[0]):
                writer.writerow(
                    [
                        run.direction,
                        repr(float(run.time_s[k])),
                        repr(float(run.reference_rad[k])),
                        repr(float(run.angle_rad[k])),
                        repr(float(run.error_rad[k])),
                        repr(float(run.torque_cmd_nm[k])),
                    ]
                )


def write_sim_summary(result: SimResult, path) -> None:
    """Metrics-only JSON summary of a tracking study."""
    payload = {
        "e_rms_plus_rad": result.e_rms_plus,
        "e_rms_minus_rad": result.e_rms_minus,
        "e_rms_rad": result.e_rms,
        "aborted": result.aborted,
        "window_start_plus": result.run_plus.window_start,
        "window_start_minus": result.run_minus.window_start,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
