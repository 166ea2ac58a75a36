"""Expected torque-ripple cost and constraints as a convex quadratic program.

For stacked commutation coefficients ``alpha = [alpha_plus; alpha_minus]``
the relative torque error on a design grid of ``N`` angles per tooth is
linear in the random model parameters.  Taking the expectation of its
squared norm over the Gaussian parameter distribution gives a convex
quadratic cost

    cost(alpha) = alpha' H alpha + b' alpha + c0
                = tr(Sigma_err) + mean_err' mean_err,

assembled here per grid point, together with the linear constraint matrix
``B`` that keeps the squared-current commands non-negative on the grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ModelError
from .kernel_basis import KernelBasisSpec, coil_basis
from .srm_model import ProbabilisticSrmModel, TorqueBasis, torque_basis

_TWO_PI = 2.0 * math.pi

__all__ = [
    "ErrorGrid",
    "QpProblem",
    "ErrorDistribution",
    "stacked_error_map",
    "error_distribution",
    "assemble_qp",
    "constraint_matrix",
    "eval_cost",
    "cost_gradient",
    "mc_cost_oracle",
]


@dataclass(frozen=True)
class ErrorGrid:
    """Evenly spaced rotor angles over one tooth pitch where the error is penalized."""

    angles: np.ndarray

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles, dtype=float))
        object.__setattr__(self, "angles", angles)
        if angles.size < 1:
            raise ConfigurationError("error grid must contain at least one angle")
        if angles.size > 1:
            spacing = np.diff(angles)
            if np.max(np.abs(spacing - spacing[0])) > 1e-12:
                raise ConfigurationError("error grid spacing must be uniform to 1e-12")

    @classmethod
    def uniform(cls, point_count: int, tooth_count: int) -> "ErrorGrid":
        pitch = _TWO_PI / tooth_count
        return cls(angles=pitch * np.arange(point_count) / point_count)

    @property
    def point_count(self) -> int:
        return self.angles.size


@dataclass(frozen=True)
class QpProblem:
    """Dense convex quadratic program ``min a'Ha + b'a + c0  s.t.  Ba >= 0``."""

    hessian: np.ndarray
    linear: np.ndarray
    constant: float
    constraint_matrix: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=float)
        b = np.asarray(self.linear, dtype=float)
        bmat = np.asarray(self.constraint_matrix, dtype=float)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "linear", b)
        object.__setattr__(self, "constraint_matrix", bmat)
        n = h.shape[0]
        if h.shape != (n, n) or b.shape != (n,):
            raise ConfigurationError("inconsistent quadratic program dimensions")
        if bmat.ndim != 2 or bmat.shape[1] != n:
            raise ConfigurationError("constraint matrix column count must match variables")
        scale = max(1.0, float(np.max(np.abs(h))))
        if np.max(np.abs(h - h.T)) > 1e-12 * scale:
            raise ConfigurationError("hessian must be symmetric to 1e-12 relative")

    @property
    def variable_count(self) -> int:
        return self.hessian.shape[0]

    @property
    def constraint_count(self) -> int:
        return self.constraint_matrix.shape[0]

    def dump_json(self, path) -> None:
        payload = {
            "hessian": self.hessian.tolist(),
            "linear": self.linear.tolist(),
            "constant": self.constant,
            "constraint_matrix": self.constraint_matrix.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class ErrorDistribution:
    """Gaussian distribution of the stacked relative torque error."""

    mean: np.ndarray
    cov: np.ndarray


def _sign_constants(point_count: int) -> np.ndarray:
    # positive-branch rows target +1 (constant -1), negative-branch rows target -1
    return np.concatenate([-np.ones(point_count), np.ones(point_count)])


def stacked_error_map(
    alpha: np.ndarray,
    grid: ErrorGrid,
    commutation_basis: KernelBasisSpec,
    model_basis: TorqueBasis,
) -> np.ndarray:
    """Matrix mapping model parameters to the stacked torque errors.

    Row ``i`` (grid point ``i mod N``, positive branch for ``i < N``) equals
    the commutation output at that angle contracted with the torque-model
    basis, so ``map @ theta + [-1_N; 1_N]`` is the stacked error vector.
    Kept as an explicit-matrix validation path; the quadratic cost itself is
    assembled per grid point by :func:`assemble_qp`.
    """
    alpha = np.asarray(alpha, dtype=float)
    n_half = commutation_basis.coil_count * commutation_basis.basis_count
    if alpha.shape != (2 * n_half,):
        raise ConfigurationError(f"alpha has shape {alpha.shape}, expected ({2 * n_half},)")
    if model_basis.coil_count != commutation_basis.coil_count:
        raise ConfigurationError("commutation and model bases disagree on coil count")
    alpha_plus, alpha_minus = alpha[:n_half], alpha[n_half:]
    n = grid.point_count
    out = np.empty((2 * n, model_basis.parameter_count))
    for i, phi in enumerate(grid.angles):
        cb = coil_basis(phi, commutation_basis)
        tb = torque_basis(phi, model_basis)
        out[i] = (cb @ alpha_plus) @ tb
        out[n + i] = (cb @ alpha_minus) @ tb
    return out


def error_distribution(
    alpha: np.ndarray,
    model: ProbabilisticSrmModel,
    grid: ErrorGrid,
    commutation_basis: KernelBasisSpec,
) -> ErrorDistribution:
    """Mean and covariance of the stacked torque error for given coefficients."""
    x = stacked_error_map(alpha, grid, commutation_basis, model.basis)
    mean = x @ model.theta_mean + _sign_constants(grid.point_count)
    cov = x @ model.theta_cov @ x.T
    return ErrorDistribution(mean=mean, cov=cov)


def constraint_matrix(grid: ErrorGrid, commutation_basis: KernelBasisSpec) -> np.ndarray:
    """Linear map stacking both commutation functions coil-wise on the grid.

    ``B @ alpha`` lists the positive-branch squared-current commands at every
    grid angle followed by the negative-branch commands, so ``B @ alpha >= 0``
    enforces realizable currents on the grid.  Shape is
    ``(2 * coil_count * N, 2 * coil_count * basis_count)``.
    """
    n = grid.point_count
    n_c = commutation_basis.coil_count
    n_half = n_c * commutation_basis.basis_count
    rows = np.empty((n * n_c, n_half))
    for i, phi in enumerate(grid.angles):
        rows[i * n_c : (i + 1) * n_c] = coil_basis(phi, commutation_basis)
    out = np.zeros((2 * n * n_c, 2 * n_half))
    out[: n * n_c, :n_half] = rows
    out[n * n_c :, n_half:] = rows
    return out


def assemble_qp(
    model: ProbabilisticSrmModel,
    grid: ErrorGrid,
    commutation_basis: KernelBasisSpec,
) -> QpProblem:
    """Assemble the expected-ripple quadratic cost and grid constraints.

    Accumulates, per grid angle, the coil-basis/model-basis coupling block
    into the sign-matched diagonal block of the Hessian against
    ``theta_cov + theta_mean theta_mean'``, the corresponding linear terms,
    and the constant ``2N``.  Requires a positive definite parameter
    covariance and a grid at least as fine as the basis (otherwise the
    design would be underdetermined on the grid).
    """
    if model.basis.coil_count != commutation_basis.coil_count:
        raise ConfigurationError("commutation and model bases disagree on coil count")
    if grid.point_count < commutation_basis.basis_count:
        raise ConfigurationError(
            "error grid must have at least as many points as the commutation basis"
        )
    try:
        np.linalg.cholesky(model.theta_cov)
    except np.linalg.LinAlgError:
        raise ModelError("QP assembly requires a positive definite parameter covariance") from None

    n = grid.point_count
    n_half = commutation_basis.coil_count * commutation_basis.basis_count
    second_moment = model.theta_cov + np.outer(model.theta_mean, model.theta_mean)
    h_block = np.zeros((n_half, n_half))
    b_plus = np.zeros(n_half)
    for phi in grid.angles:
        cb = coil_basis(phi, commutation_basis)  # (n_c, n_half)
        tb = torque_basis(phi, model.basis)  # (n_c, n_theta)
        gain_coupling = tb @ second_moment @ tb.T  # (n_c, n_c)
        h_block += cb.T @ gain_coupling @ cb
        b_plus -= 2.0 * (cb.T @ (tb @ model.theta_mean))
    h_block = 0.5 * (h_block + h_block.T)

    hessian = np.zeros((2 * n_half, 2 * n_half))
    hessian[:n_half, :n_half] = h_block
    hessian[n_half:, n_half:] = h_block
    linear = np.concatenate([b_plus, -b_plus])
    return QpProblem(
        hessian=hessian,
        linear=linear,
        constant=2.0 * n,
        constraint_matrix=constraint_matrix(grid, commutation_basis),
    )


def eval_cost(qp: QpProblem, alpha: np.ndarray) -> float:
    """Expected squared torque ripple ``a'Ha + b'a + c0`` (always >= 0)."""
    alpha = np.asarray(alpha, dtype=float)
    return float(alpha @ qp.hessian @ alpha + qp.linear @ alpha + qp.constant)


def cost_gradient(qp: QpProblem, alpha: np.ndarray) -> np.ndarray:
    """Gradient ``2 H a + b`` of the expected-ripple cost."""
    alpha = np.asarray(alpha, dtype=float)
    return 2.0 * (qp.hessian @ alpha) + qp.linear


def mc_cost_oracle(
    model: ProbabilisticSrmModel,
    grid: ErrorGrid,
    commutation_basis: KernelBasisSpec,
    alpha: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo estimate of the expected squared torque ripple.

    Draws parameter vectors from the model distribution, evaluates the
    stacked error explicitly, and averages its squared norm.  Returns the
    estimate together with its standard error; serves as the independent
    check of the assembled quadratic cost.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = stacked_error_map(alpha, grid, commutation_basis, model.basis)
    noise = rng.standard_normal((n_samples, model.parameter_count))
    thetas = model.theta_mean + noise @ model.cov_factor.T
    errors = thetas @ x.T + _sign_constants(grid.point_count)
    values = np.einsum("ij,ij->i", errors, errors)
    estimate = float(values.mean())
    std_error = float(values.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    return estimate, std_error
