"""Dense convex QP solver: ``min a'Ha + b'a + c0  subject to  Ba >= 0``.

The production path is an infeasible-start primal-dual interior-point method
with a Mehrotra-style predictor-corrector step on dense Cholesky
factorizations; problem sizes here are small and dense, where direct
factorization comfortably beats first-order methods.  A projected-gradient
solver on the dual (whose feasible set is the non-negative orthant, so the
projection is a clip) ships alongside as an independent first-order
cross-check.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import SolverError
from .ripple_objective import QpProblem

__all__ = [
    "QpStatus",
    "KktResiduals",
    "SolverSettings",
    "QpSolution",
    "solve_qp",
    "check_kkt",
    "projected_gradient_reference",
    "ReferenceSolution",
]


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class KktResiduals:
    """Infinity norms of the first-order optimality residuals."""

    stationarity: float
    primal_feasibility: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.complementarity)


@dataclass(frozen=True)
class SolverSettings:
    kkt_tolerance: float = 1e-8
    feasibility_tolerance: float = 1e-9
    max_iterations: int = 200
    step_fraction: float = 0.99965
    regularization: float = 1e-10
    record_iterations: bool = False


@dataclass(frozen=True)
class QpSolution:
    alpha_star: np.ndarray
    objective_value: float
    kkt_residuals: KktResiduals
    iterations: int
    status: QpStatus
    duals: np.ndarray
    iteration_log: list = field(default_factory=list, repr=False, compare=False)


def _objective(qp: QpProblem, alpha: np.ndarray) -> float:
    return float(alpha @ qp.hessian @ alpha + qp.linear @ alpha + qp.constant)


def _residuals(qp: QpProblem, alpha: np.ndarray, duals: np.ndarray) -> KktResiduals:
    constraint_values = qp.constraint_matrix @ alpha
    stationarity = 2.0 * (qp.hessian @ alpha) + qp.linear - qp.constraint_matrix.T @ duals
    return KktResiduals(
        stationarity=float(np.max(np.abs(stationarity))) if stationarity.size else 0.0,
        primal_feasibility=float(np.max(np.abs(np.minimum(constraint_values, 0.0))))
        if constraint_values.size
        else 0.0,
        complementarity=float(np.max(np.abs(duals * constraint_values)))
        if constraint_values.size
        else 0.0,
    )


def check_kkt(qp: QpProblem, alpha: np.ndarray, duals: np.ndarray) -> KktResiduals:
    """First-order optimality residuals of a candidate primal/dual pair.

    Raises ``ValueError`` for a dual vector with negative entries, which can
    never certify optimality of the inequality-constrained problem.
    """
    alpha = np.asarray(alpha, dtype=float)
    duals = np.asarray(duals, dtype=float)
    if duals.shape != (qp.constraint_count,):
        raise ValueError(
            f"duals have shape {duals.shape}, expected ({qp.constraint_count},)"
        )
    if np.any(duals < 0):
        raise ValueError("invalid dual: multipliers of inequality constraints must be >= 0")
    return _residuals(qp, alpha, duals)


def _reject_indefinite(h: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(h))))
    min_eig = float(scipy.linalg.eigvalsh(h, subset_by_index=[0, 0])[0])
    if min_eig < -1e-8 * scale:
        raise SolverError(f"hessian is indefinite (min eigenvalue {min_eig:.3e})")


def _max_step(values: np.ndarray, deltas: np.ndarray) -> float:
    """Largest step in [0, 1] keeping ``values + step * deltas`` non-negative."""
    shrink = deltas < 0
    if not np.any(shrink):
        return 1.0
    return min(1.0, float(np.min(-values[shrink] / deltas[shrink])))


def solve_qp(qp: QpProblem, settings: SolverSettings | None = None) -> QpSolution:
    """Solve the convex QP to the requested KKT tolerances.

    Returns a point satisfying stationarity, primal feasibility, dual
    feasibility, and complementarity within the configured tolerances;
    deterministic for identical inputs and settings.  An indefinite Hessian
    is rejected; hitting the iteration cap returns the best iterate with
    ``MAX_ITERATIONS`` status.
    """
    settings = settings or SolverSettings()
    h = qp.hessian
    b = qp.linear
    bmat = qp.constraint_matrix
    n = qp.variable_count
    m = qp.constraint_count
    _reject_indefinite(h)

    log: list[tuple] = []

    if m == 0:
        # unconstrained convex minimum (minimum-norm solution if singular)
        alpha = np.linalg.lstsq(2.0 * h + settings.regularization * np.eye(n), -b, rcond=None)[0]
        residuals = _residuals(qp, alpha, np.zeros(0))
        return QpSolution(
            alpha_star=alpha,
            objective_value=_objective(qp, alpha),
            kkt_residuals=residuals,
            iterations=0,
            status=QpStatus.OPTIMAL,
            duals=np.zeros(0),
            iteration_log=log,
        )

    alpha = np.zeros(n)
    slack = np.ones(m)
    duals = np.ones(m)

    best = (math.inf, alpha.copy(), duals.copy(), _residuals(qp, alpha, duals))
    status = QpStatus.MAX_ITERATIONS
    iterations = settings.max_iterations

    two_h = 2.0 * h
    reg_eye = settings.regularization * np.eye(n)

    for iteration in range(settings.max_iterations):
        residuals = _residuals(qp, alpha, duals)
        if settings.record_iterations:
            log.append(
                (
                    iteration,
                    _objective(qp, alpha),
                    residuals.stationarity,
                    residuals.primal_feasibility,
                    residuals.complementarity,
                )
            )
        merit = residuals.max()
        if merit < best[0]:
            best = (merit, alpha.copy(), duals.copy(), residuals)
        if (
            residuals.stationarity <= settings.kkt_tolerance
            and residuals.primal_feasibility <= settings.feasibility_tolerance
            and residuals.complementarity <= settings.kkt_tolerance
        ):
            status = QpStatus.OPTIMAL
            iterations = iteration
            break

        r_dual = two_h @ alpha + b - bmat.T @ duals
        r_primal = bmat @ alpha - slack
        mu = float(slack @ duals) / m

        dual_over_slack = duals / slack
        kkt_matrix = two_h + reg_eye + (bmat.T * dual_over_slack) @ bmat
        try:
            factor = scipy.linalg.cho_factor(kkt_matrix, check_finite=False)
        except scipy.linalg.LinAlgError:
            try:
                factor = scipy.linalg.cho_factor(
                    kkt_matrix + 1e-8 * np.eye(n), check_finite=False
                )
            except scipy.linalg.LinAlgError:
                status = QpStatus.NUMERICAL_FAILURE
                iterations = iteration
                break

        def newton_step(r_comp):
            rhs = -r_dual - bmat.T @ ((r_comp + duals * r_primal) / slack)
            d_alpha = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
            d_slack = bmat @ d_alpha + r_primal
            d_duals = -(r_comp + duals * d_slack) / slack
            return d_alpha, d_slack, d_duals

        # predictor: pure Newton step on the unperturbed complementarity
        da_aff, ds_aff, dd_aff = newton_step(slack * duals)
        step_p_aff = _max_step(slack, ds_aff)
        step_d_aff = _max_step(duals, dd_aff)
        mu_affine = float((slack + step_p_aff * ds_aff) @ (duals + step_d_aff * dd_aff)) / m
        sigma = (max(mu_affine, 0.0) / mu) ** 3 if mu > 0 else 0.0

        # corrector: recenter and compensate the predicted complementarity product
        r_comp = slack * duals + ds_aff * dd_aff - sigma * mu
        d_alpha, d_slack, d_duals = newton_step(r_comp)

        step_primal = settings.step_fraction * _max_step(slack, d_slack)
        step_dual = settings.step_fraction * _max_step(duals, d_duals)
        alpha = alpha + step_primal * d_alpha
        slack = np.maximum(slack + step_primal * d_slack, 1e-300)
        duals = np.maximum(duals + step_dual * d_duals, 1e-300)

    else:
        iterations = settings.max_iterations

    if status is QpStatus.OPTIMAL:
        final_alpha, final_duals, final_res = alpha, duals, _residuals(qp, alpha, duals)
    else:
        _, final_alpha, final_duals, final_res = best

    return QpSolution(
        alpha_star=final_alpha,
        objective_value=_objective(qp, final_alpha),
        kkt_residuals=final_res,
        iterations=iterations,
        status=status,
        duals=final_duals,
        iteration_log=log,
    )


@dataclass(frozen=True)
class ReferenceSolution:
    alpha: np.ndarray
    duals: np.ndarray
    objective_value: float
    dual_objective: float
    iterations: int
    converged: bool
    objective_history: np.ndarray | None = None


def projected_gradient_reference(
    qp: QpProblem,
    max_iterations: int = 200_000,
    tolerance: float = 1e-14,
    record_history: bool = False,
) -> ReferenceSolution:
    """First-order cross-check solver, independent of the interior-point path.

    Runs projected gradient descent on the Lagrange dual with Nesterov
    extrapolation and a monotone safeguard.  The dual of the
    inequality-constrained QP is a convex quadratic over the non-negative
    orthant, so the projection is a plain clip at zero; constraint rows are
    normalized first, which rescales the duals but not the problem.  Requires
    a positive definite Hessian (the oracle's documented precondition); the
    recovered primal is ``alpha(duals) = H^{-1}(B' duals - b) / 2`` and at
    convergence the dual value equals the primal optimum by strong duality.
    """
    h = qp.hessian
    b = qp.linear
    m = qp.constraint_count
    try:
        h_factor = scipy.linalg.cho_factor(h, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise SolverError("projected-gradient reference requires a positive definite hessian")

    if m == 0:
        alpha = scipy.linalg.cho_solve(h_factor, -0.5 * b)
        value = _objective(qp, alpha)
        return ReferenceSolution(
            alpha=alpha,
            duals=np.zeros(0),
            objective_value=value,
            dual_objective=value,
            iterations=0,
            converged=True,
        )

    row_norms = np.linalg.norm(qp.constraint_matrix, axis=1)
    row_norms = np.where(row_norms > 0, row_norms, 1.0)
    bmat = qp.constraint_matrix / row_norms[:, None]

    hinv_bt = scipy.linalg.cho_solve(h_factor, bmat.T, check_finite=False)
    hinv_b = scipy.linalg.cho_solve(h_factor, b, check_finite=False)
    dual_hessian = 0.5 * (bmat @ hinv_bt)
    dual_hessian = 0.5 * (dual_hessian + dual_hessian.T)
    lipschitz = float(scipy.linalg.eigvalsh(dual_hessian, subset_by_index=[m - 1, m - 1])[0])
    step = 1.0 / max(lipschitz, 1e-300)

    def dual_value(nu: np.ndarray) -> float:
        # q(nu) = (B'nu - b)' H^{-1} (B'nu - b) / 4 ; dual objective is c0 - q
        r = bmat.T @ nu - b
        return 0.25 * float(r @ scipy.linalg.cho_solve(h_factor, r, check_finite=False))

    def gradient(nu: np.ndarray) -> np.ndarray:
        return 0.5 * (bmat @ (hinv_bt @ nu - hinv_b))

    nu = np.zeros(m)
    q_best = dual_value(nu)
    extrapolated = nu.copy()
    momentum = 1.0
    history = [q_best] if record_history else None
    stall = 0
    converged = False
    iterations = max_iterations
    for iteration in range(1, max_iterations + 1):
        candidate = np.maximum(extrapolated - step * gradient(extrapolated), 0.0)
        q_candidate = dual_value(candidate)
        momentum_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum**2))
        if q_candidate <= q_best:
            # accept and extrapolate from the accepted point
            extrapolated = candidate + ((momentum - 1.0) / momentum_next) * (candidate - nu)
            nu_prev, nu, q_new = nu, candidate, q_candidate
        else:
            # monotone safeguard: keep the best point, restart momentum there
            extrapolated = nu + (momentum / momentum_next) * (candidate - nu)
            q_new = q_best
        momentum = momentum_next
        if record_history:
            history.append(q_new)
        if abs(q_best - q_new) <= tolerance * max(1.0, abs(q_new)):
            stall += 1
            if stall >= 100:
                converged = True
                iterations = iteration
                break
        else:
            stall = 0
        q_best = q_new

    primal = 0.5 * scipy.linalg.cho_solve(h_factor, bmat.T @ nu - b, check_finite=False)
    return ReferenceSolution(
        alpha=primal,
        duals=nu / row_norms,
        objective_value=_objective(qp, primal),
        dual_objective=qp.constant - dual_value(nu),
        iterations=iterations,
        converged=converged,
        objective_history=np.asarray(history) if record_history else None,
    )
