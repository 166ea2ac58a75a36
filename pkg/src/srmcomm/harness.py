"""Study orchestration: design, Monte Carlo evaluation, sweeps, reporting.

Seeds derive per motor index from the master seed, so results are
independent of execution order and of the worker count, and growing the
motor count keeps all earlier draws unchanged.  Raw per-run CSV rows carry
everything needed to recompute every summary statistic.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closed_loop_sim import (
    ReferenceSpec,
    TabulatedTorqueResponse,
    design_pid,
    discretize_plant,
    simulate_tracking,
)
from .commutation import (
    CommutationParams,
    ConventionalCommutation,
    commutation_profile,
    torque_mismatch_profile,
)
from .config import StudyConfig
from .errors import SolverError
from .kernel_basis import KernelBasisSpec
from .qp_solver import QpStatus, SolverSettings, solve_qp
from .ripple_objective import ErrorGrid, assemble_qp, eval_cost
from .srm_model import (
    ProbabilisticSrmModel,
    load_model,
    make_nominal_model,
    realization_from_noise,
    torque_gain_profile,
)

__all__ = [
    "DesignArtifacts",
    "RunRecord",
    "StudyResult",
    "resolve_model",
    "design_for",
    "conventional_for",
    "run_study",
    "ripple_profiles",
    "write_raw_csv",
    "write_summary_json",
    "write_ripple_csv",
]

#: variance floor applied when designing at zero variance scale so the
#: covariance stays positive definite; far below solver resolution
_LAMBDA_DESIGN_FLOOR = 1e-9

METHODS = ("robust", "conventional")


class _ProfileCommutation:
    """Vectorized commutation adapter used by the torque tabulation."""

    def __init__(self, params: CommutationParams):
        self.params = params

    def profile(self, phis):
        return commutation_profile(self.params, phis)


@dataclass(frozen=True)
class DesignArtifacts:
    """One solved commutation design plus its quality report."""

    variance_scale: float
    params: CommutationParams
    report: dict


@dataclass(frozen=True)
class RunRecord:
    """Metrics of one motor/method closed-loop evaluation."""

    variance_scale: float
    srm_index: int
    method: str
    e_rms_plus: float
    e_rms_minus: float
    e_rms: float
    aborted: bool


@dataclass(frozen=True)
class StudyResult:
    rows: list
    designs: dict
    summary: dict


def resolve_model(config: StudyConfig) -> ProbabilisticSrmModel:
    if config.model_preset is not None:
        return make_nominal_model(config.model_preset)
    return load_model(config.model_file)


def _basis_spec(config: StudyConfig, model: ProbabilisticSrmModel) -> KernelBasisSpec:
    return KernelBasisSpec.evenly_spaced(
        basis_count=config.n_alpha,
        tooth_count=model.basis.tooth_count,
        coil_count=model.basis.coil_count,
        length_scale=config.length_scale,
        smoothness=config.smoothness,
    )


def design_for(
    config: StudyConfig, model: ProbabilisticSrmModel, variance_scale: float = 1.0
):
    """Solve the robust design for the model's covariance scaled by ``variance_scale``.

    Zero variance is floored at a negligible positive scale so the assembly
    precondition (positive definite covariance) holds; the resulting design
    is the plain least-ripple fit.  A non-optimal solver status raises
    ``SolverError``.
    """
    spec = _basis_spec(config, model)
    grid = ErrorGrid.uniform(config.design_grid_points, model.basis.tooth_count)
    scaled = model.with_scaled_cov(max(variance_scale, _LAMBDA_DESIGN_FLOOR))
    qp = assemble_qp(scaled, grid, spec)
    settings = SolverSettings(
        kkt_tolerance=config.qp_kkt_tolerance,
        feasibility_tolerance=config.qp_feasibility_tolerance,
        max_iterations=config.qp_max_iterations,
        record_iterations=True,
    )
    solution = solve_qp(qp, settings)
    if solution.status is not QpStatus.OPTIMAL:
        raise SolverError(
            f"robust design did not reach optimality: status {solution.status.value}"
        )
    params = CommutationParams.from_stacked(solution.alpha_star, spec)

    constraint_values = qp.constraint_matrix @ solution.alpha_star
    fine_phis = (2.0 * math.pi / model.basis.tooth_count) * np.arange(
        10 * config.design_grid_points
    ) / (10 * config.design_grid_points)
    fine_margin = params.feasibility_margin(fine_phis)
    b_plus, b_minus = torque_mismatch_profile(
        params, scaled.theta_mean, model.basis, grid.angles
    )
    report = {
        "variance_scale": variance_scale,
        "objective_value": solution.objective_value,
        "cost_at_zero": eval_cost(qp, np.zeros(qp.variable_count)),
        "status": solution.status.value,
        "iterations": solution.iterations,
        "kkt_stationarity": solution.kkt_residuals.stationarity,
        "kkt_primal_feasibility": solution.kkt_residuals.primal_feasibility,
        "kkt_complementarity": solution.kkt_residuals.complementarity,
        "grid_feasibility_margin": float(constraint_values.min()),
        "fine_grid_feasibility_margin": fine_margin,
        "fine_grid_negativity_warning": bool(fine_margin < -1e-6),
        "nominal_error_plus_max": float(np.abs(b_plus - 1.0).max()),
        "nominal_error_minus_max": float(np.abs(b_minus + 1.0).max()),
        "variables": qp.variable_count,
        "constraints": qp.constraint_count,
    }
    return DesignArtifacts(
        variance_scale=variance_scale,
        params=params,
        report=report,
    ), solution, qp


def conventional_for(config: StudyConfig, model: ProbabilisticSrmModel) -> ConventionalCommutation:
    return ConventionalCommutation.from_model(
        model, overlap_fraction=config.tsf_overlap_fraction
    )


def _reference_spec(config: StudyConfig, model: ProbabilisticSrmModel) -> ReferenceSpec:
    return ReferenceSpec(
        velocity_teeth_per_s=config.reference_velocity_teeth_per_s,
        span_teeth=config.reference_span_teeth,
        hold_s=config.reference_hold_s,
        tooth_count=model.basis.tooth_count,
    )


def _motor_noise(config: StudyConfig, model: ProbabilisticSrmModel, index: int) -> np.ndarray:
    seed = np.random.SeedSequence(config.master_seed, spawn_key=(index,))
    return np.random.default_rng(seed).standard_normal(model.parameter_count)


def _simulate_pair(task: dict) -> list:
    """Worker: evaluate both methods on one motor at one variance scale."""
    config: StudyConfig = task["config"]
    model: ProbabilisticSrmModel = task["model"]
    lam: float = task["variance_scale"]
    index: int = task["srm_index"]
    if index < 0:
        theta = model.theta_mean
    else:
        noise = _motor_noise(config, model, index)
        theta = realization_from_noise(model, noise, lam).theta_true
    plant = discretize_plant(config.sample_step_s)
    pid = design_pid(config.pid_bandwidth_hz, config.sample_step_s)
    ref = _reference_spec(config, model)
    records = []
    evaluators = {
        "robust": _ProfileCommutation(task["robust_params"]),
        "conventional": task["conventional"],
    }
    for method in METHODS:
        torque_map = TabulatedTorqueResponse.from_commutation(
            evaluators[method], theta, model.basis, points=config.table_resolution
        )
        result = simulate_tracking(theta, torque_map, pid, plant, ref, model.basis)
        records.append(
            RunRecord(
                variance_scale=lam,
                srm_index=max(index, 0),
                method=method,
                e_rms_plus=result.e_rms_plus,
                e_rms_minus=result.e_rms_minus,
                e_rms=result.e_rms,
                aborted=result.aborted,
            )
        )
    return records


def run_study(
    config: StudyConfig,
    lambdas=None,
    full_scale: bool = False,
    jobs: int = 1,
) -> StudyResult:
    """Monte Carlo evaluation of robust vs conventional commutation.

    For each variance scale a fresh robust design is solved against the
    scaled covariance; each motor is drawn from its index-derived seed (the
    same standard-normal draw is reused across scales, so realizations
    differ only by the scale factor) and simulated in both directions with
    both methods.  At zero variance all motors coincide with the nominal
    one, so it is simulated once and replicated.
    """
    model = resolve_model(config)
    lambdas = list(dict.fromkeys(config.lambda_list if lambdas is None else lambdas))
    count = config.full_scale_srm_count if full_scale else config.srm_count
    conventional = conventional_for(config, model)

    designs = {}
    tasks = []
    for lam in lambdas:
        artifacts, _, _ = design_for(config, model, lam)
        designs[lam] = artifacts
        indices = [-1] if lam == 0.0 else list(range(count))
        for index in indices:
            tasks.append(
                {
                    "config": config,
                    "model": model,
                    "variance_scale": lam,
                    "srm_index": index,
                    "robust_params": artifacts.params,
                    "conventional": conventional,
                }
            )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_simulate_pair, tasks))
    else:
        chunks = [_simulate_pair(task) for task in tasks]

    rows = []
    for task, chunk in zip(tasks, chunks):
        lam = task["variance_scale"]
        if task["srm_index"] < 0:
            # zero variance: every motor equals the nominal one
            for index in range(count):
                for record in chunk:
                    rows.append(
                        RunRecord(
                            variance_scale=lam,
                            srm_index=index,
                            method=record.method,
                            e_rms_plus=record.e_rms_plus,
                            e_rms_minus=record.e_rms_minus,
                            e_rms=record.e_rms,
                            aborted=record.aborted,
                        )
                    )
        else:
            rows.extend(chunk)
    rows.sort(key=lambda r: (r.variance_scale, r.srm_index, r.method))

    summary = {
        "config": config.to_dict(),
        "srm_count": count,
        "lambdas": [float(v) for v in lambdas],
        "designs": {_lambda_key(lam): designs[lam].report for lam in lambdas},
        "per_lambda": _summarize(rows),
    }
    return StudyResult(rows=rows, designs=designs, summary=summary)


def _lambda_key(lam: float) -> str:
    return repr(float(lam))


def _box_stats(values: np.ndarray) -> dict:
    q1, median, q3 = (float(v) for v in np.percentile(values, [25.0, 50.0, 75.0]))
    return {
        "count": int(values.size),
        "min": float(values.min()),
        "q1": q1,
        "median": median,
        "q3": q3,
        "max": float(values.max()),
    }


def _summarize(rows: list) -> dict:
    lambdas = sorted({row.variance_scale for row in rows})
    out = {}
    for lam in lambdas:
        entry = {}
        medians = {}
        for method in METHODS:
            values = np.array(
                [r.e_rms for r in rows if r.variance_scale == lam and r.method == method and not r.aborted]
            )
            aborted = sum(
                1 for r in rows if r.variance_scale == lam and r.method == method and r.aborted
            )
            stats = _box_stats(values) if values.size else {"count": 0}
            stats["aborted"] = aborted
            entry[method] = stats
            medians[method] = stats.get("median")
        if medians["robust"] is not None and medians["conventional"]:
            entry["improvement_median"] = 1.0 - medians["robust"] / medians["conventional"]
        out[_lambda_key(lam)] = entry
    return out


def write_raw_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "variance_scale",
                "srm_index",
                "method",
                "e_rms_plus_rad",
                "e_rms_minus_rad",
                "e_rms_rad",
                "aborted",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    repr(float(row.variance_scale)),
                    row.srm_index,
                    row.method,
                    repr(float(row.e_rms_plus)),
                    repr(float(row.e_rms_minus)),
                    repr(float(row.e_rms)),
                    int(row.aborted),
                ]
            )


def write_summary_json(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class RippleRow:
    method: str
    srm_index: int  # -1 marks the nominal motor
    sign: int
    angles: np.ndarray
    values: np.ndarray


def ripple_profiles(
    config: StudyConfig, variance_scale: float | None = None, full_scale: bool = False
) -> tuple[list, dict]:
    """Per-motor torque-ratio profiles over one tooth for both methods.

    Returns the profile rows (including the nominal motor marked with index
    -1) plus a small summary comparing the methods' worst deviations.
    """
    model = resolve_model(config)
    lam = config.lambda_list[0] if variance_scale is None else variance_scale
    count = config.full_scale_srm_count if full_scale else config.srm_count
    artifacts, _, _ = design_for(config, model, lam)
    conventional = conventional_for(config, model)
    grid = ErrorGrid.uniform(config.design_grid_points, model.basis.tooth_count)
    phis = grid.angles

    conv_w_plus, conv_w_minus = conventional.profile(phis)

    def profiles_for(theta):
        b_plus_rob, b_minus_rob = torque_mismatch_profile(
            artifacts.params, theta, model.basis, phis
        )
        gains = torque_gain_profile(phis, theta, model.basis)
        b_plus_conv = (gains * conv_w_plus).sum(axis=1)
        b_minus_conv = (gains * conv_w_minus).sum(axis=1)
        return {
            ("robust", 1): b_plus_rob,
            ("robust", -1): b_minus_rob,
            ("conventional", 1): b_plus_conv,
            ("conventional", -1): b_minus_conv,
        }

    rows = []
    deviations = {method: [] for method in METHODS}
    motor_thetas = [(-1, model.theta_mean)]
    for index in range(count):
        noise = _motor_noise(config, model, index)
        motor_thetas.append((index, realization_from_noise(model, noise, lam).theta_true))
    for index, theta in motor_thetas:
        for (method, sign), values in profiles_for(theta).items():
            rows.append(
                RippleRow(method=method, srm_index=index, sign=sign, angles=phis, values=values)
            )
            if index >= 0:
                deviations[method].append(float(np.abs(values - sign).max()))
    # deviations appended as (plus, minus) pairs per motor per method
    summary = {
        "variance_scale": lam,
        "srm_count": count,
        "max_deviation_median": {
            method: float(np.median(np.asarray(devs).reshape(count, 2).max(axis=1)))
            for method, devs in deviations.items()
        },
    }
    return rows, summary


def write_ripple_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["method", "srm_index", "sign", "point_index", "phi_rad", "torque_ratio"]
        )
        for row in rows:
            for k in range(row.angles.size):
                writer.writerow(
                    [
                        row.method,
                        row.srm_index,
                        row.sign,
                        k,
                        repr(float(row.angles[k])),
                        repr(float(row.values[k])),
                    ]
                )
