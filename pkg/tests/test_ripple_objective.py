"""Tests for the expected-ripple cost assembly.

Oracles: the explicit stacked-error-matrix trace expression, a Monte Carlo
estimate of the expected squared error, central finite differences for the
gradient, and a hand-derived scalar instance.
"""

import math

import numpy as np
import pytest

from srmcomm import ConfigurationError, KernelBasisSpec, ModelError, coil_basis
from srmcomm.qp_solver import solve_qp
from srmcomm.ripple_objective import (
    ErrorGrid,
    QpProblem,
    assemble_qp,
    constraint_matrix,
    cost_gradient,
    error_distribution,
    eval_cost,
    mc_cost_oracle,
    stacked_error_map,
)
from srmcomm.srm_model import (
    FourierTorqueBasis,
    ProbabilisticSrmModel,
    RadialTorqueBasis,
    torque_gain,
)

TWO_PI = 2.0 * math.pi


def small_instance(seed=0, n_theta_harmonics=3, n_alpha=4, n_points=10):
    """Single-coil instance: 4 commutation coefficients, 6 model parameters."""
    rng = np.random.default_rng(seed)
    spec = KernelBasisSpec.evenly_spaced(
        basis_count=n_alpha, tooth_count=8, coil_count=1, length_scale=0.4, smoothness=2
    )
    basis = FourierTorqueBasis(
        harmonic_count=n_theta_harmonics, tooth_count=8, coil_count=1, phase_offsets=[0.3]
    )
    theta_mean = rng.normal(size=basis.parameter_count)
    a = rng.normal(size=(basis.parameter_count, basis.parameter_count))
    cov = 0.05 * (a @ a.T) + 0.1 * np.eye(basis.parameter_count)
    model = ProbabilisticSrmModel(basis=basis, theta_mean=theta_mean, theta_cov=cov)
    grid = ErrorGrid.uniform(n_points, 8)
    return model, grid, spec


def three_coil_instance(seed=1):
    rng = np.random.default_rng(seed)
    spec = KernelBasisSpec.evenly_spaced(
        basis_count=3, tooth_count=6, coil_count=3, length_scale=0.5, smoothness=1
    )
    basis = RadialTorqueBasis(
        centers=TWO_PI / 6 * np.arange(4) / 4, widths=0.3, tooth_count=6, coil_count=3
    )
    theta_mean = rng.normal(size=basis.parameter_count)
    a = rng.normal(size=(basis.parameter_count, basis.parameter_count))
    cov = 0.02 * (a @ a.T) + 0.05 * np.eye(basis.parameter_count)
    model = ProbabilisticSrmModel(basis=basis, theta_mean=theta_mean, theta_cov=cov)
    grid = ErrorGrid.uniform(7, 6)
    return model, grid, spec


def explicit_cost(alpha, model, grid, spec):
    """Trace-expression oracle built from the explicit stacked error matrix."""
    x = stacked_error_map(alpha, grid, spec, model.basis)
    n = grid.point_count
    v = np.concatenate([-np.ones(n), np.ones(n)])
    mean = x @ model.theta_mean + v
    return float(np.trace(x @ model.theta_cov @ x.T) + mean @ mean)


class TestStackedErrorMap:
    def test_zero_alpha_gives_zero_map(self):
        model, grid, spec = small_instance()
        x = stacked_error_map(np.zeros(8), grid, spec, model.basis)
        np.testing.assert_array_equal(x, np.zeros((20, 6)))

    def test_rows_match_direct_gain_product(self):
        model, grid, spec = three_coil_instance()
        rng = np.random.default_rng(5)
        n_half = spec.coil_count * spec.basis_count
        n = grid.point_count
        for _ in range(20):
            alpha = rng.normal(size=2 * n_half)
            theta = rng.normal(size=model.parameter_count)
            x = stacked_error_map(alpha, grid, spec, model.basis)
            stacked = x @ theta
            for i, phi in enumerate(grid.angles):
                gain = torque_gain(phi, theta, model.basis)
                f_plus = coil_basis(phi, spec) @ alpha[:n_half]
                f_minus = coil_basis(phi, spec) @ alpha[n_half:]
                assert stacked[i] == pytest.approx(gain @ f_plus, rel=1e-11, abs=1e-12)
                assert stacked[n + i] == pytest.approx(gain @ f_minus, rel=1e-11, abs=1e-12)

    def test_scalar_instance_is_identity(self):
        # one coil, one basis function centered at the single grid angle,
        # constant unit bases: the map is just [alpha_plus; alpha_minus]
        spec = KernelBasisSpec(
            center_grid=np.array([0.0]), length_scale=1.0, smoothness=0, tooth_count=1, coil_count=1
        )
        basis = RadialTorqueBasis(centers=np.array([0.0]), widths=1.0, tooth_count=1, coil_count=1)
        grid = ErrorGrid(angles=np.array([0.0]))
        x = stacked_error_map(np.array([2.0, 3.0]), grid, spec, basis)
        np.testing.assert_allclose(x, [[2.0], [3.0]])

    def test_dimension_mismatch(self):
        model, grid, spec = small_instance()
        with pytest.raises(ConfigurationError):
            stacked_error_map(np.zeros(5), grid, spec, model.basis)

    def test_coil_count_mismatch(self):
        model, grid, _ = small_instance()
        three_coil_spec = KernelBasisSpec.evenly_spaced(
            basis_count=4, tooth_count=8, coil_count=3, length_scale=0.4, smoothness=2
        )
        with pytest.raises(ConfigurationError):
            stacked_error_map(np.zeros(24), grid, three_coil_spec, model.basis)
        with pytest.raises(ConfigurationError):
            assemble_qp(model, grid, three_coil_spec)


class TestErrorDistribution:
    def test_zero_alpha(self):
        model, grid, spec = small_instance()
        dist = error_distribution(np.zeros(8), model, grid, spec)
        n = grid.point_count
        np.testing.assert_array_equal(dist.mean, np.concatenate([-np.ones(n), np.ones(n)]))
        np.testing.assert_array_equal(dist.cov, np.zeros((2 * n, 2 * n)))

    def test_zero_covariance_limit(self):
        model, grid, spec = small_instance()
        tiny = ProbabilisticSrmModel(
            basis=model.basis,
            theta_mean=model.theta_mean,
            theta_cov=np.zeros_like(model.theta_cov),
        )
        alpha = np.random.default_rng(3).normal(size=8)
        dist = error_distribution(alpha, tiny, grid, spec)
        np.testing.assert_allclose(dist.cov, 0.0, atol=1e-15)

    def test_monte_carlo_moments(self):
        model, grid, spec = small_instance()
        rng = np.random.default_rng(11)
        alpha = rng.normal(size=8)
        dist = error_distribution(alpha, model, grid, spec)
        noise = rng.standard_normal((100_000, model.parameter_count))
        thetas = model.theta_mean + noise @ model.cov_factor.T
        x = stacked_error_map(alpha, grid, spec, model.basis)
        n = grid.point_count
        errs = thetas @ x.T + np.concatenate([-np.ones(n), np.ones(n)])
        emp_mean = errs.mean(axis=0)
        std_err = np.sqrt(np.diag(dist.cov) / len(errs))
        assert np.all(np.abs(emp_mean - dist.mean) < 3 * std_err + 1e-12)
        emp_cov = np.cov(errs, rowvar=False)
        denom = max(np.linalg.norm(dist.cov), 1e-12)
        assert np.linalg.norm(emp_cov - dist.cov) / denom < 0.05


class TestAssembledCost:
    def test_matches_trace_expression(self):
        for builder in (small_instance, three_coil_instance):
            model, grid, spec = builder()
            qp = assemble_qp(model, grid, spec)
            rng = np.random.default_rng(17)
            for _ in range(20):
                alpha = rng.normal(size=qp.variable_count)
                expected = explicit_cost(alpha, model, grid, spec)
                assert eval_cost(qp, alpha) == pytest.approx(expected, rel=1e-10)

    def test_zero_alpha_cost_is_2n(self):
        model, grid, spec = small_instance()
        qp = assemble_qp(model, grid, spec)
        assert eval_cost(qp, np.zeros(qp.variable_count)) == pytest.approx(2 * grid.point_count)

    def test_pure_variance_penalty(self):
        # zero mean parameters, identity covariance: no linear term, minimum 2N at 0
        model, grid, spec = small_instance()
        zero_mean = ProbabilisticSrmModel(
            basis=model.basis,
            theta_mean=np.zeros(model.parameter_count),
            theta_cov=np.eye(model.parameter_count),
        )
        qp = assemble_qp(zero_mean, grid, spec)
        np.testing.assert_allclose(qp.linear, 0.0, atol=1e-14)
        assert eval_cost(qp, np.zeros(qp.variable_count)) == pytest.approx(2 * grid.point_count)

    def test_scalar_hand_calculus(self):
        # unit bases, theta = 1, variance sigma^2:
        # cost = (1+s2) ap^2 - 2 ap + (1+s2) am^2 + 2 am + 2
        spec = KernelBasisSpec(
            center_grid=np.array([0.0]), length_scale=1.0, smoothness=0, tooth_count=1, coil_count=1
        )
        basis = RadialTorqueBasis(centers=np.array([0.0]), widths=1.0, tooth_count=1, coil_count=1)
        grid = ErrorGrid(angles=np.array([0.0]))
        sigma2 = 0.25
        model = ProbabilisticSrmModel(
            basis=basis, theta_mean=np.array([1.0]), theta_cov=np.array([[sigma2]])
        )
        qp = assemble_qp(model, grid, spec)
        rng = np.random.default_rng(2)
        for ap, am in rng.normal(size=(5, 2)):
            expected = (1 + sigma2) * ap**2 - 2 * ap + (1 + sigma2) * am**2 + 2 * am + 2
            assert eval_cost(qp, np.array([ap, am])) == pytest.approx(expected, rel=1e-12)
        # robust shrinkage: unconstrained optimum of the plus half is 1/(1+sigma2)
        sol = solve_qp(qp)
        assert sol.alpha_star[0] == pytest.approx(1 / (1 + sigma2), abs=1e-6)

    def test_hessian_symmetric_psd(self):
        model, grid, spec = three_coil_instance()
        qp = assemble_qp(model, grid, spec)
        h = qp.hessian
        assert np.max(np.abs(h - h.T)) <= 1e-12 * max(1.0, np.abs(h).max())
        eigs = np.linalg.eigvalsh(h)
        assert eigs.min() >= -1e-9 * np.linalg.norm(h)

    def test_gradient_matches_finite_differences(self):
        model, grid, spec = three_coil_instance()
        qp = assemble_qp(model, grid, spec)
        rng = np.random.default_rng(23)
        h = 1e-6
        for _ in range(10):
            alpha = rng.normal(size=qp.variable_count)
            grad = cost_gradient(qp, alpha)
            fd = np.empty_like(grad)
            for j in range(alpha.size):
                e = np.zeros_like(alpha)
                e[j] = h
                fd[j] = (eval_cost(qp, alpha + e) - eval_cost(qp, alpha - e)) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-6)

    def test_identity_with_error_distribution(self):
        model, grid, spec = small_instance()
        qp = assemble_qp(model, grid, spec)
        rng = np.random.default_rng(29)
        for _ in range(5):
            alpha = rng.normal(size=qp.variable_count)
            dist = error_distribution(alpha, model, grid, spec)
            expected = float(np.trace(dist.cov) + dist.mean @ dist.mean)
            assert eval_cost(qp, alpha) == pytest.approx(expected, rel=1e-10)

    def test_descent_from_zero(self):
        model, grid, spec = small_instance()
        qp = assemble_qp(model, grid, spec)
        alpha = np.zeros(qp.variable_count)
        grad = cost_gradient(qp, alpha)
        assert np.linalg.norm(grad) > 0
        step = np.maximum(alpha - 1e-3 * grad, 0.0)  # projected step keeps grid feasibility
        assert eval_cost(qp, step) < eval_cost(qp, alpha)

    def test_requires_positive_definite_covariance(self):
        model, grid, spec = small_instance()
        singular = ProbabilisticSrmModel(
            basis=model.basis,
            theta_mean=model.theta_mean,
            theta_cov=np.zeros_like(model.theta_cov),
        )
        with pytest.raises(ModelError):
            assemble_qp(singular, grid, spec)

    def test_grid_coarser_than_basis_rejected(self):
        model, _, spec = small_instance()
        with pytest.raises(ConfigurationError):
            assemble_qp(model, ErrorGrid.uniform(3, 8), spec)


class TestConstraintMatrix:
    def test_matches_direct_stacking(self):
        model, grid, spec = three_coil_instance()
        bmat = constraint_matrix(grid, spec)
        rng = np.random.default_rng(31)
        n_half = spec.coil_count * spec.basis_count
        n_c = spec.coil_count
        n = grid.point_count
        for _ in range(5):
            alpha = rng.normal(size=2 * n_half)
            product = bmat @ alpha
            direct = np.empty_like(product)
            for i, phi in enumerate(grid.angles):
                cb = coil_basis(phi, spec)
                direct[i * n_c : (i + 1) * n_c] = cb @ alpha[:n_half]
                direct[(n + i) * n_c : (n + i + 1) * n_c] = cb @ alpha[n_half:]
            assert np.max(np.abs(product - direct)) <= 1e-13

    def test_row_count_at_paper_scale(self):
        spec = KernelBasisSpec.evenly_spaced(
            basis_count=50, tooth_count=131, coil_count=3, length_scale=0.3, smoothness=3
        )
        bmat = constraint_matrix(ErrorGrid.uniform(100, 131), spec)
        assert bmat.shape == (600, 300)

    def test_entries_non_negative(self):
        _, grid, spec = three_coil_instance()
        assert np.all(constraint_matrix(grid, spec) >= 0.0)


class TestMcCostOracle:
    def test_zero_covariance_is_deterministic(self):
        model, grid, spec = small_instance()
        frozen = ProbabilisticSrmModel(
            basis=model.basis,
            theta_mean=model.theta_mean,
            theta_cov=np.zeros_like(model.theta_cov),
        )
        alpha = np.random.default_rng(4).normal(size=8)
        estimate, _ = mc_cost_oracle(frozen, grid, spec, alpha, 100, np.random.default_rng(0))
        assert estimate == pytest.approx(explicit_cost(alpha, frozen, grid, spec), rel=1e-12)

    def test_matches_eval_cost_small_instance(self):
        model, grid, spec = small_instance()
        qp = assemble_qp(model, grid, spec)
        rng = np.random.default_rng(55)
        for _ in range(10):
            alpha = np.abs(rng.normal(size=qp.variable_count))  # componentwise >= 0 is feasible
            estimate, std_err = mc_cost_oracle(model, grid, spec, alpha, 100_000, rng)
            exact = eval_cost(qp, alpha)
            assert abs(estimate - exact) <= max(0.01 * exact, 4 * std_err)

    def test_clt_rate(self):
        model, grid, spec = small_instance()
        alpha = np.abs(np.random.default_rng(6).normal(size=8))
        _, se_small = mc_cost_oracle(model, grid, spec, alpha, 20_000, np.random.default_rng(1))
        _, se_large = mc_cost_oracle(model, grid, spec, alpha, 80_000, np.random.default_rng(2))
        assert se_large == pytest.approx(se_small / 2, rel=0.2)

    def test_requires_samples(self):
        model, grid, spec = small_instance()
        with pytest.raises(ValueError):
            mc_cost_oracle(model, grid, spec, np.zeros(8), 0, np.random.default_rng(0))


class TestStructuralProperties:
    def test_cost_nondecreasing_in_variance_scale(self):
        model, grid, spec = small_instance()
        rng = np.random.default_rng(41)
        alpha = np.abs(rng.normal(size=8))
        values = []
        for lam in (0.1, 0.5, 1.0, 2.0, 4.0):
            qp = assemble_qp(model.with_scaled_cov(lam), grid, spec)
            values.append(eval_cost(qp, alpha))
        assert np.all(np.diff(values) >= -1e-12)

    def test_optimal_value_nondecreasing_in_variance_scale(self):
        model, grid, spec = small_instance()
        values = []
        for lam in (0.1, 1.0, 4.0):
            qp = assemble_qp(model.with_scaled_cov(lam), grid, spec)
            values.append(solve_qp(qp).objective_value)
        assert np.all(np.diff(values) >= -1e-9)

    def test_covariance_scaling_maps_minimizer(self):
        model, grid, spec = small_instance()
        base = solve_qp(assemble_qp(model, grid, spec)).alpha_star
        for c in (0.5, 2.0):
            scaled_model = ProbabilisticSrmModel(
                basis=model.basis,
                theta_mean=c * model.theta_mean,
                theta_cov=c**2 * model.theta_cov,
            )
            scaled = solve_qp(assemble_qp(scaled_model, grid, spec)).alpha_star
            np.testing.assert_allclose(scaled, base / c, rtol=1e-6, atol=1e-9)

    def test_plus_minus_halves_decouple(self):
        model, grid, spec = small_instance()
        qp = assemble_qp(model, grid, spec)
        n_half = qp.variable_count // 2
        joint = solve_qp(qp)
        # off-diagonal coupling blocks are identically zero
        np.testing.assert_array_equal(qp.hessian[:n_half, n_half:], 0.0)
        m_half = qp.constraint_count // 2
        for sign, sl in ((0, slice(None, n_half)), (1, slice(n_half, None))):
            sub = QpProblem(
                hessian=qp.hessian[sl, sl],
                linear=qp.linear[sl],
                constant=qp.constant / 2,
                constraint_matrix=qp.constraint_matrix[
                    sign * m_half : (sign + 1) * m_half, sl
                ],
            )
            half_sol = solve_qp(sub)
            np.testing.assert_allclose(
                half_sol.alpha_star, joint.alpha_star[sl], atol=2e-6
            )
