"""Tests for designed commutation evaluation and the conventional benchmark."""

import math
import warnings

import numpy as np
import pytest

from srmcomm import ConfigurationError, KernelBasisSpec
from srmcomm.commutation import (
    CommutationParams,
    ConventionalCommutation,
    SaturationLimits,
    TsfSpec,
    commutation_profile,
    eval_commutation,
    eval_conventional,
    export_lookup_table,
    realized_torque,
    torque_mismatch_profile,
    torque_shares,
)
from srmcomm.kernel_basis import coil_basis
from srmcomm.qp_solver import solve_qp
from srmcomm.ripple_objective import ErrorGrid, assemble_qp
from srmcomm.srm_model import (
    FourierTorqueBasis,
    make_nominal_model,
    sample_srm,
    torque_gain_profile,
)

TWO_PI = 2.0 * math.pi


@pytest.fixture(scope="module")
def sine_design():
    """Robust design for the three-sinusoid model at moderate resolution."""
    model = make_nominal_model("sine-3coil")
    spec = KernelBasisSpec.evenly_spaced(
        basis_count=20, tooth_count=131, coil_count=3, length_scale=0.3, smoothness=3
    )
    grid = ErrorGrid.uniform(40, 131)
    solution = solve_qp(assemble_qp(model, grid, spec))
    params = CommutationParams.from_stacked(solution.alpha_star, spec)
    return model, params, grid


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # coarse test design dips between grid points
class TestEvalCommutation:
    def test_zero_setpoint(self, sine_design):
        _, params, _ = sine_design
        np.testing.assert_array_equal(eval_commutation(0.01, 0.0, params), np.zeros(3))

    def test_linear_in_setpoint(self, sine_design):
        _, params, _ = sine_design
        u1 = eval_commutation(0.013, 1.5, params)
        u2 = eval_commutation(0.013, 3.0, params)
        np.testing.assert_allclose(u2, 2.0 * u1, rtol=1e-12)

    def test_periodicity(self, sine_design):
        _, params, _ = sine_design
        pitch = TWO_PI / 131
        u1 = eval_commutation(0.007, 2.0, params)
        u2 = eval_commutation(0.007 + pitch, 2.0, params)
        np.testing.assert_allclose(u1, u2, atol=1e-12)

    def test_non_negative_both_signs(self, sine_design):
        _, params, _ = sine_design
        rng = np.random.default_rng(3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for phi in rng.uniform(0, 1, size=50):
                for t_star in (-2.0, -0.5, 0.5, 2.0):
                    assert eval_commutation(phi, t_star, params).min() >= 0.0

    def test_clamp_warning_on_negative_design(self):
        spec = KernelBasisSpec.evenly_spaced(basis_count=4, tooth_count=8, coil_count=1)
        params = CommutationParams(
            alpha_plus=np.array([1.0, -2.0, 1.0, -2.0]),
            alpha_minus=np.zeros(4),
            basis=spec,
        )
        with pytest.warns(RuntimeWarning):
            eval_commutation(0.3, 1.0, params)

    def test_matches_basis_product(self, sine_design):
        _, params, _ = sine_design
        phi, t_star = 0.021, 1.7
        expected = (coil_basis(phi, params.basis) @ params.alpha_plus) * t_star
        np.testing.assert_allclose(
            eval_commutation(phi, t_star, params), np.maximum(expected, 0.0), rtol=1e-12
        )


class TestRealizedTorque:
    def test_zero_currents(self):
        basis = FourierTorqueBasis(harmonic_count=1, tooth_count=4, coil_count=1, phase_offsets=[0.0])
        assert realized_torque(0.3, np.zeros(1), np.array([1.0, 0.0]), basis) == 0.0

    def test_sine_peak(self):
        basis = FourierTorqueBasis(harmonic_count=1, tooth_count=4, coil_count=1, phase_offsets=[0.0])
        theta = np.array([1.0, 0.0])
        torque = realized_torque(math.pi / 8, np.array([1.0]), theta, basis)
        assert torque == pytest.approx(1.0, rel=1e-12)

    def test_designed_function_tracks_setpoint(self, sine_design):
        model, params, grid = sine_design
        for phi in grid.angles[::7]:
            u = eval_commutation(phi, 1.0, params)
            torque = realized_torque(phi, u, model.theta_mean, model.basis)
            assert torque == pytest.approx(1.0, abs=0.05)


class TestMismatchProfile:
    def test_nominal_parameters_near_unity(self, sine_design):
        model, params, grid = sine_design
        b_plus, b_minus = torque_mismatch_profile(
            params, model.theta_mean, model.basis, grid.angles
        )
        assert np.abs(b_plus - 1).max() < 0.05
        assert np.abs(b_minus + 1).max() < 0.05

    def test_zero_coefficients(self, sine_design):
        model, params, grid = sine_design
        zero = CommutationParams(
            alpha_plus=np.zeros_like(params.alpha_plus),
            alpha_minus=np.zeros_like(params.alpha_minus),
            basis=params.basis,
        )
        b_plus, b_minus = torque_mismatch_profile(zero, model.theta_mean, model.basis, grid.angles)
        np.testing.assert_array_equal(b_plus, 0.0)
        np.testing.assert_array_equal(b_minus, 0.0)

    def test_periodic_over_teeth(self, sine_design):
        model, params, _ = sine_design
        phis = np.linspace(0, TWO_PI / 131, 13, endpoint=False)
        base = torque_mismatch_profile(params, model.theta_mean, model.basis, phis)
        shifted = torque_mismatch_profile(
            params, model.theta_mean, model.basis, phis + 3 * TWO_PI / 131
        )
        np.testing.assert_allclose(base[0], shifted[0], atol=1e-12)
        np.testing.assert_allclose(base[1], shifted[1], atol=1e-12)

    def test_perturbed_motor_shows_ripple(self, sine_design):
        model, params, grid = sine_design
        real = sample_srm(model, 1.0, np.random.default_rng(8))
        b_plus, _ = torque_mismatch_profile(params, real.theta_true, model.basis, grid.angles)
        assert np.abs(b_plus - 1).max() > 0.005  # visibly nonzero ripple off-nominal


class TestTorqueShares:
    def test_partition_of_unity(self):
        spec = TsfSpec(overlap_fraction=0.15, coil_count=3, tooth_count=131)
        rng = np.random.default_rng(12)
        for phi in rng.uniform(0, 1, size=1000):
            shares = torque_shares(phi, spec)
            assert shares.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(shares >= 0.0) and np.all(shares <= 1.0)

    def test_center_of_sector_full_share(self):
        spec = TsfSpec(overlap_fraction=0.1, coil_count=3, tooth_count=7)
        for c, center in enumerate(spec.centers):
            phi = center / 7  # tooth phase back to rotor angle
            shares = torque_shares(phi, spec)
            assert shares[c] == pytest.approx(1.0, abs=1e-12)
            assert shares.sum() == pytest.approx(1.0, abs=1e-12)

    def test_overlap_midpoint_half_share(self):
        spec = TsfSpec(overlap_fraction=0.2, coil_count=2, tooth_count=5)
        centers = spec.centers
        boundary = 0.5 * (centers[0] + centers[1])
        shares = torque_shares(boundary / 5, spec)
        np.testing.assert_allclose(shares, [0.5, 0.5], atol=1e-12)

    def test_single_coil_always_one(self):
        spec = TsfSpec(overlap_fraction=0.3, coil_count=1, tooth_count=3)
        np.testing.assert_array_equal(torque_shares(0.4, spec), [1.0])

    def test_overlap_validation(self):
        with pytest.raises(ConfigurationError):
            TsfSpec(overlap_fraction=0.0, coil_count=3, tooth_count=4)
        with pytest.raises(ConfigurationError):
            TsfSpec(overlap_fraction=0.6, coil_count=3, tooth_count=4)
        # ramps wider than the smallest sector gap cannot tile
        wide = TsfSpec(overlap_fraction=0.45, coil_count=3, tooth_count=4)
        with pytest.raises(ConfigurationError):
            torque_shares(0.1, wide)


@pytest.fixture(scope="module")
def sine_conv():
    model = make_nominal_model("sine-3coil")
    return model, ConventionalCommutation.from_model(model)


class TestConventionalCommutation:

    def test_zero_setpoint(self, sine_conv):
        _, conv = sine_conv
        np.testing.assert_array_equal(conv(0.01, 0.0), np.zeros(3))

    def test_nominal_inversion_exact_where_unsaturated(self, sine_conv):
        model, conv = sine_conv
        pitch = TWO_PI / 131
        phis = pitch * np.arange(512) / 512
        w_plus, w_minus = conv.profile(phis)
        gains = torque_gain_profile(phis, model.theta_mean, model.basis)
        b_plus = (gains * w_plus).sum(axis=1)
        b_minus = (gains * w_minus).sum(axis=1)
        # saturation only nibbles at ramp tails; nominal inversion within 0.5%
        assert np.abs(b_plus - 1).max() < 5e-3
        assert np.abs(b_minus + 1).max() < 5e-3
        # and is exact deep inside each sector
        assert np.abs(b_plus - 1).min() < 1e-12

    def test_single_active_coil_exact(self, sine_conv):
        model, conv = sine_conv
        # sector center of coil 0: full share, gain within saturation band
        phi = float(conv.centers_plus[0] / 131)
        u = conv(phi, 1.3)
        gains = torque_gain_profile([phi], model.theta_mean, model.basis)[0]
        assert gains @ u == pytest.approx(1.3, rel=1e-9)

    def test_output_non_negative_everywhere(self, sine_conv):
        _, conv = sine_conv
        rng = np.random.default_rng(5)
        for phi in rng.uniform(0, 1, size=200):
            for t_star in (-2.0, 2.0):
                assert conv(phi, t_star).min() >= 0.0

    def test_saturation_caps_near_zero_gain(self):
        # force a sector center onto a gain zero crossing: inverse explodes,
        # the cap keeps the command bounded
        model = make_nominal_model("sine-3coil")
        tsf = TsfSpec(
            overlap_fraction=0.15,
            coil_count=3,
            tooth_count=131,
            sector_centers=np.array([0.0, TWO_PI / 3, 2 * TWO_PI / 3]),
        )
        sat = SaturationLimits(x_min=0.0, x_max=10.0)
        conv = ConventionalCommutation(
            theta_nominal=model.theta_mean, basis=model.basis, tsf=tsf, saturation=sat
        )
        rng = np.random.default_rng(6)
        for phi in rng.uniform(0, 1, size=100):
            assert conv(phi, 1.0).max() <= 10.0 + 1e-12

    def test_functional_wrapper_matches_class(self, sine_conv):
        model, conv = sine_conv
        u_class = conv(0.005, 2.0)
        u_fn = eval_conventional(
            0.005, 2.0, model.theta_mean, model.basis, conv.tsf, conv.saturation
        )
        np.testing.assert_allclose(u_fn, u_class, rtol=1e-14)

    def test_largest_current_coil_invariant_under_scaling(self, sine_conv):
        _, conv = sine_conv
        rng = np.random.default_rng(7)
        for phi in rng.uniform(0, 0.2, size=50):
            small = conv(phi, 0.5)
            large = conv(phi, 5.0)
            if small.max() > 0:
                assert np.argmax(small) == np.argmax(large)


class TestSaturationLimits:
    def test_clip_band(self):
        sat = SaturationLimits(x_min=0.0, x_max=2.0)
        np.testing.assert_array_equal(sat.apply(np.array([-1.0, 1.0, 3.0])), [0.0, 1.0, 2.0])

    def test_invalid_band(self):
        with pytest.raises(ConfigurationError):
            SaturationLimits(x_min=1.0, x_max=0.0)


class TestSerialization:
    def test_params_roundtrip(self, sine_design, tmp_path):
        _, params, _ = sine_design
        path = tmp_path / "params.json"
        params.save(path)
        restored = CommutationParams.load(path)
        np.testing.assert_allclose(restored.alpha_plus, params.alpha_plus)
        np.testing.assert_allclose(restored.alpha_minus, params.alpha_minus)
        phis = np.linspace(0, 0.04, 9)
        np.testing.assert_allclose(
            commutation_profile(restored, phis)[0], commutation_profile(params, phis)[0]
        )

    def test_lookup_table_export(self, sine_design, tmp_path):
        _, params, _ = sine_design
        path = tmp_path / "table.csv"
        export_lookup_table(params, path, points=64)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",")[0] == "phi_rad"
        assert len(lines) == 65
        first = [float(v) for v in lines[1].split(",")]
        assert len(first) == 1 + 2 * 3
