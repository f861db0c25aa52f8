import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ica_lab.errors import ArgumentError, CapabilityError, FlowError
from ica_lab.maps import FunctionMap, IdentityMap, LinearMap, classify_oct, classify_volume_preserving, plane_rotation
from ica_lab.numerics import fd_divergence, fd_jacobian
from ica_lab.spurious import (
    DensityField, RadialBump, RadialDensity, RadiusRotationProfile, VectorField, angle_table,
    build_compact_divfree, build_xij, bump, flow_map, prop1_build, prop1_rotated_family,
    radius_rotation_generator, radius_rotation_map, scale_by_density, sine_power_integral,
    uniform_cube_density, unit_ball_volume, verify_mpt, weighted_divergence,
)

MIXTURE = DensityField.gaussian_mixture(
    [0.5, 0.3, 0.2], [[0.0, 0.0], [1.5, 0.5], [-1.0, 1.2]],
    [[[1.0, 0.2], [0.2, 0.6]], [[0.5, 0.0], [0.0, 0.8]], [[0.7, -0.1], [-0.1, 0.4]]])


def cube_points(rng, n, d, lo=0.02, hi=0.98):
    return rng.uniform(lo, hi, size=(n, d))


class TestBump:
    def test_support_and_peak(self):
        u = np.array([0.0, 0.5, 0.999, 1.0, 1.5])
        b = bump(u)
        assert b[0] == pytest.approx(1.0) and np.all(b[3:] == 0) and np.all(b[:3] > 0)

    def test_radial_bump_derivatives(self):
        potential = RadialBump(np.full(3, 0.5), 0.3, 2.0)
        pts = 0.5 + 0.15 * np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
        g_fd = fd_jacobian(lambda p: potential.value(p)[:, None] * np.ones((1, 3)), pts)[:, 0, :]
        assert np.max(np.abs(potential.gradient(pts) - g_fd)) < 1e-6
        H_fd = fd_jacobian(potential.gradient, pts)
        assert np.max(np.abs(potential.hessian(pts) - H_fd)) < 1e-5


class TestDensityField:
    def test_gaussian_value(self):
        p = DensityField.gaussian(np.zeros(2))
        assert p.value(np.zeros(2)) == pytest.approx(1 / (2 * math.pi))

    def test_gradient_matches_fd(self):
        pts = np.random.default_rng(1).normal(size=(40, 2))
        g_fd = np.stack([fd_jacobian(lambda q: np.repeat(MIXTURE.value(q)[:, None], 2, 1), pts)[:, 0, k]
                         for k in range(2)], axis=1)
        assert np.max(np.abs(MIXTURE.gradient(pts) - g_fd)) < 1e-6

    def test_sampling_moments(self):
        x = MIXTURE.sample(np.random.default_rng(2), 200_000)
        mean = 0.5 * np.zeros(2) + 0.3 * np.array([1.5, 0.5]) + 0.2 * np.array([-1.0, 1.2])
        assert np.max(np.abs(x.mean(axis=0) - mean)) < 0.01


class TestFields:
    def test_xij_value_at_unit_point(self):
        X = build_xij(DensityField.gaussian(np.zeros(2)), 0, 1)
        v = X.evaluate(0.0, np.array([1.0, 0.0]))
        assert v[0] == pytest.approx(0.0, abs=1e-15)
        assert v[1] == pytest.approx(math.exp(-0.5) / (2 * math.pi), abs=1e-12)
        assert v[1] == pytest.approx(0.09653, abs=1e-5)

    def test_xij_same_index_rejected(self):
        with pytest.raises(ArgumentError):
            build_xij(MIXTURE, 1, 1)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_xij_divergence_free_and_density_preserving(self, seed):
        x = np.random.default_rng(seed).normal(size=(20, 2))
        X = build_xij(MIXTURE, 0, 1)
        assert np.max(np.abs(fd_divergence(X, 0.0, x))) < 1e-7
        assert np.max(np.abs(weighted_divergence(X, MIXTURE, 0.0, x))) < 1e-7

    def test_compact_field_support(self):
        potential = RadialBump(np.full(3, 0.5), 0.3)
        X = build_compact_divfree(potential, 0, 2)
        rng = np.random.default_rng(3)
        far = cube_points(rng, 500, 3, 0.0, 1.0)
        far = far[np.linalg.norm(far - 0.5, axis=1) >= 0.3]
        assert np.all(X.evaluate(0.0, far) == 0.0)
        near = 0.5 + 0.2 * rng.uniform(-1, 1, size=(200, 3)) / math.sqrt(3)
        assert np.max(np.abs(fd_divergence(X, 0.0, near))) < 1e-7

    def test_scaled_field_preserves_density(self):
        potential = RadialBump(np.zeros(2), 1.0)
        p = DensityField.gaussian(np.zeros(2))
        Y = scale_by_density(build_compact_divfree(potential, 0, 1), p)
        x = 0.6 * np.random.default_rng(4).uniform(-1, 1, size=(100, 2))
        assert np.max(np.abs(weighted_divergence(Y, p, 0.0, x))) < 1e-7


class TestFlows:
    def test_time_zero_is_identity(self):
        F = flow_map(build_xij(MIXTURE, 0, 1), 0.0)
        x = np.random.default_rng(5).normal(size=(10, 2))
        assert np.array_equal(F.evaluate(x), x)

    def test_round_trip(self):
        F = flow_map(build_xij(DensityField.gaussian(np.zeros(2)), 0, 1), 1.0)
        x = np.random.default_rng(6).normal(size=(50, 2))
        assert np.max(np.abs(F.inverse(F.evaluate(x)) - x)) < 1e-6

    @pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
    def test_mixture_flow_volume_and_measure(self, t):
        F = flow_map(build_xij(MIXTURE, 0, 1), t, steps=100)
        x = MIXTURE.sample(np.random.default_rng(7), 100)
        assert classify_volume_preserving(F, x, 1e-4).passed
        assert verify_mpt(F, MIXTURE, x, 1e-3).passed

    def test_semigroup(self):
        X = build_xij(MIXTURE, 0, 1)
        x = MIXTURE.sample(np.random.default_rng(8), 30)
        two = flow_map(X, 0.3).evaluate(flow_map(X, 0.4).evaluate(x))
        assert np.max(np.abs(two - flow_map(X, 0.7).evaluate(x))) < 1e-6

    def test_blow_up_is_flow_error(self):
        X = VectorField(lambda t, p: p ** 2, 1)
        with pytest.raises(FlowError) as info, np.errstate(over="ignore", invalid="ignore"):
            flow_map(X, 3.0, steps=300).evaluate(np.array([[1.0]]))
        assert info.value.time is not None


class TestRadiusRotation:
    def profile(self, d=3, omega=2.0):
        return RadiusRotationProfile(center=np.full(d, 0.5), i=0, j=d - 1, omega=omega)

    def test_identity_at_time_zero(self):
        h = radius_rotation_map(self.profile(), 0.0)
        x = cube_points(np.random.default_rng(9), 50, 3)
        assert np.array_equal(h.evaluate(x), x)

    def test_center_fixed(self):
        h = radius_rotation_map(self.profile(), 0.8)
        assert np.allclose(h.evaluate(np.full(3, 0.5)), 0.5, atol=1e-15)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_unit_determinant_and_image(self, d):
        h = radius_rotation_map(self.profile(d), 0.7)
        x = cube_points(np.random.default_rng(d), 200, d, 0.0, 1.0)
        assert np.max(np.abs(np.linalg.det(h.jacobian(x)) - 1)) < 1e-8
        y = h.evaluate(x)
        assert np.all((y >= 0) & (y <= 1))

    def test_analytic_jacobian_matches_fd(self):
        h = radius_rotation_map(self.profile(), 0.6)
        x = cube_points(np.random.default_rng(10), 100, 3, 0.05, 0.95)
        assert np.max(np.abs(h.jacobian(x) - fd_jacobian(h, x))) < 1e-6

    def test_boundary_layer_fixed_exactly(self):
        prof = self.profile()
        h = radius_rotation_map(prof, 1.0)
        x = cube_points(np.random.default_rng(11), 2000, 3, 0.0, 1.0)
        outside = x[np.linalg.norm(x - 0.5, axis=1) >= prof.radius]
        assert len(outside) > 100 and np.array_equal(h.evaluate(outside), outside)

    def test_inverse(self):
        h = radius_rotation_map(self.profile(), 0.9)
        x = cube_points(np.random.default_rng(12), 100, 3)
        assert np.max(np.abs(h.inverse(h.evaluate(x)) - x)) < 1e-12

    def test_profile_matrices_orthogonal(self):
        prof = self.profile()
        for r in np.linspace(0, 0.6, 13):
            R = prof.matrix(0.7, r)
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-14) and abs(np.linalg.det(R) - 1) < 1e-14

    def test_generator_flow_reproduces_map(self):
        prof = self.profile()
        X = radius_rotation_generator(prof)
        x = cube_points(np.random.default_rng(13), 50, 3)
        assert np.max(np.abs(flow_map(X, 0.8, steps=400).evaluate(x)
                             - radius_rotation_map(prof, 0.8).evaluate(x))) < 1e-9

    def test_uniform_measure_preserved(self):
        h = radius_rotation_map(self.profile(), 1.0)
        x = cube_points(np.random.default_rng(14), 100, 3)
        assert verify_mpt(h, uniform_cube_density(3), x, 1e-8).passed


class TestVerifyMpt:
    def test_identity(self):
        p = DensityField.gaussian(np.zeros(2))
        rep = verify_mpt(IdentityMap(2), p, np.random.default_rng(15).normal(size=(20, 2)))
        assert rep.max_residual == 0.0

    def test_scaling_fails(self):
        p = DensityField.gaussian(np.zeros(2))
        rep = verify_mpt(LinearMap(2 * np.eye(2)), p, np.random.default_rng(16).normal(size=(20, 2)))
        assert not rep.passed

    def test_needs_inverse(self):
        with pytest.raises(CapabilityError):
            verify_mpt(FunctionMap(lambda p: p, 2), MIXTURE, np.zeros((1, 2)))


class TestRadialAndProp1:
    def test_ball_volume(self):
        assert unit_ball_volume(2) == pytest.approx(math.pi)
        assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)

    @pytest.mark.parametrize("rad", [RadialDensity.standard_normal(2), RadialDensity.standard_normal(3),
                                     RadialDensity.uniform_annulus(3, 1.0, 2.0)])
    def test_normalization(self, rad):
        from ica_lab.numerics import quad_adaptive
        total = quad_adaptive(lambda r: float(rad.radial_pdf(r)), rad.a, rad.r_max, 1e-12)
        assert abs(total - 1) < 1e-6

    def test_rayleigh_quantile(self):
        rad = RadialDensity.standard_normal(2)
        assert abs(rad.radial_quantile(np.array([0.5]))[0] - math.sqrt(2 * math.log(2))) < 1e-9

    def test_table_matches_reference_quantile(self):
        rad = RadialDensity.standard_normal(3)
        for u in (0.1, 0.5, 0.9):
            assert abs(rad.radial_quantile(np.array([u]))[0] - rad.radial_quantile_reference(u)) < 1e-9

    def test_angle_integrals(self):
        assert sine_power_integral(1, math.pi / 2) == pytest.approx(1.0, abs=1e-12)
        assert angle_table(1).total == pytest.approx(2.0, abs=1e-12)
        assert angle_table(2).total == pytest.approx(math.pi / 2, abs=1e-12)

    def test_non_normalizable_profile(self):
        with pytest.raises(ArgumentError):
            RadialDensity(lambda r: np.ones_like(r), 2)

    @pytest.mark.parametrize("rad", [RadialDensity.standard_normal(2), RadialDensity.standard_normal(3),
                                     RadialDensity.uniform_annulus(2, 0.5, 1.5),
                                     RadialDensity.uniform_annulus(3, 1.0, 2.0)])
    def test_prop1_is_oct_and_pushes_uniform_forward(self, rad):
        f = prop1_build(rad)
        u = cube_points(np.random.default_rng(17), 500, rad.dim)
        assert classify_oct(f, u, 1e-5).passed
        rep = verify_mpt(f, rad, f.evaluate(u), 1e-3, source=uniform_cube_density(rad.dim))
        assert rep.passed

    def test_prop1_jacobian_matches_fd(self):
        f = prop1_build(RadialDensity.standard_normal(3))
        u = cube_points(np.random.default_rng(18), 50, 3, 0.05, 0.95)
        J, Jfd = f.jacobian(u), fd_jacobian(f, u)
        assert np.max(np.abs(J - Jfd) / np.maximum(1, np.abs(J))) < 1e-5

    def test_prop1_inverse(self):
        f = prop1_build(RadialDensity.uniform_annulus(3, 1.0, 2.0))
        u = cube_points(np.random.default_rng(19), 100, 3)
        assert np.max(np.abs(f.inverse(f.evaluate(u)) - u)) < 1e-8

    def test_rotated_family(self):
        rad = RadialDensity.standard_normal(2)
        u = cube_points(np.random.default_rng(20), 200, 2)
        f = prop1_build(rad)
        same = prop1_rotated_family(rad, np.eye(2))
        assert np.max(np.abs(same.evaluate(u) - f.evaluate(u))) < 1e-14
        R = plane_rotation(2, 0, 1, math.pi / 2)
        g = prop1_rotated_family(rad, R)
        x = g.evaluate(u)
        assert np.max(np.abs(rad.value(x) - rad.value(x @ R.T))) < 1e-6
        src = uniform_cube_density(2)
        assert verify_mpt(g, rad, x, 1e-3, source=src).passed
        assert verify_mpt(f, rad, f.evaluate(u), 1e-3, source=src).passed
        assert np.max(np.abs(x - f.evaluate(u))) > 0.1

    def test_rotated_family_rejects_non_orthogonal(self):
        with pytest.raises(ArgumentError):
            prop1_rotated_family(RadialDensity.standard_normal(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
