import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ica_lab.errors import ArgumentError, CapabilityError, DomainError, SingularityError
from ica_lab.maps import (
    ConcatConformal2D, CoordwiseReparam, FunctionMap, IdentityMap, LinearMap, MoebiusMap,
    PolarMap, check_orthogonal, classify_conformal, classify_oct, classify_volume_preserving,
    compose, compose_all, moebius_eval_and_jacobian, plane_rotation, polar_abs_det,
    random_rotation,
)
from ica_lab.numerics import fd_jacobian

SHEAR = LinearMap(np.array([[1.0, 1.0], [0.0, 1.0]]))


def moebius(d, rng, epsilon=2):
    return MoebiusMap(b=rng.normal(size=d), a=rng.normal(size=d), alpha=rng.uniform(0.5, 2),
                      A=random_rotation(d, rng, proper=False), epsilon=epsilon)


def points_away_from(center, rng, n=100, d=None):
    d = center.size if d is None else d
    pts = center + rng.normal(size=(n, d))
    keep = np.linalg.norm(pts - center, axis=1) > 0.2
    return pts[keep]


def polar_points(d, rng, n=100):
    m = PolarMap(d)
    lo, hi = m.domain.lo, m.domain.hi
    return m, lo + (hi - lo) * rng.uniform(0.02, 0.98, size=(n, d))


def monotone_reparam(d):
    funcs = [lambda x, k=k: x + 0.3 * math.tanh(k + 1) * np.tanh(x) + 0.1 * x ** 3 for k in range(d)]
    derivs = [lambda x, k=k: 1 + 0.3 * math.tanh(k + 1) / np.cosh(x) ** 2 + 0.3 * x ** 2 for k in range(d)]
    return CoordwiseReparam(funcs, derivs, perm=np.roll(np.arange(d), 1), signs=[-1] + [1] * (d - 1))


class TestMoebius:
    def test_affine_identity(self):
        m = MoebiusMap(dim=3, epsilon=0)
        y, J = moebius_eval_and_jacobian(m, np.array([3.0, -1.0, 2.0]))
        assert np.allclose(y, [3, -1, 2]) and np.allclose(J, np.eye(3))

    def test_inversion_value(self):
        y, _ = moebius_eval_and_jacobian(MoebiusMap(dim=3), np.array([2.0, 0.0, 0.0]))
        assert np.allclose(y, [0.5, 0.0, 0.0], atol=1e-15)

    def test_inversion_determinant(self):
        _, J = moebius_eval_and_jacobian(MoebiusMap(dim=3), np.array([2.0, 0.0, 0.0]))
        assert abs(abs(np.linalg.det(J)) - 1 / 64) < 1e-15

    def test_logdet_matches_formula(self):
        rng = np.random.default_rng(0)
        m = moebius(3, rng)
        pts = points_away_from(m.a, rng)
        ref = np.log(np.abs(np.linalg.det(m.jacobian(pts))))
        assert np.max(np.abs(m.log_abs_det_jacobian(pts) - ref)) < 1e-10

    def test_singularity_inside_exclusion_ball(self):
        m = MoebiusMap(dim=2)
        with pytest.raises(SingularityError):
            m.evaluate(np.array([1e-8, 0.0]))

    def test_rejects_non_orthogonal(self):
        with pytest.raises(ArgumentError):
            MoebiusMap(A=np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_bad_parameters(self):
        with pytest.raises(ArgumentError):
            MoebiusMap(dim=2, alpha=0.0)
        with pytest.raises(ArgumentError):
            MoebiusMap(dim=2, epsilon=1)

    @pytest.mark.parametrize("eps", [0, 2])
    def test_inverse_round_trip(self, eps):
        rng = np.random.default_rng(1)
        m = moebius(3, rng, eps)
        pts = points_away_from(m.a, rng)
        assert np.max(np.abs(m.inverse(m.evaluate(pts)) - pts)) < 1e-8

    def test_involution(self):
        m = MoebiusMap(dim=3)
        twice = compose(m, m)
        x = np.array([2.0, 0.0, 0.0])
        assert np.allclose(m.evaluate(x), [0.5, 0, 0]) and np.allclose(twice.evaluate(x), x)


class TestClassifiers:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_moebius_conformal_and_oct(self, d):
        rng = np.random.default_rng(d)
        m = moebius(d, rng)
        pts = points_away_from(m.a, rng)
        assert classify_conformal(m, pts).max_residual < 1e-6
        assert classify_oct(m, pts).passed

    def test_shear_fails_both(self):
        pts = np.random.default_rng(0).normal(size=(20, 2))
        conf, oct_ = classify_conformal(SHEAR, pts), classify_oct(SHEAR, pts)
        assert not conf.passed and not oct_.passed
        # J^T J = [[1, 1], [1, 2]]: cosine between columns is 1/sqrt(2)
        assert abs(oct_.max_residual - 1 / math.sqrt(2)) < 1e-12

    def test_polar_is_oct_but_not_conformal(self):
        m = PolarMap(2)
        x = np.array([[2.0, 1.0]])
        assert classify_oct(m, x).passed
        assert not classify_conformal(m, x).passed

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_polar_oct(self, d):
        m, pts = polar_points(d, np.random.default_rng(d))
        assert classify_oct(m, pts).passed

    def test_concatenated_moebius(self):
        rng = np.random.default_rng(5)
        m = ConcatConformal2D([moebius(2, rng), moebius(2, rng, epsilon=0)])
        first = points_away_from(m.maps[0].a, rng, 200)[:100]
        pts = np.concatenate([first, rng.normal(size=(len(first), 2))], axis=1)
        assert m.dim == 4 and classify_oct(m, pts).passed

    def test_volume_preserving_examples(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(30, 3))
        assert classify_volume_preserving(LinearMap(random_rotation(3, rng)), pts).passed
        scale = classify_volume_preserving(LinearMap(2 * np.eye(2)), pts[:, :2])
        assert not scale.passed and abs(scale.max_residual - 3) < 1e-12

    def test_rotation_after_reparam_is_oct(self):
        rng = np.random.default_rng(7)
        f = compose(LinearMap(random_rotation(3, rng)), monotone_reparam(3))
        assert classify_oct(f, rng.normal(size=(50, 3))).passed

    def test_empty_points_rejected(self):
        for fn in (classify_conformal, classify_oct, classify_volume_preserving):
            with pytest.raises(ArgumentError):
                fn(SHEAR, np.empty((0, 2)))

    def test_report_contents(self):
        rep = classify_oct(SHEAR, np.zeros((3, 2)))
        d = rep.to_dict()
        assert d["kind"] == "oct" and len(d["worst"]) == 3 and d["passed"] is False

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 4))
    def test_conformal_implies_oct(self, seed, d):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(d, d))
        f = compose(LinearMap(A), moebius(d, rng))
        pts = points_away_from(f.inner.a, rng, 30)
        if classify_conformal(f, pts).passed:
            assert classify_oct(f, pts).passed

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 4))
    def test_moebius_composition_stays_conformal(self, seed, d):
        rng = np.random.default_rng(seed)
        f, g = moebius(d, rng), moebius(d, rng)
        pts = points_away_from(g.a, rng, 60)
        pts = pts[np.linalg.norm(g.evaluate(pts) - f.a, axis=1) > 0.2]
        assert classify_conformal(compose(f, g), pts, tol=1e-6).passed

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 4))
    def test_right_composition_with_reparam_keeps_oct(self, seed, d):
        rng = np.random.default_rng(seed)
        f = moebius(d, rng)
        h = monotone_reparam(d)
        pts = rng.uniform(-1, 1, size=(40, d))
        pts = pts[np.linalg.norm(h.evaluate(pts) - f.a, axis=1) > 0.2]
        assert classify_oct(compose(f, h), pts).passed


class TestAnalyticJacobians:
    def _compare(self, f, pts):
        J, Jfd = f.jacobian(pts), fd_jacobian(f, pts)
        scale = np.maximum(1.0, np.abs(J))
        assert np.max(np.abs(J - Jfd) / scale) < 1e-5

    @pytest.mark.parametrize("eps", [0, 2])
    def test_moebius(self, eps):
        rng = np.random.default_rng(10 + eps)
        m = moebius(3, rng, eps)
        self._compare(m, points_away_from(m.a, rng))

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_polar(self, d):
        m, pts = polar_points(d, np.random.default_rng(20 + d))
        self._compare(m, pts)

    def test_coordwise(self):
        self._compare(monotone_reparam(3), np.random.default_rng(30).normal(size=(100, 3)))

    def test_concat(self):
        rng = np.random.default_rng(31)
        m = ConcatConformal2D([MoebiusMap(a=np.array([3.0, 3.0])), MoebiusMap(dim=2, epsilon=0, alpha=2.0)])
        self._compare(m, rng.normal(size=(100, 4)))


class TestPolar:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_determinant_formula(self, d):
        m, pts = polar_points(d, np.random.default_rng(40 + d))
        det = np.abs(np.linalg.det(m.jacobian(pts)))
        ref = pts[:, 0] ** (d - 1)
        for k in range(1, d - 1):
            ref = ref * np.sin(pts[:, k + 1]) ** k
        assert np.max(np.abs(det - ref)) < 1e-8
        assert np.max(np.abs(polar_abs_det(pts) - ref)) < 1e-12

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_inverse_round_trip(self, d):
        m, pts = polar_points(d, np.random.default_rng(50 + d))
        assert np.max(np.abs(m.inverse(m.evaluate(pts)) - pts)) < 1e-8

    def test_domain_enforced(self):
        with pytest.raises(DomainError):
            PolarMap(2).evaluate(np.array([3.0, 1.0]))


class TestComposition:
    def test_identity_right(self):
        rng = np.random.default_rng(60)
        f = moebius(3, rng)
        pts = points_away_from(f.a, rng)
        g = compose(f, IdentityMap(3))
        assert np.array_equal(g.evaluate(pts), f.evaluate(pts))
        assert np.allclose(g.jacobian(pts), f.jacobian(pts))

    def test_inverse_and_logdet(self):
        rng = np.random.default_rng(61)
        A, B = LinearMap(rng.normal(size=(2, 2)) + 2 * np.eye(2)), MoebiusMap(a=np.array([5.0, 5.0]))
        f = compose_all([A, B])
        pts = rng.normal(size=(30, 2))
        assert np.max(np.abs(f.inverse(f.evaluate(pts)) - pts)) < 1e-8
        ref = A.log_abs_det_jacobian(pts) + B.log_abs_det_jacobian(A.evaluate(pts))
        assert np.max(np.abs(f.log_abs_det_jacobian(pts) - ref)) < 1e-10

    def test_missing_inverse(self):
        f = compose(FunctionMap(lambda p: p ** 3, 2), IdentityMap(2))
        with pytest.raises(CapabilityError):
            f.inverse(np.zeros(2))

    def test_empty_composition(self):
        with pytest.raises(ArgumentError):
            compose_all([])


def test_orthogonality_validation():
    assert check_orthogonal(plane_rotation(3, 0, 2, 0.7)).shape == (3, 3)
    with pytest.raises(ArgumentError):
        check_orthogonal(np.array([[1.0, 1e-9], [0.0, 1.0]]))


def test_random_rotation_proper():
    rng = np.random.default_rng(70)
    for d in (2, 3, 5):
        R = random_rotation(d, rng)
        assert abs(np.linalg.det(R) - 1) < 1e-12 and np.allclose(R.T @ R, np.eye(d))


def test_coordwise_rejects_decreasing():
    h = CoordwiseReparam([lambda x: -x], [lambda x: -np.ones_like(x)])
    with pytest.raises(DomainError):
        h.jacobian(np.array([0.0]))
