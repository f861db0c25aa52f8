"""Acceptance criteria at their stated tolerances, one result line each.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed in the "acceptance criteria" section at the end of the session.
"""

import itertools
import math
import time

import numpy as np
import pytest

from ica_lab.deformation import (
    boundary_points, oct_constraint_residual, resonance_alpha, resonance_scan,
)
from ica_lab.flows.model import FlowModel, loss_and_grad, objective_terms
from ica_lab.flows.scenarios import DriftScenario
from ica_lab.flows.trainer import TrainConfig, run_arms
from ica_lab.maps import (
    IdentityMap, LinearMap, MoebiusMap, PolarMap, classify_conformal, classify_oct,
    classify_volume_preserving,
)
from ica_lab.metrics import c_oct, c_oct_pointwise, forward_kl, gaussian_kl, gaussian_logpdf, gaussian_sampler
from ica_lab.numerics import halton
from ica_lab.pipelines import distinct_rotations
from ica_lab.spurious import (
    DensityField, RadialDensity, RadiusRotationProfile, VectorField, build_xij, flow_map, prop1_build,
    prop1_rotated_family, radius_rotation_generator, radius_rotation_map, uniform_cube_density,
    verify_mpt,
)

SHEAR = np.array([[1.0, 1.0], [0.0, 1.0]])
DRIFT_SEEDS = range(10)
DRIFT_BUDGET_S = 15 * 60
_drift_seconds = {}


@pytest.mark.criterion(1, "jacobian classes")
def test_jacobian_classes(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for d in (2, 3, 4):
        f = MoebiusMap(a=np.full(d, 3.0), alpha=1.5, A=np.linalg.qr(rng.normal(size=(d, d)))[0])
        pts = rng.uniform(size=(500, d))
        for rep in (classify_conformal(f, pts, 1e-6), classify_oct(f, pts, 1e-6)):
            assert rep.passed
            worst = max(worst, rep.max_residual)
        p = PolarMap(d)
        lo, hi = p.domain.bounding_box()
        q = lo + (hi - lo) * rng.uniform(size=(500, d))
        assert classify_oct(p, q, 1e-6).passed
        expected = q[:, 0] ** (d - 1) * np.prod(
            [np.sin(q[:, k + 1]) ** k for k in range(1, d - 1)], axis=0)
        assert np.max(np.abs(np.exp(p.log_abs_det_jacobian(q)) - expected)) < 1e-8
        assert np.max(np.abs(np.abs(np.linalg.det(p.jacobian(q))) - expected)) < 1e-8
    shear = LinearMap(SHEAR)
    pts2 = rng.uniform(size=(500, 2))
    assert not classify_conformal(shear, pts2, 1e-6).passed
    assert not classify_oct(shear, pts2, 1e-6).passed
    elapsed = time.perf_counter() - t0
    assert elapsed < 10
    criterion(f"worst Moebius residual {worst:.1e}, {elapsed:.1f}s")


@pytest.mark.criterion(2, "spurious solutions")
def test_spurious_solutions(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    eps = 0.05
    det_gap = 0.0
    for d in (2, 3, 4):
        prof = RadiusRotationProfile(center=np.full(d, 0.5), i=0, j=d - 1, omega=2.0)
        for t in (0.25, 0.5, 1.0):
            h = radius_rotation_map(prof, t)
            x = rng.uniform(size=(500, d))
            det_gap = max(det_gap, float(np.max(np.abs(np.linalg.det(h.jacobian(x)) - 1))))
            shell = boundary_points(d, eps, 500, rng)
            assert np.array_equal(h.evaluate(shell), shell)
    assert det_gap < 1e-8
    p = DensityField.gaussian_mixture(
        [0.5, 0.3, 0.2], [[0.0, 0.0], [1.5, 0.5], [-1.0, 1.2]],
        [[[1.0, 0.2], [0.2, 0.6]], [[0.5, 0.0], [0.0, 0.8]], [[0.7, -0.1], [-0.1, 0.4]]])
    X = build_xij(p, 0, 1)
    x = p.sample(rng, 200)
    worst_vp = worst_mpt = 0.0
    for t in (0.25, 0.5, 1.0):
        F = flow_map(X, t, steps=100)
        vp, mpt = classify_volume_preserving(F, x, 1e-4), verify_mpt(F, p, x, 1e-3)
        assert vp.passed and mpt.passed
        worst_vp, worst_mpt = max(worst_vp, vp.max_residual), max(worst_mpt, mpt.max_residual)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60
    criterion(f"|det-1| {det_gap:.1e}, vp {worst_vp:.1e}, mpt {worst_mpt:.1e}, {elapsed:.1f}s")


@pytest.mark.criterion(3, "non-identifiable radial family")
def test_radial_family(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_oct = worst_density = 0.0
    min_gap = math.inf
    for d in (2, 3):
        u = rng.uniform(0.01, 0.99, size=(500, d))
        src = uniform_cube_density(d)
        for rad in (RadialDensity.standard_normal(d), RadialDensity.uniform_annulus(d, 1.0, 2.0)):
            f = prop1_build(rad)
            oct_rep = classify_oct(f, u, 1e-5)
            dens = verify_mpt(f, rad, f.evaluate(u), 1e-3, source=src)
            assert oct_rep.passed and dens.passed
            worst_oct = max(worst_oct, oct_rep.max_residual)
            worst_density = max(worst_density, dens.max_residual)
            family = [prop1_rotated_family(rad, R) for R in distinct_rotations(d, 5, rng)]
            for g in family:
                assert verify_mpt(g, rad, g.evaluate(u), 1e-3, source=src).passed
            axis = np.linspace(0.02, 0.98, 7)
            grid = np.array(list(itertools.product(axis, repeat=d)))
            images = [g.evaluate(grid) for g in family]
            gap = min(np.max(np.abs(a - b)) for a, b in itertools.combinations(images, 2))
            assert gap > 0.1
            min_gap = min(min_gap, gap)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60
    criterion(f"oct {worst_oct:.1e}, density {worst_density:.1e}, min sup gap {min_gap:.2f}, "
              f"{elapsed:.1f}s")


@pytest.mark.criterion(4, "deformations")
def test_deformations(criterion):
    t0 = time.perf_counter()
    pts = 0.1 + 0.8 * halton(200, 3)
    zero = VectorField(lambda t, p: np.zeros_like(p), 3)
    rep = oct_constraint_residual(IdentityMap(3), zero, pts)
    assert rep.first_order_max == 0.0 and rep.divergence_max == 0.0
    W = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    rigid = oct_constraint_residual(IdentityMap(3), VectorField(lambda t, p: (p - 0.5) @ W.T, 3), pts)
    assert rigid.first_order_max < 1e-6 and rigid.divergence_max < 1e-7
    prof = RadiusRotationProfile(center=np.full(3, 0.5), i=0, j=1, omega=1.0)
    bent = oct_constraint_residual(LinearMap(np.diag([1.0, 2.0, 3.0])), radius_rotation_generator(prof), pts)
    assert bent.first_order_max > 1e-2
    rng = np.random.default_rng(4)
    hits = sum(len(resonance_scan(rng.uniform(0.5, 2.0, 3) ** -0.5, i, max_norm=20))
               for _ in range(100) for i in range(3))
    assert hits == 0
    assert resonance_alpha([2.0, 1.0], [0, 1], 0) == (2.0, True)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30
    criterion(f"rigid {rigid.first_order_max:.1e}/{rigid.divergence_max:.1e}, "
              f"radius rotation {bent.first_order_max:.2f}, {hits} resonances, {elapsed:.1f}s")


@pytest.mark.criterion(5, "contrast metrics")
def test_contrast_metrics(criterion):
    t0 = time.perf_counter()
    shear = c_oct_pointwise(SHEAR)
    assert abs(shear - 0.5 * math.log(2)) < 1e-12
    p = PolarMap(3)
    lo, hi = p.domain.bounding_box()
    polar = c_oct(p, lo + (hi - lo) * np.random.default_rng(5).uniform(size=(2000, 3))).value
    assert polar < 1e-8
    target = (gaussian_sampler(np.zeros(1), np.eye(1)), gaussian_logpdf(np.zeros(1), np.eye(1)))
    shifted = forward_kl(target, gaussian_logpdf(np.array([0.5]), np.eye(1)), 100_000, rng=5)
    assert abs(shifted.value - 0.125) < 3 * shifted.standard_error
    target2 = (gaussian_sampler(np.zeros(2), np.eye(2)), gaussian_logpdf(np.zeros(2), np.eye(2)))
    wide = forward_kl(target2, gaussian_logpdf(np.zeros(2), 4 * np.eye(2)), 100_000, rng=6)
    exact = gaussian_kl(np.zeros(2), np.eye(2), np.zeros(2), 4 * np.eye(2))
    assert abs(wide.value - exact) < 3 * wide.standard_error
    elapsed = time.perf_counter() - t0
    assert elapsed < 30
    criterion(f"shear {shear - 0.5 * math.log(2):.1e}, polar {polar:.1e}, "
              f"KL {shifted.value:.4f}+-{shifted.standard_error:.4f}, {elapsed:.1f}s")


@pytest.mark.criterion(6, "trainer gradients")
def test_trainer_gradients(criterion):
    t0 = time.perf_counter()
    lams = np.array([0.0, 2.0])
    h = 1e-5
    worst = 0.0
    checked = 0
    for config in range(3):
        rng = np.random.default_rng(60 + config)
        model = FlowModel.zeros(2, 5, 15, swaps=rng.integers(0, 2, (2, 5)))
        for v in model.params.values():
            v[...] = 0.3 * rng.standard_normal(v.shape)
        x = rng.normal(size=(64, 2)) * rng.uniform(0.5, 2.0, 2)
        _, grad = loss_and_grad(model, x, lams)
        for name, value in model.params.items():
            # perturbing the same entry in both stacked models is two independent checks
            for idx in np.ndindex(value.shape[1:]):
                vals = []
                for sign in (1.0, -1.0):
                    p = model.copy()
                    p.params[name][(slice(None),) + idx] += sign * h
                    vals.append(objective_terms(p, x, lams))
                fd = (vals[0] - vals[1]) / (2 * h)
                g = grad[name][(slice(None),) + idx]
                excess = np.abs(g - fd) / np.maximum(1e-5, 1e-3 * np.abs(g))
                worst = max(worst, float(np.max(excess)))
                checked += 2
    assert worst <= 1.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 60
    criterion(f"{checked} gradients, worst error {worst:.1e} of tolerance, {elapsed:.1f}s")


def _drift(kind):
    t0 = time.perf_counter()
    _, traces = run_arms(DriftScenario(kind), DRIFT_SEEDS, [0.0, 2.0], TrainConfig(steps=1000))
    elapsed = time.perf_counter() - t0
    _drift_seconds[kind] = elapsed
    arms = {lam: [t for t in traces if t.lam == lam] for lam in (0.0, 2.0)}
    med = {lam: {k: float(np.median([t.final(k) for t in arms[lam]])) for k in ("l1", "c_oct")}
           for lam in arms}
    kl_max = {lam: max(float(np.max(t.column("kl"))) for t in arms[lam]) for lam in arms}
    detail = (f"L1 {med[2.0]['l1']:.3f} vs {med[0.0]['l1']:.3f}, "
              f"C_OCT {med[2.0]['c_oct']:.3f} vs {med[0.0]['c_oct']:.3f}, "
              f"max KL {max(kl_max.values()):.3f}, {elapsed:.0f}s")
    return med, kl_max, elapsed, detail


def _check_drift(med, kl_max):
    assert all(v < 0.2 for v in kl_max.values())
    assert med[2.0]["l1"] < med[0.0]["l1"]
    assert med[2.0]["c_oct"] < 0.05 < med[0.0]["c_oct"]


@pytest.mark.criterion(7, "rot")
def test_drift_rot(criterion):
    med, kl_max, elapsed, detail = _drift("rot")
    criterion(detail)
    _check_drift(med, kl_max)
    assert sum(_drift_seconds.values()) < DRIFT_BUDGET_S


@pytest.mark.criterion(7, "pol")
def test_drift_pol(criterion):
    med, kl_max, elapsed, detail = _drift("pol")
    criterion(detail)
    _check_drift(med, kl_max)
    assert sum(_drift_seconds.values()) < DRIFT_BUDGET_S
