"""Constructions of measure-preserving deformations and non-identifiable mixings.

Indices of coordinate planes are 0-based throughout.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import ArgumentError, CapabilityError, FlowError, IntegrationError
from .maps import (
    Box,
    ClassReport,
    ComposedMap,
    LinearMap,
    PolarMap,
    SmoothMap,
    UnitCube,
    _report,
    check_orthogonal,
    plane_rotation,
)
from .numerics import (
    DEFAULT_TOLERANCES,
    as_points,
    fd_divergence,
    fd_jacobian,
    inverse_monotone,
    quad_adaptive,
    rk4_flow,
)

TABLE_SIZE = 2048
DENSITY_FLOOR = 1e-12


# --------------------------------------------------------------------------
# smooth bumps


def bump(u):
    """exp(1 - 1/(1 - u^2)) on |u| < 1, zero elsewhere; bump(0) = 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    return out


def bump_derivative(u):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    w = 1.0 - ui * ui
    out[inside] = np.exp(1.0 - 1.0 / w) * (-2.0 * ui / (w * w))
    return out


# --------------------------------------------------------------------------
# vector and scalar fields


class VectorField:
    """Time-dependent vector field ``X(t, x)`` on batches of points.

    ``support`` describes where the field may be non-zero, e.g.
    ``{"kind": "ball", "center": [...], "radius": r}``; ``None`` means unknown.
    """

    def __init__(self, fn, dim, jac=None, support=None, time_dependent=False, name="field"):
        self._fn = fn
        self._jacfn = jac
        self.dim = int(dim)
        self.support = support
        self.time_dependent = bool(time_dependent)
        self.name = name

    def evaluate(self, t, x):
        pts, single = as_points(x)
        out = np.asarray(self._fn(t, pts), dtype=float)
        return out[0] if single else out

    def __call__(self, t, x):
        return self.evaluate(t, x)

    @property
    def has_analytic_jacobian(self):
        return self._jacfn is not None

    def jacobian(self, t, x, h=DEFAULT_TOLERANCES.fd_step):
        """Spatial Jacobian ``J[k, l] = d X_k / d x_l``."""
        pts, single = as_points(x)
        if self._jacfn is not None:
            out = np.asarray(self._jacfn(t, pts), dtype=float)
        else:
            out = fd_jacobian(lambda p: self._fn(t, p), pts, h)
        return out[0] if single else out

    def divergence(self, t, x, h=DEFAULT_TOLERANCES.fd_step):
        if self._jacfn is None:
            return fd_divergence(self, t, x, h)
        J = self.jacobian(t, x)
        return np.trace(J, axis1=-2, axis2=-1)

    def at_time(self, t):
        """Freeze the time argument (for autonomous integration)."""
        return VectorField(lambda _, x: self._fn(t, x), self.dim,
                           None if self._jacfn is None else (lambda _, x: self._jacfn(t, x)),
                           self.support, False, f"{self.name}@t={t:g}")

    def describe(self):
        return {"kind": "vector_field", "name": self.name, "dim": self.dim,
                "support": self.support, "time_dependent": self.time_dependent}


class ScalarField:
    """Scalar function with gradient and Hessian on batches of points."""

    kind = "scalar"

    def __init__(self, fn, dim, grad=None, hess=None, support=None):
        self._fn, self._grad, self._hess = fn, grad, hess
        self.dim = int(dim)
        self.support = support

    def value(self, x):
        pts, single = as_points(x)
        out = np.asarray(self._fn(pts), dtype=float)
        return out[0] if single else out

    def __call__(self, x):
        return self.value(x)

    def gradient(self, x, h=DEFAULT_TOLERANCES.fd_step):
        pts, single = as_points(x)
        if self._grad is not None:
            out = np.asarray(self._grad(pts), dtype=float)
        else:
            out = np.empty_like(pts)
            for k in range(self.dim):
                e = np.zeros(self.dim)
                e[k] = h
                out[:, k] = (self._fn(pts + e) - self._fn(pts - e)) / (2.0 * h)
        return out[0] if single else out

    def hessian(self, x, h=1e-4):
        pts, single = as_points(x)
        if self._hess is not None:
            out = np.asarray(self._hess(pts), dtype=float)
        else:
            out = fd_jacobian(lambda p: self.gradient(p), pts, h)
            out = 0.5 * (out + np.swapaxes(out, -1, -2))
        return out[0] if single else out

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "support": self.support}


class RadialBump(ScalarField):
    """``amplitude * bump(|x - center| / radius)``; C-infinity with compact support."""

    kind = "radial_bump"

    def __init__(self, center, radius, amplitude=1.0):
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise ArgumentError("bump radius must be positive")
        super().__init__(self._value, center.size, self._gradient, self._hessian,
                         {"kind": "ball", "center": center.tolist(), "radius": float(radius)})
        self.center, self.radius, self.amplitude = center, float(radius), float(amplitude)

    def _u(self, pts):
        y = pts - self.center
        return y, np.linalg.norm(y, axis=1) / self.radius

    def _value(self, pts):
        return self.amplitude * bump(self._u(pts)[1])

    def _gradient(self, pts):
        y, u = self._u(pts)
        w = np.where(u < 1.0, 1.0 - u * u, 1.0)
        g = np.where(u < 1.0, -2.0 * bump(u) / (self.radius ** 2 * w * w), 0.0)
        return self.amplitude * g[:, None] * y

    def _hessian(self, pts):
        y, u = self._u(pts)
        d = self.dim
        w = np.where(u < 1.0, 1.0 - u * u, 1.0)
        b = bump(u)
        rho2 = self.radius ** 2
        g = np.where(u < 1.0, -2.0 * b / (rho2 * w * w), 0.0)
        # g'(u) / (rho |x - c|), finite at the center
        gp = np.where(u < 1.0, -2.0 * b / rho2 ** 2 * (4.0 / w ** 3 - 2.0 / w ** 4), 0.0)
        H = g[:, None, None] * np.eye(d) + gp[:, None, None] * y[:, :, None] * y[:, None, :]
        return self.amplitude * H

    def describe(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius,
                "amplitude": self.amplitude}


class DensityField(ScalarField):
    """Probability density with analytic derivatives where known.

    Build with :meth:`gaussian`, :meth:`gaussian_mixture` or :meth:`closure`.
    """

    kind = "density"

    def __init__(self, fn, dim, grad=None, hess=None, spec=None):
        super().__init__(fn, dim, grad, hess)
        self.spec = spec or {"kind": "closure"}

    def density(self, x):
        return self.value(x)

    def log_density(self, x):
        return np.log(np.maximum(self.value(x), 0.0))

    @classmethod
    def gaussian(cls, mean, cov=None):
        return cls.gaussian_mixture([1.0], [mean], None if cov is None else [cov])

    @classmethod
    def gaussian_mixture(cls, weights, means, covs=None):
        weights = np.asarray(weights, dtype=float)
        means = np.atleast_2d(np.asarray(means, dtype=float))
        k, d = means.shape
        if weights.shape != (k,) or np.any(weights < 0) or weights.sum() <= 0:
            raise ArgumentError("mixture weights must be non-negative, one per component")
        weights = weights / weights.sum()
        covs = np.stack([np.eye(d)] * k) if covs is None else np.asarray(covs, dtype=float)
        if covs.shape != (k, d, d):
            raise ArgumentError(f"covariances must have shape {(k, d, d)}")
        precs = np.linalg.inv(covs)
        signs, logdets = np.linalg.slogdet(covs)
        if np.any(signs <= 0):
            raise ArgumentError("covariances must be positive definite")
        norms = weights * np.exp(-0.5 * (d * math.log(2 * math.pi) + logdets))

        def parts(pts):
            y = pts[:, None, :] - means[None]                  # (n, k, d)
            py = np.einsum("kij,nkj->nki", precs, y)           # precision @ y
            comp = norms * np.exp(-0.5 * np.einsum("nki,nki->nk", y, py))
            return comp, py

        def fn(pts):
            return parts(pts)[0].sum(axis=1)

        def grad(pts):
            comp, py = parts(pts)
            return -np.einsum("nk,nki->ni", comp, py)

        def hess(pts):
            comp, py = parts(pts)
            outer = py[:, :, :, None] * py[:, :, None, :]
            return np.einsum("nk,nkij->nij", comp, outer - precs[None])

        spec = {"kind": "gaussian_mixture", "weights": weights.tolist(),
                "means": means.tolist(), "covariances": covs.tolist()}
        out = cls(fn, d, grad, hess, spec)
        out.weights, out.means, out.covs = weights, means, covs
        return out

    @classmethod
    def closure(cls, fn, dim, grad=None, hess=None):
        return cls(fn, dim, grad, hess, {"kind": "closure"})

    def sample(self, rng, n):
        if self.spec["kind"] != "gaussian_mixture":
            raise CapabilityError("sampling is only available for Gaussian mixtures")
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        chol = np.linalg.cholesky(self.covs)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)

    def describe(self):
        return dict(self.spec, dim=self.dim)


def _rotated_gradient(potential, i, j, name):
    d = potential.dim
    if not (0 <= i < d and 0 <= j < d):
        raise ArgumentError(f"plane indices must lie in [0, {d})")
    if i == j:
        raise ArgumentError("plane indices must differ")

    def fn(t, pts):
        g = potential.gradient(pts)
        out = np.zeros_like(pts)
        out[:, i] = g[:, j]
        out[:, j] = -g[:, i]
        return out

    def jac(t, pts):
        H = potential.hessian(pts)
        out = np.zeros_like(H)
        out[:, i, :] = H[:, j, :]
        out[:, j, :] = -H[:, i, :]
        return out

    return VectorField(fn, d, jac, support=potential.support, name=name)


def build_xij(p, i, j):
    """Field with component i = d_j p, component j = -d_i p; Div X = Div(p X) = 0."""
    return _rotated_gradient(p, i, j, f"xij[{i},{j}]")


def build_compact_divfree(potential, i, j):
    """Same construction from a compactly supported scalar ``potential``."""
    return _rotated_gradient(potential, i, j, f"compact_divfree[{i},{j}]")


def scale_by_density(field, p):
    """Y = X / p; if Div X = 0 then Div(p Y) = 0 (needs p > 0 on the support of X)."""

    def fn(t, pts):
        return field.evaluate(t, pts) / p.value(pts)[:, None]

    def jac(t, pts):
        val = p.value(pts)
        X = field.evaluate(t, pts)
        return field.jacobian(t, pts) / val[:, None, None] - \
            X[:, :, None] * p.gradient(pts)[:, None, :] / (val * val)[:, None, None]

    return VectorField(fn, field.dim, jac, field.support, field.time_dependent,
                       f"{field.name}/density")


def weighted_divergence(field, p, t, x, h=DEFAULT_TOLERANCES.fd_step):
    """Div(p X) by central differences."""
    return fd_divergence(lambda tt, pts: p.value(pts)[:, None] * field.evaluate(tt, pts), t, x, h)


# --------------------------------------------------------------------------
# flows


class FlowMap(SmoothMap):
    """x -> Phi_t(x) for the flow of ``field`` started at time ``t0``."""

    kind = "flow"

    def __init__(self, field, t, steps=200, t0=0.0, domain=None):
        if int(steps) < 1:
            raise ArgumentError("steps must be >= 1")
        super().__init__(field.dim, domain)
        self.field, self.t, self.t0, self.steps = field, float(t), float(t0), int(steps)

    def _integrate(self, pts, start, stop):
        if start == stop:
            return pts.copy()
        try:
            return rk4_flow(self.field, pts, start, stop, self.steps)
        except IntegrationError as exc:
            raise FlowError(f"flow of {self.field.name} blew up: {exc}", time=exc.time) from exc

    def _eval(self, pts):
        return self._integrate(pts, self.t0, self.t0 + self.t)

    def _inv(self, pts):
        return self._integrate(pts, self.t0 + self.t, self.t0)

    def describe(self):
        return {"kind": self.kind, "field": self.field.describe(), "t": self.t,
                "t0": self.t0, "steps": self.steps}


def flow_map(field, t, steps=200, t0=0.0):
    return FlowMap(field, t, steps, t0)


# --------------------------------------------------------------------------
# radius-dependent rotations


@dataclass(frozen=True)
class RadiusRotationProfile:
    """Rotation by ``t * omega * bump(r / radius)`` in the (i, j) plane around
    ``center``; the identity for r >= radius."""

    center: tuple
    i: int = 0
    j: int = 1
    omega: float = 1.0
    radius: float = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", tuple(c.tolist()))
        d = c.size
        if d < 2:
            raise ArgumentError("radius rotations need d >= 2")
        if not np.all((c > 0) & (c < 1)):
            raise ArgumentError("center must lie inside the unit cube")
        if not (0 <= self.i < d and 0 <= self.j < d) or self.i == self.j:
            raise ArgumentError("rotation plane needs two distinct indices in range")
        reach = float(np.min(np.minimum(c, 1.0 - c)))
        radius = 0.8 * reach if self.radius is None else float(self.radius)
        if not 0 < radius <= reach:
            raise ArgumentError(f"radius must lie in (0, {reach:.6g}] to stay inside the cube")
        object.__setattr__(self, "radius", radius)

    @property
    def dim(self):
        return len(self.center)

    def angle(self, t, r):
        return t * self.omega * bump(np.asarray(r) / self.radius)

    def angle_dr(self, t, r):
        return t * self.omega * bump_derivative(np.asarray(r) / self.radius) / self.radius

    def matrix(self, t, r):
        return plane_rotation(self.dim, self.i, self.j, float(self.angle(t, r)))


def _rotate_plane(y, i, j, theta):
    c, s = np.cos(theta), np.sin(theta)
    out = y.copy()
    out[:, i] = c * y[:, i] - s * y[:, j]
    out[:, j] = s * y[:, i] + c * y[:, j]
    return out


class RadiusRotationMap(SmoothMap):
    """s -> R(|s - a|, t) (s - a) + a on the unit cube."""

    kind = "radius_rotation"

    def __init__(self, profile, t):
        super().__init__(profile.dim, UnitCube(profile.dim))
        self.profile, self.t = profile, float(t)
        self.a = np.asarray(profile.center)

    def _apply(self, pts, sign):
        y = pts - self.a
        r = np.linalg.norm(y, axis=1)
        theta = sign * self.profile.angle(self.t, r)
        moved = self.a + _rotate_plane(y, self.profile.i, self.profile.j, theta)
        # outside the support the map is the identity exactly, not up to (x - a) + a
        return np.where((theta == 0.0)[:, None], pts, moved)

    def _eval(self, pts):
        return self._apply(pts, 1.0)

    def _jac(self, pts):
        # Dh = R + (1/r) R'(r) (s - a)(s - a)^T with R' = theta'(r) dR/dtheta
        p = self.profile
        i, j, d = p.i, p.j, self.dim
        y = pts - self.a
        r = np.linalg.norm(y, axis=1)
        th = p.angle(self.t, r)
        dth = p.angle_dr(self.t, r)
        c, s = np.cos(th), np.sin(th)
        n = len(pts)
        J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        J[:, i, i], J[:, i, j], J[:, j, i], J[:, j, j] = c, -s, s, c
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, dth / r, 0.0)
        dRy_i = -s * y[:, i] - c * y[:, j]
        dRy_j = c * y[:, i] - s * y[:, j]
        J[:, i, :] += (scale * dRy_i)[:, None] * y
        J[:, j, :] += (scale * dRy_j)[:, None] * y
        return J

    def _inv(self, pts):
        return self._apply(pts, -1.0)

    def describe(self):
        p = self.profile
        return {"kind": self.kind, "center": list(p.center), "plane": [p.i, p.j],
                "omega": p.omega, "radius": p.radius, "t": self.t}


def radius_rotation_map(profile, t):
    return RadiusRotationMap(profile, t)


def radius_rotation_generator(profile):
    """X(s) = omega bump(|s - a| / radius) K (s - a), K the plane generator.

    Because the angle is linear in t, the rotation maps are exactly the flow of X.
    """
    a = np.asarray(profile.center)
    i, j = profile.i, profile.j

    def fn(t, pts):
        y = pts - a
        w = profile.angle(1.0, np.linalg.norm(y, axis=1))
        out = np.zeros_like(pts)
        out[:, i] = -w * y[:, j]
        out[:, j] = w * y[:, i]
        return out

    def jac(t, pts):
        y = pts - a
        r = np.linalg.norm(y, axis=1)
        w = profile.angle(1.0, r)
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = np.where(r > 0, profile.angle_dr(1.0, r) / r, 0.0)
        n, d = pts.shape
        J = np.zeros((n, d, d))
        J[:, i, j] = -w
        J[:, j, i] = w
        J[:, i, :] += (-dw * y[:, j])[:, None] * y
        J[:, j, :] += (dw * y[:, i])[:, None] * y
        return J

    support = {"kind": "ball", "center": list(profile.center), "radius": profile.radius}
    return VectorField(fn, profile.dim, jac, support, name="radius_rotation_generator")


# --------------------------------------------------------------------------
# measure preservation


def verify_mpt(f, p, points, tol=1e-3, source=None):
    """Check the pushforward of ``source`` (default ``p``) under ``f`` against ``p``.

    At each x: |source(f^{-1}(x)) |det Df^{-1}(x)| - p(x)| <= tol * max(p(x), 1e-12).
    ``source`` may be a density object or a callable on batches.
    """
    if not f.has_inverse:
        raise CapabilityError(f"{f.kind} map has no inverse; cannot check its pushforward")
    pts, _ = as_points(points)
    if len(pts) == 0:
        raise ArgumentError("verify_mpt needs at least one point")
    pre = f.inverse(pts)
    src = p if source is None else source
    src_val = src.value(pre) if hasattr(src, "value") else np.asarray(src(pre), dtype=float)
    pushed = src_val * np.exp(-f.log_abs_det_jacobian(pre))
    target = p.value(pts) if hasattr(p, "value") else np.asarray(p(pts), dtype=float)
    residual = np.abs(pushed - target) / np.maximum(target, DENSITY_FLOOR)
    return _report("mpt", residual, pts, tol)


def uniform_cube_density(dim):
    """Density of the uniform law on the open unit cube."""
    return ScalarField(lambda pts: np.all((pts > 0) & (pts < 1), axis=1).astype(float), dim)


# --------------------------------------------------------------------------
# orthogonal-coordinate construction: unit cube -> rotation-invariant law


def unit_ball_volume(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


class _MonotoneTable:
    """Increasing F on [lo, hi] tabulated from its derivative; Hermite forward
    evaluation, PCHIP-seeded Newton inverse."""

    def __init__(self, deriv, lo, hi, n=TABLE_SIZE, tol=1e-13):
        self.deriv = deriv
        self.lo, self.hi = float(lo), float(hi)
        self.x = np.linspace(self.lo, self.hi, n)
        pieces = [quad_adaptive(lambda s: float(deriv(s)), a, b, tol)
                  for a, b in zip(self.x[:-1], self.x[1:])]
        self.y = np.concatenate([[0.0], np.cumsum(pieces)])
        self.total = float(self.y[-1])
        self._fwd = CubicHermiteSpline(self.x, self.y, deriv(self.x))
        strictly = np.concatenate([[True], np.diff(self.y) > 0])
        self._guess = PchipInterpolator(self.y[strictly], self.x[strictly])

    def __call__(self, x):
        return self._fwd(np.clip(x, self.lo, self.hi))

    def inverse(self, v, iters=8):
        v = np.asarray(v, dtype=float)
        x = np.clip(self._guess(v), self.lo, self.hi)
        for _ in range(iters):
            slope = self.deriv(x)
            ok = slope > 0
            step = np.where(ok, (self._fwd(x) - v) / np.where(ok, slope, 1.0), 0.0)
            x = np.clip(x - step, self.lo, self.hi)
        return x


class RadialDensity:
    """Rotation-invariant density on R^d given by a radial profile p(r), r in (a, b).

    The profile is normalized internally so that q(r) = d omega_d r^{d-1} p(r)
    integrates to one; unbounded supports are truncated where the radial CDF
    exceeds 1 - 1e-10.
    """

    def __init__(self, profile, dim, a=0.0, b=math.inf, name="radial", quad_tol=1e-12):
        if dim < 2:
            raise ArgumentError("radial densities need d >= 2")
        if not (0 <= a < b):
            raise ArgumentError("radial support needs 0 <= a < b")
        self.profile = profile
        self.dim, self.a, self.b, self.name = int(dim), float(a), float(b), name
        self.sphere_area = dim * unit_ball_volume(dim)
        raw = lambda r: self.sphere_area * np.asarray(r, dtype=float) ** (dim - 1) * \
            np.asarray(profile(np.asarray(r, dtype=float)), dtype=float)
        self.r_max = self._truncation(raw, quad_tol) if math.isinf(b) else self.b
        total = quad_adaptive(lambda r: float(raw(r)), self.a, self.r_max, quad_tol)
        if not (np.isfinite(total) and total > 0):
            raise ArgumentError(f"radial profile {name!r} is not normalizable")
        self.norm = total
        self.radial_pdf = lambda r: raw(r) / total
        self.cdf_table = _MonotoneTable(self.radial_pdf, self.a, self.r_max)

    def _truncation(self, raw, tol, tail=1e-10):
        lo = max(self.a, 0.0)
        R = max(2.0 * lo, 1.0)
        mass = quad_adaptive(lambda r: float(raw(r)), lo, R, tol)
        while True:
            extra = quad_adaptive(lambda r: float(raw(r)), R, 2.0 * R, tol)
            if not np.isfinite(extra) or R > 1e8:
                raise ArgumentError(f"radial profile {self.name!r} is not normalizable")
            if extra < tail * (mass + extra):
                break
            mass += extra
            R *= 2.0
        # bisect down to the first radius whose tail mass is below the threshold
        cdf = _MonotoneTable(raw, lo, 2.0 * R, n=512)
        target = (1.0 - tail) * cdf.total
        return float(cdf.inverse(target))

    @classmethod
    def standard_normal(cls, dim):
        c = (2 * math.pi) ** (-dim / 2)
        return cls(lambda r: c * np.exp(-0.5 * r * r), dim, name="standard_normal")

    @classmethod
    def uniform_annulus(cls, dim, a, b):
        return cls(lambda r: np.ones_like(r), dim, a, b, name="uniform_annulus")

    def density(self, x):
        """Normalized target density on R^d."""
        pts, single = as_points(x)
        r = np.linalg.norm(pts, axis=1)
        inside = (r > self.a) & (r < self.r_max)
        val = np.zeros(len(pts))
        val[inside] = np.asarray(self.profile(r[inside]), dtype=float) / self.norm
        return val[0] if single else val

    value = density

    def radial_quantile(self, u):
        """Inverse of the radial CDF."""
        return self.cdf_table.inverse(u)

    def radial_quantile_reference(self, u, tol=1e-12):
        """Quadrature-in-the-loop quantile (slow; used to validate the tables)."""
        F = lambda r: quad_adaptive(lambda s: float(self.radial_pdf(s)), self.a, r, 1e-13) \
            if r > self.a else 0.0
        return inverse_monotone(F, float(u), self.a, self.r_max, tol,
                                df=lambda r: float(self.radial_pdf(r)))

    def describe(self):
        return {"kind": "radial", "name": self.name, "dim": self.dim, "a": self.a,
                "b": self.b, "r_max": self.r_max}


def sine_power_integral(k, theta):
    """g_k(theta) = int_0^theta sin^k by adaptive quadrature."""
    if theta <= 0:
        return 0.0
    return quad_adaptive(lambda s: math.sin(s) ** k, 0.0, float(theta), 1e-13)


class _AngleTable(_MonotoneTable):
    def __init__(self, k):
        super().__init__(lambda s: np.sin(s) ** k, 0.0, math.pi)
        self.k = k


_ANGLE_TABLES = {}


def angle_table(k):
    if k not in _ANGLE_TABLES:
        _ANGLE_TABLES[k] = _AngleTable(k)
    return _ANGLE_TABLES[k]


class Prop1Map(SmoothMap):
    """Unit cube -> R^d pushing the uniform law to a rotation-invariant law.

    Cube coordinates are scaled to (0, 1) x (0, 2 pi) x I_1 x ... x I_{d-2},
    then sent through the radial quantile, the identity on the azimuth and the
    inverse angle CDFs, and finally through polar coordinates. Every stage has a diagonal Jacobian and polar
    coordinates are orthogonal, so the result has orthogonal Jacobian columns.
    """

    kind = "prop1"

    def __init__(self, radial, margin=1e-3):
        d = radial.dim
        super().__init__(d, UnitCube(d, margin))
        self.radial = radial
        self.margin = float(margin)
        self.tables = [angle_table(k) for k in range(1, d - 1)]
        self.spans = np.array([2 * math.pi] + [t.total for t in self.tables])
        self._polar = PolarMap(d, r_range=(max(radial.a, 1e-300), radial.r_max), margin=0.0)

    def coordinates(self, pts):
        """Polar coordinates (r, azimuth, polar angles) and the diagonal Jacobian of the
        cube-to-polar stage."""
        coords = np.empty_like(pts)
        diag = np.empty_like(pts)
        r = self.radial.radial_quantile(pts[:, 0])
        coords[:, 0] = r
        diag[:, 0] = 1.0 / self.radial.radial_pdf(r)
        coords[:, 1] = 2 * math.pi * pts[:, 1]
        diag[:, 1] = 2 * math.pi
        for k, table in enumerate(self.tables, start=1):
            v = table.total * pts[:, k + 1]
            th = table.inverse(v)
            coords[:, k + 1] = th
            diag[:, k + 1] = table.total / np.sin(th) ** k
        return coords, diag

    def _eval(self, pts):
        return self._polar._eval(self.coordinates(pts)[0])

    def _jac(self, pts):
        coords, diag = self.coordinates(pts)
        return self._polar._jac(coords) * diag[:, None, :]

    def _logdet(self, pts):
        coords, diag = self.coordinates(pts)
        return self._polar._logdet(coords) + np.sum(np.log(diag), axis=1)

    def _inv(self, pts):
        coords = self._polar._inv(pts)
        out = np.empty_like(coords)
        out[:, 0] = self.radial.cdf_table(coords[:, 0])
        out[:, 1] = coords[:, 1] / (2 * math.pi)
        for k, table in enumerate(self.tables, start=1):
            out[:, k + 1] = table(coords[:, k + 1]) / table.total
        return out

    def describe(self):
        return {"kind": self.kind, "radial": self.radial.describe(), "margin": self.margin}


def prop1_build(radial, margin=1e-3):
    return Prop1Map(radial, margin)


def prop1_rotated_family(radial, R, margin=1e-3):
    """R o prop1_build(radial): another OCT map with the same pushforward."""
    R = check_orthogonal(R, tol=1e-9)
    if R.shape[0] != radial.dim:
        raise ArgumentError("rotation and radial density differ in dimension")
    return ComposedMap(LinearMap(R), prop1_build(radial, margin))


__all__ = [
    "DensityField", "FlowMap", "Prop1Map", "RadialBump", "RadialDensity",
    "RadiusRotationMap", "RadiusRotationProfile", "ScalarField", "VectorField",
    "angle_table", "build_compact_divfree", "build_xij", "bump", "flow_map",
    "prop1_build", "prop1_rotated_family", "radius_rotation_generator",
    "radius_rotation_map", "scale_by_density", "sine_power_integral",
    "uniform_cube_density", "unit_ball_volume", "verify_mpt", "weighted_divergence",
]
