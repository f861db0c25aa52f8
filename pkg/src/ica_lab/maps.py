"""Concrete map classes and tolerance-based Jacobian classifiers.

Every map is a :class:`SmoothMap`: batched evaluation on ``(n, d)`` arrays
(single ``(d,)`` points are accepted too), a Jacobian that is analytic where
the class knows it and central differences otherwise, and an optional inverse.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import ArgumentError, CapabilityError, DomainError, SingularityError
from .numerics import DEFAULT_TOLERANCES, as_points, default_unit_points, fd_jacobian

ORTHO_TOL = 1e-10


# --------------------------------------------------------------------------
# domains


class Domain:
    kind = "abstract"

    def __init__(self, dim):
        self.dim = int(dim)

    def contains(self, pts):
        return np.ones(len(pts), dtype=bool)

    def check(self, pts):
        inside = self.contains(pts)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise DomainError(f"point {bad.tolist()} outside {self.kind} domain")

    def bounding_box(self):
        return -np.ones(self.dim), np.ones(self.dim)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim}


class RealSpace(Domain):
    kind = "real_space"


class Box(Domain):
    kind = "box"

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ArgumentError("box needs lo < hi componentwise")
        super().__init__(lo.size)
        self.lo, self.hi = lo, hi

    def contains(self, pts):
        return np.all((pts > self.lo) & (pts < self.hi), axis=1)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def describe(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class UnitCube(Box):
    kind = "unit_cube"

    def __init__(self, dim, margin=0.0):
        super().__init__(np.full(dim, margin), np.full(dim, 1.0 - margin))


class Punctured(Domain):
    """All of R^d except a closed ball of radius ``r_min`` around ``center``."""

    kind = "punctured"

    def __init__(self, center, r_min):
        center = np.asarray(center, dtype=float)
        super().__init__(center.size)
        self.center, self.r_min = center, float(r_min)

    def contains(self, pts):
        return np.linalg.norm(pts - self.center, axis=1) >= self.r_min

    def check(self, pts):
        inside = self.contains(pts)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise SingularityError(
                f"point {bad.tolist()} within r_min={self.r_min} of the pole {self.center.tolist()}"
            )

    def bounding_box(self):
        return self.center - 1.0, self.center + 1.0

    def describe(self):
        return {"kind": self.kind, "center": self.center.tolist(), "r_min": self.r_min}


class Annulus(Domain):
    kind = "annulus"

    def __init__(self, center, r_in, r_out):
        center = np.asarray(center, dtype=float)
        super().__init__(center.size)
        self.center, self.r_in, self.r_out = center, float(r_in), float(r_out)

    def contains(self, pts):
        r = np.linalg.norm(pts - self.center, axis=1)
        return (r > self.r_in) & (r < self.r_out)

    def bounding_box(self):
        return self.center - self.r_out, self.center + self.r_out

    def describe(self):
        return {"kind": self.kind, "center": self.center.tolist(),
                "r_in": self.r_in, "r_out": self.r_out}


class ProductDomain(Domain):
    kind = "product"

    def __init__(self, parts):
        self.parts = list(parts)
        super().__init__(sum(p.dim for p in self.parts))

    def _split(self, pts):
        out, k = [], 0
        for p in self.parts:
            out.append(pts[:, k:k + p.dim])
            k += p.dim
        return out

    def contains(self, pts):
        ok = np.ones(len(pts), dtype=bool)
        for part, sub in zip(self.parts, self._split(pts)):
            ok &= part.contains(sub)
        return ok

    def check(self, pts):
        for part, sub in zip(self.parts, self._split(pts)):
            part.check(sub)

    def bounding_box(self):
        boxes = [p.bounding_box() for p in self.parts]
        return np.concatenate([b[0] for b in boxes]), np.concatenate([b[1] for b in boxes])

    def describe(self):
        return {"kind": self.kind, "parts": [p.describe() for p in self.parts]}


# --------------------------------------------------------------------------
# maps


class SmoothMap:
    """Differentiable map R^d -> R^d on a declared domain.

    Subclasses implement ``_eval``; they may add ``_jac`` (analytic Jacobian),
    ``_inv`` (inverse) and ``_logdet`` (log |det Df|). All private hooks
    receive and return batched arrays.
    """

    kind = "map"

    def __init__(self, dim, domain=None):
        self.dim = int(dim)
        self.domain = domain if domain is not None else RealSpace(dim)

    # hooks --------------------------------------------------------------
    def _eval(self, pts):
        raise NotImplementedError

    _jac = None
    _inv = None
    _logdet = None

    # public API -----------------------------------------------------------
    @property
    def has_analytic_jacobian(self):
        return self._jac is not None

    @property
    def has_inverse(self):
        return self._inv is not None

    def __call__(self, x):
        return self.evaluate(x)

    def _prepare(self, x):
        pts, single = as_points(x)
        if pts.shape[1] != self.dim:
            raise ArgumentError(f"{self.kind} expects dimension {self.dim}, got {pts.shape[1]}")
        return pts, single

    def evaluate(self, x):
        pts, single = self._prepare(x)
        self.domain.check(pts)
        out = self._eval(pts)
        return out[0] if single else out

    def jacobian(self, x, h=DEFAULT_TOLERANCES.fd_step):
        pts, single = self._prepare(x)
        self.domain.check(pts)
        jac = self._jac(pts) if self._jac is not None else fd_jacobian(self.evaluate, pts, h)
        return jac[0] if single else jac

    def inverse(self, y):
        if self._inv is None:
            raise CapabilityError(f"{self.kind} map has no inverse")
        pts, single = self._prepare(y)
        out = self._inv(pts)
        return out[0] if single else out

    def log_abs_det_jacobian(self, x):
        pts, single = self._prepare(x)
        if self._logdet is not None:
            self.domain.check(pts)
            out = self._logdet(pts)
        else:
            out = np.linalg.slogdet(self.jacobian(pts))[1]
        return out[0] if single else out

    def test_points(self, grid=5, n_quasi=500):
        """Default interior test points: ``grid^d`` grid (d <= 3) or Halton (d > 3)."""
        lo, hi = self.domain.bounding_box()
        pts = lo + (hi - lo) * default_unit_points(self.dim, grid, n_quasi)
        keep = self.domain.contains(pts)
        if isinstance(self.domain, Punctured):
            keep &= np.linalg.norm(pts - self.domain.center, axis=1) > 10 * self.domain.r_min
        return pts[keep]

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "domain": self.domain.describe()}


class IdentityMap(SmoothMap):
    kind = "identity"

    def _eval(self, pts):
        return pts.copy()

    def _jac(self, pts):
        return np.broadcast_to(np.eye(self.dim), (len(pts), self.dim, self.dim)).copy()

    def _inv(self, pts):
        return pts.copy()

    def _logdet(self, pts):
        return np.zeros(len(pts))


class FunctionMap(SmoothMap):
    """Wrap user closures; ``fn`` (and ``jac``/``inv``) act on ``(n, d)`` batches."""

    kind = "function"

    def __init__(self, fn, dim, jac=None, inv=None, domain=None, name=None):
        super().__init__(dim, domain)
        self._fn = fn
        if jac is not None:
            self._jac = jac
        if inv is not None:
            self._inv = inv
        if name:
            self.kind = name

    def _eval(self, pts):
        return np.asarray(self._fn(pts), dtype=float)


class LinearMap(SmoothMap):
    """x -> A x + b."""

    kind = "linear"

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ArgumentError("linear map needs a square matrix")
        super().__init__(A.shape[0])
        self.A = A
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)
        self._lu_det = np.linalg.slogdet(A)
        if self._lu_det[0] != 0:
            self._inv = self._solve

    def _eval(self, pts):
        return pts @ self.A.T + self.b

    def _jac(self, pts):
        return np.broadcast_to(self.A, (len(pts), self.dim, self.dim)).copy()

    def _solve(self, pts):
        return np.linalg.solve(self.A, (pts - self.b).T).T

    def _logdet(self, pts):
        return np.full(len(pts), self._lu_det[1])

    def describe(self):
        return {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist()}


def check_orthogonal(A, tol=ORTHO_TOL):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ArgumentError("orthogonal matrix must be square")
    err = np.max(np.abs(A.T @ A - np.eye(A.shape[0])))
    if err > tol:
        raise ArgumentError(f"matrix is not orthogonal: max |A^T A - I| = {err:.3g}")
    return A


def plane_rotation(d, i, j, angle):
    R = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    R[i, i] = c
    R[j, j] = c
    R[j, i] = s
    R[i, j] = -s
    return R


def random_rotation(d, rng, proper=True):
    """Haar-distributed orthogonal matrix; ``proper`` forces det = +1."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    if proper and np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


class MoebiusMap(SmoothMap):
    """x -> b + alpha * A (x - a) / |x - a|^eps with A orthogonal, eps in {0, 2}."""

    kind = "moebius"

    def __init__(self, b=None, a=None, alpha=1.0, A=None, epsilon=2, r_min=1e-6, dim=None):
        if dim is None:
            for ref in (b, a, A):
                if ref is not None:
                    dim = np.atleast_1d(np.asarray(ref)).shape[0]
                    break
        if dim is None:
            raise ArgumentError("cannot infer dimension of Moebius map")
        self.b = np.zeros(dim) if b is None else np.asarray(b, dtype=float)
        self.a = np.zeros(dim) if a is None else np.asarray(a, dtype=float)
        self.A = np.eye(dim) if A is None else check_orthogonal(A)
        if alpha == 0:
            raise ArgumentError("alpha must be non-zero")
        if epsilon not in (0, 2):
            raise ArgumentError("epsilon must be 0 or 2")
        self.alpha = float(alpha)
        self.epsilon = int(epsilon)
        self.r_min = float(r_min)
        domain = Punctured(self.a, self.r_min) if self.epsilon == 2 else RealSpace(dim)
        super().__init__(dim, domain)

    def _eval(self, pts):
        y = pts - self.a
        Ay = y @ self.A.T
        if self.epsilon == 0:
            return self.b + self.alpha * Ay
        sq = np.sum(y * y, axis=1, keepdims=True)
        return self.b + self.alpha * Ay / sq

    def _jac(self, pts):
        n = len(pts)
        if self.epsilon == 0:
            return np.broadcast_to(self.alpha * self.A, (n, self.dim, self.dim)).copy()
        y = pts - self.a
        Ay = y @ self.A.T
        sq = np.sum(y * y, axis=1)[:, None, None]
        outer = Ay[:, :, None] * y[:, None, :]
        return self.alpha * (self.A[None] / sq - 2.0 * outer / sq**2)

    def _logdet(self, pts):
        base = self.dim * math.log(abs(self.alpha))
        if self.epsilon == 0:
            return np.full(len(pts), base)
        r = np.linalg.norm(pts - self.a, axis=1)
        return base - 2.0 * self.dim * np.log(r)

    def inverse_map(self):
        if self.epsilon == 0:
            return MoebiusMap(b=self.a, a=self.b, alpha=1.0 / self.alpha, A=self.A.T, epsilon=0)
        return MoebiusMap(b=self.a, a=self.b, alpha=self.alpha, A=self.A.T, epsilon=2,
                          r_min=self.r_min)

    def _inv(self, pts):
        return self.inverse_map().evaluate(pts)

    def describe(self):
        return {"kind": self.kind, "b": self.b.tolist(), "a": self.a.tolist(),
                "alpha": self.alpha, "A": self.A.tolist(), "epsilon": self.epsilon}


def moebius_eval_and_jacobian(m, x):
    """Value and analytic Jacobian of a Moebius map at ``x``."""
    return m.evaluate(x), m.jacobian(x)


def polar_abs_det(coords):
    """|det| of the polar-coordinate Jacobian: r^{d-1} prod_k sin(theta_k)^k."""
    coords, single = as_points(coords)
    out = coords[:, 0] ** (coords.shape[1] - 1)
    for k in range(1, coords.shape[1] - 1):
        out = out * np.sin(coords[:, k + 1]) ** k
    return out[0] if single else out


class PolarMap(SmoothMap):
    """Hyperspherical coordinates (r, phi, theta_1, ..., theta_{d-2}) -> x.

    ``x_1 = r sin(phi) prod sin(theta)``, ``x_2 = r cos(phi) prod sin(theta)``,
    ``x_{k+2} = r cos(theta_k) prod_{j>k} sin(theta_j)``.
    """

    kind = "polar"

    def __init__(self, d, r_range=(0.5, 2.5), margin=1e-3):
        if d < 2:
            raise ArgumentError("polar coordinates need d >= 2")
        lo = [r_range[0], margin] + [margin] * (d - 2)
        hi = [r_range[1], 2 * math.pi - margin] + [math.pi - margin] * (d - 2)
        super().__init__(d, Box(lo, hi))
        self.r_range = tuple(float(v) for v in r_range)
        self.margin = float(margin)

    def _eval(self, pts):
        r, phi = pts[:, 0], pts[:, 1]
        out = np.empty_like(pts)
        out[:, 0] = r * np.sin(phi)
        out[:, 1] = r * np.cos(phi)
        for m in range(3, self.dim + 1):
            th = pts[:, m - 1]
            out[:, : m - 1] *= np.sin(th)[:, None]
            out[:, m - 1] = r * np.cos(th)
        return out

    def _jac(self, pts):
        n, d = pts.shape
        r, phi = pts[:, 0], pts[:, 1]
        val = np.stack([r * np.sin(phi), r * np.cos(phi)], axis=1)
        J = np.zeros((n, 2, 2))
        J[:, 0, 0], J[:, 0, 1] = np.sin(phi), r * np.cos(phi)
        J[:, 1, 0], J[:, 1, 1] = np.cos(phi), -r * np.sin(phi)
        for m in range(3, d + 1):
            th = pts[:, m - 1]
            s, c = np.sin(th), np.cos(th)
            Jn = np.zeros((n, m, m))
            Jn[:, : m - 1, : m - 1] = J * s[:, None, None]
            Jn[:, : m - 1, m - 1] = val * c[:, None]
            Jn[:, m - 1, 0] = c
            Jn[:, m - 1, m - 1] = -r * s
            val = np.concatenate([val * s[:, None], (r * c)[:, None]], axis=1)
            J = Jn
        return J

    def _logdet(self, pts):
        return np.log(polar_abs_det(pts))

    def _inv(self, pts):
        n, d = pts.shape
        out = np.empty_like(pts)
        out[:, 0] = np.linalg.norm(pts, axis=1)
        for m in range(d, 2, -1):
            rad = np.linalg.norm(pts[:, :m], axis=1)
            out[:, m - 1] = np.arccos(np.clip(pts[:, m - 1] / rad, -1.0, 1.0))
        out[:, 1] = np.mod(np.arctan2(pts[:, 0], pts[:, 1]), 2 * math.pi)
        return out

    def describe(self):
        return {"kind": self.kind, "d": self.dim, "r_range": list(self.r_range),
                "margin": self.margin}


class CoordwiseReparam(SmoothMap):
    """y_i = sign_i * h_{perm[i]}(x_{perm[i]}) with each h_k strictly increasing.

    ``funcs``/``derivs``/``inverses`` are lists of elementwise callables.
    """

    kind = "coordwise"

    def __init__(self, funcs, derivs, inverses=None, perm=None, signs=None, domain=None):
        d = len(funcs)
        if len(derivs) != d:
            raise ArgumentError("need one derivative per coordinate function")
        super().__init__(d, domain)
        self.funcs, self.derivs = list(funcs), list(derivs)
        self.inverses = None if inverses is None else list(inverses)
        self.perm = np.arange(d) if perm is None else np.asarray(perm, dtype=int)
        if sorted(self.perm.tolist()) != list(range(d)):
            raise ArgumentError("perm must be a permutation of range(d)")
        self.signs = np.ones(d) if signs is None else np.asarray(signs, dtype=float)
        if not np.all(np.abs(self.signs) == 1):
            raise ArgumentError("signs must be +-1")
        if self.inverses is not None:
            self._inv = self._invert

    def _raw(self, pts):
        return np.stack([h(pts[:, k]) for k, h in enumerate(self.funcs)], axis=1)

    def _eval(self, pts):
        return self.signs * self._raw(pts)[:, self.perm]

    def _jac(self, pts):
        n, d = pts.shape
        dh = np.stack([g(pts[:, k]) for k, g in enumerate(self.derivs)], axis=1)
        if np.any(dh <= 0):
            raise DomainError("coordinate reparameterization is not strictly increasing here")
        J = np.zeros((n, d, d))
        rows = np.arange(d)
        J[:, rows, self.perm] = self.signs * dh[:, self.perm]
        return J

    def _invert(self, pts):
        raw = np.empty_like(pts)
        raw[:, self.perm] = pts * self.signs
        return np.stack([g(raw[:, k]) for k, g in enumerate(self.inverses)], axis=1)


class ConcatConformal2D(SmoothMap):
    """Block map acting with the k-th planar map on coordinates (2k, 2k+1)."""

    kind = "concat_conformal2d"

    def __init__(self, maps):
        self.maps = list(maps)
        if not self.maps or any(m.dim != 2 for m in self.maps):
            raise ArgumentError("concatenation needs a non-empty list of 2D maps")
        super().__init__(2 * len(self.maps), ProductDomain([m.domain for m in self.maps]))
        if all(m.has_inverse for m in self.maps):
            self._inv = self._invert

    def _eval(self, pts):
        return np.concatenate(
            [m.evaluate(pts[:, 2 * k: 2 * k + 2]) for k, m in enumerate(self.maps)], axis=1
        )

    def _jac(self, pts):
        J = np.zeros((len(pts), self.dim, self.dim))
        for k, m in enumerate(self.maps):
            J[:, 2 * k: 2 * k + 2, 2 * k: 2 * k + 2] = m.jacobian(pts[:, 2 * k: 2 * k + 2])
        return J

    def _invert(self, pts):
        return np.concatenate(
            [m.inverse(pts[:, 2 * k: 2 * k + 2]) for k, m in enumerate(self.maps)], axis=1
        )

    def describe(self):
        return {"kind": self.kind, "maps": [m.describe() for m in self.maps]}


class ComposedMap(SmoothMap):
    """outer o inner; the image of ``inner`` is checked against ``outer`` lazily."""

    kind = "compose"

    def __init__(self, outer, inner):
        if outer.dim != inner.dim:
            raise ArgumentError("composed maps must share their dimension")
        super().__init__(inner.dim, inner.domain)
        self.outer, self.inner = outer, inner
        if outer.has_inverse and inner.has_inverse:
            self._inv = lambda pts: inner.inverse(outer.inverse(pts))

    @property
    def has_analytic_jacobian(self):
        return self.outer.has_analytic_jacobian and self.inner.has_analytic_jacobian

    def _eval(self, pts):
        return self.outer.evaluate(self.inner.evaluate(pts))

    def _jac(self, pts):
        return self.outer.jacobian(self.inner.evaluate(pts)) @ self.inner.jacobian(pts)

    def _logdet(self, pts):
        return self.outer.log_abs_det_jacobian(self.inner.evaluate(pts)) + \
            self.inner.log_abs_det_jacobian(pts)

    def describe(self):
        return {"kind": self.kind, "outer": self.outer.describe(), "inner": self.inner.describe()}


def compose(outer, inner):
    return ComposedMap(outer, inner)


def compose_all(maps):
    """Compose a list applied first-to-last: ``maps[-1] o ... o maps[0]``."""
    maps = list(maps)
    if not maps:
        raise ArgumentError("empty composition")
    out = maps[0]
    for m in maps[1:]:
        out = ComposedMap(m, out)
    return out


# --------------------------------------------------------------------------
# classifiers


@dataclass
class ClassReport:
    kind: str
    max_residual: float
    passed: bool
    tol: float
    residuals: np.ndarray = field(repr=False)
    worst: list = field(default_factory=list)

    def to_dict(self):
        return {"kind": self.kind, "max_residual": self.max_residual, "passed": self.passed,
                "tol": self.tol, "worst": self.worst}


def _report(kind, residuals, points, tol, n_worst=5):
    residuals = np.asarray(residuals, dtype=float)
    order = np.argsort(residuals)[::-1][:n_worst]
    worst = [{"index": int(i), "point": points[i].tolist(), "residual": float(residuals[i])}
             for i in order]
    mx = float(np.max(residuals))
    return ClassReport(kind, mx, bool(mx <= tol), float(tol), residuals, worst)


def _gram(f, points):
    pts, _ = as_points(points)
    if len(pts) == 0:
        raise ArgumentError("classification needs at least one point")
    J = f.jacobian(pts)
    return pts, J, np.einsum("nki,nkj->nij", J, J)


def classify_conformal(f, points, tol=DEFAULT_TOLERANCES.residual_tol):
    """Df^T Df must be a multiple of the identity; residual scaled by max(1, lambda)."""
    pts, _, G = _gram(f, points)
    d = G.shape[-1]
    lam = np.trace(G, axis1=1, axis2=2) / d
    dev = np.max(np.abs(G - lam[:, None, None] * np.eye(d)), axis=(1, 2))
    return _report("conformal", dev / np.maximum(1.0, lam), pts, tol)


def oct_residuals_from_gram(G):
    d = G.shape[-1]
    diag = np.sqrt(np.abs(np.einsum("nii->ni", G)))
    norm = diag[:, :, None] * diag[:, None, :]
    off = np.abs(G) * (1.0 - np.eye(d))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(norm > 0, off / norm, np.where(off > 0, np.inf, 0.0))
    return np.max(rel, axis=(1, 2))


def classify_oct(f, points, tol=DEFAULT_TOLERANCES.residual_tol):
    """Columns of Df must be pairwise orthogonal; residual is the worst |cos angle|."""
    pts, _, G = _gram(f, points)
    return _report("oct", oct_residuals_from_gram(G), pts, tol)


def classify_volume_preserving(f, points, tol=DEFAULT_TOLERANCES.residual_tol):
    pts, _ = as_points(points)
    if len(pts) == 0:
        raise ArgumentError("classification needs at least one point")
    det = np.linalg.det(f.jacobian(pts))
    return _report("volume_preserving", np.abs(det - 1.0), pts, tol)


CLASSIFIERS = {
    "conformal": classify_conformal,
    "oct": classify_oct,
    "volume_preserving": classify_volume_preserving,
}
