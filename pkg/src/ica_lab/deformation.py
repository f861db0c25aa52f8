"""Checks on smooth deformations of an orthogonal-coordinate mixing.

A deformation is a family of mixings ``Phi_t`` with ``Phi_0 = f_0``. Against a
(possibly also moving) reference family ``f_t`` the composition
``Psi_t = Phi_t^{-1} o f_t`` is generated by a vector field ``X_t``. For a
family that stays inside the OCT class with ``f_t = f_0`` the generator must
satisfy, with Lambda = diag(Df_0^T Df_0):

* ``Lambda_i d_j X_i + Lambda_j d_i X_j = 0`` for every pair i != j,
* ``Div X = 0`` (distribution preservation for the uniform law),
* ``X = 0`` near the boundary of the cube,

and each component then solves ``d_i^2 X_i - sum_{j != i} d_j(a_j d_j X_i) = 0``
with ``a_j = Lambda_i / Lambda_j``.
"""

from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from .errors import ArgumentError, CapabilityError, PreconditionError
from .maps import SmoothMap, classify_oct
from .numerics import as_points
from .spurious import FlowMap, VectorField

OCT_PRECHECK_TOL = 1e-6
RESONANCE_TOL = 1e-9


class _DeformedMap(SmoothMap):
    kind = "deformed"

    def __init__(self, f0, flow):
        super().__init__(f0.dim, flow.domain)
        self.f0, self.flow = f0, flow
        if f0.has_inverse:
            self._inv = lambda pts: flow.evaluate(f0.inverse(pts))

    def _eval(self, pts):
        return self.f0.evaluate(self.flow.inverse(pts))


class Deformation:
    """``Phi_t`` either assembled from a generator as ``f_0 o Flow_X(t)^{-1}``
    (then ``Psi_t = Flow_X(t)`` against ``f_t = f_0``) or given directly as a
    callable ``t -> SmoothMap``."""

    def __init__(self, f0, family=None, generator=None, window=1.0, steps=200):
        if (family is None) == (generator is None):
            raise ArgumentError("give exactly one of family or generator")
        if window <= 0:
            raise ArgumentError("time window must be positive")
        self.f0, self.family, self.generator = f0, family, generator
        self.window, self.steps = float(window), int(steps)

    @classmethod
    def from_generator(cls, f0, X, window=1.0, steps=200):
        return cls(f0, generator=X, window=window, steps=steps)

    @classmethod
    def from_family(cls, f0, family, window=1.0):
        return cls(f0, family=family, window=window)

    def at(self, t):
        if abs(t) >= self.window:
            raise ArgumentError(f"t={t} outside the window (-{self.window}, {self.window})")
        if self.family is not None:
            return self.family(t)
        return _DeformedMap(self.f0, FlowMap(self.generator, t, self.steps))

    def check_initial(self, points, tol=1e-8):
        """Max |Phi_0 - f_0| on ``points``; raises if above ``tol``."""
        pts, _ = as_points(points)
        gap = float(np.max(np.abs(self.at(0.0).evaluate(pts) - self.f0.evaluate(pts))))
        if gap > tol:
            raise PreconditionError(f"deformation does not start at f0 (gap {gap:.3g})")
        return gap

    def describe(self):
        out = {"kind": "deformation", "f0": self.f0.describe(), "window": self.window}
        if self.generator is not None:
            out["generator"] = self.generator.describe()
        return out


def _as_family(f_t):
    if f_t is None:
        return None
    if isinstance(f_t, SmoothMap):
        return lambda t: f_t
    return f_t


def extract_generator(deformation, f_t_family=None, t=0.0, dt=1e-4):
    """Central difference in time of ``Psi_t = Phi_t^{-1} o f_t``.

    ``f_t_family`` is a callable ``t -> SmoothMap`` or a fixed map; ``None``
    keeps the reference at ``f_0``.
    """
    family = _as_family(f_t_family) or (lambda _t: deformation.f0)

    def transport(s, pts):
        deformed, f = deformation.at(s), family(s)
        if not deformed.has_inverse:
            raise CapabilityError("the deformed map has no inverse")
        return deformed.inverse(f.evaluate(pts))

    def pull_back(pts):
        deformed, f = deformation.at(t), family(t)
        if not f.has_inverse:
            raise CapabilityError("the reference map has no inverse")
        return f.inverse(deformed.evaluate(pts))

    def fn(_t, pts):
        base = pts if t == 0.0 else pull_back(pts)
        return (transport(t + dt, base) - transport(t - dt, base)) / (2.0 * dt)

    return VectorField(fn, deformation.f0.dim, name=f"extracted@t={t:g}")


@dataclass
class ConstraintReport:
    pair_residuals: dict = field(default_factory=dict)   # (i, j) -> max normalized residual
    first_order_max: float = 0.0
    divergence_max: float = 0.0
    boundary_max: float = None
    wave: dict = field(default_factory=dict)             # i -> max residual
    tol: float = 1e-6
    div_tol: float = 1e-7
    first_order_passed: bool = True
    divergence_passed: bool = True
    worst_point: list = None
    # per-point residuals keyed by pair (i, j) or "divergence"
    pointwise: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self):
        return self.first_order_passed and self.divergence_passed

    def to_dict(self):
        return {
            "pairs": [{"i": i, "j": j, "residual": r} for (i, j), r in self.pair_residuals.items()],
            "first_order_max": self.first_order_max,
            "first_order_passed": self.first_order_passed,
            "divergence_max": self.divergence_max,
            "divergence_passed": self.divergence_passed,
            "boundary_max": self.boundary_max,
            "wave": {str(k): v for k, v in self.wave.items()},
            "tol": self.tol,
            "div_tol": self.div_tol,
            "worst_point": self.worst_point,
        }


def metric_diagonal(f0, points):
    """Lambda = diag(Df_0^T Df_0) at each point, after checking f_0 is OCT there."""
    pts, _ = as_points(points)
    report = classify_oct(f0, pts, OCT_PRECHECK_TOL)
    if not report.passed:
        raise PreconditionError(
            f"f0 is not OCT on the given points (residual {report.max_residual:.3g})")
    J = f0.jacobian(pts)
    return np.einsum("nki,nki->ni", J, J)


def oct_constraint_residual(f0, X, points, tol=1e-6, div_tol=1e-7, t=0.0):
    """First-order OCT-preservation residuals and the divergence of ``X``.

    The pair residual |Lambda_i d_j X_i + Lambda_j d_i X_j| is divided by
    sqrt(Lambda_i Lambda_j) (||X||_inf + 1e-12), which makes it invariant under
    rescaling of f_0 and of X.
    """
    pts, _ = as_points(points)
    metric = metric_diagonal(f0, pts)
    J = X.jacobian(t, pts)
    scale = float(np.max(np.abs(X.evaluate(t, pts)))) + 1e-12
    d = pts.shape[1]
    pairs, pointwise = {}, {}
    worst, worst_val = None, -1.0
    for i, j in itertools.combinations(range(d), 2):
        raw = np.abs(metric[:, i] * J[:, i, j] + metric[:, j] * J[:, j, i])
        res = raw / (np.sqrt(metric[:, i] * metric[:, j]) * scale)
        k = int(np.argmax(res))
        pairs[(i, j)] = float(res[k])
        pointwise[(i, j)] = res
        if res[k] > worst_val:
            worst, worst_val = pts[k].tolist(), float(res[k])
    pointwise["divergence"] = np.abs(np.trace(J, axis1=1, axis2=2))
    div = float(np.max(pointwise["divergence"]))
    first = max(pairs.values()) if pairs else 0.0
    return ConstraintReport(pairs, first, div, None, {}, tol, div_tol,
                            first <= tol, div <= div_tol, worst, pointwise)


def wave_residual(f0, X, i, points, h=1e-3, t=0.0):
    """max |d_i^2 X_i - sum_{j != i} d_j(a_j d_j X_i)|, a_j = Lambda_i / Lambda_j,
    by nested central differences with staggered evaluation of a_j."""
    pts, _ = as_points(points)
    d = pts.shape[1]
    if not 0 <= i < d:
        raise ArgumentError(f"component index {i} out of range")
    metric_diagonal(f0, pts)

    def Xi(q):
        return X.evaluate(t, q)[:, i]

    def metric_at(q):
        J = f0.jacobian(q)
        return np.einsum("nki,nki->ni", J, J)

    centre = Xi(pts)
    total = np.zeros(len(pts))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        up, down = Xi(pts + e), Xi(pts - e)
        if j == i:
            total += (up - 2.0 * centre + down) / h ** 2
            continue
        m_up, m_down = metric_at(pts + 0.5 * e), metric_at(pts - 0.5 * e)
        a_up = m_up[:, i] / m_up[:, j]
        a_down = m_down[:, i] / m_down[:, j]
        total -= (a_up * (up - centre) - a_down * (centre - down)) / h ** 2
    return float(np.max(np.abs(total)))


def boundary_points(dim, epsilon, samples, rng):
    """Uniform points of the cube with one random coordinate pushed within
    ``epsilon`` of a face."""
    pts = rng.uniform(0.0, 1.0, (samples, dim))
    axis = rng.integers(0, dim, samples)
    depth = rng.uniform(0.0, epsilon, samples)
    side = rng.integers(0, 2, samples)
    pts[np.arange(samples), axis] = np.where(side == 1, 1.0 - depth, depth)
    return pts


def boundary_vanishing(X, epsilon, samples=1000, seed=0, t=0.0):
    """max |X| over sampled points within ``epsilon`` of the cube boundary."""
    if not 0 < epsilon < 0.5:
        raise ArgumentError("epsilon must lie in (0, 0.5)")
    pts = boundary_points(X.dim, epsilon, int(samples), np.random.default_rng(seed))
    return float(np.max(np.linalg.norm(X.evaluate(t, pts), axis=1)))


def resonance_alpha(mu, m, i):
    """alpha = sqrt(sum_{j != i} m_j^2 mu_i^2 / mu_j^2); resonant iff alpha is an integer."""
    mu = np.asarray(mu, dtype=float)
    m = np.asarray(m, dtype=float)
    if mu.shape != m.shape or mu.ndim != 1:
        raise ArgumentError("mu and m must be vectors of equal length")
    if not 0 <= i < mu.size:
        raise ArgumentError(f"index {i} out of range for dimension {mu.size}")
    if np.any(mu <= 0) or np.any(m < 0):
        raise ArgumentError("mu must be positive and m non-negative")
    others = np.arange(mu.size) != i
    alpha = math.sqrt(float(np.sum(m[others] ** 2 * mu[i] ** 2 / mu[others] ** 2)))
    return alpha, abs(alpha - round(alpha)) < RESONANCE_TOL


def resonance_scan(mu, i, max_norm=20):
    """All m (entries off index i, 0 < |m| <= max_norm) whose alpha is an integer."""
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    if not 0 <= i < d:
        raise ArgumentError(f"index {i} out of range for dimension {d}")
    free = [j for j in range(d) if j != i]
    grid = np.stack(np.meshgrid(*[np.arange(max_norm + 1)] * len(free), indexing="ij"),
                    axis=-1).reshape(-1, len(free))
    norm2 = np.sum(grid ** 2, axis=1)
    grid = grid[(norm2 > 0) & (norm2 <= max_norm ** 2)]
    alpha = np.sqrt(np.sum(grid ** 2 * (mu[i] / mu[free]) ** 2, axis=1))
    hit = np.abs(alpha - np.round(alpha)) < RESONANCE_TOL
    out = []
    for row, a in zip(grid[hit], alpha[hit]):
        m = np.zeros(d, dtype=int)
        m[free] = row
        out.append((m.tolist(), float(a)))
    return out
