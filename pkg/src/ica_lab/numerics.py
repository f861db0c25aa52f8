"""Shared numerical kernels.

Finite-difference derivatives, fixed-step RK4 flows, adaptive Simpson
quadrature and bracketed inversion of monotone scalar functions. Everything
here is a pure function of its inputs.

Maps and fields are passed either as objects exposing ``evaluate`` or as plain
callables. Callables must accept a batch of points of shape ``(n, d)`` and
return ``(n, d)``; vector fields take ``(t, x)``.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ArgumentError, IntegrationError, PrecisionError, RangeError


@dataclass(frozen=True)
class ToleranceProfile:
    fd_step: float = 1e-5
    residual_tol: float = 1e-6
    quad_tol: float = 1e-10
    root_tol: float = 1e-12

    def __post_init__(self):
        for name in ("fd_step", "residual_tol", "quad_tol", "root_tol"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be strictly positive")


DEFAULT_TOLERANCES = ToleranceProfile()


def _map_fn(f):
    return f.evaluate if hasattr(f, "evaluate") else f


def _field_fn(field):
    return field.evaluate if hasattr(field, "evaluate") else field


def as_points(x):
    """Return ``(points, was_single)`` with points shaped ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ArgumentError(f"expected a point or a batch of points, got shape {x.shape}")
    return x, False


def fd_jacobian(f, x, h=DEFAULT_TOLERANCES.fd_step):
    """Central-difference Jacobian of ``f`` at ``x``.

    ``x`` may be a single point ``(d,)`` (returns ``(d, d)``) or a batch
    ``(n, d)`` (returns ``(n, d, d)``). Entry ``(i, j)`` is
    ``(f_i(x + h e_j) - f_i(x - h e_j)) / 2h``. Probe points outside the
    domain of ``f`` surface as whatever domain error ``f`` raises.
    """
    fn = _map_fn(f)
    pts, single = as_points(x)
    n, d = pts.shape
    offsets = h * np.eye(d)
    probes = np.concatenate([pts[:, None, :] + offsets, pts[:, None, :] - offsets], axis=1)
    vals = np.asarray(fn(probes.reshape(-1, d)), dtype=float).reshape(n, 2 * d, -1)
    jac = (vals[:, :d, :] - vals[:, d:, :]) / (2.0 * h)
    jac = np.swapaxes(jac, 1, 2)
    return jac[0] if single else jac


def fd_divergence(field, t, x, h=DEFAULT_TOLERANCES.fd_step):
    """Central-difference divergence of a (possibly time-dependent) field."""
    fn = _field_fn(field)
    pts, single = as_points(x)
    n, d = pts.shape
    total = np.zeros(n)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        plus = np.asarray(fn(t, pts + e), dtype=float)[:, i]
        minus = np.asarray(fn(t, pts - e), dtype=float)[:, i]
        total += (plus - minus) / (2.0 * h)
    return float(total[0]) if single else total


def rk4_flow(field, x0, t0, t1, steps=1000):
    """Classical RK4 approximation of the flow from ``t0`` to ``t1``.

    Fixed step count; ``t1 < t0`` integrates backwards. Raises
    :class:`IntegrationError` carrying the time at which a non-finite state
    first appeared.
    """
    if int(steps) < 1:
        raise ArgumentError("steps must be >= 1")
    fn = _field_fn(field)
    x, single = as_points(x0)
    x = x.copy()
    dt = (t1 - t0) / int(steps)
    t = float(t0)
    for _ in range(int(steps)):
        k1 = fn(t, x)
        k2 = fn(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = fn(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = fn(t + dt, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={t:.6g}", time=t)
        t += dt
    return x[0] if single else x


def quad_adaptive(f, a, b, tol=DEFAULT_TOLERANCES.quad_tol, max_depth=60, max_panels=200_000):
    """Adaptive Simpson quadrature of a scalar function on ``[a, b]``."""
    if not a < b:
        raise ArgumentError("quad_adaptive needs a < b")

    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = simpson(fa, fm, fb, a, b)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    panels = 0
    while stack:
        lo, hi, flo, fmid, fhi, est, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(flo, flm, fmid, lo, mid)
        right = simpson(fmid, frm, fhi, mid, hi)
        delta = left + right - est
        panels += 1
        if abs(delta) <= 15.0 * eps or hi - lo < 1e-15 * max(1.0, abs(a), abs(b)):
            total += left + right + delta / 15.0
            continue
        if depth >= max_depth or panels > max_panels:
            raise PrecisionError(
                f"subdivision limit exceeded on [{lo:.6g}, {hi:.6g}] (depth {depth})"
            )
        stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
        stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
    return total


def inverse_monotone(f, y, lo, hi, tol=DEFAULT_TOLERANCES.root_tol, df=None, max_iter=200):
    """Solve ``f(x) = y`` for strictly increasing ``f`` on ``[lo, hi]``.

    Bisection safeguards a Newton step whenever ``df`` is supplied. The bracket
    is the caller's responsibility; values outside ``[f(lo), f(hi)]`` raise
    :class:`RangeError`.
    """
    flo, fhi = f(lo), f(hi)
    if y < flo - tol or y > fhi + tol:
        raise RangeError(f"y={y!r} outside [{flo!r}, {fhi!r}]")
    if abs(flo - y) <= tol:
        return lo
    if abs(fhi - y) <= tol:
        return hi
    a, b = lo, hi
    x = 0.5 * (a + b)
    for _ in range(max_iter):
        fx = f(x)
        r = fx - y
        if abs(r) <= tol:
            return x
        if r < 0:
            a = x
        else:
            b = x
        nxt = None
        if df is not None:
            slope = df(x)
            if slope > 0 and math.isfinite(slope):
                cand = x - r / slope
                if a < cand < b:
                    nxt = cand
        x = 0.5 * (a + b) if nxt is None else nxt
        if b - a <= 4 * np.finfo(float).eps * max(1.0, abs(a), abs(b)):
            return x
    raise PrecisionError(f"inverse_monotone did not converge for y={y!r}")


def halton(n, d, skip=20):
    """First ``n`` points of the ``d``-dimensional Halton sequence in (0, 1)^d."""
    primes = []
    cand = 2
    while len(primes) < d:
        if all(cand % p for p in primes):
            primes.append(cand)
        cand += 1
    out = np.empty((n, d))
    for k, base in enumerate(primes):
        for idx in range(n):
            i = idx + skip + 1
            f, r = 1.0, 0.0
            while i > 0:
                f /= base
                r += f * (i % base)
                i //= base
            out[idx, k] = r
    return out


def default_unit_points(d, grid=5, n_quasi=500):
    """Interior test points of (0, 1)^d: a ``grid^d`` grid for d <= 3, else Halton."""
    if d <= 3:
        ticks = (np.arange(grid) + 0.5) / grid
        mesh = np.meshgrid(*([ticks] * d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    return halton(n_quasi, d)
