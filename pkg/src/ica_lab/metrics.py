"""Monte Carlo diagnostics: the OCT contrast, source-reconstruction L1 and forward KL.

Every estimator returns a :class:`MetricEstimate` carrying a standard error so
that comparisons can use statistical tolerances. Points where a quantity is
undefined (singular Jacobian, non-finite log-density, outside a domain) are
excluded and counted; more than 1% exclusions is an error.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import ArgumentError, EstimationError, SingularityError
from .numerics import as_points

MAX_EXCLUDED_FRACTION = 0.01
COLUMN_NORM_FLOOR = 1e-150


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray
    log_density: np.ndarray = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(pts) < 1:
            raise ArgumentError("a sample batch needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ArgumentError("sample batch contains non-finite points")
        object.__setattr__(self, "points", pts)
        if self.log_density is not None:
            logp = np.asarray(self.log_density, dtype=float).reshape(-1)
            if logp.shape != (len(pts),):
                raise ArgumentError("log_density must have one entry per point")
            object.__setattr__(self, "log_density", logp)

    @property
    def n(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


def _points(samples):
    if isinstance(samples, SampleBatch):
        return samples.points
    return SampleBatch(samples).points


@dataclass(frozen=True)
class MetricEstimate:
    value: float
    standard_error: float
    n_samples: int
    excluded: int = 0
    metric: str = ""

    def to_json(self):
        return {"metric": self.metric, "value": self.value,
                "stderr": self.standard_error, "n": self.n_samples}


def estimate(values, metric, n_total=None):
    """Mean and standard error of the finite entries of ``values``."""
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values)
    n_total = len(values) if n_total is None else n_total
    excluded = n_total - int(np.sum(keep))
    if excluded > MAX_EXCLUDED_FRACTION * n_total:
        raise EstimationError(f"{metric}: {excluded} of {n_total} points excluded")
    good = values[keep]
    if len(good) == 0:
        raise EstimationError(f"{metric}: no usable points")
    mean = float(np.mean(good))
    # a constant integrand has zero error, not rounding noise
    if len(good) < 2 or np.ptp(good) == 0.0:
        se = 0.0
    else:
        se = float(np.std(good, ddof=1) / math.sqrt(len(good)))
    return MetricEstimate(mean, se, len(good), excluded, metric)


def log_abs_det(J):
    """log |det J| for a batch ``(n, d, d)``; closed form for d <= 3, LU otherwise."""
    J = np.asarray(J, dtype=float)
    d = J.shape[-1]
    if d == 1:
        det = J[..., 0, 0]
    elif d == 2:
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    elif d == 3:
        det = (J[..., 0, 0] * (J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1])
               - J[..., 0, 1] * (J[..., 1, 0] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 0])
               + J[..., 0, 2] * (J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0]))
    else:
        return np.linalg.slogdet(J)[1]
    with np.errstate(divide="ignore"):
        return np.log(np.abs(det))


def c_oct_values(J):
    """Pointwise contrast for a batch; NaN where the Jacobian is singular or a
    column norm is below the floor."""
    J = np.asarray(J, dtype=float)
    norms = np.linalg.norm(J, axis=-2)
    logdet = log_abs_det(J)
    bad = np.any(norms < COLUMN_NORM_FLOOR, axis=-1) | ~np.isfinite(logdet)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sum(np.log(norms), axis=-1) - logdet
    # Hadamard's inequality; negative values are rounding only
    out = np.maximum(out, 0.0)
    return np.where(bad, np.nan, out)


def c_oct_pointwise(J):
    """sum_k log ||column_k(J)|| - log |det J| for a single square matrix."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ArgumentError("c_oct_pointwise expects a square matrix")
    val = c_oct_values(J[None])[0]
    if not np.isfinite(val):
        raise SingularityError("Jacobian is singular")
    return float(val)


def c_oct(f, samples):
    pts = _points(samples)
    return estimate(c_oct_values(f.jacobian(pts)), "c_oct")


def l1_recon(g_inv, f_t, samples):
    """Mean Euclidean error |g_inv(f_t(s)) - s|."""
    pts = _points(samples)
    x = f_t.evaluate(pts)
    inside = g_inv.domain.contains(x)
    err = np.full(len(pts), np.nan)
    if np.any(inside):
        rec = g_inv.evaluate(x[inside])
        err[inside] = np.linalg.norm(rec - pts[inside], axis=1)
    return estimate(err, "l1")


def forward_kl(target, model_logdensity, n, rng=None):
    """Mean of log q(x) - log p(x) over x ~ q.

    ``target`` is either an object with ``sample(rng, n)`` and ``log_density``
    or a pair ``(sampler, log_density)`` with ``sampler(rng, n)``.
    """
    if n < 100:
        raise ArgumentError("forward_kl needs n >= 100")
    rng = np.random.default_rng(rng)
    if isinstance(target, tuple):
        sampler, target_logp = target
    else:
        sampler, target_logp = target.sample, target.log_density
    x = sampler(rng, int(n))
    with np.errstate(all="ignore"):
        diff = np.asarray(target_logp(x), dtype=float) - np.asarray(model_logdensity(x), dtype=float)
    return estimate(diff, "forward_kl")


def gaussian_kl(mean_q, cov_q, mean_p, cov_p):
    """Closed-form KL(N(mean_q, cov_q) || N(mean_p, cov_p))."""
    mq, mp = np.atleast_1d(mean_q).astype(float), np.atleast_1d(mean_p).astype(float)
    cq, cp = np.atleast_2d(cov_q).astype(float), np.atleast_2d(cov_p).astype(float)
    d = mq.size
    diff = mp - mq
    solve = np.linalg.solve(cp, np.column_stack([cq, diff]))
    return 0.5 * (np.trace(solve[:, :d]) + diff @ solve[:, d] - d
                  + np.linalg.slogdet(cp)[1] - np.linalg.slogdet(cq)[1])


def gaussian_logpdf(mean, cov):
    """Batched log-density closure of N(mean, cov)."""
    mean = np.atleast_1d(mean).astype(float)
    cov = np.atleast_2d(cov).astype(float)
    chol = np.linalg.cholesky(cov)
    const = -0.5 * mean.size * math.log(2 * math.pi) - np.sum(np.log(np.diag(chol)))

    def logp(x):
        pts, _ = as_points(np.asarray(x, dtype=float).reshape(-1, mean.size))
        z = np.linalg.solve(chol, (pts - mean).T)
        return const - 0.5 * np.sum(z * z, axis=0)

    return logp


def gaussian_sampler(mean, cov):
    mean = np.atleast_1d(mean).astype(float)
    chol = np.linalg.cholesky(np.atleast_2d(cov).astype(float))
    return lambda rng, n: mean + rng.standard_normal((n, mean.size)) @ chol.T
