"""Time-varying mixing functions for the concept-drift experiment.

``rot``: x = exp(tW) (2 s1, s2) with W = [[0, 1], [-1, 0]].
``pol``: x = (r sin phi, r cos phi) with r = s1 + (t/2) sin(s1 + t) + 3 and
phi = (s2 + t)/2.

Latents are standard normal restricted to |s| < 4 (rejection sampling); the
polar mixing is injective there except on the r <= 0 tail, which has
probability about 1e-3 and is kept as is.
"""

from dataclasses import dataclass
import math

import numpy as np

from ..errors import ArgumentError
from ..maps import FunctionMap

LATENT_RADIUS = 4.0
LOG_2PI = math.log(2.0 * math.pi)
# mass of the standard 2D normal inside the latent disc
_LOG_MASS = math.log1p(-math.exp(-0.5 * LATENT_RADIUS ** 2))

KINDS = ("rot", "pol")


def sample_latent(rng, n):
    out = np.empty((0, 2))
    while len(out) < n:
        draw = rng.standard_normal((int(1.01 * (n - len(out))) + 16, 2))
        draw = draw[np.sum(draw * draw, axis=1) < LATENT_RADIUS ** 2]
        out = np.concatenate([out, draw])
    return out[:n]


def latent_logp(s):
    s = np.asarray(s, dtype=float)
    return -0.5 * np.sum(s * s, axis=-1) - LOG_2PI - _LOG_MASS


@dataclass(frozen=True)
class DriftScenario:
    kind: str = "rot"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown drift scenario {self.kind!r}; expected one of {KINDS}")

    def mix(self, t, s):
        s = np.asarray(s, dtype=float)
        s1, s2 = s[..., 0], s[..., 1]
        if self.kind == "rot":
            c, sn = math.cos(t), math.sin(t)
            u1, u2 = 2.0 * s1, s2
            return np.stack([c * u1 + sn * u2, -sn * u1 + c * u2], axis=-1)
        r = s1 + 0.5 * t * np.sin(s1 + t) + 3.0
        phi = 0.5 * (s2 + t)
        return np.stack([r * np.sin(phi), r * np.cos(phi)], axis=-1)

    def mix_jacobian(self, t, s):
        s = np.asarray(s, dtype=float)
        s1, s2 = s[..., 0], s[..., 1]
        J = np.empty(s.shape[:-1] + (2, 2))
        if self.kind == "rot":
            c, sn = math.cos(t), math.sin(t)
            J[...] = np.array([[2.0 * c, sn], [-2.0 * sn, c]])
            return J
        r = s1 + 0.5 * t * np.sin(s1 + t) + 3.0
        dr = 1.0 + 0.5 * t * np.cos(s1 + t)
        phi = 0.5 * (s2 + t)
        J[..., 0, 0] = dr * np.sin(phi)
        J[..., 1, 0] = dr * np.cos(phi)
        J[..., 0, 1] = 0.5 * r * np.cos(phi)
        J[..., 1, 1] = -0.5 * r * np.sin(phi)
        return J

    def log_abs_det(self, t, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "rot":
            return np.full(s.shape[:-1], math.log(2.0))
        s1 = s[..., 0]
        r = s1 + 0.5 * t * np.sin(s1 + t) + 3.0
        dr = 1.0 + 0.5 * t * np.cos(s1 + t)
        return np.log(np.abs(r)) + np.log(np.abs(dr)) - math.log(2.0)

    def unmix(self, t, x):
        """Inverse on the injective region (r > 0 for ``pol``)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "rot":
            c, sn = math.cos(t), math.sin(t)
            u1 = c * x[..., 0] - sn * x[..., 1]
            u2 = sn * x[..., 0] + c * x[..., 1]
            return np.stack([0.5 * u1, u2], axis=-1)
        r = np.hypot(x[..., 0], x[..., 1])
        phi = np.arctan2(x[..., 0], x[..., 1])
        # phi = (s2 + t)/2 stays inside (-pi, pi] for t in [0, 1]
        s2 = 2.0 * phi - t
        s1 = self._invert_radius(t, r)
        return np.stack([s1, s2], axis=-1)

    def _invert_radius(self, t, r):
        # s1 -> s1 + (t/2) sin(s1 + t) is increasing (slope >= 1/2)
        s1 = r - 3.0
        for _ in range(60):
            f = s1 + 0.5 * t * np.sin(s1 + t) + 3.0 - r
            s1 = s1 - f / (1.0 + 0.5 * t * np.cos(s1 + t))
            if np.max(np.abs(f)) < 1e-14:
                break
        return s1

    def sample(self, rng, t, n):
        """Return ``(x, s)`` with ``s`` from the latent law and ``x = f_t(s)``."""
        s = sample_latent(rng, n)
        return self.mix(t, s), s

    def target_logp(self, t, s):
        """log q_t(f_t(s)) by the change of variables."""
        return latent_logp(s) - self.log_abs_det(t, s)

    def mixing_map(self, t):
        return FunctionMap(lambda p: self.mix(t, p), 2,
                           jac=lambda p: self.mix_jacobian(t, p),
                           inv=lambda p: self.unmix(t, p), name=f"drift_{self.kind}")
