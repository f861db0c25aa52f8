"""Two-dimensional masked affine autoregressive flow.

Each layer, read in the generative direction (latent ``u`` -> data ``v``)::

    v1 = u1 * exp(p1) + q1                      (constant affine)
    v2 = u2 * exp(a(v1)) + m(v1)                (conditioned on v1)

with ``(m, a)`` produced by a one-hidden-layer tanh perceptron of width 15 and
``a`` clamped to ``[-clamp, clamp]``. The density direction therefore needs a
single conditioner pass per layer, as in a MAF. Layers are followed by fixed
random permutations; in 2D a permutation is either the identity or a swap.

Parameters are stacked along a leading model axis ``M`` so many independent
models (seeds, regularization arms) train in one vectorized pass. Every
reduction is per model, so stacking does not couple models.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import autodiff as ad
from ..errors import NumericError
from ..maps import FunctionMap

PARAM_NAMES = ("w1", "b1", "w_out", "c_out", "d_shift", "d_scale")
# trailing shape of each parameter per (model, layer); "H" is the hidden width
PARAM_SHAPES = {"w1": ("H",), "b1": ("H",), "w_out": ("H", 2), "c_out": (2,),
                "d_shift": (), "d_scale": ()}
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class FlowModel:
    params: dict        # name -> array (M, L, *PARAM_SHAPES[name])
    swaps: np.ndarray   # (M, L) bool, permutation after each layer
    clamp: float = 7.0

    @property
    def n_models(self):
        return self.swaps.shape[0]

    @property
    def n_layers(self):
        return self.swaps.shape[1]

    @property
    def hidden(self):
        return self.params["w1"].shape[-1]

    def permutations(self):
        """Per model and layer, the permutation of (0, 1) applied after the layer."""
        return np.where(self.swaps[..., None], [1, 0], [0, 1])

    def copy(self):
        return FlowModel({k: v.copy() for k, v in self.params.items()}, self.swaps.copy(),
                         self.clamp)

    def select(self, idx):
        idx = np.atleast_1d(idx)
        return FlowModel({k: v[idx].copy() for k, v in self.params.items()},
                         self.swaps[idx].copy(), self.clamp)

    @classmethod
    def stack(cls, models):
        return cls({k: np.concatenate([m.params[k] for m in models]) for k in PARAM_NAMES},
                   np.concatenate([m.swaps for m in models]), models[0].clamp)

    @classmethod
    def zeros(cls, n_models=1, n_layers=5, hidden=15, swaps=None, clamp=7.0):
        params = {}
        for name in PARAM_NAMES:
            tail = tuple(hidden if n == "H" else n for n in PARAM_SHAPES[name])
            params[name] = np.zeros((n_models, n_layers) + tail)
        if swaps is None:
            swaps = np.zeros((n_models, n_layers), dtype=bool)
        return cls(params, np.asarray(swaps, dtype=bool), clamp)

    @classmethod
    def initialize(cls, init_rngs, perm_rngs, n_layers=5, hidden=15, clamp=7.0):
        """One model per (init, permutation) generator pair.

        Permutations are random per layer except the last, which is chosen so
        that the composed permutation is the identity.
        Hidden weights are O(1) so the conditioner is expressive; output
        weights start small so every layer begins close to the identity.
        """
        models = []
        for irng, prng in zip(init_rngs, perm_rngs):
            m = cls.zeros(1, n_layers, hidden, clamp=clamp)
            m.params["w1"][0] = irng.standard_normal((n_layers, hidden))
            m.params["b1"][0] = irng.standard_normal((n_layers, hidden))
            m.params["w_out"][0] = 0.01 * irng.standard_normal((n_layers, hidden, 2))
            swaps = np.array([prng.permutation(2)[0] == 1 for _ in range(n_layers)])
            # last permutation restores the latent labelling: the composition is the identity
            swaps[-1] = np.logical_xor.reduce(swaps[:-1])
            m.swaps[0] = swaps
            models.append(m)
        return cls.stack(models)


def _layer_params(params, l, wrap):
    out = {}
    for name in PARAM_NAMES:
        val = params[name][:, l]
        if name != "w_out":
            val = val[:, None]
        out[name] = wrap(name, l, val)
    return out


def _hidden(v1, w1, b1, with_derivative):
    """tanh(v1 * w1 + b1) of shape (M, n, H), stacked along the sample axis
    with its derivative in v1 when requested (then (M, 2n, H)).

    Fused on the tape: the hidden layer dominates the cost of a step.
    """
    v, w, b = ad._val(v1), ad._val(w1), ad._val(b1)
    h = np.tanh(v[..., None] * w + b)
    sech2 = 1.0 - h * h
    out = np.concatenate([h, sech2 * w], axis=1) if with_derivative else h
    if not any(isinstance(p, ad.Var) for p in (v1, w1, b1)):
        return out
    n = v.shape[-1]

    def back(g):
        gh = g[:, :n]
        if with_derivative:
            gd = g[:, n:]
            if isinstance(w1, ad.Var):
                ad._acc(w1, (gd * sech2).sum(axis=1, keepdims=True))
            gh = gh - 2.0 * h * (gd * w)
        gz = gh * sech2
        if isinstance(v1, ad.Var):
            ad._acc(v1, (gz @ np.swapaxes(w, -1, -2))[..., 0])
        if isinstance(w1, ad.Var):
            ad._acc(w1, v[:, None, :] @ gz)
        if isinstance(b1, ad.Var):
            ad._acc(b1, gz.sum(axis=1, keepdims=True))

    return ad.Var(out, tuple(p for p in (v1, w1, b1) if isinstance(p, ad.Var)), back)


def _conditioner(p, v1, clamp, with_derivative):
    n = ad._val(v1).shape[-1]
    out = ad.matmul(_hidden(v1, p["w1"], p["b1"], with_derivative), p["w_out"])
    m = ad.add(ad.getitem(out, (slice(None), slice(0, n), 0)), ad.getitem(p["c_out"], (Ellipsis, 0)))
    a_raw = ad.add(ad.getitem(out, (slice(None), slice(0, n), 1)),
                   ad.getitem(p["c_out"], (Ellipsis, 1)))
    a = ad.clip(a_raw, -clamp, clamp)
    if not with_derivative:
        return m, a, None, None
    dm = ad.getitem(out, (slice(None), slice(n, None), 0))
    inside = (ad._val(a_raw) >= -clamp) & (ad._val(a_raw) <= clamp)
    da = ad.mul(ad.getitem(out, (slice(None), slice(n, None), 1)), inside.astype(float))
    return m, a, dm, da


def _swap(sw, a, b):
    return ad.where(sw, b, a), ad.where(sw, a, b)


def inverse_pass(params, swaps, x1, x2, clamp=7.0, with_jacobian=True, wrap=None):
    """Data -> latent. Returns ``(s1, s2, logdet, K)`` where ``logdet`` is
    log|det Dg^{-1}(x)| and ``K = (k11, k12, k21, k22)`` is Dg^{-1}(x).

    ``x1``/``x2`` have shape ``(M, n)``. ``wrap(name, layer, value)`` may turn
    parameters into tape variables.
    """
    wrap = wrap or (lambda name, l, val: val)
    L = swaps.shape[1]
    k11, k12, k21, k22 = 1.0, 0.0, 0.0, 1.0
    logdet = 0.0
    v1, v2 = x1, x2
    for l in range(L):
        p = _layer_params(params, l, wrap)
        e1 = ad.exp(ad.neg(p["d_scale"]))
        u1 = ad.mul(ad.add(v1, ad.neg(p["d_shift"])), e1)
        m, a, dm, da = _conditioner(p, v1, clamp, with_jacobian)
        e2 = ad.exp(ad.neg(a))
        u2 = ad.mul(ad.add(v2, ad.neg(m)), e2)
        logdet = ad.add(logdet, ad.neg(ad.add(p["d_scale"], a)))
        if with_jacobian:
            b = ad.neg(ad.add(ad.mul(e2, dm), ad.mul(u2, da)))
            n11, n12 = ad.mul(e1, k11), ad.mul(e1, k12)
            n21 = ad.add(ad.mul(b, k11), ad.mul(e2, k21))
            n22 = ad.add(ad.mul(b, k12), ad.mul(e2, k22))
            k11, k12, k21, k22 = n11, n12, n21, n22
        sw = swaps[:, l][:, None]
        v1, v2 = _swap(sw, u1, u2)
        if with_jacobian:
            k11, k21 = _swap(sw, k11, k21)
            k12, k22 = _swap(sw, k12, k22)
        if not (np.all(np.isfinite(ad._val(v1))) and np.all(np.isfinite(ad._val(v2)))):
            raise NumericError(f"non-finite latent after layer {l}", layer=l)
    return v1, v2, logdet, (k11, k12, k21, k22)


def forward_pass(params, swaps, s1, s2, clamp=7.0):
    """Latent -> data (plain arrays). Returns ``(x1, x2, logdet)`` with
    logdet = log|det Dg(s)|."""
    L = swaps.shape[1]
    u1, u2 = s1, s2
    logdet = 0.0
    for l in reversed(range(L)):
        p = _layer_params(params, l, lambda name, ll, val: val)
        sw = swaps[:, l][:, None]
        u1, u2 = np.where(sw, u2, u1), np.where(sw, u1, u2)
        v1 = u1 * np.exp(p["d_scale"]) + p["d_shift"]
        m, a, _, _ = _conditioner(p, v1, clamp, False)
        v2 = u2 * np.exp(a) + m
        logdet = logdet + p["d_scale"] + a
        if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
            raise NumericError(f"non-finite output in layer {l}", layer=l)
        u1, u2 = v1, v2
    return u1, u2, logdet


def _split(pts, n_models):
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    if pts.ndim <= 2:
        pts = np.broadcast_to(pts.reshape(-1, 2)[None], (n_models,) + pts.reshape(-1, 2).shape)
    return pts[..., 0], pts[..., 1], single


def model_forward(model, s):
    """Generative direction: ``s`` of shape (2,), (n, 2) or (M, n, 2)."""
    s1, s2, single = _split(s, model.n_models)
    x1, x2, ld = forward_pass(model.params, model.swaps, s1, s2, model.clamp)
    x = np.stack([x1, x2], axis=-1)
    ld = np.broadcast_to(ld, x1.shape)
    if model.n_models == 1:
        x, ld = x[0], ld[0]
        if single:
            x, ld = x[0], float(ld[0])
    return x, ld


def model_inverse(model, x):
    """Density direction: returns latents and log|det Dg^{-1}(x)|."""
    x1, x2, single = _split(x, model.n_models)
    s1, s2, ld, _ = inverse_pass(model.params, model.swaps, x1, x2, model.clamp,
                                 with_jacobian=False)
    s = np.stack([s1, s2], axis=-1)
    ld = np.broadcast_to(ld, s1.shape)
    if model.n_models == 1:
        s, ld = s[0], ld[0]
        if single:
            s, ld = s[0], float(ld[0])
    return s, ld


def base_logp(s1, s2):
    return -0.5 * (s1 * s1 + s2 * s2) - LOG_2PI


def log_density(model, x):
    """log p_theta(x) = log N(g^{-1}(x)) + log|det Dg^{-1}(x)|; shape (M, n)."""
    x1, x2, _ = _split(x, model.n_models)
    s1, s2, ld, _ = inverse_pass(model.params, model.swaps, x1, x2, model.clamp,
                                 with_jacobian=False)
    return base_logp(s1, s2) + ld


def inverse_jacobian(model, x):
    """Dg^{-1}(x) as an array of shape (M, n, 2, 2)."""
    x1, x2, _ = _split(x, model.n_models)
    _, _, _, K = inverse_pass(model.params, model.swaps, x1, x2, model.clamp)
    k = [np.broadcast_to(np.asarray(v, dtype=float), x1.shape) for v in K]
    return np.stack([np.stack(k[:2], -1), np.stack(k[2:], -1)], -2)


def c_oct_from_inverse_jacobian(K):
    """C_OCT integrand of g at s = g^{-1}(x), from K = Dg^{-1}(x) (2D).

    Columns of Dg = K^{-1} have norms |row_2(K)|/|det K| and |row_1(K)|/|det K|.
    """
    k11, k12, k21, k22 = K
    det = k11 * k22 - k12 * k21
    return (0.5 * np.log(k11 ** 2 + k12 ** 2) + 0.5 * np.log(k21 ** 2 + k22 ** 2)
            - np.log(np.abs(det)))


def as_smooth_map(model, index=0):
    """Expose one stacked model as a generative :class:`SmoothMap` with inverse
    and analytic Jacobian (the inverse of Dg^{-1} at g(s))."""
    single = model.select(index)

    def fwd(pts):
        return model_forward(single, pts)[0].reshape(-1, 2)

    def inv(pts):
        return model_inverse(single, pts)[0].reshape(-1, 2)

    def jac(pts):
        x = fwd(pts)
        return np.linalg.inv(inverse_jacobian(single, x)[0])

    return FunctionMap(fwd, 2, jac=jac, inv=inv, name="flow_model")


def objective_terms(model, x, lam, targets=None, sup_weight=0.0, wrap=None):
    """Per-model loss ``(M,)`` of L_ML + lam * C_OCT, both estimated on the
    batch ``x`` of shape ``(M, n, 2)`` or ``(n, 2)``.

    ``lam`` is a scalar or one weight per model. With ``targets`` (latents
    that generated ``x``), ``sup_weight * mean |g^{-1}(x) - targets|^2`` is added.
    """
    x1, x2, _ = _split(x, model.n_models)
    s1, s2, logdet, K = inverse_pass(model.params, model.swaps, x1, x2, model.clamp,
                                     with_jacobian=True, wrap=wrap)
    nll = ad.neg(ad.add(ad.add(ad.mul(ad.add(ad.square(s1), ad.square(s2)), -0.5), -LOG_2PI),
                        logdet))
    k11, k12, k21, k22 = K
    row1 = ad.log(ad.add(ad.square(k11), ad.square(k12)))
    row2 = ad.log(ad.add(ad.square(k21), ad.square(k22)))
    contrast = ad.add(ad.mul(ad.add(row1, row2), 0.5), ad.neg(logdet))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (model.n_models,))[:, None]
    per_point = ad.add(nll, ad.mul(contrast, lam))
    if targets is not None and np.any(sup_weight):
        t1, t2, _ = _split(targets, model.n_models)
        err = ad.add(ad.square(ad.add(s1, -t1)), ad.square(ad.add(s2, -t2)))
        per_point = ad.add(per_point, ad.mul(err, sup_weight))
    return ad.mean(per_point, axis=1)


def loss_and_grad(model, x, lam, targets=None, sup_weight=0.0):
    """Per-model losses and their gradients (dict shaped like ``model.params``)."""
    leaves = {}

    def wrap(name, l, val):
        v = ad.Var(val)
        leaves[(name, l)] = v
        return v

    losses = objective_terms(model, x, lam, targets, sup_weight, wrap)
    if not np.all(np.isfinite(losses.value)):
        raise NumericError("non-finite loss", layer=-1)
    ad.backward(ad.total(losses))
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    for (name, l), v in leaves.items():
        if v.grad is not None:
            grads[name][:, l] = v.grad if name == "w_out" else v.grad[:, 0]
    return losses.value.copy(), grads
