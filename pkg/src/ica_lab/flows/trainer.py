"""Warm-started training of flows on a drifting observational distribution.

Many runs (seeds x regularization weights) are trained together with their
parameters stacked along a model axis. Each run owns its random substreams
(init, permutations, sampling, evaluation), its Adam moments and its stopping
decision, so its trajectory does not depend on which other runs share the stack.
"""

from dataclasses import asdict, dataclass, field
import ctypes
import csv
import hashlib
import json
import zlib

import numpy as np

from ..errors import ArgumentError, NumericError, TrainingError
from .adam import AdamState, adam_step
from .model import (
    FlowModel,
    base_logp,
    c_oct_from_inverse_jacobian,
    forward_pass,
    inverse_pass,
    loss_and_grad,
)
from .scenarios import DriftScenario, sample_latent

CHECKPOINT_FORMAT = "ica_lab.flow-checkpoint"
CHECKPOINT_VERSION = 1
TRACE_COLUMNS = ("t", "l1", "kl", "c_oct", "arm", "seed")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 2.0
    steps: int = 1000
    batch: int = 256
    time_points: int = 10
    lr: float = 1e-3
    seed: int = 0
    n_layers: int = 5
    hidden: int = 15
    clamp: float = 7.0
    pretrain_steps: int = 2000
    pretrain_lr: float = 3e-3
    pretrain_check_every: int = 250
    kl_target: float = 0.1
    kl_fail: float = 1.0
    # weight of |g^{-1}(f_0(s)) - s|^2 during pretraining; 0 is plain likelihood
    anchor_weight: float = 0.0
    eval_samples: int = 8192
    coct_samples: int = 4096
    log_every: int = 10

    def __post_init__(self):
        for name in ("steps", "batch", "time_points", "n_layers", "hidden", "pretrain_check_every",
                     "eval_samples", "coct_samples", "log_every"):
            if int(getattr(self, name)) < 1:
                raise ArgumentError(f"{name} must be positive")
        if self.pretrain_steps < 0:
            raise ArgumentError("pretrain_steps must be >= 0")
        for name in ("lr", "pretrain_lr", "clamp", "kl_target", "kl_fail"):
            if not getattr(self, name) > 0:
                raise ArgumentError(f"{name} must be positive")
        if self.lam < 0 or self.anchor_weight < 0:
            raise ArgumentError("regularization weights must be non-negative")

    def with_(self, **changes):
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)

    def digest(self):
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def substream(seed, name, *extra):
    """Independent generator for one named purpose of one run."""
    key = [int(seed), zlib.crc32(name.encode())] + [int(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass
class TrainTrace:
    scenario: str
    seed: int
    lam: float
    swaps: list
    records: list = field(default_factory=list)
    pretrain: dict = field(default_factory=dict)
    status: str = "running"
    message: str = ""

    @property
    def arm(self):
        return f"lambda={self.lam:g}"

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def final(self, key):
        return self.records[-1][key]

    def all_finite(self):
        return all(np.isfinite(r[k]) for r in self.records for k in ("l1", "kl", "c_oct"))

    def to_dict(self):
        return asdict(self)


_ALLOCATOR_TUNED = False


def _tune_allocator():
    # training allocates many ~1 MB temporaries per step; glibc would serve them
    # through mmap and page-fault on every step
    global _ALLOCATOR_TUNED
    if _ALLOCATOR_TUNED:
        return
    _ALLOCATOR_TUNED = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)   # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)   # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def init_models(configs):
    return FlowModel.initialize(
        [substream(c.seed, "init") for c in configs],
        [substream(c.seed, "permutations") for c in configs],
        n_layers=configs[0].n_layers, hidden=configs[0].hidden, clamp=configs[0].clamp)


def _check_stackable(configs):
    if not configs:
        raise ArgumentError("no runs given")
    shared = ("steps", "batch", "time_points", "n_layers", "hidden", "clamp", "pretrain_steps",
              "pretrain_check_every", "eval_samples", "coct_samples", "log_every")
    for c in configs[1:]:
        for name in shared:
            if getattr(c, name) != getattr(configs[0], name):
                raise ArgumentError(f"runs trained together must share {name}")


def _draw(scenario, rngs, t, n):
    xs, ss = zip(*(scenario.sample(rng, t, n) for rng in rngs))
    return np.stack(xs), np.stack(ss)


def evaluate(model, scenario, t, configs, index):
    """L1, forward KL and C_OCT (value and standard error) for every stacked model."""
    n_eval = configs[0].eval_samples
    n_coct = configs[0].coct_samples
    x, s = _draw(scenario, [substream(c.seed, "evaluation", index) for c in configs], t, n_eval)
    s1, s2, logdet, _ = inverse_pass(model.params, model.swaps, x[..., 0], x[..., 1],
                                     model.clamp, with_jacobian=False)
    err = np.hypot(s1 - s[..., 0], s2 - s[..., 1])
    gap = scenario.target_logp(t, s) - (base_logp(s1, s2) + logdet)
    # C_OCT of the model integrates against the latent law
    z = np.stack([sample_latent(substream(c.seed, "contrast", index), n_coct) for c in configs])
    g1, g2, _ = forward_pass(model.params, model.swaps, z[..., 0], z[..., 1], model.clamp)
    _, _, _, K = inverse_pass(model.params, model.swaps, g1, g2, model.clamp)
    contrast = c_oct_from_inverse_jacobian(K)
    out = []
    for k in range(model.n_models):
        row = {}
        for key, vals in (("l1", err[k]), ("kl", gap[k]), ("c_oct", contrast[k])):
            row[key] = float(np.mean(vals))
            row[key + "_se"] = float(np.std(vals, ddof=1) / np.sqrt(len(vals)))
        out.append(row)
    return out


def _run_steps(model, state, scenario, t, configs, rngs, steps, lr, anchor, losses, active=None):
    lams = np.array([c.lam for c in configs])
    anchor_w = np.array([c.anchor_weight for c in configs]) if anchor else None
    batch = configs[0].batch
    window = []
    for _ in range(steps):
        x, s = _draw(scenario, rngs, t, batch)
        if anchor_w is not None and np.any(anchor_w > 0):
            loss, grad = loss_and_grad(model, x, lams, targets=s, sup_weight=anchor_w[:, None])
        else:
            loss, grad = loss_and_grad(model, x, lams)
        new = adam_step(state, grad, lr)
        if active is not None and not np.all(active):
            for k, p in new.params.items():
                p[~active] = state.params[k][~active]
        state = new
        model.params = state.params
        window.append(loss)
        if len(window) == configs[0].log_every:
            losses.append(np.mean(window, axis=0))
            window = []
    return state


def pretrain_many(scenario, configs):
    """Fit every run to the t = 0 distribution; returns ``(model, infos)``.

    A run stops as soon as its forward KL (checked every
    ``pretrain_check_every`` steps) is below ``kl_target``; a run whose KL is
    still above ``kl_fail`` when the budget is spent raises :class:`TrainingError`.
    """
    _check_stackable(configs)
    _tune_allocator()
    cfg = configs[0]
    lrs = {c.pretrain_lr for c in configs}
    if len(lrs) != 1:
        raise ArgumentError("runs trained together must share pretrain_lr")
    model = init_models(configs)
    rngs = [substream(c.seed, "sampling", 0) for c in configs]
    state = AdamState.fresh(model.params)
    active = np.ones(len(configs), dtype=bool)
    losses, history = [], []
    done = 0
    kls = np.full(len(configs), np.inf)
    while True:
        metrics = evaluate(model, scenario, 0.0, configs, 0)
        kls = np.array([m["kl"] for m in metrics])
        history.append({"step": done, "kl": kls.tolist()})
        active &= ~(kls < np.array([c.kl_target for c in configs]))
        if not np.any(active) or done >= cfg.pretrain_steps:
            break
        chunk = min(cfg.pretrain_check_every, cfg.pretrain_steps - done)
        try:
            state = _run_steps(model, state, scenario, 0.0, configs, rngs, chunk,
                               cfg.pretrain_lr, True, losses, active)
        except NumericError as exc:
            raise TrainingError(f"pretraining failed: {exc}", trace=history) from exc
        done += chunk
    infos = [{"steps": history[-1]["step"], "kl": float(kls[k]),
              "t0": metrics[k], "kl_history": [h["kl"][k] for h in history],
              "loss_curve": [float(l[k]) for l in losses]} for k in range(len(configs))]
    failed = [c.seed for c, kl in zip(configs, kls) if not kl < c.kl_fail]
    if failed:
        raise TrainingError(f"forward KL stayed above the failure level for seeds {failed}",
                            trace=infos)
    return model, infos


def pretrain_t0(scenario, config):
    model, _ = pretrain_many(scenario, [config])
    return model


def drift_many(scenario, configs, model=None, pretrain_infos=None):
    """Warm-started training over ``t_i = i / time_points``, one trace per run."""
    _check_stackable(configs)
    _tune_allocator()
    if model is None:
        model, pretrain_infos = pretrain_many(scenario, configs)
    elif model.n_models != len(configs):
        raise ArgumentError("model stack and run list differ in length")
    model = model.copy()
    traces = [TrainTrace(scenario.kind, c.seed, c.lam, model.swaps[k].astype(int).tolist(),
                         pretrain=(pretrain_infos or [{}] * len(configs))[k])
              for k, c in enumerate(configs)]
    cfg = configs[0]
    lrs = {c.lr for c in configs}
    if len(lrs) != 1:
        raise ArgumentError("runs trained together must share lr")
    for i in range(1, cfg.time_points + 1):
        t = i / cfg.time_points
        rngs = [substream(c.seed, "sampling", i) for c in configs]
        losses = []
        try:
            _run_steps(model, AdamState.fresh(model.params), scenario, t, configs, rngs,
                       cfg.steps, cfg.lr, False, losses)
        except NumericError as exc:
            for tr in traces:
                tr.status, tr.message = "failed", f"t={t:g}: {exc}"
            raise TrainingError(f"drift training failed at t={t:g}: {exc}", trace=traces) from exc
        for k, row in enumerate(evaluate(model, scenario, t, configs, i)):
            row.update(t=t, loss_curve=[float(l[k]) for l in losses])
            traces[k].records.append(row)
    for tr in traces:
        tr.status = "complete" if tr.all_finite() else "non-finite"
    return model, traces


def drift_train(scenario, config, model=None):
    _, traces = drift_many(scenario, [config], model)
    return traces[0]


def run_arms(scenario, seeds, lambdas, base=None):
    """Every (seed, lambda) pair trained in one stack; returns ``(model, traces)``."""
    base = base or TrainConfig()
    configs = [base.with_(seed=int(s), lam=float(lam)) for lam in lambdas for s in seeds]
    return drift_many(scenario, configs)


def write_trace_csv(path, traces):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for tr in traces:
            for r in tr.records:
                writer.writerow([f"{r['t']:.6g}", repr(r["l1"]), repr(r["kl"]), repr(r["c_oct"]),
                                 tr.arm, tr.seed])


def save_checkpoint(path, model, config, index=0):
    one = model.select(index)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": config.seed,
        "config": asdict(config),
        "config_hash": config.digest(),
        "swaps": one.swaps[0].astype(int).tolist(),
        "clamp": one.clamp,
        "params": {k: v[0].tolist() for k, v in one.params.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    """Return ``(model, config)``."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ArgumentError(f"{path} is not a flow checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ArgumentError(f"unsupported checkpoint version {payload.get('version')}")
    config = TrainConfig(**payload["config"])
    if config.digest() != payload["config_hash"]:
        raise ArgumentError("checkpoint config hash mismatch")
    params = {k: np.asarray(v, dtype=float)[None] for k, v in payload["params"].items()}
    swaps = np.asarray(payload["swaps"], dtype=bool)[None]
    return FlowModel(params, swaps, payload["clamp"]), config


__all__ = [
    "DriftScenario", "TrainConfig", "TrainTrace", "drift_many", "drift_train", "evaluate",
    "load_checkpoint", "pretrain_many", "pretrain_t0", "run_arms", "save_checkpoint",
    "substream", "write_trace_csv",
]
