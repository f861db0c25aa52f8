"""One function per run kind: execute a validated config, return checks and data.

A pipeline returns a :class:`RunResult`; writing files and choosing the exit
code is left to the command line layer.
"""

from dataclasses import dataclass, field
import itertools
import os

import numpy as np

from . import spurious as S
from .deformation import boundary_points, boundary_vanishing, oct_constraint_residual, resonance_scan
from .errors import TrainingError
from .flows.scenarios import DriftScenario
from .flows.trainer import TrainConfig, run_arms, save_checkpoint, substream
from .maps import CLASSIFIERS, classify_oct, classify_volume_preserving, random_rotation


@dataclass
class RunResult:
    checks: list = field(default_factory=list)
    residuals: list = field(default_factory=list)   # rows (check, index, residual)
    info: dict = field(default_factory=dict)
    traces: list = None

    def check(self, name, passed, value, tol, **detail):
        self.checks.append({"name": name, "passed": bool(passed), "value": float(value),
                            "tol": None if tol is None else float(tol), **detail})

    def add_report(self, name, report):
        self.check(name, report.passed, report.max_residual, report.tol)
        self.add_residuals(name, report.residuals)

    def add_residuals(self, name, values):
        self.residuals.extend((name, k, float(v)) for k, v in enumerate(np.ravel(values)))

    @property
    def passed(self):
        return bool(self.checks) and all(c["passed"] for c in self.checks)


def _uniform(rng, n, lo, hi, dim):
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,))
    return lo + (hi - lo) * rng.uniform(size=(n, dim))


def run_verify(cfg):
    f = cfg.map.build()
    rng = substream(cfg.seed, "sampling")
    lo, hi = cfg.box if cfg.box is not None else f.domain.bounding_box()
    pts = _uniform(rng, cfg.n_points, lo, hi, f.dim)
    pts = pts[f.domain.contains(pts)]
    result = RunResult(info={"map": f.describe(), "n_points": int(len(pts))})
    if len(pts) == 0:
        result.check("points_in_domain", False, 0, None)
        return result
    tol = cfg.tol if cfg.tol is not None else 1e-6
    for name in cfg.checks:
        result.add_report(name, CLASSIFIERS[name](f, pts, tol))
    return result


def run_spurious(cfg):
    c = cfg.construction
    rng = substream(cfg.seed, "sampling")
    result = RunResult()
    if c.type == "xij_flow":
        p = c.density.build()
        field_ = S.build_xij(p, c.i, c.j)
        pts = p.sample(rng, cfg.n_points)
        result.info["field"] = field_.describe()
        for t in c.times:
            F = S.flow_map(field_, t, c.steps)
            result.add_report(f"volume_preserving@t={t:g}",
                              classify_volume_preserving(F, pts, cfg.tol or c.vp_tol))
            result.add_report(f"mpt@t={t:g}", S.verify_mpt(F, p, pts, cfg.tol or c.mpt_tol))
        return result
    if c.type == "compact_divfree_flow":
        bump = c.bump()
        field_ = S.build_compact_divfree(bump, c.i, c.j)
        cube = rng.uniform(size=(4 * cfg.n_points, c.dim))
        dist = np.linalg.norm(cube - bump.center, axis=1)
        inner = cube[dist < bump.radius][:cfg.n_points]
        outer = cube[dist >= bump.radius][:cfg.n_points]
        result.info["field"] = field_.describe()
        for t in c.times:
            F = S.flow_map(field_, t, c.steps)
            result.add_report(f"volume_preserving@t={t:g}",
                              classify_volume_preserving(F, inner, cfg.tol or c.vp_tol))
            if len(outer):
                moved = np.max(np.abs(F.evaluate(outer) - outer), axis=1)
                result.check(f"fixed_off_support@t={t:g}", np.all(moved == 0.0), np.max(moved), 0.0)
        return result
    profile = c.map.profile()
    dim = c.map.dim
    pts = rng.uniform(size=(cfg.n_points, dim))
    shell = boundary_points(dim, c.epsilon, cfg.n_points, rng)
    result.info["profile"] = {"center": list(profile.center), "radius": profile.radius,
                              "omega": profile.omega, "plane": [profile.i, profile.j]}
    for t in c.times:
        h = S.radius_rotation_map(profile, t)
        result.add_report(f"volume_preserving@t={t:g}",
                          classify_volume_preserving(h, pts, cfg.tol or c.vp_tol))
        moved = np.max(np.abs(h.evaluate(shell) - shell), axis=1)
        # outside the support ball the map is the identity bit for bit
        result.check(f"boundary_fixed@t={t:g}", np.all(moved == 0.0), np.max(moved), 0.0)
        result.add_residuals(f"boundary_fixed@t={t:g}", moved)
    return result


def distinct_rotations(d, n, rng, min_gap=0.2):
    """``n`` random rotations, redrawing any within ``min_gap`` (Frobenius) of an
    earlier one so that the family members are visibly different maps."""
    out = []
    while len(out) < n:
        R = random_rotation(d, rng)
        if all(np.linalg.norm(R - Q) >= min_gap for Q in out):
            out.append(R)
    return out


def run_prop1(cfg):
    radial = cfg.profile.build()
    d = radial.dim
    rng = substream(cfg.seed, "sampling")
    edge = max(10 * cfg.margin, 0.01)
    cube = _uniform(rng, cfg.n_points, edge, 1 - edge, d)
    source = S.uniform_cube_density(d)
    f = S.prop1_build(radial, cfg.margin)
    result = RunResult(info={"radial": radial.describe()})
    result.add_report("oct", classify_oct(f, cube, cfg.tol or cfg.oct_tol))
    result.add_report("density", S.verify_mpt(f, radial, f.evaluate(cube),
                                              cfg.tol or cfg.density_tol, source=source))
    rotations = distinct_rotations(d, cfg.n_rotations, substream(cfg.seed, "rotations"))
    family = [S.prop1_rotated_family(radial, R, cfg.margin) for R in rotations]
    for k, g in enumerate(family):
        result.add_report(f"rotated_mpt[{k}]", S.verify_mpt(g, radial, g.evaluate(cube),
                                                            cfg.tol or cfg.density_tol, source=source))
    if len(family) >= 2:
        axis = np.linspace(0.02, 0.98, 7 if d <= 3 else 3)
        grid = np.array(list(itertools.product(axis, repeat=d)))
        images = [g.evaluate(grid) for g in family]
        gaps = [float(np.max(np.abs(a - b))) for a, b in itertools.combinations(images, 2)]
        result.check("non_identifiable", min(gaps) > cfg.min_separation, min(gaps),
                     cfg.min_separation)
        result.add_residuals("pairwise_sup_gap", gaps)
    return result


def run_deform_check(cfg):
    f0 = cfg.f0.build()
    X = cfg.generator.build()
    rng = substream(cfg.seed, "sampling")
    pts = _uniform(rng, cfg.n_points, cfg.box[0], cfg.box[1], f0.dim)
    rep = oct_constraint_residual(f0, X, pts, cfg.tol or cfg.first_order_tol, cfg.divergence_tol)
    result = RunResult(info={"constraints": rep.to_dict()})
    if cfg.expect == "preserved":
        result.check("first_order", rep.first_order_passed, rep.first_order_max, rep.tol)
    else:
        result.check("first_order_violated", not rep.first_order_passed, rep.first_order_max, rep.tol)
    result.check("divergence", rep.divergence_passed, rep.divergence_max, rep.div_tol)
    for key, values in rep.pointwise.items():
        name = "divergence" if key == "divergence" else f"first_order({key[0]},{key[1]})"
        result.add_residuals(name, values)
    if cfg.boundary_epsilon is not None:
        b = boundary_vanishing(X, cfg.boundary_epsilon, cfg.n_points, cfg.seed)
        result.check("boundary", b <= 1e-12, b, 1e-12)
    if cfg.resonance is not None:
        r = cfg.resonance
        hits = resonance_scan(r.mu, r.i, r.max_norm)
        result.info["resonances"] = [{"m": m, "alpha": a} for m, a in hits]
    return result


def run_train_drift(cfg, out_dir=None):
    scenario = DriftScenario(cfg.scenario)
    base = TrainConfig(steps=cfg.steps, batch=cfg.batch, time_points=cfg.time_points, lr=cfg.lr,
                       n_layers=cfg.n_layers, hidden=cfg.hidden, pretrain_steps=cfg.pretrain_steps)
    seeds = cfg.seed_list()
    result = RunResult()
    try:
        model, traces = run_arms(scenario, seeds, cfg.lambdas, base)
        result.check("training", True, 0, None)
    except TrainingError as exc:
        traces = [t for t in (exc.trace or []) if hasattr(t, "records")]
        result.check("training", False, 1, None, message=str(exc))
        result.traces = traces
        return result
    result.traces = traces
    result.check("finite", all(t.all_finite() for t in traces), 0, None)
    summary = {}
    for lam in cfg.lambdas:
        arm = [t for t in traces if t.lam == lam]
        kl = max(float(np.max(t.column("kl"))) for t in arm)
        result.check(f"kl<{cfg.kl_max:g}[{arm[0].arm}]", kl < cfg.kl_max, kl, cfg.kl_max)
        summary[arm[0].arm] = {
            key: float(np.median([t.final(key) for t in arm])) for key in ("l1", "kl", "c_oct")}
    result.info["final_medians"] = summary
    if cfg.checkpoint and out_dir is not None:
        ckpt = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt, exist_ok=True)
        configs = [base.with_(seed=int(s), lam=float(lam)) for lam in cfg.lambdas for s in seeds]
        for k, (c, t) in enumerate(zip(configs, traces)):
            save_checkpoint(os.path.join(ckpt, f"{t.arm}_seed{t.seed}.json"), model, c, k)
    return result


PIPELINES = {
    "verify": run_verify,
    "spurious": run_spurious,
    "prop1": run_prop1,
    "deform-check": run_deform_check,
    "train-drift": run_train_drift,
}
