"""Declarative run configurations (YAML) and the built-in scenario catalog.

Every record rejects unknown keys. Maps, fields, densities and radial
profiles are tagged by ``type``; run configs are tagged by ``kind``.
"""

import copy
import hashlib
import json
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator
import yaml

from . import maps as M
from . import spurious as S
from .errors import ArgumentError


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --------------------------------------------------------------------------
# radial profiles and densities


class GaussianRadial(Strict):
    type: Literal["gaussian"]
    dim: int = Field(ge=2)

    def build(self):
        return S.RadialDensity.standard_normal(self.dim)


class AnnulusRadial(Strict):
    type: Literal["annulus"]
    dim: int = Field(ge=2)
    inner: float = Field(gt=0)
    outer: float

    @model_validator(mode="after")
    def _order(self):
        if self.outer <= self.inner:
            raise ValueError("annulus needs outer > inner")
        return self

    def build(self):
        return S.RadialDensity.uniform_annulus(self.dim, self.inner, self.outer)


RadialSpec = Annotated[Union[GaussianRadial, AnnulusRadial], Field(discriminator="type")]


class GaussianDensity(Strict):
    type: Literal["gaussian"]
    mean: List[float]
    cov: Optional[List[List[float]]] = None

    def build(self):
        return S.DensityField.gaussian(np.array(self.mean),
                                       None if self.cov is None else np.array(self.cov))


class MixtureDensity(Strict):
    type: Literal["gaussian_mixture"]
    weights: List[float]
    means: List[List[float]]
    covs: Optional[List[List[List[float]]]] = None

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.weights) != len(self.means):
            raise ValueError("weights and means differ in length")
        if self.covs is not None and len(self.covs) != len(self.means):
            raise ValueError("covs and means differ in length")
        return self

    def build(self):
        return S.DensityField.gaussian_mixture(
            np.array(self.weights), np.array(self.means),
            None if self.covs is None else np.array(self.covs))


DensitySpec = Annotated[Union[GaussianDensity, MixtureDensity], Field(discriminator="type")]


# --------------------------------------------------------------------------
# maps


class IdentitySpec(Strict):
    type: Literal["identity"]
    dim: int = Field(ge=1)

    def build(self):
        return M.IdentityMap(self.dim)


class LinearSpec(Strict):
    type: Literal["linear"]
    matrix: List[List[float]]

    def build(self):
        return M.LinearMap(np.array(self.matrix))


class RotationSpec(Strict):
    type: Literal["rotation"]
    dim: int = Field(ge=2)
    i: int = 0
    j: int = 1
    angle: float

    def build(self):
        return M.LinearMap(M.plane_rotation(self.dim, self.i, self.j, self.angle))


class MoebiusSpec(Strict):
    type: Literal["moebius"]
    dim: int = Field(ge=2)
    shift: Optional[List[float]] = None
    center: Optional[List[float]] = None
    scale: float = 1.0
    matrix: Optional[List[List[float]]] = None
    epsilon: Literal[0, 2] = 2

    def build(self):
        arr = lambda v: None if v is None else np.array(v, dtype=float)
        return M.MoebiusMap(b=arr(self.shift), a=arr(self.center), alpha=self.scale,
                            A=arr(self.matrix), epsilon=self.epsilon, dim=self.dim)


class PolarSpec(Strict):
    type: Literal["polar"]
    dim: int = Field(ge=2)
    r_range: Tuple[float, float] = (0.5, 2.5)

    def build(self):
        return M.PolarMap(self.dim, r_range=self.r_range)


class RadiusRotationSpec(Strict):
    type: Literal["radius_rotation"]
    dim: int = Field(ge=2)
    center: Optional[List[float]] = None
    i: int = 0
    j: int = 1
    omega: float = 1.0
    radius: Optional[float] = None
    t: float = 1.0

    def profile(self):
        center = np.full(self.dim, 0.5) if self.center is None else np.array(self.center)
        return S.RadiusRotationProfile(center=center, i=self.i, j=self.j,
                                       omega=self.omega, radius=self.radius)

    def build(self):
        return S.radius_rotation_map(self.profile(), self.t)


class Prop1Spec(Strict):
    type: Literal["prop1"]
    profile: RadialSpec
    margin: float = 1e-3

    def build(self):
        return S.prop1_build(self.profile.build(), self.margin)


class Prop1RotatedSpec(Strict):
    type: Literal["prop1_rotated"]
    profile: RadialSpec
    rotation: List[List[float]]
    margin: float = 1e-3

    def build(self):
        return S.prop1_rotated_family(self.profile.build(), np.array(self.rotation), self.margin)


class ComposeSpec(Strict):
    type: Literal["compose"]
    maps: List["MapSpec"] = Field(min_length=1)

    def build(self):
        # applied in list order
        return M.compose_all([m.build() for m in self.maps])


MapSpec = Annotated[
    Union[IdentitySpec, LinearSpec, RotationSpec, MoebiusSpec, PolarSpec,
          RadiusRotationSpec, Prop1Spec, Prop1RotatedSpec, ComposeSpec],
    Field(discriminator="type"),
]
ComposeSpec.model_rebuild()


# --------------------------------------------------------------------------
# vector fields for deformation checks


class ZeroField(Strict):
    type: Literal["zero"]
    dim: int = Field(ge=2)

    def build(self):
        d = self.dim
        return S.VectorField(lambda t, p: np.zeros_like(p), d,
                             jac=lambda t, p: np.zeros(p.shape + (d,)), name="zero")


class RigidRotationField(Strict):
    type: Literal["rigid_rotation"]
    dim: int = Field(ge=2)
    i: int = 0
    j: int = 1
    center: Optional[List[float]] = None
    rate: float = 1.0

    def build(self):
        d = self.dim
        W = np.zeros((d, d))
        W[self.i, self.j], W[self.j, self.i] = -self.rate, self.rate
        c = np.full(d, 0.5) if self.center is None else np.array(self.center)
        return S.VectorField(lambda t, p: (p - c) @ W.T, d,
                             jac=lambda t, p: np.broadcast_to(W, p.shape + (d,)).copy(),
                             name="rigid_rotation")


class RadiusRotationField(Strict):
    type: Literal["radius_rotation"]
    dim: int = Field(ge=2)
    center: Optional[List[float]] = None
    i: int = 0
    j: int = 1
    omega: float = 1.0
    radius: Optional[float] = None

    def build(self):
        spec = RadiusRotationSpec(type="radius_rotation", dim=self.dim, center=self.center,
                                  i=self.i, j=self.j, omega=self.omega, radius=self.radius)
        return S.radius_rotation_generator(spec.profile())


class WaveModeField(Strict):
    """X_i = sin(pi m x_i) prod_{j != i} cos(pi m x_j), other components zero."""

    type: Literal["wave_mode"]
    dim: int = Field(ge=2)
    i: int = 0
    m: int = Field(default=1, ge=1)

    def build(self):
        i, k = self.i, np.pi * self.m

        def fn(t, p):
            out = np.zeros_like(p)
            v = np.sin(k * p[:, i])
            for j in range(p.shape[1]):
                if j != i:
                    v = v * np.cos(k * p[:, j])
            out[:, i] = v
            return out

        return S.VectorField(fn, self.dim, name="wave_mode")


FieldSpec = Annotated[
    Union[ZeroField, RigidRotationField, RadiusRotationField, WaveModeField],
    Field(discriminator="type"),
]


# --------------------------------------------------------------------------
# run configs


class RunBase(Strict):
    seed: int = 0
    out: Optional[str] = None
    tol: Optional[float] = Field(default=None, gt=0)


class VerifyConfig(RunBase):
    kind: Literal["verify"]
    map: MapSpec
    checks: List[Literal["conformal", "oct", "volume_preserving"]] = ["oct"]
    n_points: int = Field(default=500, ge=1)
    box: Optional[Tuple[float, float]] = None


class XijFlowConstruction(Strict):
    type: Literal["xij_flow"]
    density: DensitySpec
    i: int = 0
    j: int = 1
    times: List[float] = [0.25, 0.5, 1.0]
    steps: int = Field(default=100, ge=1)
    vp_tol: float = 1e-4
    mpt_tol: float = 1e-3


class CompactDivfreeConstruction(Strict):
    type: Literal["compact_divfree_flow"]
    dim: int = Field(ge=2)
    center: Optional[List[float]] = None
    radius: float = Field(default=0.3, gt=0)
    # stronger fields shear the flow enough that the FD Jacobian of the RK4 map loses 1e-4 in det
    amplitude: float = 0.1
    i: int = 0
    j: int = 1
    times: List[float] = [0.25, 0.5, 1.0]
    steps: int = Field(default=100, ge=1)
    vp_tol: float = 1e-4

    def bump(self):
        center = np.full(self.dim, 0.5) if self.center is None else np.array(self.center)
        return S.RadialBump(center, self.radius, self.amplitude)


class RadiusRotationConstruction(Strict):
    type: Literal["radius_rotation"]
    map: RadiusRotationSpec
    times: List[float] = [0.25, 0.5, 1.0]
    epsilon: float = Field(default=0.05, gt=0, lt=0.5)
    vp_tol: float = 1e-8


Construction = Annotated[Union[XijFlowConstruction, CompactDivfreeConstruction,
                               RadiusRotationConstruction],
                         Field(discriminator="type")]


class SpuriousConfig(RunBase):
    kind: Literal["spurious"]
    construction: Construction
    n_points: int = Field(default=200, ge=1)


class Prop1Config(RunBase):
    kind: Literal["prop1"]
    profile: RadialSpec
    n_rotations: int = Field(default=5, ge=0)
    n_points: int = Field(default=500, ge=1)
    margin: float = 1e-3
    oct_tol: float = 1e-5
    density_tol: float = 1e-3
    min_separation: float = 0.1


class ResonanceSpec(Strict):
    mu: List[float]
    i: int = 0
    max_norm: int = Field(default=20, ge=1)


class DeformCheckConfig(RunBase):
    kind: Literal["deform-check"]
    f0: MapSpec
    generator: FieldSpec
    n_points: int = Field(default=200, ge=1)
    box: Tuple[float, float] = (0.1, 0.9)
    first_order_tol: float = 1e-6
    divergence_tol: float = 1e-7
    # "violated" turns the run into a demonstration that the field leaves the class
    expect: Literal["preserved", "violated"] = "preserved"
    boundary_epsilon: Optional[float] = None
    resonance: Optional[ResonanceSpec] = None


class TrainDriftConfig(RunBase):
    kind: Literal["train-drift"]
    scenario: Literal["rot", "pol"]
    lambdas: List[float] = Field(default=[0.0, 2.0], min_length=1)
    seeds: Optional[List[int]] = None
    steps: int = Field(default=1000, ge=1)
    batch: int = Field(default=256, ge=1)
    time_points: int = Field(default=10, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    n_layers: int = Field(default=5, ge=1)
    hidden: int = Field(default=15, ge=1)
    pretrain_steps: int = Field(default=2000, ge=0)
    kl_max: float = 0.2
    checkpoint: bool = False

    def seed_list(self):
        return self.seeds if self.seeds is not None else [self.seed]


RunConfig = Annotated[
    Union[VerifyConfig, SpuriousConfig, Prop1Config, DeformCheckConfig, TrainDriftConfig],
    Field(discriminator="kind"),
]
_RUN_ADAPTER = TypeAdapter(RunConfig)

KINDS = ("verify", "spurious", "prop1", "deform-check", "train-drift")


def parse_config(data):
    """Validate a mapping into a run config (raises pydantic.ValidationError)."""
    return _RUN_ADAPTER.validate_python(data)


def load_config(path):
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ArgumentError(f"{path}: expected a mapping at top level")
    return data


def config_hash(config):
    blob = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# catalog

_MIXTURE = {
    "type": "gaussian_mixture",
    "weights": [0.5, 0.3, 0.2],
    "means": [[0.0, 0.0], [1.5, 0.5], [-1.0, 1.2]],
    "covs": [[[1.0, 0.2], [0.2, 0.6]], [[0.5, 0.0], [0.0, 0.8]], [[0.7, -0.1], [-0.1, 0.4]]],
}

CATALOG = {
    "rot-drift": ("drifting rotation-and-scaling mixing, both regularization arms",
                  {"kind": "train-drift", "scenario": "rot"}),
    "pol-drift": ("drifting polar mixing with a shifted radius, both regularization arms",
                  {"kind": "train-drift", "scenario": "pol"}),
    "cube-to-gaussian": ("orthogonal-coordinate map from the uniform cube to a Gaussian, plus rotated copies",
                         {"kind": "prop1", "profile": {"type": "gaussian", "dim": 2}}),
    "cube-to-annulus": ("orthogonal-coordinate map from the uniform cube to a uniform annulus in d=3",
                        {"kind": "prop1",
                         "profile": {"type": "annulus", "dim": 3, "inner": 1.0, "outer": 2.0}}),
    "gmm-flow": ("measure-preserving flow of a rotated-gradient field for a 3-component mixture",
                 {"kind": "spurious", "construction": {"type": "xij_flow", "density": _MIXTURE}}),
    "bump-flow": ("flow of a compactly supported divergence-free field: volume-preserving, identity off the bump",
                  {"kind": "spurious",
                   "construction": {"type": "compact_divfree_flow", "dim": 2}}),
    "radius-rotation": ("radius-dependent rotation of the cube: volume-preserving, boundary-fixing",
                        {"kind": "spurious",
                         "construction": {"type": "radius_rotation",
                                          "map": {"type": "radius_rotation", "dim": 3}}}),
    "moebius-verify": ("Moebius map in d=3 is conformal and orthogonal-coordinate",
                       {"kind": "verify",
                        "map": {"type": "moebius", "dim": 3, "center": [2.0, 2.0, 2.0]},
                        "checks": ["conformal", "oct"]}),
    "polar-verify": ("polar coordinates in d=3 are orthogonal-coordinate",
                     {"kind": "verify", "map": {"type": "polar", "dim": 3}, "checks": ["oct"]}),
    "shear-verify": ("a shear fails the orthogonal-coordinate check (exits 3)",
                     {"kind": "verify", "map": {"type": "linear", "matrix": [[1.0, 1.0], [0.0, 1.0]]},
                      "checks": ["oct"]}),
    "rigid-deform": ("a rigid rotation generator keeps an identity mixing in the class",
                     {"kind": "deform-check", "f0": {"type": "identity", "dim": 3},
                      "generator": {"type": "rigid_rotation", "dim": 3}}),
    "radius-rotation-deform": ("the radius-rotation generator leaves a linear orthogonal-coordinate mixing's class",
                               {"kind": "deform-check",
                                "f0": {"type": "linear", "matrix": [[1.0, 0, 0], [0, 2.0, 0], [0, 0, 3.0]]},
                                "generator": {"type": "radius_rotation", "dim": 3},
                                "expect": "violated",
                                "resonance": {"mu": [1.0, 2.0, 3.0]}}),
}


def catalog_entries(kind=None):
    out = []
    for name, (summary, data) in CATALOG.items():
        if kind is None or data["kind"] == kind:
            out.append({"name": name, "kind": data["kind"], "summary": summary})
    return out


def catalog_config(name):
    if name not in CATALOG:
        raise ArgumentError(f"unknown scenario {name!r}; see `ica-lab list`")
    return copy.deepcopy(CATALOG[name][1])
