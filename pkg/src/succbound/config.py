"""Run configuration: a versioned JSON document validated with pydantic.

A model is either a named preset with parameter overrides or an inline
polynomial system whose time-varying entries are written in the signal text
format (``const(4)``, ``sin(5, 15.0796, 0)``, ``pulse(-2, 1.5708)``,
``sum(...)``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .approx_engine import M_CAP
from .polyfield import Monomial, PolySystemModel, PolyVectorField
from .presets import INTERIOR_X0, PRESETS, REGION_BRACKETS, OscillatorParams, preset_model
from .region import ClassifierParams, Method
from .signals import parse_signal

__all__ = [
    "SCHEMA_VERSION",
    "RunConfig",
    "ModelConfig",
    "InlineModel",
    "MonomialConfig",
    "ApproximationSection",
    "BoundsSection",
    "RegionSection",
    "SweepSection",
    "load_config",
    "config_hash",
]

SCHEMA_VERSION = 1

_OVERRIDABLE = tuple(f.name for f in dataclasses.fields(OscillatorParams) if f.name != "kind")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_signal(text: str) -> str:
    parse_signal(text)
    return text


class MonomialConfig(_Strict):
    component: int = Field(ge=0)
    coeff: str
    exponents: tuple[int, ...]

    _coeff = field_validator("coeff")(_check_signal)


class InlineModel(_Strict):
    name: str = "inline"
    A: tuple[tuple[str, ...], ...]
    f: tuple[MonomialConfig, ...] = ()
    F0: float = Field(default=0.0, ge=0.0)
    eta: Optional[tuple[str, ...]] = None

    @field_validator("A")
    @classmethod
    def _square(cls, A):
        n = len(A)
        if n == 0 or any(len(r) != n for r in A):
            raise ValueError("A must be a non-empty square matrix")
        for row in A:
            for a in row:
                _check_signal(a)
        return A

    @model_validator(mode="after")
    def _dims(self):
        n = len(self.A)
        for mono in self.f:
            if mono.component >= n or len(mono.exponents) != n:
                raise ValueError(f"monomial {mono} does not fit a {n}-dimensional system")
        if self.eta is not None:
            if len(self.eta) != n:
                raise ValueError(f"eta must have {n} entries")
            for e in self.eta:
                _check_signal(e)
        return self


class ModelConfig(_Strict):
    preset: Optional[str] = None
    overrides: dict[str, float] = Field(default_factory=dict)
    inline: Optional[InlineModel] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.preset is None) == (self.inline is None):
            raise ValueError("give exactly one of 'preset' or 'inline'")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.inline is not None and self.overrides:
            raise ValueError("'overrides' only applies to presets")
        bad = sorted(set(self.overrides) - set(_OVERRIDABLE))
        if bad:
            raise ValueError(f"unknown preset parameters {bad}; allowed: {list(_OVERRIDABLE)}")
        return self

    @property
    def dim(self) -> int:
        return 2 if self.inline is None else len(self.inline.A)

    def build(self) -> PolySystemModel:
        if self.inline is None:
            return preset_model(self.preset, **self.overrides)
        inline = self.inline
        n = len(inline.A)
        comps = [[] for _ in range(n)]
        for mono in inline.f:
            comps[mono.component].append(Monomial(parse_signal(mono.coeff), mono.exponents))
        A = tuple(tuple(parse_signal(a) for a in row) for row in inline.A)
        eta = tuple(parse_signal(e) for e in inline.eta) if inline.eta is not None else ()
        return PolySystemModel(A, PolyVectorField(n, comps), F0=inline.F0, eta=eta, name=inline.name)

    def with_f0(self, F0: float) -> "ModelConfig":
        if self.inline is None:
            return self.model_copy(update={"overrides": {**self.overrides, "F0": float(F0)}})
        return self.model_copy(update={"inline": self.inline.model_copy(update={"F0": float(F0)})})


class ApproximationSection(_Strict):
    scheme: Literal["A", "B"] = "A"
    m: int = Field(default=3, ge=1, le=M_CAP)
    t0: float = 0.0
    horizon: float = Field(default=20.0, gt=0.0)
    x0: Optional[tuple[float, ...]] = None
    rel_tol: float = Field(default=1e-9, gt=0.0)
    abs_tol: float = Field(default=1e-12, gt=0.0)
    sample_dt: float = Field(default=0.01, gt=0.0)


class BoundsSection(_Strict):
    z1: bool = True
    lipschitz_radius: Optional[float] = Field(default=None, gt=0.0)
    conservative_gamma: bool = False


class ClassifierSection(_Strict):
    trap_eps: float = Field(default=ClassifierParams.trap_eps, gt=0.0)
    trap_factor: float = Field(default=ClassifierParams.trap_factor, gt=0.0)
    tail_fraction: float = Field(default=ClassifierParams.tail_fraction, gt=0.0, le=1.0)
    lambda_floor: float = Field(default=ClassifierParams.lambda_floor, gt=0.0)
    twomax_window: float = Field(default=ClassifierParams.twomax_window, gt=0.0)
    twomax_prominence: float = Field(default=ClassifierParams.twomax_prominence, ge=0.0, le=1.0)
    twomax_dt: float = Field(default=ClassifierParams.twomax_dt, gt=0.0)
    twomax_scan: int = Field(default=ClassifierParams.twomax_scan, ge=2)
    plateau_tol: float = Field(default=ClassifierParams.plateau_tol, ge=0.0)

    def params(self) -> ClassifierParams:
        return ClassifierParams(**self.model_dump())


class RegionSection(_Strict):
    methods: tuple[str, ...] = ("z2-A-m1", "z2-A-m2", "z2-A-m3", "reference")
    t0: float = 0.0
    horizon: float = Field(default=40.0, gt=0.0)
    n_directions: int = Field(default=64, ge=1)
    r_lo: Optional[float] = Field(default=None, ge=0.0)
    r_hi: Optional[float] = Field(default=None, gt=0.0)
    tol: Optional[float] = Field(default=None, gt=0.0)
    rel_tol: float = Field(default=1e-7, gt=0.0)
    abs_tol: float = Field(default=1e-10, gt=0.0)
    chunk_size: int = Field(default=16, ge=1)
    classifier: ClassifierSection = Field(default_factory=ClassifierSection)

    @field_validator("methods")
    @classmethod
    def _parse_methods(cls, methods):
        if not methods:
            raise ValueError("at least one method is required")
        for m in methods:
            Method.parse(m)
        return methods


class SweepSection(_Strict):
    t0s: tuple[float, ...] = (0.0, math.pi / 2)

    @field_validator("t0s")
    @classmethod
    def _non_empty(cls, t0s):
        if not t0s:
            raise ValueError("t0s must not be empty")
        return t0s


class RunConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    model: ModelConfig = Field(default_factory=lambda: ModelConfig(preset="vanderpol-8.1"))
    approximation: ApproximationSection = Field(default_factory=ApproximationSection)
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    region: RegionSection = Field(default_factory=RegionSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    output_dir: str = "out"
    deterministic: Literal[True] = True

    @model_validator(mode="after")
    def _x0_dim(self):
        x0 = self.approximation.x0
        if x0 is not None and len(x0) != self.model.dim:
            raise ValueError(f"x0 has {len(x0)} entries, the model has dimension {self.model.dim}")
        if self.approximation.x0 is None and self.model.inline is not None:
            raise ValueError("inline models need approximation.x0")
        lo, hi = self.region.r_lo, self.region.r_hi
        if lo is not None and hi is not None and not lo < hi:
            raise ValueError("region.r_lo must be below region.r_hi")
        return self

    # resolved values -------------------------------------------------------------

    def x0(self) -> tuple:
        if self.approximation.x0 is not None:
            return tuple(self.approximation.x0)
        return INTERIOR_X0[self.model.preset]

    def bracket(self) -> tuple:
        default = REGION_BRACKETS.get(self.model.preset, (1e-3, 1.0))
        lo = self.region.r_lo if self.region.r_lo is not None else default[0]
        hi = self.region.r_hi if self.region.r_hi is not None else default[1]
        if not lo < hi:
            raise ValueError(f"empty radius bracket [{lo}, {hi}]")
        return lo, hi

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(cfg.canonical_json().encode()).hexdigest()


def load_config(path) -> RunConfig:
    """Read and validate a JSON config file."""
    return RunConfig.model_validate_json(Path(path).read_text())
