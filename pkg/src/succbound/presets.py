"""Named models: parametrically excited Van der Pol and Duffing oscillators.

All presets share ``x1' = x2``, ``x2' = -w2(t) x1 - alpha1 x2 + nonlinearity + forcing``
with ``w2(t) = w0^2 + a1 sin(r1 t) + a2 sin(r2 t)`` and forcing
``F0 sin(omega_f t)`` in the second component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .polyfield import Monomial, PolySystemModel, PolyVectorField
from .signals import Constant, HeavisidePulse, Sinusoid, Sum

__all__ = ["OscillatorParams", "PRESETS", "REGION_BRACKETS", "INTERIOR_X0", "preset_params", "build_model",
           "preset_model"]

FORCING_FREQUENCY = 10.0


@dataclass(frozen=True)
class OscillatorParams:
    kind: str  # "vanderpol" (cubic in x2) or "duffing" (cubic in x1)
    omega0: float = 2.0
    alpha1: float = 1.2
    alpha2: float = -100.0
    a1: float = 5.0
    a2: float = 5.0
    r1: float = 4.8 * math.pi
    r2: float = 21.0
    F0: float = 0.0
    forcing_frequency: float = FORCING_FREQUENCY
    pulse_level: float = 0.0  # adds pulse_level * (1 - H(t - pulse_switch)) to w2
    pulse_switch: float = math.pi / 2

    def __post_init__(self):
        if self.kind not in ("vanderpol", "duffing"):
            raise ValueError(f"unknown oscillator kind {self.kind!r}")


PRESETS = {
    "vanderpol-8.1": OscillatorParams("vanderpol"),
    "vanderpol-8.1-forced": OscillatorParams("vanderpol", F0=0.23),
    "vanderpol-fig3": OscillatorParams("vanderpol", alpha1=1.0, alpha2=-1.0),
    "duffing-6a": OscillatorParams("duffing", alpha1=1.0, alpha2=-10.0),
    "duffing-6b": OscillatorParams("duffing", alpha1=1.0, alpha2=-10.0, F0=3.5),
    "duffing-6c": OscillatorParams("duffing", alpha1=0.05, alpha2=-10.0),
    "duffing-pulse": OscillatorParams("duffing", alpha1=1.0, alpha2=-10.0, a1=0.0, a2=0.0, F0=1.5,
                                      pulse_level=4.0),
    "duffing-pulse-neg": OscillatorParams("duffing", alpha1=1.0, alpha2=-10.0, a1=0.0, a2=0.0, F0=1.5,
                                          pulse_level=-2.0),
    "duffing-nopulse": OscillatorParams("duffing", alpha1=1.0, alpha2=-10.0, a1=0.0, a2=0.0, F0=1.5),
}

# radius brackets for the radial search and a point well inside each region
REGION_BRACKETS = {name: ((0.005, 0.3) if name.startswith("vanderpol-8.1") else (0.01, 2.0)) for name in PRESETS}
INTERIOR_X0 = {name: ((0.02, 0.01) if name.startswith("vanderpol-8.1") else (0.2, 0.1)) for name in PRESETS}


def preset_params(name: str, **overrides) -> OscillatorParams:
    try:
        p = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(p, **overrides) if overrides else p


def build_model(p: OscillatorParams, name: str = "oscillator") -> PolySystemModel:
    terms = [Constant(p.omega0 ** 2)]
    if p.a1:
        terms.append(Sinusoid(p.a1, p.r1))
    if p.a2:
        terms.append(Sinusoid(p.a2, p.r2))
    if p.pulse_level:
        terms.append(HeavisidePulse(p.pulse_level, p.pulse_switch))
    neg_w2 = Sum([_negate(s) for s in terms]) if len(terms) > 1 else Constant(-p.omega0 ** 2)
    A = ((Constant(0.0), Constant(1.0)), (neg_w2, Constant(-p.alpha1)))
    exps = (0, 3) if p.kind == "vanderpol" else (3, 0)
    f = PolyVectorField(2, [[], [Monomial(Constant(-p.alpha2), exps)]])
    eta = (Constant(0.0), Sinusoid(1.0, p.forcing_frequency))
    return PolySystemModel(A, f, F0=p.F0, eta=eta, name=name)


def _negate(s):
    if isinstance(s, Constant):
        return Constant(-s.value)
    if isinstance(s, Sinusoid):
        return Sinusoid(-s.amplitude, s.angular_frequency, s.phase)
    if isinstance(s, HeavisidePulse):
        return HeavisidePulse(-s.level, s.switch_time)
    raise TypeError(type(s))


def preset_model(name: str, F0: Optional[float] = None, **overrides) -> PolySystemModel:
    if F0 is not None:
        overrides["F0"] = F0
    return build_model(preset_params(name, **overrides), name=name)
