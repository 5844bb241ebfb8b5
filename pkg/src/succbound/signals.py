"""Scalar time signals used as coefficients of A(t), f(t, x) and F(t).

Signals are immutable values built from four variants: constants, sinusoids,
Heaviside pulses ``level * (1 - H(t - switch_time))`` and sums. They carry
their own text form, e.g. ``sum(const(4), sin(5, 15.0796, 0))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Constant",
    "Sinusoid",
    "HeavisidePulse",
    "Sum",
    "TimeSignal",
    "parse_signal",
    "format_signal",
    "as_signal",
]


class _SignalBase:
    def eval(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.eval(t)

    def abs_sup(self, t_lo: float, t_hi: float) -> float:
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        return ()

    def is_constant(self) -> bool:
        return False

    def __str__(self) -> str:
        return format_signal(self)


@dataclass(frozen=True)
class Constant(_SignalBase):
    value: float

    def eval(self, t):
        if np.ndim(t):
            return np.full(np.shape(t), float(self.value))
        return float(self.value)

    def abs_sup(self, t_lo, t_hi):
        return abs(float(self.value))

    def is_constant(self):
        return True


@dataclass(frozen=True)
class Sinusoid(_SignalBase):
    """``amplitude * sin(angular_frequency * t + phase)``."""

    amplitude: float
    angular_frequency: float
    phase: float = 0.0

    def eval(self, t):
        if np.ndim(t):
            return self.amplitude * np.sin(self.angular_frequency * np.asarray(t) + self.phase)
        return self.amplitude * math.sin(self.angular_frequency * t + self.phase)

    def abs_sup(self, t_lo, t_hi):
        if t_lo > t_hi:
            raise ValueError("t_lo must not exceed t_hi")
        amp = abs(self.amplitude)
        w = self.angular_frequency
        if amp == 0.0 or w == 0.0:
            return abs(self.eval(t_lo))
        # |sin| peaks where w*t + phase = pi/2 + k*pi
        a, b = sorted((w * t_lo + self.phase, w * t_hi + self.phase))
        k = math.ceil((a - math.pi / 2) / math.pi)
        if math.pi / 2 + k * math.pi <= b:
            return amp
        return max(abs(self.eval(t_lo)), abs(self.eval(t_hi)))


@dataclass(frozen=True)
class HeavisidePulse(_SignalBase):
    """``level`` strictly before ``switch_time``, zero at and after it."""

    level: float
    switch_time: float

    def eval(self, t):
        if np.ndim(t):
            return np.where(np.asarray(t) < self.switch_time, float(self.level), 0.0)
        return float(self.level) if t < self.switch_time else 0.0

    def abs_sup(self, t_lo, t_hi):
        return abs(float(self.level)) if t_lo < self.switch_time else 0.0

    def breakpoints(self):
        return (float(self.switch_time),)


@dataclass(frozen=True)
class Sum(_SignalBase):
    terms: tuple

    def __init__(self, terms):
        object.__setattr__(self, "terms", tuple(terms))

    def eval(self, t):
        total = 0.0 if not np.ndim(t) else np.zeros(np.shape(t))
        for s in self.terms:
            total = total + s.eval(t)
        return total

    def abs_sup(self, t_lo, t_hi):
        return float(sum(s.abs_sup(t_lo, t_hi) for s in self.terms))

    def breakpoints(self):
        pts = set()
        for s in self.terms:
            pts.update(s.breakpoints())
        return tuple(sorted(pts))

    def is_constant(self):
        return all(s.is_constant() for s in self.terms)


TimeSignal = Union[Constant, Sinusoid, HeavisidePulse, Sum]


def as_signal(value) -> TimeSignal:
    """Coerce numbers and signal strings to signals."""
    if isinstance(value, _SignalBase):
        return value
    if isinstance(value, str):
        return parse_signal(value)
    return Constant(float(value))


# --- text form -------------------------------------------------------------

def _num(x: float) -> str:
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_signal(s: TimeSignal) -> str:
    if isinstance(s, Constant):
        return f"const({_num(s.value)})"
    if isinstance(s, Sinusoid):
        return f"sin({_num(s.amplitude)}, {_num(s.angular_frequency)}, {_num(s.phase)})"
    if isinstance(s, HeavisidePulse):
        return f"pulse({_num(s.level)}, {_num(s.switch_time)})"
    if isinstance(s, Sum):
        return "sum(" + ", ".join(format_signal(t) for t in s.terms) + ")"
    raise TypeError(f"not a signal: {s!r}")


_TOKEN = re.compile(r"\s*(?:([A-Za-z_]+)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|([(),]))")
_ARITY = {"const": 1, "sin": 3, "pulse": 2}


def parse_signal(text: str) -> TimeSignal:
    """Parse the text form produced by :func:`format_signal`.

    A bare number is accepted as a constant. ``sin`` accepts two arguments
    (zero phase).
    """
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ValueError(f"cannot parse signal at {text[pos:]!r}")
        tokens.append(m.group(1) or m.group(2) or m.group(3))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1

    idx = 0

    def peek():
        return tokens[idx] if idx < len(tokens) else None

    def take(expected=None):
        nonlocal idx
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise ValueError(f"expected {expected!r} in signal {text!r}, got {tok!r}")
        idx += 1
        return tok

    def number():
        tok = take()
        try:
            return float(tok)
        except ValueError:
            raise ValueError(f"expected a number in signal {text!r}, got {tok!r}") from None

    def expr():
        tok = peek()
        if tok is None:
            raise ValueError(f"empty signal {text!r}")
        if tok[0].isalpha():
            name = take()
            take("(")
            if name == "sum":
                terms = [expr()]
                while peek() == ",":
                    take(",")
                    terms.append(expr())
                take(")")
                return Sum(terms)
            if name not in _ARITY:
                raise ValueError(f"unknown signal kind {name!r}")
            args = [number()]
            while peek() == ",":
                take(",")
                args.append(number())
            take(")")
            if name == "sin" and len(args) == 2:
                args.append(0.0)
            if len(args) != _ARITY[name]:
                raise ValueError(f"{name} takes {_ARITY[name]} arguments, got {len(args)}")
            return {"const": Constant, "sin": Sinusoid, "pulse": HeavisidePulse}[name](*args)
        return Constant(number())

    result = expr()
    if idx != len(tokens):
        raise ValueError(f"trailing input in signal {text!r}")
    return result
