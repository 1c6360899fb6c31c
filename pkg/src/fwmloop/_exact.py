"""Error-free float arithmetic for km-scale optical phases.

A phase such as ``k * L`` is ~1.5e10 rad for a 2.5 km loop, so a plain
double keeps only ~1e-6 rad of the part that matters after reduction mod
2*pi.  Phases are therefore carried as lists of float partials whose exact
(real-number) sum is the phase, and are only rounded after subtracting the
right multiple of 2*pi.  ``math.fsum`` does the exact summation.
"""

from __future__ import annotations

import math
from typing import Iterable, List

# 2*pi as an unevaluated sum of three doubles (~160 bits).
TWO_PI_HI = 6.283185307179586
TWO_PI_MID = 2.4492935982947064e-16
TWO_PI_LO = -5.989539619436679e-33

_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a: float, b: float) -> tuple[float, float]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a: float) -> tuple[float, float]:
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a: float, b: float) -> tuple[float, float]:
    """Return ``(p, e)`` with ``p + e == a * b`` exactly (Dekker)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


class Phase:
    """Exact sum of float partials, in radians."""

    __slots__ = ("parts",)

    def __init__(self, parts: Iterable[float] = ()):
        self.parts: List[float] = [float(p) for p in parts]

    @classmethod
    def product(cls, a: float, b: float) -> "Phase":
        return cls(two_prod(float(a), float(b)))

    def __add__(self, other: "Phase") -> "Phase":
        return Phase(self.parts + other.parts)

    def __sub__(self, other: "Phase") -> "Phase":
        return Phase(self.parts + [-p for p in other.parts])

    def __neg__(self) -> "Phase":
        return Phase([-p for p in self.parts])

    def scale(self, f: float) -> "Phase":
        """Multiply by a float without rounding."""
        out: List[float] = []
        for p in self.parts:
            out.extend(two_prod(p, float(f)))
        return Phase(out)

    def divide(self, d: float) -> "Phase":
        """Divide by ``d`` to ~2**-104 relative accuracy."""
        q1 = math.fsum(self.parts) / d
        rem = math.fsum(self.parts + [-t for t in two_prod(q1, d)])
        return Phase([q1, rem / d])

    def value(self) -> float:
        return math.fsum(self.parts)

    def reduced(self) -> float:
        """Phase wrapped into (-pi, pi], correctly rounded."""
        q = float(round(self.value() / TWO_PI_HI))
        while True:
            r = math.fsum(self.parts + _minus_two_pi_times(q))
            if r > math.pi:
                q += 1.0
            elif r <= -math.pi:
                q -= 1.0
            else:
                return r


def _minus_two_pi_times(q: float) -> List[float]:
    if q == 0.0:
        return []
    h = two_prod(q, TWO_PI_HI)
    m = two_prod(q, TWO_PI_MID)
    return [-h[0], -h[1], -m[0], -m[1], -q * TWO_PI_LO]


def wrap(angle: float) -> float:
    """Wrap an O(1) angle into (-pi, pi]."""
    r = math.remainder(angle, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r
