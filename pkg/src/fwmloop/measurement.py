"""Ideal projection of a two-photon state through two linear polarizers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from fwmloop.errors import ConfigError, NotNormalizedError
from fwmloop.state import TwoPhotonState

Convention = Literal["same-handed", "mirrored"]
CONVENTIONS = ("same-handed", "mirrored")


def normalize_angle(deg: float) -> float:
    """Map an angle in degrees onto [0, 180)."""
    if not math.isfinite(deg):
        raise ConfigError(f"angle must be finite, got {deg!r}")
    a = math.fmod(deg, 180.0)
    if a < 0:
        a += 180.0
    return 0.0 if a >= 180.0 else a


def perpendicular(deg: float) -> float:
    return normalize_angle(deg + 90.0)


@dataclass(frozen=True)
class AnalyzerSetting:
    """Polarizer angles in degrees for the signal (1) and idler (2) arms.

    Under the ``mirrored`` convention the idler angle is read in the opposite
    rotational sense.
    """

    theta1: float
    theta2: float
    convention: Convention = "same-handed"

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ConfigError(f"unknown orientation convention {self.convention!r}")
        object.__setattr__(self, "theta1", normalize_angle(self.theta1))
        object.__setattr__(self, "theta2", normalize_angle(self.theta2))

    def perp1(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.theta1 + 90.0, self.theta2, self.convention)

    def perp2(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.theta1, self.theta2 + 90.0, self.convention)

    def radians(self) -> tuple[float, float]:
        t2 = math.radians(self.theta2)
        return math.radians(self.theta1), (-t2 if self.convention == "mirrored" else t2)


@dataclass(frozen=True)
class JointProbabilities:
    """(pass, pass), (pass, block), (block, pass), (block, block); signal first."""

    p_pp: float
    p_pb: float
    p_bp: float
    p_bb: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_pp, self.p_pb, self.p_bp, self.p_bb])

    @property
    def p_signal(self) -> float:
        return self.p_pp + self.p_pb

    @property
    def p_idler(self) -> float:
        return self.p_pp + self.p_bp


def _check_norm(state: TwoPhotonState) -> None:
    if abs(state.norm_squared() - 1.0) > 1e-9:
        raise NotNormalizedError(f"state norm^2 = {state.norm_squared()!r}")


def joint_probabilities(state: TwoPhotonState, setting: AnalyzerSetting) -> JointProbabilities:
    _check_norm(state)
    hh, hv, vh, vv = state.amplitudes()
    t1, t2 = setting.radians()
    c1, s1 = math.cos(t1), math.sin(t1)
    c2, s2 = math.cos(t2), math.sin(t2)

    def prob(a1: float, b1: float, a2: float, b2: float) -> float:
        return abs(hh * a1 * a2 + hv * a1 * b2 + vh * b1 * a2 + vv * b1 * b2) ** 2

    # the orthogonal analyzer state is (-sin, cos)
    p = np.array([
        prob(c1, s1, c2, s2),
        prob(c1, s1, -s2, c2),
        prob(-s1, c1, c2, s2),
        prob(-s1, c1, -s2, c2),
    ])
    p = np.clip(p, 0.0, 1.0)
    p /= p.sum()
    return JointProbabilities(*(float(v) for v in p))


def fringe(
    state: TwoPhotonState,
    theta2: float,
    theta1_grid: Sequence[float],
    convention: Convention = "same-handed",
) -> list[tuple[float, float]]:
    """Ideal (pass, pass) probability as the signal polarizer rotates."""
    if len(theta1_grid) == 0:
        raise ConfigError("theta1 grid is empty")
    return [
        (float(t1), joint_probabilities(state, AnalyzerSetting(t1, theta2, convention)).p_pp)
        for t1 in theta1_grid
    ]


def correlation_E_ideal(state: TwoPhotonState, setting: AnalyzerSetting) -> float:
    jp = joint_probabilities(state, setting)
    return jp.p_pp + jp.p_bb - jp.p_pb - jp.p_bp


def correlation_matrix(
    state: TwoPhotonState,
    theta1_deg: np.ndarray,
    theta2_deg: np.ndarray,
    convention: Convention = "same-handed",
) -> np.ndarray:
    """``E[i, j]`` for every pair of grid angles, vectorized."""
    _check_norm(state)
    hh, hv, vh, vv = state.amplitudes()
    t1 = np.radians(np.asarray(theta1_deg, dtype=float))[:, None]
    t2 = np.radians(np.asarray(theta2_deg, dtype=float))[None, :]
    if convention == "mirrored":
        t2 = -t2
    c1, s1, c2, s2 = np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2)

    def prob(a1, b1, a2, b2):
        return np.abs(hh * a1 * a2 + hv * a1 * b2 + vh * b1 * a2 + vv * b1 * b2) ** 2

    return (
        prob(c1, s1, c2, s2)
        + prob(-s1, c1, -s2, c2)
        - prob(c1, s1, -s2, c2)
        - prob(-s1, c1, c2, s2)
    )
