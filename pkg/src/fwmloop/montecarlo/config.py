from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Sequence, Union

from fwmloop.errors import ConfigError
from fwmloop.measurement import AnalyzerSetting
from fwmloop.state import TwoPhotonState


@dataclass(frozen=True)
class DetectionConfig:
    """Everything between the loop output and the coincidence counter.

    ``trans_*`` lumps every passive loss of an arm (filters, AWG, controllers,
    distribution fiber).  ``p_depol`` is the per-photon probability that the
    polarizer outcome is replaced by a fair coin.  ``accidental_offset`` is the
    gate delay used by the delayed-window accidental estimate.
    """

    mu_pairs: float = 0.0
    noise_s: float = 0.0
    noise_i: float = 0.0
    trans_s: float = 1.0
    trans_i: float = 1.0
    eta_s: float = 1.0
    eta_i: float = 1.0
    dark_s: float = 0.0
    dark_i: float = 0.0
    p_depol: float = 0.0
    n_gates: int = 1_000_000
    gate_rate: float = 1e6
    seed: int = 0
    workers_hint: int = 1
    accidental_offset: int = 1

    def __post_init__(self):
        for name in ("trans_s", "trans_i", "eta_s", "eta_i", "dark_s", "dark_i", "p_depol"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        for name in ("mu_pairs", "noise_s", "noise_i"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")
        if int(self.n_gates) != self.n_gates or self.n_gates < 1:
            raise ConfigError("n_gates must be a positive integer")
        if not (self.gate_rate > 0):
            raise ConfigError("gate_rate must be > 0")
        if self.workers_hint < 1:
            raise ConfigError("workers_hint must be >= 1")
        if self.accidental_offset < 1:
            raise ConfigError("accidental_offset must be >= 1")
        if self.n_gates <= self.accidental_offset:
            raise ConfigError("n_gates must exceed accidental_offset")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def arm_efficiency_s(self) -> float:
        return self.trans_s * self.eta_s

    @property
    def arm_efficiency_i(self) -> float:
        return self.trans_i * self.eta_i

    def with_(self, **changes) -> "DetectionConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class StateMixture:
    """Classical mixture; every gate draws one component for all its pairs."""

    states: tuple[TwoPhotonState, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.states) == 0 or len(self.states) != len(self.weights):
            raise ConfigError("mixture needs one weight per state")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ConfigError("mixture weights must be non-negative and sum to 1")

    @classmethod
    def equal(cls, states: Sequence[TwoPhotonState]) -> "StateMixture":
        n = len(states)
        return cls(tuple(states), tuple([1.0 / n] * n))


Source = Union[TwoPhotonState, StateMixture]


def as_mixture(source: Source) -> StateMixture:
    if isinstance(source, StateMixture):
        return source
    return StateMixture((source,), (1.0,))


@dataclass(frozen=True)
class CountRecord:
    """Counts collected at one analyzer setting.

    ``acc_true`` counts coincidences in gates where no single pair delivered
    both clicks; ``acc_est`` pairs signal clicks at gate g with idler clicks
    at gate g + offset (cyclically over the run).
    """

    setting: AnalyzerSetting
    singles_s: int
    singles_i: int
    coinc_raw: int
    acc_est: int
    acc_true: int
    gates: int
    pair_gates: int = 0

    def __post_init__(self):
        counts = (self.singles_s, self.singles_i, self.coinc_raw, self.acc_est, self.acc_true, self.gates)
        if any(c < 0 for c in counts):
            raise ConfigError("counts must be non-negative")
        if self.coinc_raw > min(self.singles_s, self.singles_i):
            raise ConfigError("coincidences exceed singles")
        if self.acc_true > self.coinc_raw:
            raise ConfigError("true accidentals exceed coincidences")
