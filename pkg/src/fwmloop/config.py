"""Experiment configuration files.

Grammar (UTF-8, parsed with :mod:`configparser`):

* ``[section]`` headers, ``key = value`` lines, ``#`` or ``;`` comment lines.
* Sections and keys are the ones listed in :data:`SCHEMA`; anything else is
  an error.  Missing keys take the defaults of :class:`ExperimentSpec`.
* Floats use Python literal syntax (``inf`` allowed where noted); lists are
  comma separated; booleans are ``true``/``false``.  Angles are in degrees.
  Optional targets and ``idler_nm`` are disabled by ``0``.

:func:`dumps` writes every key with ``repr`` floats, so
``loads(dumps(spec)) == spec`` holds bit for bit.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from fwmloop.errors import ConfigError
from fwmloop.measurement import CONVENTIONS
from fwmloop.montecarlo.config import DetectionConfig
from fwmloop.state import DEFAULT_INDEX, LoopConfig, PumpConfig

PAPER_DEFAULTS = "paper-defaults"
# nominal idler channel may differ from the energy-conserving value by this much
IDLER_CHANNEL_TOL_NM = 0.2


@dataclass(frozen=True)
class LoopSpec:
    length_m: float = 2500.0
    x_m: float = 1250.0
    delta_n: float = 0.0
    varphi_rad: float = 0.0
    refractive_index: float = DEFAULT_INDEX
    pump_nm: float = 1551.0
    signal_nm: float = 1552.7
    idler_nm: float = 0.0  # nominal channel checked against energy conservation; 0 skips

    def build(self) -> LoopConfig:
        loop = LoopConfig.from_physical(
            self.length_m,
            self.x_m,
            self.pump_nm,
            self.signal_nm,
            n=self.refractive_index,
            delta_n=self.delta_n,
            varphi=self.varphi_rad,
        )
        if self.idler_nm:
            derived = loop.spectral.wavelengths_nm[2]
            if abs(derived - self.idler_nm) > IDLER_CHANNEL_TOL_NM:
                raise ConfigError(
                    f"idler_nm={self.idler_nm!r} is {abs(derived - self.idler_nm):.3f} nm from the "
                    f"energy-conserving {derived:.3f} nm"
                )
        return loop


@dataclass(frozen=True)
class PumpSpec:
    alpha: float = math.sqrt(0.5)
    beta: float = math.sqrt(0.5)

    def build(self) -> PumpConfig:
        return PumpConfig(self.alpha, self.beta)


@dataclass(frozen=True)
class FiberSpec:
    loss_db_per_km: float = 0.2
    depol_length_km: float = math.inf
    km_grid: tuple[float, ...] = (0.0, 5.0, 10.0)


@dataclass(frozen=True)
class AngleSpec:
    theta1_grid_deg: tuple[float, ...] = tuple(float(t) for t in range(0, 181, 10))
    fringe_theta2_deg: tuple[float, ...] = (0.0, 45.0)
    chsh_deg: tuple[float, ...] = (-22.5, 22.5, -45.0, 0.0)
    chsh_sign_placement: int = 1
    convention: str = "same-handed"


@dataclass(frozen=True)
class CalibrationSpec:
    singles_s_cps: float = 490.0
    singles_i_cps: float = 380.0
    coinc_max_cps: float = 1.8
    tolerance: float = 0.05
    visibility_sub_0: float = 0.0
    visibility_sub_45: float = 0.0
    visibility_raw_0: float = 0.0
    visibility_raw_45: float = 0.0
    fiber_km: float = 0.0
    fiber_sub_0: float = 0.0
    fiber_sub_45: float = 0.0

    def count_targets(self) -> dict:
        return {"singles_s_cps": self.singles_s_cps, "singles_i_cps": self.singles_i_cps, "coinc_max_cps": self.coinc_max_cps}

    def visibility_targets(self) -> dict:
        out = {}
        for k in ("sub_0", "sub_45", "raw_0", "raw_45"):
            v = getattr(self, "visibility_" + k)
            if v:
                out[k] = v
        return out

    def fiber_targets(self) -> dict:
        return {k: getattr(self, "fiber_" + k) for k in ("sub_0", "sub_45") if getattr(self, "fiber_" + k)}


@dataclass(frozen=True)
class RunSpec:
    seed: int = 1
    runs: int = 5
    subtract: bool = True
    workers: int = 1
    fringe_gates: int = 16_000_000_000
    chsh_gates: int = 3_000_000_000
    sweep_gates: int = 4_000_000_000


_DETECTION_KEYS = tuple(f for f in DetectionConfig.field_names() if f not in ("n_gates", "seed", "workers_hint"))


@dataclass(frozen=True)
class ExperimentSpec:
    loop: LoopSpec = field(default_factory=LoopSpec)
    pump: PumpSpec = field(default_factory=PumpSpec)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    fiber: FiberSpec = field(default_factory=FiberSpec)
    angles: AngleSpec = field(default_factory=AngleSpec)
    calibration: CalibrationSpec = field(default_factory=CalibrationSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def __post_init__(self):
        # build once so that every nested invariant is checked at parse time
        self.loop.build()
        self.pump.build()
        if self.angles.convention not in CONVENTIONS:
            raise ConfigError(f"convention must be one of {CONVENTIONS}")
        if self.angles.chsh_sign_placement not in range(4):
            raise ConfigError("chsh_sign_placement must be 0..3")
        if len(self.angles.chsh_deg) != 4:
            raise ConfigError("chsh_deg needs four angles")
        if len(self.angles.theta1_grid_deg) < 5:
            raise ConfigError("theta1_grid_deg needs at least 5 points")
        if self.fiber.loss_db_per_km < 0 or not self.fiber.depol_length_km > 0:
            raise ConfigError("fiber loss must be >= 0 and depol_length_km > 0")
        if any(k < 0 for k in self.fiber.km_grid):
            raise ConfigError("km_grid must be non-negative")
        r = self.run
        if r.runs < 1 or r.workers < 1 or min(r.fringe_gates, r.chsh_gates, r.sweep_gates) < 2:
            raise ConfigError("runs, workers and gate counts must be positive")
        if not 0 <= r.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def detection_for(self, n_gates: int) -> DetectionConfig:
        return self.detection.with_(n_gates=int(n_gates), seed=self.run.seed, workers_hint=self.run.workers)

    def with_run(self, **changes) -> "ExperimentSpec":
        return replace(self, run=replace(self.run, **changes))

    def digest(self) -> str:
        # worker count never changes results, so it is left out of the hash
        text = dumps(self.with_run(workers=1))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


_SECTIONS = {
    "loop": LoopSpec,
    "pump": PumpSpec,
    "detection": DetectionConfig,
    "fiber": FiberSpec,
    "angles": AngleSpec,
    "calibration": CalibrationSpec,
    "run": RunSpec,
}


def _keys(section: str) -> tuple[str, ...]:
    if section == "detection":
        return _DETECTION_KEYS
    return tuple(f.name for f in fields(_SECTIONS[section]))


SCHEMA = {s: _keys(s) for s in _SECTIONS}


def _kind(section: str, key: str):
    default = getattr(_SECTIONS[section](), key)
    return type(default)


def _parse_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None
    return v


def _parse_value(section: str, key: str, text: str):
    kind = _kind(section, key)
    text = text.strip()
    where = f"[{section}] {key}"
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ConfigError(f"{where}: expected true or false")
            return low == "true"
        if kind is int:
            return int(text.replace("_", ""))
        if kind is float:
            return _parse_float(text)
        if kind is tuple:
            return tuple(_parse_float(t) for t in text.split(",") if t.strip())
        return text
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(t)) for t in v)
    return str(v)


def loads(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    parts = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = SCHEMA[section]
        values = {}
        for key, raw in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse_value(section, key, raw)
        parts[section] = values
    try:
        built = {s: _SECTIONS[s](**parts.get(s, {})) for s in _SECTIONS}
        return ExperimentSpec(**built)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dumps(spec: ExperimentSpec, header: str = "") -> str:
    lines = [f"# {h}" if h else "#" for h in header.splitlines()] if header else []
    for section in _SECTIONS:
        obj = getattr(spec, section)
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            lines.append(f"{key} = {_format_value(getattr(obj, key))}")
    return "\n".join(lines) + "\n"


def paper_defaults_text() -> str:
    return resources.files("fwmloop.data").joinpath("paper-defaults.ini").read_text(encoding="utf-8")


def load(path: Union[str, Path, None]) -> ExperimentSpec:
    """Parse ``path``; the name ``paper-defaults`` selects the bundled file."""
    if path is None or str(path) == PAPER_DEFAULTS:
        return loads(paper_defaults_text())
    return loads(Path(path).read_text(encoding="utf-8"))


def save(spec: ExperimentSpec, path: Union[str, Path], header: Optional[str] = None) -> None:
    Path(path).write_text(dumps(spec, header or ""), encoding="utf-8")
