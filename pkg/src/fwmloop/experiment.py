"""Scenario runners shared by the command line and the acceptance checks.

Every runner is a pure function of an :class:`ExperimentSpec` (plus optional
gate-count overrides), so the same spec and seed always produce the same
numbers whatever ``run.workers`` is.  Random streams are keyed by scenario and by angle or distance,
never by position in a list:

* fringe:  ``(1, theta2_mdeg, point)``
* CHSH:    ``(2, run, setting)``
* sweep:   ``(3, km_m, 1, theta2_mdeg, point)`` and ``(3, km_m, 2, run, setting)``
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

from fwmloop.analysis import (
    ChshResult,
    FringeData,
    VisibilityFit,
    aggregate_chsh,
    chsh,
    fit_visibility,
)
from fwmloop.config import ExperimentSpec
from fwmloop.measurement import normalize_angle
from fwmloop.montecarlo.calibrate import (
    CalibrationResult,
    VisibilityCalibration,
    calibrate,
    calibrate_visibility,
    with_fiber,
)
from fwmloop.montecarlo.config import CountRecord, DetectionConfig
from fwmloop.montecarlo.engine import scan_fringe, simulate_chsh
from fwmloop.state import TwoPhotonState, build_output_state

STREAM_FRINGE = 1
STREAM_CHSH = 2
STREAM_SWEEP = 3


def _mdeg(angle: float) -> int:
    return int(round(normalize_angle(angle) * 1000))


def source_state(spec: ExperimentSpec) -> TwoPhotonState:
    return build_output_state(spec.pump.build(), spec.loop.build())


@dataclass(frozen=True)
class FringeRun:
    theta2: float
    theta1_grid: tuple[float, ...]
    records: tuple[CountRecord, ...]
    subtracted: VisibilityFit
    raw: VisibilityFit

    def data(self, subtracted: bool) -> FringeData:
        return FringeData.from_records(self.records, subtracted, self.theta1_grid)


def _fringe(spec, det, theta2, stream, backend) -> FringeRun:
    grid = tuple(spec.angles.theta1_grid_deg)
    recs = scan_fringe(
        source_state(spec),
        theta2,
        grid,
        det,
        convention=spec.angles.convention,
        stream=tuple(stream) + (_mdeg(theta2),),
        backend=backend,
    )
    fits = {}
    for sub in (True, False):
        fits[sub] = fit_visibility(FringeData.from_records(recs, sub, grid))
    return FringeRun(float(theta2), grid, tuple(recs), fits[True], fits[False])


def run_fringe(
    spec: ExperimentSpec,
    theta2: float,
    *,
    gates: Optional[int] = None,
    backend: Optional[str] = None,
) -> FringeRun:
    det = spec.detection_for(gates or spec.run.fringe_gates)
    return _fringe(spec, det, theta2, (STREAM_FRINGE,), backend)


@dataclass(frozen=True)
class ChshRun:
    records: tuple[tuple[CountRecord, ...], ...]  # per run, 16 records
    subtracted: ChshResult
    raw: ChshResult


def _chsh(spec, det, stream, backend, runs) -> ChshRun:
    angles = spec.angles
    sets = simulate_chsh(
        source_state(spec),
        angles.chsh_deg,
        det,
        runs=runs,
        convention=angles.convention,
        stream=stream,
        backend=backend,
    )
    res = {}
    for sub in (True, False):
        per_run = [chsh(r, angles.chsh_deg, angles.chsh_sign_placement, sub) for r in sets]
        res[sub] = aggregate_chsh(per_run)
    return ChshRun(tuple(tuple(r) for r in sets), res[True], res[False])


def run_chsh(
    spec: ExperimentSpec,
    *,
    gates: Optional[int] = None,
    runs: Optional[int] = None,
    backend: Optional[str] = None,
) -> ChshRun:
    det = spec.detection_for(gates or spec.run.chsh_gates)
    return _chsh(spec, det, (STREAM_CHSH,), backend, runs or spec.run.runs)


@dataclass(frozen=True)
class SweepPoint:
    km: float
    detection: DetectionConfig
    fringes: tuple[FringeRun, ...]
    chsh: Optional[ChshRun]

    @property
    def peak_coinc_cps(self) -> float:
        """Largest raw coincidence rate over the first fringe."""
        f = self.fringes[0]
        return max(r.coinc_raw for r in f.records) * self.detection.gate_rate / f.records[0].gates


def sweep_detection(spec: ExperimentSpec, km: float, gates: int) -> DetectionConfig:
    return with_fiber(spec.detection_for(gates), km, spec.fiber.loss_db_per_km, spec.fiber.depol_length_km)


def run_sweep(
    spec: ExperimentSpec,
    km_grid: Optional[Sequence[float]] = None,
    *,
    gates: Optional[int] = None,
    with_chsh: bool = True,
    backend: Optional[str] = None,
) -> list[SweepPoint]:
    """Fringes (and one CHSH run) after ``km`` of added fiber in each arm."""
    gates = gates or spec.run.sweep_gates
    out = []
    for km in km_grid if km_grid is not None else spec.fiber.km_grid:
        det = sweep_detection(spec, km, gates)
        key = (STREAM_SWEEP, int(round(km * 1000)))
        fr = tuple(_fringe(spec, det, t2, key + (1,), backend) for t2 in spec.angles.fringe_theta2_deg)
        ch = _chsh(spec, det, key + (2,), backend, 1) if with_chsh else None
        out.append(SweepPoint(float(km), det, fr, ch))
    return out


@dataclass(frozen=True)
class Calibrated:
    spec: ExperimentSpec
    counts: CalibrationResult | None
    visibility: VisibilityCalibration | None

    @property
    def count_residuals(self) -> dict:
        return self.visibility.count_residuals if self.visibility else self.counts.residuals


def run_calibrate(spec: ExperimentSpec) -> Calibrated:
    """Fit detection parameters (and, given visibility targets, ``p_depol``,
    the loop birefringence and the fiber depolarization length)."""
    cal = spec.calibration
    vis = cal.visibility_targets()
    pump, loop = spec.pump.build(), spec.loop.build()
    if not vis:
        res = calibrate(build_output_state(pump, loop), spec.detection, cal.count_targets(), tol=cal.tolerance)
        return Calibrated(replace(spec, detection=res.config), res, None)
    fiber = cal.fiber_targets()
    vc = calibrate_visibility(
        pump,
        loop,
        spec.detection,
        vis,
        cal.count_targets(),
        n_index=spec.loop.refractive_index,
        fiber_km=cal.fiber_km if fiber else 0.0,
        fiber_targets=fiber or None,
        loss_db_per_km=spec.fiber.loss_db_per_km,
        tol=cal.tolerance,
    )
    fiber_spec = spec.fiber
    if fiber:
        fiber_spec = replace(fiber_spec, depol_length_km=float(vc.depol_length_km))
    new = replace(
        spec,
        loop=replace(spec.loop, delta_n=float(vc.loop.delta_n)),
        detection=vc.det,
        fiber=fiber_spec,
    )
    return Calibrated(new, None, vc)

