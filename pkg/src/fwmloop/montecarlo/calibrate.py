"""Fit detection parameters to measured count rates and visibilities."""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from fwmloop.analysis import FringeData, fit_visibility
from fwmloop.errors import ConfigError, NoFeasibleFitError
from fwmloop.measurement import AnalyzerSetting
from fwmloop.montecarlo.config import CountRecord, DetectionConfig, Source
from fwmloop.montecarlo.engine import simulate_setting
from fwmloop.montecarlo.rates import expected_counts
from fwmloop.state import C_LIGHT, LoopConfig, PumpConfig, TwoPhotonState, build_output_state

log = logging.getLogger(__name__)

COUNT_TARGETS = ("singles_s_cps", "singles_i_cps", "coinc_max_cps")
DEFAULT_FREE = ("trans_s", "trans_i", "mu_pairs")
_UNIT_BOUNDED = {"trans_s", "trans_i", "eta_s", "eta_i", "dark_s", "dark_i", "p_depol"}
_FITTABLE = _UNIT_BOUNDED | {"mu_pairs", "noise_s", "noise_i"}
VISIBILITY_GRID = tuple(np.arange(0.0, 181.0, 5.0))


@dataclass(frozen=True)
class CalibrationResult:
    config: DetectionConfig
    residuals: dict  # relative model-minus-target per count target
    mc_residuals: dict = field(default_factory=dict)
    mc_record: Optional[CountRecord] = None


def model_rates(source: Source, det: DetectionConfig, setting: AnalyzerSetting) -> dict:
    ex = expected_counts(source, setting, det).per_second(det.gate_rate)
    return {"singles_s_cps": ex.singles_s, "singles_i_cps": ex.singles_i, "coinc_max_cps": ex.coinc_raw}


def _relative(rates: Mapping[str, float], targets: Mapping[str, float]) -> dict:
    return {k: float(rates[k] / targets[k] - 1.0) for k in COUNT_TARGETS}


def _initial_guess(det: DetectionConfig, targets: Mapping[str, float]) -> DetectionConfig:
    """First-order solution for (trans_s, trans_i, mu) with the other fields fixed."""
    r = det.gate_rate
    ps = max(targets["singles_s_cps"] / r - det.dark_s, 1e-12)
    pi = max(targets["singles_i_cps"] / r - det.dark_i, 1e-12)
    acc = (targets["singles_s_cps"] / r) * (targets["singles_i_cps"] / r)
    true_max = max(targets["coinc_max_cps"] / r - acc, 1e-3 * targets["coinc_max_cps"] / r)
    # singles ~ eff*(mu + noise)/2 and peak coincidences ~ mu*eff_s*eff_i/2
    best = None
    for mu in np.geomspace(1e-4, 2.0, 200):
        es = 2.0 * ps / (mu + det.noise_s)
        ei = 2.0 * pi / (mu + det.noise_i)
        err = abs(math.log(mu * es * ei / 2.0 / true_max))
        if best is None or err < best[0]:
            best = (err, mu, es, ei)
    _, mu, es, ei = best
    return det.with_(
        mu_pairs=float(mu),
        trans_s=float(min(es / det.eta_s, 1.0)),
        trans_i=float(min(ei / det.eta_i, 1.0)),
    )


def calibrate(
    source: Source,
    det: DetectionConfig,
    targets: Mapping[str, float],
    free: Sequence[str] = DEFAULT_FREE,
    *,
    setting: AnalyzerSetting = AnalyzerSetting(0.0, 0.0),
    tol: float = 0.05,
    verify_gates: int = 0,
    backend: Optional[str] = None,
) -> CalibrationResult:
    """Least-squares fit of ``free`` fields so that singles and peak
    coincidence rates at ``setting`` match ``targets`` (counts per second).

    The fit uses the closed-form expectations; with ``verify_gates > 0`` the
    result is re-checked by Monte Carlo at the same tolerance.
    """
    missing = [k for k in COUNT_TARGETS if k not in targets]
    if missing:
        raise ConfigError(f"missing calibration targets: {missing}")
    if any(not (targets[k] > 0) for k in COUNT_TARGETS):
        raise ConfigError("calibration targets must be positive")
    free = tuple(free)
    unknown = [f for f in free if f not in _FITTABLE]
    if unknown:
        raise ConfigError(f"cannot fit fields {unknown}")

    fitted = det
    if free:
        start = _initial_guess(det, targets) if set(free) == set(DEFAULT_FREE) else det
        x0 = np.array([math.log(max(getattr(start, f), 1e-12)) for f in free])
        upper = np.array([0.0 if f in _UNIT_BOUNDED else np.inf for f in free])
        x0 = np.minimum(x0, upper - 1e-12)

        def resid(x):
            trial = det.with_(**{f: float(math.exp(v)) for f, v in zip(free, x)})
            return list(_relative(model_rates(source, trial, setting), targets).values())

        sol = least_squares(resid, x0, bounds=(np.full(len(free), -60.0), upper), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        fitted = det.with_(**{f: float(math.exp(v)) for f, v in zip(free, sol.x)})

    residuals = _relative(model_rates(source, fitted, setting), targets)
    worst = max(abs(v) for v in residuals.values())
    if worst > tol:
        raise NoFeasibleFitError(f"calibration residual {worst:.3%} exceeds {tol:.0%}: {residuals}")

    mc_res, rec = {}, None
    if verify_gates > 0:
        rec = simulate_setting(source, setting, fitted.with_(n_gates=int(verify_gates)), stream=(0xCA1,), backend=backend)
        scale = fitted.gate_rate / rec.gates
        mc_rates = {
            "singles_s_cps": rec.singles_s * scale,
            "singles_i_cps": rec.singles_i * scale,
            "coinc_max_cps": rec.coinc_raw * scale,
        }
        mc_res = _relative(mc_rates, targets)
        worst = max(abs(v) for v in mc_res.values())
        if worst > tol:
            raise NoFeasibleFitError(f"Monte Carlo check misses targets by {worst:.3%}: {mc_res}")
    return CalibrationResult(fitted, residuals, mc_res, rec)


def expected_visibility(
    source: Source,
    theta2: float,
    det: DetectionConfig,
    subtracted: bool,
    grid: Sequence[float] = VISIBILITY_GRID,
) -> float:
    """Visibility of the noiseless expected fringe, fitted like measured data."""
    pts = []
    for t1 in grid:
        ex = expected_counts(source, AnalyzerSetting(t1, theta2), det)
        coinc = ex.coinc_raw - ex.acc_est if subtracted else ex.coinc_raw
        pts.append((t1, coinc / ex.singles_s, 1.0))
    return fit_visibility(FringeData(theta2, tuple(pts), subtracted)).visibility


def delta_n_for_phase(loop: LoopConfig, phi_r: float) -> float:
    """Birefringence giving relative phase ``phi_r`` in the phase-matched loop."""
    omega_p = loop.spectral.omega_p
    return (0.5 * phi_r - loop.varphi) * C_LIGHT / (omega_p * loop.L)


def with_delta_n(loop: LoopConfig, delta_n: float, n: float) -> LoopConfig:
    pump_nm, signal_nm, _ = loop.spectral.wavelengths_nm
    return LoopConfig.from_physical(
        loop.L, loop.x, pump_nm, signal_nm, n=n, delta_n=delta_n, varphi=loop.varphi
    )


@dataclass(frozen=True)
class VisibilityCalibration:
    det: DetectionConfig
    loop: LoopConfig
    depol_length_km: float
    visibilities: dict
    count_residuals: dict


def _phase_state(pump: PumpConfig, phi_r: float) -> TwoPhotonState:
    return TwoPhotonState.normalized(pump.alpha, 0, 0, pump.beta * cmath.exp(1j * phi_r))


def calibrate_visibility(
    pump: PumpConfig,
    loop: LoopConfig,
    det: DetectionConfig,
    vis_targets: Mapping[str, float],
    count_targets: Mapping[str, float],
    *,
    n_index: float,
    fiber_km: float = 0.0,
    fiber_targets: Optional[Mapping[str, float]] = None,
    loss_db_per_km: float = 0.2,
    iterations: int = 8,
    tol: float = 0.05,
) -> VisibilityCalibration:
    """Fit ``p_depol``, the loop birefringence and (optionally) the fiber
    depolarization length to fringe visibilities.

    ``vis_targets`` may hold ``sub_0``, ``sub_45``, ``raw_0``, ``raw_45``
    (subtracted/raw visibilities at idler angles 0 and 45 degrees).
    ``fiber_targets`` holds ``sub_0``/``sub_45`` measured after ``fiber_km``
    of added fiber per arm; the relative phase is a source property, so both
    data sets constrain it jointly.  All residuals enter unweighted.  Count
    rates are re-fitted after every visibility step since the peak
    coincidence depends on both.
    """
    keys = [k for k in ("sub_0", "sub_45", "raw_0", "raw_45") if k in vis_targets]
    fkeys = [k for k in ("sub_0", "sub_45") if fiber_targets and k in fiber_targets]
    if not keys:
        raise ConfigError("no visibility targets given")
    if fkeys and not fiber_km > 0:
        raise ConfigError("fiber targets need a positive fiber length")

    def length(keep):
        return -fiber_km / math.log(keep) if keep < 1.0 else math.inf

    def model(det_, state, keep):
        out = {}
        for k in keys:
            kind, angle = k.split("_")
            out[k] = float(expected_visibility(state, float(angle), det_, kind == "sub"))
        if fkeys:
            d = with_fiber(det_, fiber_km, loss_db_per_km, length(keep))
            for k in fkeys:
                out["fiber_" + k] = float(expected_visibility(state, float(k.split("_")[1]), d, True))
        return out

    targets = {**{k: vis_targets[k] for k in keys}, **{"fiber_" + k: fiber_targets[k] for k in fkeys}}
    names = list(targets)

    det = calibrate(build_output_state(pump, loop), det, count_targets, tol=tol).config
    phi0 = 2.0 * (loop.varphi + loop.spectral.omega_p * loop.delta_n * loop.L / C_LIGHT)
    # cos(phi_r) is flat at 0, so never start the phase exactly there
    x = np.array([det.p_depol, min(max(phi0, 0.3), math.pi / 2), 0.97])
    lo, hi = [0.0, 0.0, 0.5], [0.5, math.pi / 2, 1.0]
    if not fkeys:
        x, lo, hi = x[:2], lo[:2], hi[:2]
    for _ in range(iterations):
        det_fixed = det

        def resid(v):
            keep = v[2] if fkeys else 1.0
            got = model(det_fixed.with_(p_depol=float(v[0])), _phase_state(pump, v[1]), keep)
            return [got[k] - targets[k] for k in names]

        x_new = least_squares(resid, x, bounds=(lo, hi), xtol=1e-14, ftol=1e-14).x
        loop = with_delta_n(loop, max(delta_n_for_phase(loop, x_new[1]), 0.0), n_index)
        det = calibrate(_phase_state(pump, x_new[1]), det.with_(p_depol=float(x_new[0])), count_targets, tol=tol).config
        done = np.allclose(x_new, x, atol=1e-10, rtol=0)
        x = x_new
        if done:
            break
    keep = x[2] if fkeys else 1.0
    state = build_output_state(pump, loop)
    counts = calibrate(state, det, count_targets, tol=tol)
    return VisibilityCalibration(counts.config, loop, length(keep), model(counts.config, state, keep), counts.residuals)


def with_fiber(det: DetectionConfig, km: float, loss_db_per_km: float = 0.2, depol_length_km: float = math.inf) -> DetectionConfig:
    """Add ``km`` of fiber to each arm: transmittance loss plus depolarization
    with survival ``exp(-km / depol_length_km)`` of the polarization correlation per photon."""
    if km < 0 or loss_db_per_km < 0 or depol_length_km <= 0:
        raise ConfigError("fiber length, loss and depolarization length must be non-negative")
    if km == 0:
        return det
    t = 10.0 ** (-loss_db_per_km * km / 10.0)
    keep = math.exp(-km / depol_length_km) if math.isfinite(depol_length_km) else 1.0
    return det.with_(
        trans_s=det.trans_s * t,
        trans_i=det.trans_i * t,
        p_depol=1.0 - (1.0 - det.p_depol) * keep,
    )


def fit_fiber_depolarization(
    source: Source,
    det: DetectionConfig,
    km: float,
    vis_targets: Mapping[str, float],
    loss_db_per_km: float = 0.2,
) -> tuple[float, dict]:
    """Depolarization length (km) matching subtracted visibilities after ``km``
    of added fiber per arm.  Returns the length and the fitted visibilities."""
    keys = [k for k in ("sub_0", "sub_45") if k in vis_targets]
    if not keys or km <= 0:
        raise ConfigError("need sub_0/sub_45 targets and a positive fiber length")

    def vis(keep):
        d = with_fiber(det, km, loss_db_per_km, -km / math.log(keep) if keep < 1 else math.inf)
        return {k: expected_visibility(source, float(k.split("_")[1]), d, True) for k in keys}

    def cost(keep):
        got = vis(keep)
        return sum((got[k] - vis_targets[k]) ** 2 for k in keys)

    res = minimize_scalar(cost, bounds=(0.5, 1.0), method="bounded", options={"xatol": 1e-12})
    keep = float(res.x)
    length = -km / math.log(keep) if keep < 1.0 else math.inf
    return length, vis(keep)
