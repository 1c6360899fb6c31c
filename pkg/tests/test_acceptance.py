"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line (visible with or without ``-s``)
and then asserts.  Tolerances are the ones the criteria state; the gate
counts are the shipped ``paper-defaults`` run lengths unless noted.
"""

import hashlib
import math
import random
import time

import numpy as np
import pytest

from fwmloop import config
from fwmloop.analysis import (
    PAPER_CHSH_ANGLES,
    FringeData,
    chsh,
    chsh_maximizer,
    fit_visibility,
)
from fwmloop.cli import chsh_csv, fringe_csv
from fwmloop.experiment import run_calibrate, run_chsh, run_fringe, run_sweep, source_state
from fwmloop.measurement import AnalyzerSetting
from fwmloop.montecarlo import DetectionConfig, StateMixture, scan_fringe, simulate_chsh, simulate_setting
from fwmloop.state import LoopConfig, TwoPhotonState, relative_phase_full

pytestmark = pytest.mark.acceptance

PHI_PLUS = TwoPhotonState.phi_plus()
HH = TwoPhotonState.product_hh()
VV = TwoPhotonState.normalized(0, 0, 0, 1)
GRID19 = tuple(np.arange(0.0, 181.0, 10.0))

# ideal-source runs: lossless, noiseless, small enough mu that the
# subtracted rate per pair is cos^2/2 to well inside the statistics
IDEAL_MU = 0.02
SEED = 1


@pytest.fixture
def report(capsys):
    def _report(number, ok, text):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {text}")
        return ok

    return _report


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update((p if isinstance(p, str) else repr(p)).encode())
    return h.hexdigest()


# --- scenario builders (parametrized by worker count for criterion 8) ---------


def ideal_fringe(workers):
    det = DetectionConfig(mu_pairs=IDEAL_MU, n_gates=10**6, seed=SEED, workers_hint=workers)
    return scan_fringe(PHI_PLUS, 0.0, GRID19, det, stream=(2,))


def ideal_chsh(workers):
    det = DetectionConfig(mu_pairs=IDEAL_MU, n_gates=10**7, seed=SEED, workers_hint=workers)
    return simulate_chsh(PHI_PLUS, (0.0, 45.0, 22.5, -22.5), det, stream=(3,))[0]


def classical_chsh(workers):
    det = DetectionConfig(mu_pairs=IDEAL_MU, n_gates=10**7, seed=SEED, workers_hint=workers)
    mix = StateMixture.equal([HH, VV])
    return {
        "HH": simulate_chsh(HH, PAPER_CHSH_ANGLES, det, stream=(4, 1))[0],
        "HH+VV": simulate_chsh(mix, PAPER_CHSH_ANGLES, det, stream=(4, 2))[0],
    }


def paper_runs(calibrated_spec, workers):
    spec = calibrated_spec.with_run(workers=workers)
    fringes = {t2: run_fringe(spec, t2) for t2 in spec.angles.fringe_theta2_deg}
    ch = run_chsh(spec)
    return spec, fringes, ch


def fiber_runs(calibrated_spec, workers):
    spec = calibrated_spec.with_run(workers=workers)
    return spec, run_sweep(spec, [spec.calibration.fiber_km], gates=FIBER_GATES, with_chsh=False)


# gates per point for the 10 km fringes: the 2 dB per arm loss cuts the
# coincidence rate by 2.5, so 4e10 keeps sigma_V near 0.003
FIBER_GATES = 40_000_000_000


@pytest.fixture(scope="module")
def calibrated():
    t0 = time.perf_counter()
    cal = run_calibrate(config.load("paper-defaults"))
    return cal, time.perf_counter() - t0


@pytest.fixture(scope="module")
def paper(calibrated):
    t0 = time.perf_counter()
    spec, fringes, ch = paper_runs(calibrated[0].spec, 1)
    return spec, fringes, ch, calibrated[1] + time.perf_counter() - t0


@pytest.fixture(scope="module")
def fiber(calibrated):
    return fiber_runs(calibrated[0].spec, 1)


# --- 1 -------------------------------------------------------------------------


def test_1_phase_independent_of_generation_point(report):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    worst, mismatch = 0.0, 0.0
    for _ in range(1000):
        L = rng.uniform(100.0, 20000.0)
        loop = LoopConfig.from_physical(
            L,
            0.0,
            rng.uniform(1540.0, 1560.0),
            rng.uniform(1540.0, 1565.0),
            n=rng.uniform(1.44, 1.48),
            delta_n=rng.uniform(0.0, 1e-5),
            varphi=rng.uniform(-math.pi, math.pi),
        )
        mismatch = max(mismatch, abs(loop.spectral.delta_k_H), abs(loop.spectral.delta_k_V))
        ref = relative_phase_full(loop)
        for _ in range(10):
            got = relative_phase_full(loop.at(rng.uniform(0.0, L)))
            worst = max(worst, abs(math.remainder(got - ref, 2 * math.pi)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and mismatch == 0.0 and elapsed < 1.0
    report(1, ok, f"max |dphi_r| over x = {worst:.2e} rad (<= 1e-9), delta_k = {mismatch}, {elapsed:.2f} s (< 1 s)")
    assert ok


# --- 2 -------------------------------------------------------------------------


def test_2_ideal_fringe(report):
    t0 = time.perf_counter()
    recs = ideal_fringe(1)
    elapsed = time.perf_counter() - t0
    # subtracted coincidences per pair: expected pairs per gate mu, and the
    # exact expectation exp(-mu)(exp(mu p) - 1) = mu p exp(-mu) (1 + O(mu p))
    norm = recs[0].gates * IDEAL_MU * math.exp(-IDEAL_MU)
    worst = 0.0
    for t1, r in zip(GRID19, recs):
        oracle = 0.5 * math.cos(math.radians(t1)) ** 2
        sigma = math.sqrt(max(r.coinc_raw + r.acc_est, 1)) / norm
        worst = max(worst, abs((r.coinc_raw - r.acc_est) / norm - oracle) / sigma)
    fit = fit_visibility(FringeData.from_records(recs, True, GRID19))
    ok = worst <= 4.0 and fit.visibility >= 0.995 and elapsed < 30.0
    report(
        2,
        ok,
        f"19 points, max deviation {worst:.2f} sigma (<= 4), V = {fit.visibility:.4f} +- {fit.sigma:.4f} "
        f"(>= 0.995), {elapsed:.1f} s (< 30 s)",
    )
    assert ok


# --- 3 -------------------------------------------------------------------------


def test_3_chsh_ceiling(report):
    t0 = time.perf_counter()
    best = chsh_maximizer(PHI_PLUS)
    res = chsh(ideal_chsh(1), (0.0, 45.0, 22.5, -22.5), 3, subtracted=True)
    elapsed = time.perf_counter() - t0
    tsirelson = 2 * math.sqrt(2)
    ok = abs(best.s - tsirelson) <= 1e-3 and abs(res.s - tsirelson) <= 3 * res.sigma_s and elapsed < 300
    report(
        3,
        ok,
        f"maximizer S = {best.s:.6f} (2.828427 +- 1e-3); MC S = {res.s:.4f} +- {res.sigma_s:.4f} "
        f"({abs(res.s - tsirelson) / res.sigma_s:.2f} sigma, <= 3); {elapsed:.1f} s (< 300 s)",
    )
    assert ok


# --- 4 -------------------------------------------------------------------------


def test_4_classical_bound(report):
    lines, ok = [], True
    for name, recs in classical_chsh(1).items():
        for placement in range(4):
            r = chsh(recs, PAPER_CHSH_ANGLES, placement, subtracted=True)
            good = abs(r.s) <= 2 + 3 * r.sigma_s
            ok &= good
            lines.append(f"{name}/p{placement} S={r.s:+.3f}+-{r.sigma_s:.3f}")
    report(4, ok, "|S| <= 2 + 3 sigma for " + ", ".join(lines))
    assert ok


# --- 5 -------------------------------------------------------------------------


def test_5_paper_reproduction(report, calibrated, paper):
    cal = calibrated[0]
    spec, fringes, ch, elapsed = paper
    resid = max(abs(v) for v in cal.count_residuals.values())
    v0, v45 = fringes[0.0], fringes[45.0]
    checks = [
        ("count residual", resid, 0.0, 0.05),
        ("V_sub(0)", v0.subtracted.visibility, 0.942, 0.03),
        ("V_sub(45)", v45.subtracted.visibility, 0.912, 0.03),
        ("V_raw(0)", v0.raw.visibility, 0.77, 0.03),
        ("V_raw(45)", v45.raw.visibility, 0.77, 0.03),
        ("S_sub", ch.subtracted.s, 2.65, 0.15),
        ("S_raw", ch.raw.s, 2.06, 0.15),
    ]
    ok = all(abs(v - target) <= tol for _, v, target, tol in checks) and elapsed < 600
    text = ", ".join(f"{n} = {v:.4f} ({t} +- {tol})" for n, v, t, tol in checks)
    report(5, ok, f"{text}; S sigma run-sd {ch.subtracted.sigma_s:.4f}; {elapsed:.0f} s (< 600 s)")
    assert ok


# --- 6 -------------------------------------------------------------------------


def test_6_distance_sweep(report, paper, fiber):
    _, fringes, _, _ = paper
    spec, (point,) = fiber
    v0, v45 = point.fringes
    base = fringes[0.0]
    base_peak = max(r.coinc_raw for r in base.records) * spec.detection.gate_rate / base.records[0].gates
    ratio = point.peak_coinc_cps / base_peak
    target = 10 ** -0.4
    checks = [
        ("V_sub(0) @10 km", v0.subtracted.visibility, 0.872, 0.03),
        ("V_sub(45) @10 km", v45.subtracted.visibility, 0.901, 0.03),
        # the pair term scales exactly as 10^-0.4; dark and multi-pair
        # accidentals do not, hence the 10 % allowance
        ("peak coincidence ratio", ratio, target, 0.1 * target),
    ]
    ok = all(abs(v - t) <= tol for _, v, t, tol in checks)
    text = ", ".join(f"{n} = {v:.4f} ({t:.4f} +- {tol:.4f})" for n, v, t, tol in checks)
    report(6, ok, f"{text}; sigma_V {v0.subtracted.sigma:.4f}/{v45.subtracted.sigma:.4f}")
    assert ok


# --- 7 -------------------------------------------------------------------------


def test_7_accidental_estimator(report, calibrated):
    spec = calibrated[0].spec
    det = spec.detection_for(4_000_000_000)
    state = source_state(spec)
    est, true = [], []
    for run in range(30):
        r = simulate_setting(state, AnalyzerSetting(0.0, 0.0), det, stream=(7, run))
        est.append(r.acc_est)
        true.append(r.acc_true)
    est, true = np.array(est, float), np.array(true, float)
    se = math.sqrt(est.var(ddof=1) / 30 + true.var(ddof=1) / 30)
    diff = est.mean() - true.mean()
    ok = abs(diff) <= 3 * se
    report(
        7,
        ok,
        f"mean acc_est {est.mean():.1f}, mean acc_true {true.mean():.1f}, difference {diff:+.1f} "
        f"= {diff / se:+.2f} SE (|.| <= 3) over 30 runs",
    )
    assert ok


# --- 8 -------------------------------------------------------------------------


def _outputs(calibrated_spec, workers, paper_result=None, fiber_result=None):
    spec, fringes, ch = paper_result or paper_runs(calibrated_spec, workers)
    fspec, points = fiber_result or fiber_runs(calibrated_spec, workers)
    return {
        2: _digest(ideal_fringe(workers)),
        3: _digest(ideal_chsh(workers)),
        4: _digest(classical_chsh(workers)),
        5: _digest(*(fringe_csv(spec, fr, True) for fr in fringes.values()), chsh_csv(spec, ch)),
        6: _digest(sweep_csv_without_chsh(fspec, points)),
    }


def sweep_csv_without_chsh(spec, points):
    return "".join(fringe_csv(spec, fr, True) for p in points for fr in p.fringes)


def test_8_determinism_across_workers(report, calibrated, paper, fiber):
    spec = calibrated[0].spec
    one = _outputs(spec, 1, paper[:3], fiber)
    three = _outputs(spec, 3)
    same = [k for k in one if one[k] == three[k]]
    ok = len(same) == len(one)
    report(8, ok, f"criteria {sorted(one)} outputs byte-identical for 1 vs 3 workers: {same}")
    assert ok
