import itertools
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from fwmloop.errors import ConfigError
from fwmloop.measurement import AnalyzerSetting
from fwmloop.montecarlo import (
    BLOCK_GATES,
    CountRecord,
    DetectionConfig,
    StateMixture,
    expected_counts,
    scan_fringe,
    simulate_setting,
)
from fwmloop.state import TwoPhotonState

PHI_PLUS = TwoPhotonState.phi_plus()
HH = TwoPhotonState.product_hh()
VV = TwoPhotonState.product_vv()
BACKENDS = ["numba", "numpy"]


def _kron_table(state, t1, t2):
    psi = np.array(state.amplitudes())
    a, b = math.radians(t1), math.radians(t2)
    pa = [np.array([math.cos(a), math.sin(a)]), np.array([-math.sin(a), math.cos(a)])]
    pb = [np.array([math.cos(b), math.sin(b)]), np.array([-math.sin(b), math.cos(b)])]
    return {(i, j): abs(np.kron(pa[i], pb[j]) @ psi) ** 2 for i in (0, 1) for j in (0, 1)}


def enumeration_oracle(source, t1, t2, det, n_max=8):
    """Per-gate probabilities by brute-force enumeration of pair numbers and
    per-pair outcomes (pass/block per photon, depolarization, survival)."""
    if isinstance(source, StateMixture):
        comps = list(zip(source.states, source.weights))
    else:
        comps = [(source, 1.0)]
    ts, ti = det.trans_s * det.eta_s, det.trans_i * det.eta_i
    p = det.p_depol
    out = dict(cs=0.0, ci=0.0, cc=0.0, at=0.0)
    for state, w in comps:
        table = _kron_table(state, t1, t2)
        # per-pair distribution over (signal click, idler click)
        pair = {}
        for (o1, o2), po in table.items():
            for r1, r2 in itertools.product((0, 1), repeat=2):
                pr = (p if r1 else 1 - p) * (p if r2 else 1 - p)
                for c1, c2 in itertools.product((0, 1), repeat=2):
                    # c = 1: photon's outcome replaced by a coin flip with result "pass"=0 / "block"=1
                    if not r1 and c1:
                        continue
                    if not r2 and c2:
                        continue
                    pc = (0.5 if r1 else 1.0) * (0.5 if r2 else 1.0)
                    pass1 = (c1 == 0) if r1 else (o1 == 0)
                    pass2 = (c2 == 0) if r2 else (o2 == 0)
                    for v1, v2 in itertools.product((0, 1), repeat=2):
                        pv = (ts if v1 else 1 - ts) * (ti if v2 else 1 - ti)
                        key = (int(pass1 and v1), int(pass2 and v2))
                        pair[key] = pair.get(key, 0.0) + po * pr * pc * pv
        # noise and darks: probability of no extra click per arm
        q_s = math.exp(-0.5 * det.noise_s * ts) * (1 - det.dark_s)
        q_i = math.exp(-0.5 * det.noise_i * ti) * (1 - det.dark_i)
        mu = det.mu_pairs
        for n in range(n_max + 1):
            pn = math.exp(-mu) * mu**n / math.factorial(n)
            for combo in itertools.product(pair.items(), repeat=n):
                prob = pn
                s = i = both = False
                for (a, b), pk in combo:
                    prob *= pk
                    s |= bool(a)
                    i |= bool(b)
                    both |= bool(a and b)
                for es, ei in itertools.product((0, 1), repeat=2):
                    pe = prob * ((1 - q_s) if es else q_s) * ((1 - q_i) if ei else q_i)
                    S, I = s or es, i or ei
                    out["cs"] += w * pe * S
                    out["ci"] += w * pe * I
                    out["cc"] += w * pe * (S and I)
                    out["at"] += w * pe * (S and I and not both)
    return out


ORACLE_CASES = [
    (PHI_PLUS, 0.0, 0.0, DetectionConfig(mu_pairs=0.05, trans_s=0.3, trans_i=0.5, eta_s=0.5, eta_i=0.4)),
    (PHI_PLUS, 30.0, 75.0, DetectionConfig(mu_pairs=0.2, noise_s=0.3, noise_i=0.1, trans_s=0.7, trans_i=0.6, dark_s=0.01, dark_i=0.02, p_depol=0.1)),
    (StateMixture.equal([HH, VV]), 45.0, 45.0, DetectionConfig(mu_pairs=0.1, trans_s=0.9, trans_i=0.8, p_depol=0.05, dark_i=1e-3)),
    (TwoPhotonState.normalized(0.9, 0.1j, 0.2, 0.3), 12.0, 160.0, DetectionConfig(mu_pairs=0.15, trans_s=0.5, trans_i=0.5, noise_s=0.05)),
]


@pytest.mark.parametrize("source,t1,t2,det", ORACLE_CASES)
def test_expected_counts_match_enumeration(source, t1, t2, det):
    want = enumeration_oracle(source, t1, t2, det)
    ex = expected_counts(source, AnalyzerSetting(t1, t2), det)
    n = det.n_gates
    assert ex.singles_s / n == pytest.approx(want["cs"], rel=1e-7)
    assert ex.singles_i / n == pytest.approx(want["ci"], rel=1e-7)
    assert ex.coinc_raw / n == pytest.approx(want["cc"], rel=1e-7)
    assert ex.acc_true / n == pytest.approx(want["at"], rel=1e-7, abs=1e-15)
    assert ex.acc_est / n == pytest.approx(want["cs"] * want["ci"], rel=1e-7)


def within(observed, expected, nsig=4.0):
    return abs(observed - expected) <= nsig * math.sqrt(max(expected, 1.0))


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("source,t1,t2,det", ORACLE_CASES)
def test_simulation_matches_expectation(backend, source, t1, t2, det):
    det = det.with_(n_gates=2_000_000, seed=99)
    rec = simulate_setting(source, AnalyzerSetting(t1, t2), det, backend=backend)
    ex = expected_counts(source, AnalyzerSetting(t1, t2), det)
    for f in ("singles_s", "singles_i", "coinc_raw", "acc_est", "acc_true"):
        assert within(getattr(rec, f), getattr(ex, f)), (f, getattr(rec, f), getattr(ex, f))


@pytest.mark.parametrize("backend", BACKENDS)
def test_no_light_no_darks_gives_zero(backend):
    rec = simulate_setting(PHI_PLUS, AnalyzerSetting(0, 0), DetectionConfig(n_gates=100_000), backend=backend)
    assert (rec.singles_s, rec.singles_i, rec.coinc_raw, rec.acc_est, rec.acc_true) == (0, 0, 0, 0, 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_dark_count_coincidences(backend):
    d, n = 0.01, 1_000_000
    det = DetectionConfig(dark_s=d, dark_i=d, n_gates=n, seed=4)
    rec = simulate_setting(PHI_PLUS, AnalyzerSetting(0, 0), det, backend=backend)
    assert within(rec.coinc_raw, n * d * d)
    assert within(rec.acc_est, n * d * d)
    assert rec.coinc_raw == rec.acc_true


@pytest.mark.parametrize("backend", BACKENDS)
def test_first_order_pair_rate(backend):
    det = DetectionConfig(mu_pairs=0.01, trans_s=0.1, trans_i=0.1, n_gates=10_000_000, seed=5)
    rec = simulate_setting(PHI_PLUS, AnalyzerSetting(0, 0), det, backend=backend)
    assert within(rec.coinc_raw, 0.01 * 0.5 * 0.1**2 * det.n_gates)


def test_multi_block_determinism_across_workers():
    det = DetectionConfig(mu_pairs=0.3, trans_s=0.2, trans_i=0.2, dark_s=1e-3, dark_i=1e-3, n_gates=3 * BLOCK_GATES + 12345, seed=7)
    s = AnalyzerSetting(10.0, 40.0)
    for backend in BACKENDS:
        a = simulate_setting(PHI_PLUS, s, det, backend=backend, workers=1)
        b = simulate_setting(PHI_PLUS, s, det, backend=backend, workers=3)
        assert a == b
    c = simulate_setting(PHI_PLUS, s, det.with_(seed=8), backend="numba")
    assert c != a


def test_streams_are_independent():
    det = DetectionConfig(mu_pairs=0.3, trans_s=0.5, trans_i=0.5, n_gates=200_000, seed=1)
    s = AnalyzerSetting(0, 0)
    assert simulate_setting(PHI_PLUS, s, det, stream=(1,)) != simulate_setting(PHI_PLUS, s, det, stream=(2,))
    assert simulate_setting(PHI_PLUS, s, det, stream=(1,)) == simulate_setting(PHI_PLUS, s, det, stream=(1,))


def test_cross_block_accidental_window():
    # high rates and several blocks: the stitched delayed window stays unbiased
    det = DetectionConfig(mu_pairs=0.5, trans_s=0.6, trans_i=0.6, n_gates=2 * BLOCK_GATES, seed=3, accidental_offset=5)
    ex = expected_counts(PHI_PLUS, AnalyzerSetting(0, 45), det)
    rec = simulate_setting(PHI_PLUS, AnalyzerSetting(0, 45), det)
    assert within(rec.acc_est, ex.acc_est)


def test_backends_agree_statistically():
    det = DetectionConfig(mu_pairs=0.19, trans_s=0.05, trans_i=0.036, eta_s=0.1, eta_i=0.1, dark_s=2.5e-5, dark_i=4e-5, p_depol=0.03, n_gates=40_000_000, seed=12)
    s = AnalyzerSetting(0, 0)
    a = simulate_setting(PHI_PLUS, s, det, backend="numba")
    b = simulate_setting(PHI_PLUS, s, det, backend="numpy")
    for f in ("singles_s", "singles_i", "coinc_raw", "acc_est"):
        x, y = getattr(a, f), getattr(b, f)
        assert abs(x - y) <= 5 * math.sqrt(x + y + 1), f


def test_physicality_labels():
    det = DetectionConfig(mu_pairs=0.8, trans_s=0.5, trans_i=0.5, noise_s=0.2, dark_s=0.01, dark_i=0.01, n_gates=500_000, seed=2)
    for backend in BACKENDS:
        rec = simulate_setting(PHI_PLUS, AnalyzerSetting(20, 70), det, backend=backend)
        assert rec.coinc_raw - rec.acc_true <= rec.pair_gates
        assert rec.acc_true <= rec.coinc_raw


def test_singles_monotone():
    base = DetectionConfig(mu_pairs=0.1, trans_s=0.3, trans_i=0.3, eta_s=0.2, eta_i=0.2, n_gates=4_000_000, seed=21)
    s = AnalyzerSetting(0, 0)
    for field, bigger in (("trans_s", 0.4), ("eta_s", 0.3), ("mu_pairs", 0.15)):
        hi = base.with_(**{field: bigger})
        assert expected_counts(PHI_PLUS, s, hi).singles_s > expected_counts(PHI_PLUS, s, base).singles_s
        a = simulate_setting(PHI_PLUS, s, base).singles_s
        b = simulate_setting(PHI_PLUS, s, hi.with_(seed=22)).singles_s
        assert b - a > -4 * math.sqrt(a + b)


def test_rate_linear_at_small_mu():
    mus = np.array([2e-4, 4e-4, 6e-4, 8e-4, 1e-3])
    rates = []
    for k, mu in enumerate(mus):
        det = DetectionConfig(mu_pairs=float(mu), trans_s=0.5, trans_i=0.5, n_gates=20_000_000, seed=30 + k)
        rates.append(simulate_setting(PHI_PLUS, AnalyzerSetting(0, 0), det).coinc_raw / det.n_gates)
    slope, icpt = np.polyfit(mus, rates, 1)
    pred = slope * mus + icpt
    r2 = 1 - np.sum((rates - pred) ** 2) / np.sum((rates - np.mean(rates)) ** 2)
    assert r2 > 0.99
    assert slope == pytest.approx(0.5 * 0.25, rel=0.05)


def test_complement_flux_conserved():
    det = DetectionConfig(mu_pairs=0.1, trans_s=0.5, trans_i=0.5, n_gates=2_000_000)
    totals = []
    for k, (a, b) in enumerate([(0, 0), (22.5, -45), (67.5, 10)]):
        tot = 0
        for da, db in ((0, 0), (90, 90), (0, 90), (90, 0)):
            tot += simulate_setting(PHI_PLUS, AnalyzerSetting(a + da, b + db), det.with_(seed=k * 4 + da + db)).coinc_raw
        totals.append(tot)
    m = np.mean(totals)
    assert all(abs(t - m) <= 4 * math.sqrt(2 * m) for t in totals)


def test_mixture_correlations_are_classical():
    mix = StateMixture.equal([HH, VV])
    det = DetectionConfig(mu_pairs=0.05, trans_s=1.0, trans_i=1.0, n_gates=4_000_000, seed=8)
    rec = simulate_setting(mix, AnalyzerSetting(45, 45), det)
    ex = expected_counts(mix, AnalyzerSetting(45, 45), det)
    assert within(rec.coinc_raw, ex.coinc_raw)
    # a product mixture at 45/45 gives p_pp = 1/4, the entangled state 1/2
    assert ex.coinc_raw < expected_counts(PHI_PLUS, AnalyzerSetting(45, 45), det).coinc_raw * 0.6


def test_scan_fringe_ideal_shape():
    det = DetectionConfig(mu_pairs=1e-3, n_gates=2_000_000, seed=9)
    recs = scan_fringe(PHI_PLUS, 0.0, [0.0, 45.0, 90.0], det)
    ex = [expected_counts(PHI_PLUS, r.setting, det).coinc_raw for r in recs]
    # the crossed point only sees double-pair gates
    assert ex[1] / ex[0] == pytest.approx(0.5, abs=1e-3)
    assert ex[2] / ex[0] < 1e-3
    assert all(within(r.coinc_raw, e) for r, e in zip(recs, ex))


def test_config_validation():
    with pytest.raises(ConfigError):
        DetectionConfig(trans_s=1.5)
    with pytest.raises(ConfigError):
        DetectionConfig(mu_pairs=-1)
    with pytest.raises(ConfigError):
        DetectionConfig(n_gates=0)
    with pytest.raises(ConfigError):
        StateMixture((HH, VV), (0.3, 0.3))
    with pytest.raises(ConfigError):
        CountRecord(AnalyzerSetting(0, 0), 1, 1, 2, 0, 0, 10)
    with pytest.raises(ConfigError):
        simulate_setting(PHI_PLUS, AnalyzerSetting(0, 0), DetectionConfig(), backend="cuda")


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, FWMLOOP_NO_NUMBA="1")
    code = "from fwmloop._accel import default_backend; print(default_backend())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
