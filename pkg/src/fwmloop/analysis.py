"""From count records to visibilities, correlations and the CHSH statistic."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from fwmloop.errors import (
    AngleMismatchError,
    ConfigError,
    FitError,
    IncompleteSetError,
    ZeroDenominatorError,
)
from fwmloop.measurement import (
    AnalyzerSetting,
    Convention,
    correlation_matrix,
    normalize_angle,
    perpendicular,
)
from fwmloop.montecarlo.config import CountRecord
from fwmloop.state import TwoPhotonState

log = logging.getLogger(__name__)

# Angles (theta1, theta1', theta2, theta2') quoted for the Bell test, degrees.
PAPER_CHSH_ANGLES = (-22.5, 22.5, -45.0, 0.0)
# Which of the four CHSH terms carries the minus sign.  3 is the printed form
# E(a,b) + E(a',b) + E(a,b') - E(a',b'); with the quoted angles and the
# |HH> + |VV> state it yields S = 0, while a minus on E(a',b) yields 2*sqrt(2).
PRINTED_SIGN_PLACEMENT = 3
PAPER_SIGN_PLACEMENT = 1

SigmaMethod = Literal["run-sd", "poisson"]


def raw_rate(rec: CountRecord) -> tuple[float, float]:
    """Coincidences per signal count and its Poisson uncertainty."""
    if rec.singles_s <= 0:
        raise ZeroDenominatorError("no signal counts")
    return rec.coinc_raw / rec.singles_s, math.sqrt(rec.coinc_raw) / rec.singles_s


def subtract_accidentals(rec: CountRecord) -> tuple[float, float]:
    """Accidental-subtracted coincidences per signal count.

    The result is not clamped at zero.
    """
    if rec.singles_s <= 0:
        raise ZeroDenominatorError("no signal counts")
    rate = (rec.coinc_raw - rec.acc_est) / rec.singles_s
    return rate, math.sqrt(rec.coinc_raw + rec.acc_est) / rec.singles_s


@dataclass(frozen=True)
class FringeData:
    theta2: float
    points: tuple[tuple[float, float, float], ...]  # (theta1 deg, rate, sigma)
    subtracted: bool

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(tuple(float(v) for v in p) for p in self.points))
        if not self.subtracted and any(r < 0 for _, r, _ in self.points):
            raise ConfigError("raw rates cannot be negative")
        # a 3-sigma excursion is rare but legitimate, so warn instead of failing
        low = [t for t, r, sg in self.points if r < -3.0 * sg]
        if low:
            log.warning("subtracted rate more than 3 sigma below zero at theta1 = %s", low)

    @classmethod
    def from_records(
        cls,
        records: Sequence[CountRecord],
        subtracted: bool,
        theta1_grid: Sequence[float] | None = None,
    ) -> "FringeData":
        """Rates per signal count.  ``theta1_grid`` labels the points with the
        unwrapped scan angles (settings store them modulo 180)."""
        if not records:
            raise ConfigError("no records")
        if theta1_grid is not None and len(theta1_grid) != len(records):
            raise ConfigError("grid and records differ in length")
        rate = subtract_accidentals if subtracted else raw_rate
        theta2 = records[0].setting.theta2
        pts = []
        for k, rec in enumerate(records):
            if rec.setting.theta2 != theta2:
                raise AngleMismatchError("records mix idler angles")
            t1 = rec.setting.theta1
            if theta1_grid is not None:
                t1 = float(theta1_grid[k])
                if normalize_angle(t1) != rec.setting.theta1:
                    raise AngleMismatchError(f"grid angle {t1} does not match record {rec.setting.theta1}")
            pts.append((t1, *rate(rec)))
        return cls(theta2, tuple(pts), subtracted)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.array(self.points, dtype=float).reshape(-1, 3)
        return a[:, 0], a[:, 1], a[:, 2]


class VisibilityFit(NamedTuple):
    visibility: float
    sigma: float
    phase_deg: float


@dataclass(frozen=True)
class FringeModel:
    """Weighted fit of ``A cos^2(theta1 - theta0) + B``."""

    amplitude: float
    offset: float
    phase_deg: float
    visibility: float
    sigma_visibility: float
    chi2_dof: float

    def __call__(self, theta1_deg):
        t = np.radians(np.asarray(theta1_deg, dtype=float) - self.phase_deg)
        return self.amplitude * np.cos(t) ** 2 + self.offset


def fit_fringe(fringe: FringeData) -> FringeModel:
    theta, rate, sigma = fringe.arrays()
    if theta.size < 5:
        raise FitError("need at least 5 fringe points")
    if np.ptp(theta) < 180.0 - 1e-9:
        raise FitError("fringe must span at least 180 degrees of theta1")
    # zero-count points carry zero Poisson sigma; floor at the smallest positive one
    pos = sigma[sigma > 0]
    sigma = np.maximum(sigma, pos.min()) if pos.size else np.ones_like(sigma)

    t2 = np.radians(2.0 * theta)
    X = np.column_stack([np.ones_like(t2), np.cos(t2), np.sin(t2)])
    w = 1.0 / sigma
    coef, *_ = np.linalg.lstsq(X * w[:, None], rate * w, rcond=None)
    c0, c1, c2 = coef
    resid = (X @ coef - rate) * w
    dof = max(theta.size - 3, 1)
    chi2_dof = float(resid @ resid / dof)
    radius = math.hypot(c1, c2)
    amplitude = 2.0 * radius
    offset = c0 - radius
    if not (c0 > 0) or amplitude < 0:
        raise FitError("fringe fit has non-positive mean rate")
    if chi2_dof > 10.0:
        raise FitError(f"chi2/dof = {chi2_dof:.2f} exceeds 10")
    cov = np.linalg.inv((X * w[:, None] ** 2).T @ X)
    vis = radius / c0
    if radius > 0:
        grad = np.array([-vis / c0, c1 / (radius * c0), c2 / (radius * c0)])
    else:
        grad = np.array([0.0, 1.0 / c0, 1.0 / c0])
    sigma_v = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    phase = normalize_angle(math.degrees(0.5 * math.atan2(c2, c1)))
    return FringeModel(float(amplitude), float(offset), phase, float(vis), sigma_v, chi2_dof)


def fit_visibility(fringe: FringeData) -> VisibilityFit:
    """Fringe visibility ``A / (A + 2B)``, its 1-sigma error and ``theta0``."""
    m = fit_fringe(fringe)
    return VisibilityFit(m.visibility, m.sigma_visibility, m.phase_deg)


def _counts(rec: CountRecord, subtracted: bool) -> tuple[float, float]:
    if subtracted:
        return rec.coinc_raw - rec.acc_est, rec.coinc_raw + rec.acc_est
    return rec.coinc_raw, rec.coinc_raw


def correlation_E_counts(four: Sequence[CountRecord], subtracted: bool = True) -> tuple[float, float]:
    """Polarization correlation from records at
    ``(a, b), (a_perp, b_perp), (a, b_perp), (a_perp, b)``."""
    if len(four) != 4:
        raise IncompleteSetError("need exactly four records")
    a, b = four[0].setting.theta1, four[0].setting.theta2
    ap, bp = perpendicular(a), perpendicular(b)
    expected = [(a, b), (ap, bp), (a, bp), (ap, b)]
    for rec, (t1, t2) in zip(four, expected):
        if not (math.isclose(rec.setting.theta1, t1, abs_tol=1e-9) and math.isclose(rec.setting.theta2, t2, abs_tol=1e-9)):
            raise AngleMismatchError(
                f"record at ({rec.setting.theta1}, {rec.setting.theta2}) where ({t1}, {t2}) was expected"
            )
    vals = [_counts(r, subtracted) for r in four]
    n = [v[0] for v in vals]
    var = [v[1] for v in vals]
    den = sum(n)
    if den <= 0:
        raise ZeroDenominatorError("correlation denominator is not positive")
    e = (n[0] + n[1] - n[2] - n[3]) / den
    d_plus, d_minus = (1.0 - e) / den, -(1.0 + e) / den
    sigma = math.sqrt(d_plus**2 * (var[0] + var[1]) + d_minus**2 * (var[2] + var[3]))
    return e, sigma


def chsh_term_settings(
    angles: Sequence[float], convention: Convention = "same-handed"
) -> list[AnalyzerSetting]:
    """The 16 settings: for each term (a,b), (a',b), (a,b'), (a',b') the four
    complement combinations in :func:`correlation_E_counts` order."""
    t1, t1p, t2, t2p = angles
    out = []
    for a, b in ((t1, t2), (t1p, t2), (t1, t2p), (t1p, t2p)):
        for da, db in ((0, 0), (90, 90), (0, 90), (90, 0)):
            out.append(AnalyzerSetting(a + da, b + db, convention))
    return out


def _signs(sign_placement: int) -> np.ndarray:
    if sign_placement not in range(4):
        raise ConfigError("sign_placement must be 0, 1, 2 or 3")
    s = np.ones(4)
    s[sign_placement] = -1.0
    return s


@dataclass(frozen=True)
class ChshResult:
    e_values: tuple[tuple[tuple[float, float], float, float], ...]  # ((theta1, theta2), E, sigma_E)
    s: float
    sigma_s: float
    sign_placement: int
    runs: int = 1
    s_runs: tuple[float, ...] = field(default=())
    sigma_poisson: float = float("nan")

    def __post_init__(self):
        if self.sigma_s < 0:
            raise ConfigError("sigma_s must be non-negative")
        for angles, e, se in self.e_values:
            if abs(e) > 1.0 + 3.0 * se:
                log.warning("|E| = %.4f at %s exceeds 1 by more than 3 sigma", abs(e), angles)

    @property
    def violation_sigmas(self) -> float:
        return (abs(self.s) - 2.0) / self.sigma_s if self.sigma_s > 0 else float("inf")


def chsh(
    records: Sequence[CountRecord],
    angles: Sequence[float] = PAPER_CHSH_ANGLES,
    sign_placement: int = PRINTED_SIGN_PLACEMENT,
    subtracted: bool = True,
) -> ChshResult:
    """CHSH statistic from 16 records; ``sigma_s`` assumes independent terms."""
    lookup = {(r.setting.theta1, r.setting.theta2): r for r in records}
    convention = records[0].setting.convention if records else "same-handed"
    settings = chsh_term_settings(angles, convention)
    try:
        ordered = [lookup[(s.theta1, s.theta2)] for s in settings]
    except KeyError as exc:
        raise IncompleteSetError(f"missing record for setting {exc.args[0]}") from None
    signs = _signs(sign_placement)
    terms = []
    for k in range(4):
        four = ordered[4 * k : 4 * k + 4]
        e, se = correlation_E_counts(four, subtracted)
        terms.append(((four[0].setting.theta1, four[0].setting.theta2), e, se))
    s = float(sum(sg * e for sg, (_, e, _) in zip(signs, terms)))
    sigma = float(math.sqrt(sum(se**2 for _, _, se in terms)))
    return ChshResult(tuple(terms), s, sigma, sign_placement, 1, (s,), sigma)


def aggregate_chsh(results: Sequence[ChshResult], sigma_method: SigmaMethod = "run-sd") -> ChshResult:
    """Average repeated runs.

    ``run-sd`` reports the standard deviation of the run values; ``poisson``
    reports the propagated counting error of the mean, which shrinks as
    1/sqrt(runs).
    """
    if not results:
        raise IncompleteSetError("no runs to aggregate")
    placement = results[0].sign_placement
    if any(r.sign_placement != placement for r in results):
        raise ConfigError("runs use different sign placements")
    n = len(results)
    s_vals = tuple(v for r in results for v in (r.s_runs or (r.s,)))
    s_mean = float(np.mean(s_vals))
    poisson = math.sqrt(sum(r.sigma_poisson**2 if math.isfinite(r.sigma_poisson) else r.sigma_s**2 for r in results)) / n
    if sigma_method == "run-sd":
        sigma = statistics.stdev(s_vals) if len(s_vals) > 1 else results[0].sigma_s
    elif sigma_method == "poisson":
        sigma = poisson
    else:
        raise ConfigError(f"unknown sigma method {sigma_method!r}")
    terms = []
    for k in range(4):
        es = [r.e_values[k][1] for r in results]
        ses = [r.e_values[k][2] for r in results]
        terms.append((results[0].e_values[k][0], float(np.mean(es)), math.sqrt(sum(x * x for x in ses)) / n))
    return ChshResult(tuple(terms), s_mean, float(sigma), placement, len(s_vals), s_vals, poisson)


class MaximizerResult(NamedTuple):
    angles: tuple[float, float, float, float]
    sign_placement: int
    s: float


def _chsh_value(state, angles, signs, convention):
    t1, t1p, t2, t2p = angles
    E = correlation_matrix(state, np.array([t1, t1p]), np.array([t2, t2p]), convention)
    return signs[0] * E[0, 0] + signs[1] * E[1, 0] + signs[2] * E[0, 1] + signs[3] * E[1, 1]


def chsh_value_ideal(
    state: TwoPhotonState,
    angles: Sequence[float],
    sign_placement: int = PRINTED_SIGN_PLACEMENT,
    convention: Convention = "same-handed",
) -> float:
    return float(_chsh_value(state, angles, _signs(sign_placement), convention))


def chsh_maximizer(
    state: TwoPhotonState, convention: Convention = "same-handed", grid_step: float = 2.0
) -> MaximizerResult:
    """Brute-force CHSH optimum over angles and sign placements, then polished.

    For fixed signal angles the two idler angles separate, so the grid search
    is O(G^3) rather than O(G^4).
    """
    grid = np.arange(0.0, 180.0, grid_step)
    E = correlation_matrix(state, grid, grid, convention)
    g = grid.size
    best = (-np.inf, None, None)
    for placement in range(4):
        s = _signs(placement)
        u = s[0] * E[:, None, :] + s[1] * E[None, :, :]  # [a, a', b]
        v = s[2] * E[:, None, :] + s[3] * E[None, :, :]  # [a, a', b']
        tot = u.max(axis=2) + v.max(axis=2)
        flat = int(np.argmax(tot))
        if tot.flat[flat] > best[0]:
            a, ap = divmod(flat, g)
            b = int(np.argmax(u[a, ap]))
            bp = int(np.argmax(v[a, ap]))
            best = (float(tot.flat[flat]), placement, np.array([grid[a], grid[ap], grid[b], grid[bp]]))

    _, placement, x0 = best
    signs = _signs(placement)
    res = minimize(
        lambda x: -_chsh_value(state, x, signs, convention),
        x0,
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 20000},
    )
    x = res.x if -res.fun >= best[0] else x0
    s_val = float(_chsh_value(state, x, signs, convention))
    angles = tuple(normalize_angle(float(t)) for t in x)
    return MaximizerResult(angles, placement, s_val)
