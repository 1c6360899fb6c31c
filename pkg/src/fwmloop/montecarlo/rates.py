"""Per-gate event rates and closed-form expected counts.

Losses thin the Poisson pair number into independent classes: pairs whose
two photons both reach a detector, pairs with only the signal (or only the
idler) surviving, plus surviving noise photons.  Detectors are binary, so
only "at least one" events matter and the expectations below are exact for
the simulated model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fwmloop.measurement import AnalyzerSetting, joint_probabilities
from fwmloop.montecarlo.config import DetectionConfig, Source, as_mixture

CLASSES = ("both", "signal_only", "idler_only", "noise_s", "noise_i")


@dataclass(frozen=True)
class GateModel:
    """Inputs of the gate kernel for one analyzer setting."""

    means: np.ndarray  # Poisson means of CLASSES per gate
    dark_s: float
    dark_i: float
    p_depol: float
    tables: np.ndarray  # (K, 4) joint outcome probabilities per mixture component
    weights: np.ndarray  # (K,)

    @property
    def photon_rate(self) -> float:
        return float(self.means.sum())

    @property
    def p_active(self) -> float:
        """Probability that a gate holds any surviving photon or dark count."""
        return -math.expm1(-self.photon_rate + math.log1p(-self.dark_s) + math.log1p(-self.dark_i))


def gate_model(source: Source, setting: AnalyzerSetting, det: DetectionConfig) -> GateModel:
    mix = as_mixture(source)
    ts, ti = det.arm_efficiency_s, det.arm_efficiency_i
    mu = det.mu_pairs
    means = np.array([
        mu * ts * ti,
        mu * ts * (1.0 - ti),
        mu * (1.0 - ts) * ti,
        det.noise_s * ts,
        det.noise_i * ti,
    ])
    tables = np.array([joint_probabilities(s, setting).as_array() for s in mix.states])
    return GateModel(
        means=means,
        dark_s=det.dark_s,
        dark_i=det.dark_i,
        p_depol=det.p_depol,
        tables=tables,
        weights=np.asarray(mix.weights, dtype=float),
    )


def depolarized(table: np.ndarray, p: float) -> np.ndarray:
    """Joint outcome table after each photon is independently randomized w.p. ``p``."""
    table = np.asarray(table, dtype=float)
    if p == 0.0:
        return table
    pp, pb, bp, bb = table
    ps = np.array([pp + pb, bp + bb])  # signal pass / block
    pi = np.array([pp + bp, pb + bb])
    joint = table.reshape(2, 2)
    out = (
        (1 - p) ** 2 * joint
        + p * (1 - p) * 0.5 * pi[None, :]
        + p * (1 - p) * 0.5 * ps[:, None]
        + p * p * 0.25
    )
    return out.reshape(4)


@dataclass(frozen=True)
class GateProbabilities:
    """Per-gate probabilities of the recorded events."""

    click_s: float
    click_i: float
    coinc: float
    acc_true: float
    pair_coinc: float


def gate_probabilities(model: GateModel) -> GateProbabilities:
    m_b, m_so, m_io, m_ns, m_ni = model.means
    cs = ci = cc = at = pc = 0.0
    for w, table in zip(model.weights, model.tables):
        pp, pb, bp, _ = depolarized(table, model.p_depol)
        a = -math.expm1(-m_b * pp)
        bs = -math.expm1(-(m_b * pb + m_so * (pp + pb) + 0.5 * m_ns) + math.log1p(-model.dark_s))
        bi = -math.expm1(-(m_b * bp + m_io * (pp + bp) + 0.5 * m_ni) + math.log1p(-model.dark_i))
        cs += w * (1 - (1 - a) * (1 - bs))
        ci += w * (1 - (1 - a) * (1 - bi))
        cc += w * (a + (1 - a) * bs * bi)
        at += w * (1 - a) * bs * bi
        pc += w * a
    return GateProbabilities(cs, ci, cc, at, pc)


@dataclass(frozen=True)
class ExpectedCounts:
    singles_s: float
    singles_i: float
    coinc_raw: float
    acc_est: float
    acc_true: float
    gates: int

    def per_second(self, gate_rate: float) -> "ExpectedCounts":
        f = gate_rate / self.gates
        return ExpectedCounts(
            self.singles_s * f, self.singles_i * f, self.coinc_raw * f,
            self.acc_est * f, self.acc_true * f, self.gates,
        )


def expected_counts(source: Source, setting: AnalyzerSetting, det: DetectionConfig) -> ExpectedCounts:
    """Exact expectations of every :class:`CountRecord` field."""
    g = gate_probabilities(gate_model(source, setting, det))
    n = det.n_gates
    return ExpectedCounts(
        singles_s=n * g.click_s,
        singles_i=n * g.click_i,
        coinc_raw=n * g.coinc,
        acc_est=n * g.click_s * g.click_i,
        acc_true=n * g.acc_true,
        gates=n,
    )
