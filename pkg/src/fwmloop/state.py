"""Two-photon polarization state at the output of the fiber loop.

The pump enters a PBS; its H component circulates counter-clockwise and its
V component clockwise through the fiber, each creating HH or VV photon pairs
at a distance ``x`` (CCW) from the PBS.  All phases below are accumulated
exactly with :mod:`fwmloop._exact` and wrapped into (-pi, pi].
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from fwmloop._exact import Phase, wrap
from fwmloop.errors import ConfigError, PhaseMismatchError

C_LIGHT = 299_792_458.0  # m/s, exact by definition
DEFAULT_INDEX = 1.468
PHASE_MATCH_TOL = 1e-9  # rad/m

_SQRT_HALF = math.sqrt(0.5)


@dataclass(frozen=True)
class SpectralConfig:
    """Angular frequencies (rad/s) and H/V wavenumbers (rad/m)."""

    omega_p: float
    omega_s: float
    omega_i: float
    k_pH: float
    k_pV: float
    k_sH: float
    k_sV: float
    k_iH: float
    k_iV: float

    def __post_init__(self):
        for name, val in vars(self).items():
            if not (math.isfinite(val) and val > 0.0):
                raise ConfigError(f"{name} must be finite and > 0, got {val!r}")
        lhs = 2.0 * self.omega_p
        if abs(lhs - (self.omega_s + self.omega_i)) > 1e-12 * lhs:
            raise ConfigError("frequency matching 2*omega_p = omega_s + omega_i violated")

    @classmethod
    def from_indices(
        cls,
        pump_nm: float,
        signal_nm: float,
        n: float = DEFAULT_INDEX,
        delta_n: float = 0.0,
    ) -> "SpectralConfig":
        """Build a phase-matched configuration from wavelengths and indices.

        H photons see index ``n``, V photons ``n + delta_n``, with no
        dispersion (pump at the zero-dispersion wavelength).  The idler
        frequency follows from energy conservation.  Idler wavenumbers are
        set to ``2*k_p - k_s`` so that the phase mismatch is exactly zero in
        floating point rather than merely below one ulp.
        """
        if not (pump_nm > 0 and signal_nm > 0):
            raise ConfigError("wavelengths must be positive")
        omega_p = 2.0 * math.pi * C_LIGHT / (pump_nm * 1e-9)
        omega_s = 2.0 * math.pi * C_LIGHT / (signal_nm * 1e-9)
        omega_i = 2.0 * omega_p - omega_s
        if omega_i <= 0:
            raise ConfigError("signal frequency exceeds twice the pump frequency")
        n_v = n + delta_n
        k_pH = n * omega_p / C_LIGHT
        k_sH = n * omega_s / C_LIGHT
        k_pV = n_v * omega_p / C_LIGHT
        k_sV = n_v * omega_s / C_LIGHT
        return cls(
            omega_p=omega_p,
            omega_s=omega_s,
            omega_i=omega_i,
            k_pH=k_pH,
            k_pV=k_pV,
            k_sH=k_sH,
            k_sV=k_sV,
            k_iH=2.0 * k_pH - k_sH,
            k_iV=2.0 * k_pV - k_sV,
        )

    def mismatch(self, pol: str) -> Phase:
        """Phase mismatch ``2 k_p - (k_s + k_i)`` for ``pol`` in {"H", "V"}, exact."""
        kp, ks, ki = (getattr(self, f"k_{w}{pol}") for w in "psi")
        return Phase([2.0 * kp, -ks, -ki])

    @property
    def delta_k_H(self) -> float:
        return self.mismatch("H").value()

    @property
    def delta_k_V(self) -> float:
        return self.mismatch("V").value()

    @property
    def wavelengths_nm(self) -> tuple[float, float, float]:
        return tuple(2.0 * math.pi * C_LIGHT / w * 1e9 for w in (self.omega_p, self.omega_s, self.omega_i))


@dataclass(frozen=True)
class LoopConfig:
    """Loop length ``L`` (m), generation point ``x`` (m, CCW from the PBS),
    birefringence ``delta_n`` and pump H/V phase difference ``varphi`` (rad)."""

    L: float
    delta_n: float
    x: float
    varphi: float
    spectral: SpectralConfig

    def __post_init__(self):
        if not (math.isfinite(self.L) and self.L > 0):
            raise ConfigError(f"loop length must be > 0, got {self.L!r}")
        if not (0.0 <= self.x <= self.L):
            raise ConfigError(f"generation point x={self.x!r} outside [0, L={self.L!r}]")
        if not (0.0 <= self.delta_n < 1e-3):
            raise ConfigError(f"delta_n must lie in [0, 1e-3), got {self.delta_n!r}")
        if not math.isfinite(self.varphi):
            raise ConfigError("varphi must be finite")

    @classmethod
    def from_physical(
        cls,
        L: float,
        x: float,
        pump_nm: float,
        signal_nm: float,
        *,
        n: float = DEFAULT_INDEX,
        delta_n: float = 0.0,
        varphi: float = 0.0,
    ) -> "LoopConfig":
        spectral = SpectralConfig.from_indices(pump_nm, signal_nm, n=n, delta_n=delta_n)
        return cls(L=L, delta_n=delta_n, x=x, varphi=varphi, spectral=spectral)

    def at(self, x: float) -> "LoopConfig":
        return LoopConfig(L=self.L, delta_n=self.delta_n, x=x, varphi=self.varphi, spectral=self.spectral)


@dataclass(frozen=True)
class PumpConfig:
    """Real amplitude split of the pump between the H (CCW) and V (CW) paths."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if abs(self.alpha**2 + self.beta**2 - 1.0) > 1e-12:
            raise ConfigError("alpha**2 + beta**2 must equal 1")

    @classmethod
    def balanced(cls) -> "PumpConfig":
        return cls(_SQRT_HALF, _SQRT_HALF)

    @classmethod
    def from_h_fraction(cls, h_fraction: float) -> "PumpConfig":
        """From the H share ``alpha**2`` of the pair power."""
        if not 0.0 <= h_fraction <= 1.0:
            raise ConfigError("h_fraction must lie in [0, 1]")
        return cls(math.sqrt(h_fraction), math.sqrt(1.0 - h_fraction))


@dataclass(frozen=True)
class PhaseLedger:
    """Every intermediate phase of the loop propagation, wrapped to (-pi, pi]."""

    phi_pH: float
    phi_pV: float
    phi_sH: float
    phi_sV: float
    phi_iH: float
    phi_iV: float
    phi_sH_out: float
    phi_sV_out: float
    phi_iH_out: float
    phi_iV_out: float

    def __post_init__(self):
        for pol in "HV":
            s, i, p = (getattr(self, f"phi_{w}{pol}") for w in "sip")
            if abs(wrap(s + i - 2.0 * p)) > 1e-9:
                raise ConfigError(f"signal+idler phase != 2*pump phase for {pol}")

    def relative_phase(self) -> float:
        """VV-minus-HH output phase; agrees with :func:`relative_phase_full`."""
        return wrap((self.phi_sV_out + self.phi_iV_out) - (self.phi_sH_out + self.phi_iH_out))


@dataclass(frozen=True)
class TwoPhotonState:
    """Pure state over the basis {HH, HV, VH, VV} (signal first)."""

    amp_HH: complex
    amp_HV: complex
    amp_VH: complex
    amp_VV: complex

    def __post_init__(self):
        if abs(self.norm_squared() - 1.0) > 1e-12:
            raise ConfigError(f"state not normalized (norm^2 = {self.norm_squared()!r})")

    def norm_squared(self) -> float:
        return sum(abs(a) ** 2 for a in self.amplitudes())

    def amplitudes(self) -> tuple[complex, complex, complex, complex]:
        return (complex(self.amp_HH), complex(self.amp_HV), complex(self.amp_VH), complex(self.amp_VV))

    @classmethod
    def normalized(cls, hh: complex, hv: complex = 0, vh: complex = 0, vv: complex = 0) -> "TwoPhotonState":
        nrm = math.sqrt(abs(hh) ** 2 + abs(hv) ** 2 + abs(vh) ** 2 + abs(vv) ** 2)
        if nrm == 0:
            raise ConfigError("zero state vector")
        return cls(*(complex(a) / nrm for a in (hh, hv, vh, vv)))

    @classmethod
    def phi_plus(cls) -> "TwoPhotonState":
        return cls(_SQRT_HALF, 0, 0, _SQRT_HALF)

    @classmethod
    def phi_minus(cls) -> "TwoPhotonState":
        return cls(_SQRT_HALF, 0, 0, -_SQRT_HALF)

    @classmethod
    def product_hh(cls) -> "TwoPhotonState":
        return cls(1, 0, 0, 0)

    @classmethod
    def product_vv(cls) -> "TwoPhotonState":
        return cls(0, 0, 0, 1)


def _check_share(signal_share: float) -> None:
    if not 0.0 <= signal_share <= 1.0:
        raise ConfigError("signal_share must lie in [0, 1]")


def phase_ledger(loop: LoopConfig, signal_share: float = 0.5) -> PhaseLedger:
    """Propagate phases around the loop.

    Only ``phi_sX + phi_iX = 2*phi_pX`` is physical; ``signal_share`` is the
    fraction of ``2*phi_pX`` given to the signal photon (0.5 = equal split).
    """
    _check_share(signal_share)
    sp = loop.spectral
    L, x = loop.L, loop.x
    rest = Phase([L, -x])  # L - x, exact

    p_h = Phase.product(sp.k_pH, x)
    p_v = rest.scale(sp.k_pV) + Phase([loop.varphi])

    def _split(pump: Phase) -> tuple[Phase, Phase]:
        total = pump.scale(2.0)
        sig = total.scale(signal_share)
        return sig, total - sig

    s_h, i_h = _split(p_h)
    s_v, i_v = _split(p_v)
    return PhaseLedger(
        phi_pH=p_h.reduced(),
        phi_pV=p_v.reduced(),
        phi_sH=s_h.reduced(),
        phi_sV=s_v.reduced(),
        phi_iH=i_h.reduced(),
        phi_iV=i_v.reduced(),
        phi_sH_out=(rest.scale(sp.k_sH) + s_h).reduced(),
        phi_iH_out=(rest.scale(sp.k_iH) + i_h).reduced(),
        phi_sV_out=(Phase.product(sp.k_sV, x) + s_v).reduced(),
        phi_iV_out=(Phase.product(sp.k_iV, x) + i_v).reduced(),
    )


def _relative_phase_exact(loop: LoopConfig) -> Phase:
    sp = loop.spectral
    L, x = loop.L, loop.x
    dk_h = sp.mismatch("H")
    dk_v = sp.mismatch("V")
    birefringent = Phase([sp.k_pV, -sp.k_pH]).scale(2.0 * L)
    mismatch_terms = dk_h.scale(L) - dk_h.scale(x) - dk_v.scale(x)
    return birefringent + mismatch_terms + Phase([2.0 * loop.varphi])


def relative_phase_full(loop: LoopConfig) -> float:
    """Relative VV/HH phase at the PBS output, with phase mismatch retained.

    ``2(k_pV - k_pH) L - dk_V x + dk_H (L - x) + 2 varphi`` wrapped to (-pi, pi].
    """
    return _relative_phase_exact(loop).reduced()


def relative_phase_reduced(loop: LoopConfig, tol: float = PHASE_MATCH_TOL) -> float:
    """``2 (varphi + omega_p delta_n L / c)`` for a phase-matched loop."""
    sp = loop.spectral
    for pol in "HV":
        dk = sp.mismatch(pol).value()
        if abs(dk) > tol:
            raise PhaseMismatchError(f"|delta_k_{pol}| = {abs(dk):.3e} rad/m exceeds {tol:.1e}")
    bire = Phase.product(sp.omega_p, loop.delta_n).scale(loop.L).divide(C_LIGHT)
    return (bire + Phase([loop.varphi])).scale(2.0).reduced()


def build_output_state(pump: PumpConfig, loop: LoopConfig) -> TwoPhotonState:
    """``alpha |HH> + beta exp(i phi_r) |VV>`` with phi_r from the full formula."""
    phi_r = relative_phase_full(loop)
    return TwoPhotonState.normalized(pump.alpha, 0, 0, pump.beta * cmath.exp(1j * phi_r))
