"""Polarization-entangled photon pairs from a fiber-loop four-wave-mixing source.

Subpackages: :mod:`fwmloop.state` (loop phases and the output state),
:mod:`fwmloop.measurement` (polarizer projections), :mod:`fwmloop.montecarlo`
(gated detection), :mod:`fwmloop.analysis` (fringes and CHSH) and
:mod:`fwmloop.cli`.
"""

__version__ = "0.1.0"
