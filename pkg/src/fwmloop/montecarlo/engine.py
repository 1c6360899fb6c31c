"""Block-parallel Monte Carlo driver.

Random streams are keyed by position, never by worker: gate ``g`` lives in
block ``g // BLOCK_GATES`` and block ``b`` of a stream with key ``k`` draws
from ``SeedSequence(seed, spawn_key=k + (b,))``.  Workers only decide which
thread runs a block, and block results are summed in block order, so any
worker count reproduces the single-worker counts exactly.

Stream keys: ``simulate_setting`` uses ``stream`` as given (default ``()``);
``scan_fringe`` uses ``stream + (point_index,)``; repeated runs prepend the
run index.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from fwmloop._accel import BACKENDS, default_backend
from fwmloop.errors import ConfigError
from fwmloop.measurement import AnalyzerSetting, Convention
from fwmloop.montecarlo.config import CountRecord, DetectionConfig, Source
from fwmloop.montecarlo.kernels import block_kernel_numba, block_kernel_numpy
from fwmloop.montecarlo.rates import GateModel, gate_model

log = logging.getLogger(__name__)

BLOCK_GATES = 1 << 22


def block_layout(n_gates: int) -> list[tuple[int, int]]:
    """``(start, length)`` per block; the remainder joins the last block."""
    n_blocks = max(1, n_gates // BLOCK_GATES)
    out = [(b * BLOCK_GATES, BLOCK_GATES) for b in range(n_blocks - 1)]
    start = (n_blocks - 1) * BLOCK_GATES
    out.append((start, n_gates - start))
    return out


def _seed_sequence(seed: int, key: tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def _run_block(backend, model: GateModel, cum_tables, cum_weights, offset, seed, key, length):
    ss = _seed_sequence(seed, key)
    args = (length, offset, model.means, model.dark_s, model.dark_i, model.p_depol, cum_tables, cum_weights)
    if backend == "numba":
        return block_kernel_numba(ss.generate_state(4, np.uint64), *args)
    rng = np.random.Generator(np.random.Philox(ss))
    return block_kernel_numpy(rng, *args)


def simulate_setting(
    source: Source,
    setting: AnalyzerSetting,
    det: DetectionConfig,
    *,
    stream: Sequence[int] = (),
    backend: Optional[str] = None,
    workers: Optional[int] = None,
) -> CountRecord:
    """Simulate ``det.n_gates`` gates at one analyzer setting."""
    backend = backend or default_backend()
    if backend not in BACKENDS:
        raise ConfigError(f"unknown backend {backend!r}")
    workers = workers or det.workers_hint
    model = gate_model(source, setting, det)
    cum_tables = np.cumsum(model.tables, axis=1)
    cum_weights = np.cumsum(model.weights)
    cum_weights[-1] = 1.0
    offset = det.accidental_offset
    blocks = block_layout(det.n_gates)
    stream = tuple(stream)

    def job(b):
        _, length = blocks[b]
        return _run_block(backend, model, cum_tables, cum_weights, offset, det.seed, stream + (b,), length)

    if workers == 1 or len(blocks) == 1:
        results = [job(b) for b in range(len(blocks))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(blocks))))

    counts = np.zeros(6, np.int64)
    for c, _, _ in results:
        counts += c
    # delayed window across block boundaries, closing the ring at the end
    acc_cross = 0
    for b, (_, _, tail_s) in enumerate(results):
        head_i = results[(b + 1) % len(results)][1]
        acc_cross += int(np.count_nonzero(tail_s & head_i))

    return CountRecord(
        setting=setting,
        singles_s=int(counts[0]),
        singles_i=int(counts[1]),
        coinc_raw=int(counts[2]),
        acc_est=int(counts[4]) + acc_cross,
        acc_true=int(counts[3]),
        gates=det.n_gates,
        pair_gates=int(counts[5]),
    )


def scan_fringe(
    source: Source,
    theta2: float,
    theta1_grid: Sequence[float],
    det: DetectionConfig,
    *,
    convention: Convention = "same-handed",
    stream: Sequence[int] = (),
    backend: Optional[str] = None,
    workers: Optional[int] = None,
) -> list[CountRecord]:
    """One :func:`simulate_setting` per grid point, stream ``stream + (i,)``."""
    return [
        simulate_setting(
            source,
            AnalyzerSetting(t1, theta2, convention),
            det,
            stream=tuple(stream) + (i,),
            backend=backend,
            workers=workers,
        )
        for i, t1 in enumerate(theta1_grid)
    ]


def simulate_chsh(
    source: Source,
    angles: Sequence[float],
    det: DetectionConfig,
    *,
    runs: int = 1,
    convention: Convention = "same-handed",
    stream: Sequence[int] = (),
    backend: Optional[str] = None,
    workers: Optional[int] = None,
) -> list[list[CountRecord]]:
    """16 records per run in :func:`chsh_term_settings` order; run ``r``,
    setting ``j`` uses stream ``stream + (r, j)``."""
    from fwmloop.analysis import chsh_term_settings

    if runs < 1:
        raise ConfigError("runs must be >= 1")
    settings = chsh_term_settings(angles, convention)
    return [
        [
            simulate_setting(source, s, det, stream=tuple(stream) + (r, j), backend=backend, workers=workers)
            for j, s in enumerate(settings)
        ]
        for r in range(runs)
    ]
