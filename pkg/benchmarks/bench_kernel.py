"""Gate-kernel throughput, numba against the pure-numpy fallback.

Two workloads: the calibrated reference source (mostly quiet gates, where
geometric skipping dominates) and a bright lossless source (every gate
active).  Prints ns per gate for each backend and the speedup; the counts
of the two backends come from different random streams, so the agreement
line compares them in units of their Poisson error only.
"""

from __future__ import annotations

import argparse
import math
import time

from fwmloop import config
from fwmloop.experiment import source_state
from fwmloop.measurement import AnalyzerSetting
from fwmloop.montecarlo import DetectionConfig, simulate_setting
from fwmloop.state import TwoPhotonState


def timed(source, det, backend, repeat):
    simulate_setting(source, AnalyzerSetting(0.0, 0.0), det.with_(n_gates=1 << 20), backend=backend)  # compile / warm
    best, rec = math.inf, None
    for r in range(repeat):
        t0 = time.perf_counter()
        rec = simulate_setting(source, AnalyzerSetting(0.0, 0.0), det, stream=(r,), backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, rec


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--gates", type=float, default=2e8, help="gates per timed run")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    n = int(args.gates)

    spec = config.load("paper-defaults")
    workloads = {
        "reference": (source_state(spec), spec.detection_for(n)),
        "bright": (TwoPhotonState.phi_plus(), DetectionConfig(mu_pairs=0.1, n_gates=n // 20, seed=1)),
    }
    print("bench_kernel")
    for name, (source, det) in workloads.items():
        out = {}
        for backend in ("numba", "numpy"):
            out[backend] = timed(source, det, backend, args.repeat)
        (t_nb, r_nb), (t_np, r_np) = out["numba"], out["numpy"]
        z = (r_nb.coinc_raw - r_np.coinc_raw) / math.sqrt(max(r_nb.coinc_raw + r_np.coinc_raw, 1))
        print(f"[{name}] gates={det.n_gates}")
        print(f"  numba  {1e9 * t_nb / det.n_gates:8.3f} ns/gate  ({t_nb:.3f} s)")
        print(f"  numpy  {1e9 * t_np / det.n_gates:8.3f} ns/gate  ({t_np:.3f} s)")
        print(f"  speedup {t_np / t_nb:.1f}x   coincidences {r_nb.coinc_raw} vs {r_np.coinc_raw} ({z:+.2f} sigma)")


if __name__ == "__main__":
    main()
