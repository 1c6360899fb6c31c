from fwmloop.montecarlo.config import CountRecord, DetectionConfig, StateMixture, as_mixture
from fwmloop.montecarlo.engine import BLOCK_GATES, scan_fringe, simulate_chsh, simulate_setting
from fwmloop.montecarlo.rates import expected_counts, gate_model, gate_probabilities

__all__ = [
    "BLOCK_GATES",
    "CountRecord",
    "DetectionConfig",
    "StateMixture",
    "as_mixture",
    "expected_counts",
    "gate_model",
    "gate_probabilities",
    "scan_fringe",
    "simulate_chsh",
    "simulate_setting",
]
