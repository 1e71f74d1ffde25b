"""Constructive-interference zero-forcing precoding for multiuser MISO with BPSK.

Modules:

- ``channel``    Rayleigh channels, Gram matrices, seeded random streams
- ``precoding``  ZF, CIZF and P-CIZF targets and precoders
- ``power``      uniform, max-throughput and max-min fairness allocation
- ``selection``  random, SUS, exhaustive and SPUS user selection
- ``metrics``    SINR, rates, BPSK cap, CI-term retention
- ``sim``        paired Monte Carlo sweeps and result persistence
- ``cli``        command-line driver
"""

from .channel import RandomSource, generate_rayleigh, gram
from .errors import CizfError
from .power import allocate
from .precoding import build_precoder, ci_matrix, pcizf_search, target_cizf, target_zf
from .sim import ExperimentConfig, SchemeSpec, run_sweep

__version__ = "0.1.0"

__all__ = [
    "RandomSource",
    "generate_rayleigh",
    "gram",
    "CizfError",
    "allocate",
    "build_precoder",
    "ci_matrix",
    "pcizf_search",
    "target_cizf",
    "target_zf",
    "ExperimentConfig",
    "SchemeSpec",
    "run_sweep",
]
