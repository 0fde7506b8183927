"""
Exact lattice numerics for sums of heavy-tailed integer random variables.

Windowed log-domain pmfs, convolution powers, big-jump ratios with their
error budgets, conditional laws given a large sum, and compound-Poisson
condensation.
"""

__version__ = "0.1.0"

from .lattice import LatticePMF, delta, from_probs  # noqa: E402
from .tailmodel import SlowlyVaryingFn, TailModel, materialize_pmf, scale_an, scale_bn  # noqa: E402
from .conv import convolve, direct_convolve_oracle, joint_sum_count_pmf, power  # noqa: E402

__all__ = [
    "LatticePMF",
    "SlowlyVaryingFn",
    "TailModel",
    "__version__",
    "convolve",
    "delta",
    "direct_convolve_oracle",
    "from_probs",
    "joint_sum_count_pmf",
    "materialize_pmf",
    "power",
    "scale_an",
    "scale_bn",
]
