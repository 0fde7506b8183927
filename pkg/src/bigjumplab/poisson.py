"""
Compound-Poisson sums of symmetric zeta jumps and the condensation check.

Sites ``-n..n`` each carry an independent Poisson(``lam``) number of jumps,
so the total number of jumps is Poisson with mean ``(2n + 1) lam``.  The
law of the total is a Poisson mixture of convolution powers of the jump law.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bigjump import beta_exponent
from .conv import convolve
from .lattice import NEG_INF, LatticePMF, log_add, log_sum
from .tailmodel import TailModel, materialize_pmf

DEFAULT_HALF_WINDOW = 2**14


class RegimeWarning(UserWarning):
    """Raised when a query lies outside the regime where an estimate applies."""


@dataclass(frozen=True)
class CompoundPoissonSpec:
    """
    Parameters
    ----------
    lam : float
        Per-site intensity.
    n : int
        Sites are ``-n, ..., n``.
    alpha : float
        Jumps are symmetric zeta with tail exponent ``alpha > 1``.
    window : int
        Half-width of the lattice window carrying the pmf.
    terms_M : int, optional
        Largest number of jumps kept in the Poisson series; defaults to
        ``Lam + 12 sqrt(Lam) + 20``.
    """

    lam: float
    n: int
    alpha: float
    window: int = DEFAULT_HALF_WINDOW
    terms_M: int | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.window < 1:
            raise ValueError("window must be positive")
        lam_total = self.total_intensity
        if self.terms_M is None:
            object.__setattr__(self, "terms_M", math.ceil(lam_total + 12 * math.sqrt(lam_total) + 20))
        if self.terms_M < lam_total + 10 * math.sqrt(lam_total):
            raise ValueError("terms_M too small: need terms_M >= Lam + 10 sqrt(Lam)")

    @property
    def total_intensity(self) -> float:
        return (2 * self.n + 1) * self.lam

    @property
    def jump_model(self) -> TailModel:
        return TailModel.zeta(self.alpha)

    def to_json(self) -> dict:
        return {"lam": self.lam, "n": self.n, "alpha": self.alpha, "window": self.window, "terms_M": self.terms_M}


def compound_poisson_pmf(spec: CompoundPoissonSpec, method: str = "auto") -> LatticePMF:
    """
    Law of the compound sum on ``[-window, window]``.

    The Poisson series is cut at ``terms_M`` jumps; the dropped Poisson tail
    is placed in the outside buckets, half on each side since the jumps are
    symmetric.
    """
    lam_total = spec.total_intensity
    W = spec.window
    mu = materialize_pmf(spec.jump_model, W)
    weights = stats.poisson.logpmf(np.arange(spec.terms_M + 1), lam_total)

    acc = np.full(2 * W + 1, NEG_INF)
    acc[W] = weights[0]
    left = right = NEG_INF
    law = None
    for m in range(1, spec.terms_M + 1):
        law = mu if law is None else convolve(law, mu, (-W, W), method)
        w = weights[m]
        acc = np.logaddexp(acc, _on_window(law, W) + w)
        left = log_add(left, w + law.out_left_log)
        right = log_add(right, w + law.out_right_log)
    dropped = float(stats.poisson.logsf(spec.terms_M, lam_total))
    half = dropped - math.log(2)
    used = "exact" if law is None else law.method
    return LatticePMF(
        offset=-W,
        log_mass=acc,
        out_left_log=log_add(left, half),
        out_right_log=log_add(right, half),
        method=used,
        meta={"poisson_truncation_log": dropped, "terms_M": spec.terms_M},
    )


def _on_window(law: LatticePMF, W: int) -> np.ndarray:
    out = np.full(2 * W + 1, NEG_INF)
    lo, hi = max(law.lo, -W), min(law.hi, W)
    out[lo + W : hi + W + 1] = law.log_mass[lo - law.lo : hi - law.lo + 1]
    return out


def condensation_check(spec: CompoundPoissonSpec, k: int, c: float = 3.0, pmf: LatticePMF | None = None) -> dict:
    """
    Compare ``P(S = k)`` with the probability that some single jump equals ``k``.

    Returns ``lhs``, ``rhs = 1 - exp(-Lam P(Y = k))``, their ratio and the
    predicted error scale ``n^-beta``.
    """
    if k < c * spec.n:
        warnings.warn(f"k={k} is below {c}*n; the condensation estimate may not apply", RegimeWarning)
    if abs(k) > spec.window:
        raise ValueError("k lies outside the pmf window")
    if pmf is None:
        pmf = compound_poisson_pmf(spec)
    lhs = float(pmf.prob(k))
    jump = float(spec.jump_model.pmf(k))
    rhs = -math.expm1(-spec.total_intensity * jump)
    n_eff = max(spec.n, 1)
    beta = beta_exponent(spec.alpha)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "ratio": lhs / rhs,
        "beta": beta,
        "predicted_error": n_eff ** (-beta),
    }


__all__ = [
    "CompoundPoissonSpec",
    "RegimeWarning",
    "compound_poisson_pmf",
    "condensation_check",
]
