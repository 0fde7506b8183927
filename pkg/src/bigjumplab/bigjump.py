"""
Single-big-jump approximations, their explicit error bounds, the local
Fuk-Nagaev inequality and the regime classification.

All constants hidden in ``O(.)`` statements default to 1 and can be
overridden; :func:`fit_fuk_nagaev_constants` calibrates the Fuk-Nagaev
constants against exact truncated convolutions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog

from .conv import sum_pmf_recentered, truncated_max_sum_pmf
from .tailmodel import TailModel, scale_an, survival

DEFAULT_EPS = 0.05
REGIME_FACTOR = 4.0

BIG_JUMP = "BigJump"
GAUSSIAN = "Gaussian"
INTERMEDIATE = "Intermediate"


class RegimeError(ValueError):
    """Raised when ``(n, x)`` lies outside the regime a formula needs."""


def alpha_case(alpha: float) -> str:
    if alpha < 2:
        return "LT2"
    if alpha == 2:
        return "EQ2"
    return "GT2"


def alpha_one(alpha: float) -> float:
    return alpha / (alpha + 1.0)


def _sqrt_nlogn(n: int) -> float:
    return math.sqrt(n * math.log(n))


# approximations -------------------------------------------------------------


def bigjump_local(model: TailModel, n: int, x: int) -> float:
    """``log(n P(X_1 = x))``."""
    if x == 0:
        raise ValueError("x must be nonzero")
    return math.log(n) + float(model.log_pmf(int(x)))


def bigjump_tail(model: TailModel, n: int, x: int) -> float:
    """``log(n P(X_1 >= x))``."""
    if x < 1:
        raise ValueError("x must be >= 1")
    return math.log(n) + math.log(model.survival(int(x) - 1))


@dataclass(frozen=True)
class RatioResult:
    """Exact probability, its big-jump approximation and ``|ratio - 1|``."""

    n: int
    x: int
    exact_log: float
    approx_log: float
    error: float
    method: str


def _ratio_window(n: int, x: int, window: int | None) -> int:
    return int(window) if window is not None else 4 * int(x)


def local_ratio(model: TailModel, n: int, x: int, window=None, method="auto") -> RatioResult:
    """
    ``A(x, n) = |P(S_n - floor(b_n) = x) / (n P(X_1 = x)) - 1|`` by exact
    convolution on ``[-window, window]`` (default ``4x``).
    """
    W = _ratio_window(n, x, window)
    law = sum_pmf_recentered(model, n, W, method)
    exact = float(law.log_at(int(x)))
    approx = bigjump_local(model, n, x)
    return RatioResult(n, int(x), exact, approx, abs(math.expm1(exact - approx)), law.method)


def tail_ratio(model: TailModel, n: int, x: int, window=None, method="auto") -> RatioResult:
    """
    ``|P(S_n - floor(b_n) >= x) / (n P(X_1 >= x)) - 1|``; mass beyond the
    window counts towards the exact side.
    """
    W = _ratio_window(n, x, window)
    law = sum_pmf_recentered(model, n, W, method)
    exact = survival(law, int(x) - 1)
    approx = bigjump_tail(model, n, x)
    return RatioResult(n, int(x), exact, approx, abs(math.expm1(exact - approx)), law.method)


# sequences and regimes --------------------------------------------------------


def beta_exponent(alpha: float) -> float:
    """Decay exponent of ``A(cn, n)`` for the zeta family."""
    if alpha <= 1:
        raise ValueError("alpha must exceed 1")
    if alpha <= 2:
        return (alpha - 1.0) / (alpha + 1.0)
    return alpha / (2.0 + 2.0 * alpha)


def beta_cap(alpha: float) -> float:
    return (alpha - 2.0) * (alpha + 1.0) / (2.0 * (2.0 * alpha + 1.0))


def choose_beta(alpha: float, n: int, x: float, margin: float = 0.01) -> float:
    """
    Largest ``beta >= 0`` with ``n**-beta (x / sqrt(n log n))**(1 - alpha_1)
    >= n**margin``, clamped to the admissible cap.
    """
    if alpha <= 2:
        raise ValueError("choose_beta needs alpha > 2")
    if n < 2:
        raise ValueError("n must be >= 2")
    a1 = alpha_one(alpha)
    free = (1.0 - a1) * math.log(x / _sqrt_nlogn(n)) / math.log(n) - margin
    return float(min(max(free, 0.0), beta_cap(alpha)))


@dataclass(frozen=True)
class EpsilonSequences:
    eps_n: float
    eps_tilde_n: float
    beta: float = 0.0


def _require_regime(model: TailModel, n: int, x: float, a_n: float) -> None:
    factor = REGIME_FACTOR * (math.sqrt(math.log(n)) if model.alpha >= 2 else 1.0)
    if x < factor * a_n:
        raise RegimeError(
            f"x = {x:g} is below the big-jump proxy {factor:.3g} * a_n = {factor * a_n:.6g}"
        )


def epsilon_sequences(model: TailModel, n: int, x: float, beta: float | None = None,
                      a_n: float | None = None) -> EpsilonSequences:
    """
    Finite-``n`` versions of the proof's sequences ``eps_n`` and
    ``eps_tilde_n``.
    """
    alpha = model.alpha
    a_n = scale_an(model, n) if a_n is None else a_n
    _require_regime(model, n, x, a_n)
    a1 = alpha_one(alpha)
    beta_used = 0.0
    if alpha < 2:
        eps = (x / a_n) ** -a1
    elif alpha == 2:
        eps = (x / (a_n * math.sqrt(math.log(n)))) ** (-2.0 / 3.0)
    else:
        beta_used = choose_beta(alpha, n, x) if beta is None else float(beta)
        eps = n**-beta_used * (x / _sqrt_nlogn(n)) ** -a1
    gap = math.log(x / (a_n * math.sqrt(math.log(n))))
    eps_tilde = 0.25 if gap <= 0 else min(0.25, gap**-2)
    return EpsilonSequences(float(eps), float(eps_tilde), beta_used)


BUDGET_NAMES = ("err", "eps_n", "local_mass", "fuk_nagaev", "cross")


def error_budget(model: TailModel, n: int, x: float, C: float = 1.0,
                 seq: EpsilonSequences | None = None) -> dict:
    """The five summands of the aggregated error bound, keyed by name."""
    seq = epsilon_sequences(model, n, x) if seq is None else seq
    alpha = model.alpha
    eps, et = seq.eps_n, seq.eps_tilde_n
    Lx = model.effective_L(x)
    cross = (
        n
        * model.effective_L(eps * x) * model.effective_L(et * x) / Lx
        * x**-alpha
        * eps**-alpha
        * et ** -(1.0 + alpha)
    )
    return {
        "err": abs(float(model.L.err(x, eps * x))),
        "eps_n": eps,
        "local_mass": n * Lx * x ** -(1.0 + alpha),
        "fuk_nagaev": math.exp(-C / et),
        "cross": float(cross),
    }


@dataclass(frozen=True)
class RegimeReport:
    regime: str
    q_value: float
    threshold: float


def _q_function(model: TailModel, x: float) -> float:
    """``x**2 P(X > x) / sigma^2(x)``."""
    var = model.truncated_moment(x, 2.0, model.mean if model.alpha > 1 else 0.0)
    return x * x * model.survival(math.floor(x)) / var


def regime_check(model: TailModel, n: int, x: float) -> RegimeReport:
    """Classify ``(n, x)`` as big-jump, Gaussian or in between."""
    if n < 2:
        raise ValueError("n must be >= 2")
    alpha = model.alpha
    if alpha < 2:
        a_n = scale_an(model, n)
        thr = REGIME_FACTOR * a_n
        return RegimeReport(BIG_JUMP if x >= thr else INTERMEDIATE, math.nan, thr)
    if alpha > 2:
        s = _sqrt_nlogn(n)
        root = math.sqrt(alpha - 2.0)
        upper = max(1.05 * root, 0.1) * s
        if x > upper:
            regime = BIG_JUMP
        elif x < 0.95 * root * s:
            regime = GAUSSIAN
        else:
            regime = INTERMEDIATE
        return RegimeReport(regime, math.nan, upper)
    a_n = scale_an(model, n)
    q = _q_function(model, a_n)
    if q >= 1:
        return RegimeReport(BIG_JUMP, q, a_n)
    crit = (x / a_n) ** 2 / (2.0 * math.log(1.0 / q))
    regime = BIG_JUMP if crit > 1 else (GAUSSIAN if crit < 1 else INTERMEDIATE)
    return RegimeReport(regime, q, a_n * math.sqrt(2.0 * math.log(1.0 / q)))


# error bound -----------------------------------------------------------------


@dataclass(frozen=True)
class ErrorBoundReport:
    """
    Evaluated right-hand side of the big-jump error bound.

    ``err_term`` uses the displacement ``eps_n * x``; ``err_term_literal``
    evaluates the precision at the bare ratio ``(a_n/x)**alpha_1``.
    """

    alpha_case: str
    alpha1: float
    beta: float
    epsilon: float
    leading_term: float
    err_term: float
    total: float
    err_term_literal: float = 0.0
    n: int = 0
    x: float = 0.0
    a_n: float = math.nan
    budget_terms: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        """Flat JSON object; budget terms appear as ``budget_<name>``."""
        out = asdict(self)
        budget = out.pop("budget_terms")
        out.update({f"budget_{k}": v for k, v in budget.items()})
        return out


def error_bound_A(model: TailModel, n: int, x: float, eps: float = DEFAULT_EPS,
                  check_regime: bool = True, beta: float | None = None) -> ErrorBoundReport:
    """
    Upper bound on ``A(x, n)`` with unit constants.

    Parameters
    ----------
    eps : float
        Exponent slack, ``0 < eps < alpha_1``.
    check_regime : bool
        Raise :class:`RegimeError` outside the big-jump regime.
    beta : float, optional
        Fixed ``beta`` for ``alpha > 2``; by default :func:`choose_beta`.
    """
    alpha = model.alpha
    a1 = alpha_one(alpha)
    if not 0 < eps < a1:
        raise ValueError(f"eps must lie in (0, {a1:.4g})")
    if n < 2:
        raise ValueError("n must be >= 2")
    a_n = scale_an(model, n)
    if check_regime:
        rep = regime_check(model, n, x)
        if rep.regime != BIG_JUMP:
            raise RegimeError(f"(n={n}, x={x:g}) is in the {rep.regime} regime")
    seq = epsilon_sequences(model, n, x, beta=beta, a_n=a_n)
    case = alpha_case(alpha)
    if case == "LT2":
        leading = (a_n / x) ** (a1 - eps)
    elif case == "EQ2":
        leading = (a_n * math.sqrt(math.log(n)) / x) ** (2.0 / 3.0 - eps)
    else:
        leading = n ** (1.0 - alpha / 2.0 + seq.beta * a1) * (_sqrt_nlogn(n) / x) ** (a1 - eps)
    err_term = abs(float(model.L.err(x, seq.eps_n * x)))
    literal = abs(float(model.L.err(x, (a_n / x) ** a1)))
    return ErrorBoundReport(
        alpha_case=case,
        alpha1=a1,
        beta=seq.beta,
        epsilon=eps,
        leading_term=float(leading),
        err_term=err_term,
        total=float(leading) + err_term,
        err_term_literal=literal,
        n=int(n),
        x=float(x),
        a_n=a_n,
        budget_terms=error_budget(model, n, x, seq=seq),
    )


# Fuk-Nagaev -----------------------------------------------------------------

DEFAULT_FN_CONSTANTS = {"c1": 1.0, "c2": 1.0, "c3": 1.0}


def fuk_nagaev_bound(model: TailModel, n: int, x: float, y: float,
                     constants: dict | None = None, a_n: float | None = None) -> float:
    """
    Log of the local Fuk-Nagaev bound on ``P(S_n - floor(b_n) = x, M_n <= y)``.
    """
    c = dict(DEFAULT_FN_CONSTANTS)
    c.update(constants or {})
    c1, c2, c3 = c["c1"], c["c2"], c["c3"]
    if not 1 <= y <= x:
        raise ValueError("need 1 <= y <= x")
    a_n = scale_an(model, n) if a_n is None else a_n
    if x < a_n:
        raise RegimeError(f"x = {x:g} is below a_n = {a_n:.6g}")
    alpha = model.alpha
    pre = math.log(c3 / a_n)
    r = x / y
    if alpha > 2:
        s2a = model.truncated_moment(y, alpha, 0.0)
        gauss = -c1 * x * x / n
        base = x * y ** (alpha - 1.0) / (n * s2a)
        jump = -c2 * r * math.log(base)
        return pre + float(np.logaddexp(gauss, jump))
    if alpha == 2:
        var = model.truncated_moment(y, 2.0, model.mean)
        return pre + r - r * math.log1p(x * y / (n * var))
    Ly = model.effective_L(y)
    if alpha > 1:
        return pre + 0.5 * r * math.log(c1 * n * Ly * y**-alpha / r)
    if alpha == 1:
        jump = 3.0 * r - 0.25 * r * math.log1p(c1 * x / (n * Ly))
        return pre + float(np.logaddexp(jump, -c2 * (x / a_n) ** 2))
    return pre + 0.25 * r - r * math.log1p(c1 * x / (n * y ** (1.0 - alpha) * Ly))


def fuk_nagaev_exact(model: TailModel, n: int, x: int, y: int, window=None,
                     method: str = "direct") -> float:
    """
    ``log P(S_n - floor(b_n) = x, M_n <= y)`` by exact truncated convolution
    on ``[-window, window]`` (default ``2x``).
    """
    W = 2 * int(x) if window is None else int(window)
    law = truncated_max_sum_pmf(model, n, int(y), W, method)
    return float(law.log_at(int(x)))


def fit_fuk_nagaev_constants(model: TailModel, points, free: str = "c3") -> dict:
    """
    Smallest constants making the bound dominate the given exact values.

    Parameters
    ----------
    points : iterable of (n, x, y, exact_log)
    free : {"c3", "c1c3"}
        ``"c3"`` keeps ``c1 = c2 = 1`` and fits the prefactor only.
        ``"c1c3"`` (needs ``1 < alpha < 2``) uses that the log-bound is
        affine in ``(log c1, log c3)`` and solves a linear programme
        minimising the summed log-slack.  It is tight on the calibration
        points and therefore extrapolates less safely.
    """
    # zero-probability events constrain nothing
    points = [pt for pt in points if math.isfinite(pt[3])]
    if not points:
        raise ValueError("no calibration points with positive probability")
    base, weights, exact = [], [], []
    for n, x, y, ex in points:
        base.append(fuk_nagaev_bound(model, n, x, y))
        weights.append(0.5 * x / y)
        exact.append(ex)
    base, weights, exact = map(np.asarray, (base, weights, exact))
    gap = exact - base
    if free == "c3":
        return {"c1": 1.0, "c2": 1.0, "c3": math.exp(float(gap.max()))}
    if free != "c1c3":
        raise ValueError(f"unknown fit mode {free!r}")
    if not 1 < model.alpha < 2:
        raise ValueError("c1c3 fit needs 1 < alpha < 2")
    if np.ptp(weights) == 0:
        raise ValueError("c1c3 fit needs at least two distinct x/y ratios")
    # variables (u, v) = (log c1, log c3): v + w_i u >= gap_i
    m = len(points)
    res = linprog(
        c=[weights.sum(), m],
        A_ub=-np.column_stack([weights, np.ones(m)]),
        b_ub=-gap,
        bounds=[(None, None), (None, None)],
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"constant fit failed: {res.message}")
    u, v = res.x
    return {"c1": math.exp(u), "c2": 1.0, "c3": math.exp(v)}


__all__ = [
    "BIG_JUMP",
    "GAUSSIAN",
    "INTERMEDIATE",
    "EpsilonSequences",
    "ErrorBoundReport",
    "RatioResult",
    "RegimeError",
    "RegimeReport",
    "alpha_case",
    "alpha_one",
    "beta_cap",
    "beta_exponent",
    "bigjump_local",
    "bigjump_tail",
    "choose_beta",
    "epsilon_sequences",
    "error_bound_A",
    "error_budget",
    "fit_fuk_nagaev_constants",
    "fuk_nagaev_bound",
    "fuk_nagaev_exact",
    "local_ratio",
    "regime_check",
    "tail_ratio",
]
