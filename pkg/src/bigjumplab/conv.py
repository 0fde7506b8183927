"""
Convolution of windowed lattice laws.

Two evaluation paths exist.  ``direct`` sums products of non-negative
terms after a max-shift per segment, which keeps relative accuracy for
entries far below the mode.  ``fft`` uses ``scipy.signal.fftconvolve`` and
carries an absolute error near ``1e-16`` times the largest entry; every
result records which path touched it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import comb, logsumexp
from scipy.stats import binom

from .lattice import NEG_INF, LatticePMF, delta, log_sum
from .tailmodel import TailModel, materialize_pmf, scale_bn

# product of operand lengths above which ``method="auto"`` switches to fft
DIRECT_LIMIT = 1 << 25
# largest dynamic range (nats) handled by a single max-shift
_SEGMENT_SPAN = 300.0


class WindowOverflow(ValueError):
    """Mass clipped by the target window exceeded the caller's budget."""


def _window_bounds(window, lo: int, hi: int) -> tuple[int, int]:
    if window is None:
        return lo, hi
    if isinstance(window, (int, np.integer)):
        return -int(window), int(window)
    a, b = window
    return int(a), int(b)


def _segments(logv: np.ndarray, span: float = _SEGMENT_SPAN) -> list[tuple[int, int]]:
    """Contiguous index ranges whose finite entries lie within ``span`` nats."""
    finite = np.isfinite(logv)
    if not finite.any():
        return []
    vals = logv[finite]
    if vals.max() - vals.min() <= span:
        return [(0, logv.size)]
    out = []
    start, top, bottom = 0, -np.inf, np.inf
    for i, v in enumerate(logv):
        if not np.isfinite(v):
            continue
        new_top, new_bottom = max(top, v), min(bottom, v)
        if new_top - new_bottom > span:
            out.append((start, i))
            start, new_top, new_bottom = i, v, v
        top, bottom = new_top, new_bottom
    out.append((start, logv.size))
    return out


def _direct_log(la: np.ndarray, lb: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
    """
    Entries ``start:stop`` of the linear convolution of two log-mass vectors,
    by direct summation.  Only the requested entries are computed.
    """
    full_len = la.size + lb.size - 1
    stop = full_len if stop is None else min(stop, full_len)
    start = max(start, 0)
    out = np.full(max(stop - start, 0), NEG_INF)
    for a0, a1 in _segments(la):
        sa = la[a0:a1]
        ma = np.max(sa[np.isfinite(sa)])
        ea = np.exp(sa - ma)
        for b0, b1 in _segments(lb):
            sb = lb[b0:b1]
            mb = np.max(sb[np.isfinite(sb)])
            eb = np.exp(sb - mb)
            base = a0 + b0
            lo, hi = max(start, base), min(stop, base + ea.size + eb.size - 1)
            if lo >= hi:
                continue
            part = _direct_slice(ea, eb, lo - base, hi - base)
            with np.errstate(divide="ignore"):
                part = np.log(part) + (ma + mb)
            sl = slice(lo - start, hi - start)
            out[sl] = np.logaddexp(out[sl], part)
    return out


def _direct_slice(ea: np.ndarray, eb: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Entries ``lo:hi`` of ``np.convolve(ea, eb)`` at cost ``(hi - lo) * min(len)``."""
    if lo == 0 and hi == ea.size + eb.size - 1:
        return np.convolve(ea, eb)
    kern, seq = (ea, eb) if ea.size <= eb.size else (eb, ea)
    pad = kern.size - 1
    # zero-padded long operand, sliced to the rows feeding lo:hi
    a, b = lo - pad, hi
    x = np.zeros(b - a)
    s0, s1 = max(a, 0), min(b, seq.size)
    if s0 < s1:
        x[s0 - a : s1 - a] = seq[s0:s1]
    return np.convolve(x, kern, mode="valid")


def _clip_masses(la: np.ndarray, lb: np.ndarray, lo: int, hi: int) -> tuple[float, float]:
    """Mass of the convolution below index ``lo`` and above index ``hi``."""
    # log prefix and suffix sums of b, padded so that index 0 means empty
    prefix = np.concatenate([[NEG_INF], np.logaddexp.accumulate(lb)])
    suffix = np.concatenate([np.logaddexp.accumulate(lb[::-1])[::-1], [NEG_INF]])
    i = np.arange(la.size)
    below = prefix[np.clip(lo - i, 0, lb.size)]
    above = suffix[np.clip(hi - i + 1, 0, lb.size)]
    return float(np.exp(log_sum(la + below))), float(np.exp(log_sum(la + above)))


def _fft_log(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    ma = np.max(la[np.isfinite(la)])
    mb = np.max(lb[np.isfinite(lb)])
    ea, eb = np.exp(la - ma), np.exp(lb - mb)
    c = fftconvolve(ea, eb)
    np.maximum(c, 0.0, out=c)
    # restore the exact total lost to round-off
    target = math.fsum(ea) * math.fsum(eb)
    total = math.fsum(c)
    if total > 0:
        c *= target / total
    with np.errstate(divide="ignore"):
        return np.log(c) + (ma + mb)


def _combine_method(*methods: str) -> str:
    if "fft" in methods:
        return "fft"
    if "direct" in methods:
        return "direct"
    return "exact"


def convolve(
    a: LatticePMF,
    b: LatticePMF,
    window=None,
    method: str = "auto",
    budget: float | None = None,
) -> LatticePMF:
    """
    Law of the sum of independent draws from ``a`` and ``b``.

    Parameters
    ----------
    window : None, int or (lo, hi)
        Target window of the result; ``None`` keeps the full support and an
        int ``W`` means ``(-W, W)``.  Mass falling outside is moved to the
        outside buckets.
    method : {"auto", "direct", "fft"}
    budget : float, optional
        Raise :class:`WindowOverflow` if the clipped mass exceeds it.
    """
    if method == "auto":
        method = "direct" if len(a) * len(b) <= DIRECT_LIMIT else "fft"
    if method not in ("direct", "fft"):
        raise ValueError(f"unknown method {method!r}")
    offset = a.offset + b.offset
    full_hi = offset + len(a) + len(b) - 2
    lo, hi = _window_bounds(window, offset, full_hi)
    lo_c, hi_c = max(lo, offset), min(hi, full_hi)
    nonempty = np.isfinite(a.log_mass).any() and np.isfinite(b.log_mass).any()
    if lo_c > hi_c:
        # the target window misses the support: keep it empty
        body = np.full(hi - lo + 1, NEG_INF)
        lo_c = lo
    elif not nonempty:
        # one operand lives entirely in its outside buckets
        body = np.full(hi_c - lo_c + 1, NEG_INF)
    elif method == "direct":
        body = _direct_log(a.log_mass, b.log_mass, lo_c - offset, hi_c - offset + 1)
    else:
        full = _fft_log(a.log_mass, b.log_mass)
        body = full[lo_c - offset : hi_c - offset + 1]
    if not nonempty:
        clip_left = clip_right = 0.0
    elif method == "direct" or lo_c > hi_c:
        clip_left, clip_right = _clip_masses(a.log_mass, b.log_mass, lo - offset, hi - offset)
    else:
        clip_left = float(np.exp(log_sum(full[: max(lo - offset, 0)])))
        clip_right = float(np.exp(log_sum(full[max(hi - offset + 1, 0) :])))
    if budget is not None and clip_left + clip_right > budget:
        raise WindowOverflow(
            f"clipped mass {clip_left + clip_right:.3e} exceeds budget {budget:.3e}"
        )

    in_a, in_b = np.exp(a.window_mass_log()), np.exp(b.window_mass_log())
    Ra, La = np.exp(a.out_right_log), np.exp(a.out_left_log)
    Rb, Lb = np.exp(b.out_right_log), np.exp(b.out_left_log)
    # mass with one operand outside is kept on that operand's side;
    # opposite-side pairs are split evenly
    mixed = 0.5 * (Ra * Lb + La * Rb)
    right = clip_right + Ra * (in_b + Rb) + in_a * Rb + mixed
    left = clip_left + La * (in_b + Lb) + in_a * Lb + mixed
    with np.errstate(divide="ignore"):
        return LatticePMF(
            offset=lo_c,
            log_mass=body,
            out_left_log=float(np.log(left)),
            out_right_log=float(np.log(right)),
            method=_combine_method(a.method, b.method, method),
        )


def _reach_windows(p: LatticePMF, n: int, window, exact_window: bool):
    """
    Window for a partial sum of ``m`` copies of ``p`` inside an ``n``-fold sum.

    With ``exact_window`` the partial sum is kept wherever the remaining
    ``n - m`` copies can still carry it into the target window, so the final
    window does not depend on the order of convolutions.
    """
    if window is None or not exact_window:
        return lambda m: window
    lo, hi = _window_bounds(window, 0, 0)
    return lambda m: (lo - (n - m) * p.hi, hi - (n - m) * p.lo)


def power(
    p: LatticePMF, n: int, window=None, method: str = "auto", budget=None, exact_window: bool = False
) -> LatticePMF:
    """
    ``n``-fold convolution power by binary doubling.

    By default every intermediate power is clipped to ``window``, so mass
    that leaves the window and would come back is lost to the outside
    buckets.  ``exact_window=True`` widens the intermediate windows until
    the result on ``window`` is the exact law of the sum of ``n`` draws from
    the windowed ``p``; this costs more for large ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    win = _reach_windows(p, n, window, exact_window)
    result, m_result = None, 0
    base, m_base = p, 1
    while True:
        if n & 1:
            m_result += m_base
            result = base if result is None else convolve(result, base, win(m_result), method, budget)
        n >>= 1
        if not n:
            break
        m_base *= 2
        base = convolve(base, base, win(m_base), method, budget)
    return result


def direct_convolve_oracle(
    p: LatticePMF, n: int, window=None, method: str = "direct", exact_window: bool = False
) -> LatticePMF:
    """Slow reference: ``n - 1`` sequential convolutions, ``n <= 64``."""
    if not 1 <= n <= 64:
        raise ValueError("oracle supports 1 <= n <= 64")
    win = _reach_windows(p, n, window, exact_window)
    result = p
    for m in range(2, n + 1):
        result = convolve(result, p, win(m), method)
    return result


def partial_sums(p: LatticePMF, n: int, window=None, method: str = "auto") -> list[LatticePMF]:
    """Laws of ``S_0, S_1, ..., S_n`` (``S_0`` is the point mass at 0)."""
    laws = [delta(0)]
    for _ in range(n):
        laws.append(p if len(laws) == 1 else convolve(laws[-1], p, window, method))
    return laws


def floor_bn(model: TailModel, n: int) -> int:
    if n == 1:
        mean = model.mean
        return 0 if model.alpha <= 1 or model.is_symmetric else math.floor(mean)
    return math.floor(scale_bn(model, n))


def sum_pmf_recentered(
    model: TailModel, n: int, window: int, method: str = "auto", mu_window: int | None = None
) -> LatticePMF:
    """
    Law of ``S_n - floor(b_n)`` on ``[-window, window]``.

    The summand law is materialised on ``[-mu_window, mu_window]``
    (default ``window``).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mu = materialize_pmf(model, mu_window or window)
    b = floor_bn(model, n)
    s = power(mu, n, (b - window, b + window), method)
    return s.shifted(-b)


def truncated_measure(model: TailModel, y: int, window: int) -> LatticePMF:
    """Sub-probability measure ``mu * 1{k <= y}`` on ``[-window, window]``."""
    mu = materialize_pmf(model, window)
    if y >= mu.hi:
        between = model.survival(mu.hi) - model.survival(y)
        with np.errstate(divide="ignore"):
            right = math.log(between) if between > 0 else NEG_INF
        return LatticePMF(mu.offset, mu.log_mass, mu.out_left_log, right, mu.method)
    return mu.restricted(hi=y)


def truncated_max_sum_pmf(
    model: TailModel, n: int, y: int, window: int, method: str = "direct"
) -> LatticePMF:
    """
    ``k -> P(S_n - floor(b_n) = k, M_n <= y)``: the ``n``-th power of the
    summand law restricted to ``(-inf, y]``.
    """
    if y < 1:
        raise ValueError("y must be >= 1")
    sub = truncated_measure(model, y, window)
    b = floor_bn(model, n)
    s = power(sub, n, (b - window, b + window), method)
    return s.shifted(-b)


@dataclass(frozen=True)
class JointSumCountLaw:
    """
    Joint law of ``(S_n, min(N, K_cap))`` where ``N`` counts summands above
    a threshold.  ``log_mass[i, k]`` is the log-mass of ``S_n = offset + i``
    with count ``k``; the per-count outside buckets keep the window clip.
    """

    offset: int
    K_cap: int
    log_mass: np.ndarray
    out_left_log: np.ndarray
    out_right_log: np.ndarray
    method: str = "exact"

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.log_mass.shape[0])

    @property
    def out_mass_log(self) -> float:
        return log_sum(np.concatenate([self.out_left_log, self.out_right_log]))

    def sum_marginal(self) -> LatticePMF:
        return LatticePMF(
            offset=self.offset,
            log_mass=logsumexp(self.log_mass, axis=1),
            out_left_log=log_sum(self.out_left_log),
            out_right_log=log_sum(self.out_right_log),
            method=self.method,
        )

    def count_marginal(self) -> np.ndarray:
        """``P(min(N, K_cap) = k)`` including the outside buckets."""
        stacked = np.vstack([self.log_mass, self.out_left_log, self.out_right_log])
        return np.exp(logsumexp(stacked, axis=0))

    def total_mass(self) -> float:
        return float(self.count_marginal().sum())


def joint_sum_count_pmf(
    mu: LatticePMF,
    n: int,
    x_minus: int,
    K_cap: int = 8,
    window=None,
    method: str = "auto",
    rel_cutoff: float = 1e-20,
) -> JointSumCountLaw:
    """
    Joint law of the sum and the number of summands above ``x_minus``.

    Splitting ``mu = low + high`` at ``x_minus``, the count-``k`` slice is
    ``C(n, k) high^{*k} * low^{*(n-k)}``.  The absorbing slice ``K_cap``
    adds the terms ``k >= K_cap`` until their binomial weight falls below
    ``rel_cutoff`` times the first one.
    """
    if K_cap < 2:
        raise ValueError("K_cap must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    low = mu.restricted(hi=x_minus)
    high = mu.restricted(lo=x_minus + 1)
    g = high.total_mass()
    total = mu.total_mass()
    k_max = 0
    if g > 0:
        log_w = binom.logpmf(np.arange(n + 1), n, min(g / total, 1.0))
        k_max = min(n, K_cap)
        while k_max < n and log_w[k_max + 1] - log_w[K_cap] > math.log(rel_cutoff):
            k_max += 1
    has_low = np.isfinite(low.log_mass).any() or np.isfinite(low.out_left_log)
    has_high = np.isfinite(high.log_mass).any() or np.isfinite(high.out_right_log)

    lo, hi = _window_bounds(window, n * mu.lo, n * mu.hi)
    win = (lo, hi)
    low_pows: dict[int, LatticePMF] = {}
    if has_low:
        m0 = max(n - k_max, 1)
        cur = power(low, m0, win, method)
        low_pows[m0] = cur
        for m in range(m0 + 1, n + 1):
            cur = convolve(cur, low, win, method)
            low_pows[m] = cur
    high_pows: dict[int, LatticePMF] = {}
    if has_high:
        cur = high
        high_pows[1] = cur
        for k in range(2, k_max + 1):
            cur = convolve(cur, high, win, method)
            high_pows[k] = cur

    size = hi - lo + 1
    slices = np.full((size, K_cap + 1), NEG_INF)
    out_l = np.full(K_cap + 1, NEG_INF)
    out_r = np.full(K_cap + 1, NEG_INF)
    methods = [mu.method]
    for k in range(0, k_max + 1):
        if k == 0:
            if not has_low:
                continue
            part = low_pows[n]
        elif k == n:
            if not has_high:
                continue
            part = high_pows[n]
        else:
            if not (has_low and has_high):
                continue
            part = convolve(high_pows[k], low_pows[n - k], win, method)
        methods.append(part.method)
        c = math.log(comb(n, k))
        col = min(k, K_cap)
        idx = part.offset - lo
        seg = slices[idx : idx + len(part), col]
        slices[idx : idx + len(part), col] = np.logaddexp(seg, part.log_mass + c)
        out_l[col] = np.logaddexp(out_l[col], part.out_left_log + c)
        out_r[col] = np.logaddexp(out_r[col], part.out_right_log + c)
    return JointSumCountLaw(
        offset=lo,
        K_cap=K_cap,
        log_mass=slices,
        out_left_log=out_l,
        out_right_log=out_r,
        method=_combine_method(*methods),
    )


def joint_sum_count(
    model: TailModel,
    n: int,
    x_minus: int,
    K_cap: int = 8,
    window: int = 0,
    method: str = "auto",
) -> JointSumCountLaw:
    """Model-level wrapper: summand law and sums both on ``[-window, window]``."""
    mu = materialize_pmf(model, window)
    return joint_sum_count_pmf(mu, n, x_minus, K_cap, window, method)
