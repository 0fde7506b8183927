"""
Conditional laws of the summands given a large sum.

Two events are supported: ``{S_n > x}`` (kind ``"exceed"``) and
``{S_n = x}`` (kind ``"hit"``).  The module provides the shift operator,
the one-big-jump law ``nu_x``, exact and limiting samplers, and total
variation distances between the conditional laws and their big-jump
approximations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .conv import joint_sum_count_pmf, partial_sums, power
from .lattice import NEG_INF, LatticePMF, delta, from_probs
from .tailmodel import TailModel, materialize_pmf, scale_an

EXCEED = "exceed"
HIT = "hit"
SAMPLER_WINDOW = 1 << 20
# int64 ceiling for tail draws
_MAX_DRAW = 1 << 62


# shift operator -------------------------------------------------------------


def shift_T(seq):
    """
    Swap the first coordinate attaining the maximum into the last slot.

    Accepts a 1-D sequence or a 2-D array of row sequences.
    """
    arr = np.array(seq, dtype=np.int64, copy=True)
    if arr.size == 0:
        raise ValueError("empty sequence")
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    first = np.argmax(rows, axis=1)
    idx = np.arange(rows.shape[0])
    last = rows[:, -1].copy()
    rows[:, -1] = rows[idx, first]
    rows[idx, first] = last
    return rows[0] if arr.ndim == 1 else rows


def preimage_count(y) -> np.ndarray:
    """
    Number of sequences mapped onto ``y`` by :func:`shift_T`, for ``y``
    whose last entry is the maximum: the first index (1-based) holding it.
    """
    y = np.atleast_2d(np.asarray(y))
    return np.argmax(y == y[:, -1:], axis=1) + 1


# specification --------------------------------------------------------------


@dataclass(frozen=True)
class ConditionalSpec:
    """
    Conditioning problem for ``n`` summands.

    Parameters
    ----------
    x_minus : int, optional
        Big-jump threshold; defaults to ``x - ceil(4 a_n)`` (``x`` when
        ``n = 1``).  The offset ``x - x_minus`` must not exceed ``|x| / 2``.
    kind : {"exceed", "hit"}
    window : int, optional
        Half-width of the lattice window for the exact laws; default
        ``max(2|x|, 64)``.
    support : (lo, hi), optional
        Restrict the summand law to ``[lo, hi]`` (renormalised).  All laws
        are then finite and every computation is exact.
    """

    model: TailModel
    n: int
    x: int
    x_minus: int | None = None
    kind: str = EXCEED
    window: int | None = None
    support: tuple | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        kind = str(self.kind).lower()
        if kind not in (EXCEED, HIT):
            raise ValueError(f"unknown kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "x", int(self.x))
        if self.x_minus is None:
            xm = self.x if self.n == 1 else self.x - math.ceil(4.0 * scale_an(self.model, self.n))
            object.__setattr__(self, "x_minus", int(xm))
        object.__setattr__(self, "x_minus", int(self.x_minus))
        if self.x_minus > self.x:
            raise ValueError("x_minus must not exceed x")
        if self.x - self.x_minus > abs(self.x) / 2:
            raise ValueError("offset x - x_minus must be at most |x| / 2")
        if self.support is not None:
            lo, hi = (int(v) for v in self.support)
            if lo > hi:
                raise ValueError("empty support")
            object.__setattr__(self, "support", (lo, hi))
        if self.window is None and self.support is None:
            object.__setattr__(self, "window", max(2 * abs(self.x), 64))

    @property
    def offset(self) -> int:
        return self.x - self.x_minus


# shared exact laws -----------------------------------------------------------


class _Laws:
    """Summand law and derived sum laws for one spec, computed lazily."""

    def __init__(self, spec: ConditionalSpec):
        self.spec = spec

    @cached_property
    def mu(self) -> LatticePMF:
        s = self.spec
        if s.support is not None:
            lo, hi = s.support
            p = s.model.pmf(np.arange(lo, hi + 1))
            if p.sum() <= 0:
                raise ValueError("support carries no mass")
            return from_probs(lo, p / p.sum())
        return materialize_pmf(s.model, s.window)

    @property
    def finite(self) -> bool:
        return self.spec.support is not None

    @property
    def sum_window(self):
        return None if self.finite else self.spec.window

    def mu_prob(self, k):
        if self.finite:
            return self.mu.prob(k)
        return self.spec.model.pmf(k)

    def survival(self, v: int) -> float:
        """``P(X > v)`` for one summand."""
        if self.finite:
            p = self.mu.probs()
            return float(p[self.mu.support > v].sum())
        return self.spec.model.survival(v)

    @cached_property
    def G_minus(self) -> float:
        return self.survival(self.spec.x_minus)

    @cached_property
    def joint(self):
        s = self.spec
        return joint_sum_count_pmf(self.mu, s.n, s.x_minus, window=self.sum_window)

    @cached_property
    def G_n(self) -> float:
        """``P(S_n > x)`` including the right outside mass."""
        J = self.joint
        above = J.support > self.spec.x
        return float(np.exp(J.log_mass[above]).sum() + np.exp(J.out_right_log).sum())

    @cached_property
    def hit_parts(self):
        """Law of ``S_{n-1}`` and ``P(S_n = x)`` built from it."""
        s = self.spec
        if s.n == 1:
            prev = delta(0)
        else:
            prev = power(self.mu, s.n - 1, self.sum_window)
        mu_vals = self.mu_prob(s.x - prev.support)
        prob = float(np.dot(prev.probs(), mu_vals))
        return prev, mu_vals, prob


def nu_x_pmf(spec: ConditionalSpec) -> LatticePMF:
    """Law of one summand conditioned on exceeding ``x_minus``."""
    laws = _laws(spec)
    g = laws.G_minus
    if not g > 0:
        raise ValueError("conditioning event X > x_minus has probability zero")
    lo = spec.x_minus + 1
    if laws.finite:
        hi = spec.support[1]
        if hi < lo:
            raise ValueError("conditioning event X > x_minus has probability zero")
        k = np.arange(lo, hi + 1)
        return from_probs(lo, laws.mu_prob(k) / g)
    hi = lo + spec.window
    k = np.arange(lo, hi + 1)
    tail = spec.model.survival(hi)
    with np.errstate(divide="ignore"):
        return LatticePMF(
            offset=lo,
            log_mass=np.log(spec.model.pmf(k) / g),
            out_right_log=math.log(tail / g) if tail > 0 else NEG_INF,
        )


# samplers -------------------------------------------------------------------


class LatticeSampler:
    """
    Inverse-CDF sampler for a law on the integers: a tabulated window plus
    analytic tails drawn by bisection on the model's tail function.
    """

    def __init__(self, offset: int, probs, model: TailModel | None = None,
                 left_mass: float = 0.0, right_mass: float = 0.0):
        probs = np.asarray(probs, dtype=float)
        self.offset = int(offset)
        self.cdf = np.cumsum(probs)
        self.window_mass = float(self.cdf[-1])
        self.model = model
        self.left_mass = float(left_mass)
        self.right_mass = float(right_mass)
        self.total = self.left_mass + self.window_mass + self.right_mass
        if not self.total > 0:
            raise ValueError("sampler has no mass")

    @classmethod
    def from_pmf(cls, pmf: LatticePMF) -> "LatticeSampler":
        """Finite law given by the window of ``pmf`` (outside mass ignored)."""
        return cls(pmf.offset, pmf.probs())

    @classmethod
    def from_model(cls, model: TailModel, lower: int | None = None,
                   window: int = SAMPLER_WINDOW) -> "LatticeSampler":
        """Law of ``X`` (``lower=None``) or the sub-law of ``X`` on ``[lower, inf)``."""
        a = -window if lower is None else int(lower)
        b = max(a, 0) + window
        probs = model.pmf(np.arange(a, b + 1))
        left = model.left_tail(window + 1) if lower is None else 0.0
        return cls(a, probs, model, left, model.survival(b))

    @property
    def hi(self) -> int:
        return self.offset + self.cdf.size - 1

    def _tail_draw(self, tail_fn, start: int, v: float) -> int:
        """Largest ``k >= start`` with ``tail_fn(k) >= v * tail_fn(start)``."""
        target = v * tail_fn(start)
        lo, step = start, 1
        hi = start + step
        while hi < _MAX_DRAW and tail_fn(hi) >= target:
            lo, step = hi, step * 2
            hi = min(start + step, _MAX_DRAW)
        if hi >= _MAX_DRAW and tail_fn(hi) >= target:
            return _MAX_DRAW
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if tail_fn(mid) >= target:
                lo = mid
            else:
                hi = mid
        return lo

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(size) * self.total
        out = np.empty(size, dtype=np.int64)
        in_left = u < self.left_mass
        in_right = u >= self.left_mass + self.window_mass
        mid = ~(in_left | in_right)
        idx = np.searchsorted(self.cdf, u[mid] - self.left_mass, side="right")
        out[mid] = self.offset + np.minimum(idx, self.cdf.size - 1)
        if in_left.any() or in_right.any():
            m = self.model
            for i in np.flatnonzero(in_left):
                j = self._tail_draw(m.left_tail, -self.offset + 1, rng.random())
                out[i] = -j
            for i in np.flatnonzero(in_right):
                out[i] = self._tail_draw(m.right_tail, self.hi + 1, rng.random())
        return out


class _Samplers:
    def __init__(self, laws: _Laws):
        self.laws = laws
        spec = laws.spec

        if laws.finite:
            self.mu = LatticeSampler.from_pmf(laws.mu)
            self.nu = LatticeSampler.from_pmf(nu_x_pmf(spec))
        else:
            self.mu = LatticeSampler.from_model(spec.model)
            self.nu = LatticeSampler.from_model(spec.model, lower=spec.x_minus + 1)


_CACHE: dict = {}


def _cached(kind: str, spec: ConditionalSpec, build):
    key = (kind, spec)
    if key not in _CACHE:
        if len(_CACHE) > 16:
            _CACHE.clear()
        _CACHE[key] = build()
    return _CACHE[key]


def _laws(spec: ConditionalSpec) -> _Laws:
    return _cached("laws", spec, lambda: _Laws(spec))


def _samplers(spec: ConditionalSpec) -> _Samplers:
    return _cached("samplers", spec, lambda: _Samplers(_laws(spec)))


def _shape(size):
    return 1 if size is None else int(size)


def sample_limiting_law(spec: ConditionalSpec, rng: np.random.Generator, size=None):
    """
    ``n - 1`` i.i.d. summands and one ``nu_x`` draw at a uniform position.
    Returns one sequence, or a ``(size, n)`` array.
    """
    if spec.kind != EXCEED:
        raise ValueError("limiting law is defined for the exceed event")
    sm = _samplers(spec)
    m = _shape(size)
    out = sm.mu.draw(m * spec.n, rng).reshape(m, spec.n)
    pos = rng.integers(0, spec.n, size=m)
    out[np.arange(m), pos] = sm.nu.draw(m, rng)
    return out[0] if size is None else out


def sample_xi_star(spec: ConditionalSpec, rng: np.random.Generator, size=None):
    """``n - 1`` i.i.d. summands; the last one closes the sum at ``x``."""
    sm = _samplers(spec)
    m = _shape(size)
    out = np.empty((m, spec.n), dtype=np.int64)
    if spec.n > 1:
        out[:, :-1] = sm.mu.draw(m * (spec.n - 1), rng).reshape(m, spec.n - 1)
    out[:, -1] = spec.x - out[:, :-1].sum(axis=1)
    return out[0] if size is None else out


def _lookup(law: LatticePMF, kind: str):
    """
    Vectorised ``v -> P(S = v)`` or ``v -> P(S > v)`` for a windowed law,
    plus ``reach(v_hi, v_lo)``: an upper bound on that function over
    ``v <= v_hi`` and over ``v >= v_lo``.
    """
    p = law.probs()
    left, right = math.exp(law.out_left_log), math.exp(law.out_right_log)
    if kind == HIT:
        prefix = np.maximum.accumulate(p)
        suffix = np.maximum.accumulate(p[::-1])[::-1]

        def f(v):
            idx = v - law.offset
            ok = (idx >= 0) & (idx < p.size)
            out = np.zeros(v.shape)
            out[ok] = p[idx[ok]]
            return out

        def reach(v_hi, v_lo):
            # a point outside the window carries at most that side's mass
            below = left
            if v_hi >= law.lo:
                below = max(below, prefix[min(v_hi - law.lo, p.size - 1)])
                if v_hi > law.hi:
                    below = max(below, right)
            above = right
            if v_lo <= law.hi:
                above = max(above, suffix[max(v_lo - law.lo, 0)])
                if v_lo < law.lo:
                    above = max(above, left)
            return below, above
        return f, reach
    tail = np.append(np.cumsum(p[::-1])[::-1], 0.0) + right

    def g(v):
        return tail[np.clip(v - law.offset + 1, 0, p.size)]

    def reach_tail(v_hi, v_lo):
        # survival is non-increasing
        return 1.0, float(g(np.array([v_lo]))[0])
    return g, reach_tail


def _sequential_sample(mu: LatticePMF, laws, x: int, n: int, kind: str, size: int,
                       rng: np.random.Generator):
    """
    Coordinate-by-coordinate exact sampler on the window of ``mu``:
    ``P(X_i = t | past) ~ mu(t) F_{m}(r - t)`` with ``r`` the remaining
    target and ``F_m`` the point or survival function of ``S_m``.
    Returns the draws and a bound on the neglected out-of-window weight.
    """
    out = np.empty((size, n), dtype=np.int64)
    if size == 0:
        return out, 0.0
    r = np.full(size, x, dtype=np.int64)
    t_grid = mu.support
    w_mu = mu.probs()
    out_left, out_right = math.exp(mu.out_left_log), math.exp(mu.out_right_log)
    residual = 0.0
    for i in range(n):
        F, reach = _lookup(laws[n - i - 1], kind)
        uniq, inv = np.unique(r, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.cumsum(np.bincount(inv, minlength=uniq.size))
        start = 0
        for g, rv in enumerate(uniq):
            rows = order[start : bounds[g]]
            start = bounds[g]
            w = w_mu * F(rv - t_grid)
            cdf = np.cumsum(w)
            tot = cdf[-1]
            if not tot > 0:
                raise ValueError("conditioning event is infeasible on the window")
            # t > mu.hi reaches v = r - t < r - mu.hi, t < mu.lo reaches v > r - mu.lo
            from_right, from_left = reach(int(rv) - mu.hi - 1, int(rv) - mu.lo + 1)
            lost = out_right * from_right + out_left * from_left
            residual = max(residual, lost / (tot + lost))
            pick = np.searchsorted(cdf, rng.random(rows.size) * tot, side="right")
            out[rows, i] = t_grid[np.minimum(pick, t_grid.size - 1)]
        r = r - out[:, i]
    return out, residual


@dataclass
class ExactSample:
    """Draws from the exact conditional law and diagnostics of the sampler."""

    values: np.ndarray
    residual: float
    meta: dict = field(default_factory=dict)


def _sum_laws(mu: LatticePMF, n: int, window) -> list:
    if n <= 1:
        return [delta(0)]
    return partial_sums(mu, n - 1, window)


def sample_conditional_exact(spec: ConditionalSpec, rng: np.random.Generator,
                             size: int = 1) -> ExactSample:
    """
    Exact draws of the summand vector given the event of ``spec``.

    Hit: sequential sampling on the summand window.  Exceed: a mixture over
    whether some summand exceeds ``x_minus``.  With at least one such
    summand the law is sampled by rejection from the one-big-jump law
    (accept with probability ``1{S_n > x} / N``); otherwise sequentially
    from the summand law restricted to ``(-inf, x_minus]``.
    """
    laws = _laws(spec)
    n, x = spec.n, spec.x
    if spec.kind == HIT:
        if n == 1:
            if laws.mu_prob(x) <= 0:
                raise ValueError("x is outside the support")
            return ExactSample(np.full((size, 1), x, dtype=np.int64), 0.0)
        mu = laws.mu
        W = None if laws.finite else abs(x) + 2 * spec.window
        window = None if W is None else (-W, W)
        vals, res = _sequential_sample(mu, _sum_laws(mu, n, window), x, n, HIT, size, rng)
        return ExactSample(vals, res)

    J = laws.joint
    above = J.support > x
    none_big = float(np.exp(J.log_mass[above, 0]).sum() + math.exp(J.out_right_log[0]))
    G_n = laws.G_n
    if not G_n > 0:
        raise ValueError("P(S_n > x) is zero on the window")
    pi0 = min(max(none_big / G_n, 0.0), 1.0)
    n0 = int(rng.binomial(size, pi0))
    parts = []
    residual = 0.0
    if n0:
        low = laws.mu.restricted(hi=spec.x_minus)
        W = None if laws.finite else abs(x) + 2 * spec.window
        window = None if W is None else (-W, W)
        vals, residual = _sequential_sample(low, _sum_laws(low, n, window), x, n, EXCEED, n0, rng)
        parts.append(vals)
    need = size - n0
    proposals = accepted = 0
    batch = max(64, need)
    while need > 0:
        y = sample_limiting_law(spec, rng, size=batch)
        big = (y > spec.x_minus).sum(axis=1)
        ok = y.sum(axis=1) > x
        keep = ok & (rng.random(batch) * big < 1.0)
        proposals += batch
        chosen = y[keep][:need]
        accepted += chosen.shape[0]
        parts.append(chosen)
        need -= chosen.shape[0]
        rate = max(accepted / proposals, 1e-3)
        batch = int(min(max(64, 1.2 * need / rate), 1 << 20))
    vals = np.concatenate(parts, axis=0) if parts else np.empty((0, n), dtype=np.int64)
    vals = vals[rng.permutation(vals.shape[0])]
    meta = {"pi_no_big_jump": pi0, "acceptance": accepted / proposals if proposals else 1.0}
    return ExactSample(vals, residual, meta)


def dump_samples(values, path) -> None:
    """Write draws as CSV, one sequence per row, columns ``x1..xn``."""
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(values.shape[1])])
        writer.writerows(values.tolist())


def load_samples(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)


# total variation ---------------------------------------------------------------

TV_EXACT = "ExactDP"
TV_MC = "MonteCarlo"


@dataclass(frozen=True)
class TVReport:
    tv: float
    tv_squared: float
    bound_terms: dict
    bound_max: float
    method: str
    mc_stderr: float | None = None
    x_minus: int = 0
    offset: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "tv": self.tv,
            "tv_squared": self.tv_squared,
            "bound_terms": dict(self.bound_terms),
            "bound_max": self.bound_max,
            "method": self.method,
            "mc_stderr": self.mc_stderr,
            "x_minus": self.x_minus,
            "offset": self.offset,
            "meta": dict(self.meta),
        }


def _report(spec, tv, terms, method, stderr=None, meta=None) -> TVReport:
    tv = float(min(max(tv, 0.0), 1.0)) if method == TV_EXACT else float(tv)
    return TVReport(
        tv=tv,
        tv_squared=tv * tv,
        bound_terms=terms,
        bound_max=max(terms.values()),
        method=method,
        mc_stderr=stderr,
        x_minus=spec.x_minus,
        offset=spec.offset,
        meta=meta or {},
    )


def thm_bound_rhs(spec: ConditionalSpec, laws: _Laws | None = None) -> dict:
    """
    Ingredients of the conditional-law error bounds: the survival-ratio
    precision ``G(x_minus)/G(x) - 1``, the big-jump defect ``c_{x,n}`` and
    ``n G(x)``.
    """
    laws = _laws(spec) if laws is None else laws
    n, x = spec.n, spec.x
    Gx = laws.survival(x)
    if not Gx > 0:
        raise ValueError("G(x) is zero")
    err = abs(laws.G_minus / Gx - 1.0)
    if spec.kind == EXCEED:
        S = laws.joint.sum_marginal()
        at_least = float(np.exp(S.log_mass[S.support >= x]).sum() + math.exp(S.out_right_log))
        c = abs(at_least - n * laws.survival(x - 1))
    else:
        _, _, prob = laws.hit_parts
        c = abs(prob - n * float(laws.mu_prob(x)))
    return {"err": float(err), "c_xn": float(c), "nGx": float(n * Gx)}


def tv_exact_thm2(spec: ConditionalSpec) -> TVReport:
    """
    Exact TV between the law of the summands given ``S_n > x`` and its
    symmetrised one-big-jump approximation, via the joint law of the sum
    and the number of summands above ``x_minus``.
    """
    if spec.kind != EXCEED:
        raise ValueError("tv_exact_thm2 needs kind='exceed'")
    laws = _laws(spec)
    n, x = spec.n, spec.x
    J = laws.joint
    G_n, Gm = laws.G_n, laws.G_minus
    if not (G_n > 0 and Gm > 0):
        raise ValueError("conditioning event has probability zero")
    k = np.arange(J.K_cap + 1, dtype=float)
    dens_star = k / (n * Gm)
    P = np.exp(J.log_mass)
    above = (J.support > x)[:, None]
    dev = np.where(above, np.abs(1.0 / G_n - dens_star), dens_star)
    tv = 0.5 * float((P * dev).sum())
    tv += 0.5 * float((np.exp(J.out_right_log) * np.abs(1.0 / G_n - dens_star)).sum())
    tv += 0.5 * float((np.exp(J.out_left_log) * dens_star).sum())
    absorbed = float(np.exp(J.log_mass[:, -1]).sum() + np.exp(J.out_left_log[-1]) + np.exp(J.out_right_log[-1]))
    meta = {"G_n": G_n, "G_minus": Gm, "capped_count_mass": absorbed, "conv_method": J.method}
    return _report(spec, tv, thm_bound_rhs(spec, laws), TV_EXACT, meta=meta)


def tv_exact_thm3(spec: ConditionalSpec, rtol: float = 1e-6) -> TVReport:
    """
    Exact TV between the shifted law of the summands given ``S_n = x`` and
    the law whose first ``n - 1`` summands are i.i.d. with the last one
    closing the sum.

    With ``t`` the closing coordinate and ``D_t = P(S_{n-1} = x - t,
    max < t)``,

        TV = sum_t D_t (n mu(t) / P(S_n = x) - 1)_+  +  ties.

    ``D_t`` is monotone in the truncation level, so blocks of levels are
    bracketed by the truncated convolution powers at their end points and
    bisected until the bracket is within ``rtol``.  The reported ``tv`` is
    the upper end; ``meta`` carries the lower end and the unshifted
    distance.
    """
    if spec.kind != HIT:
        raise ValueError("tv_exact_thm3 needs kind='hit'")
    laws = _laws(spec)
    n, x = spec.n, spec.x
    prev, mu_vals, prob = laws.hit_parts
    if not prob > 0:
        raise ValueError("x lies outside the support of S_n")
    w = prev.probs()
    out = math.exp(prev.out_mass_log)
    # outside the window mu(x - s) / P(S_n = x) is negligible
    unshifted = min(0.5 * float(np.dot(w, np.abs(mu_vals / prob - 1.0))) + 0.5 * out, 1.0)
    terms = thm_bound_rhs(spec, laws)
    meta = {"P_hit": prob, "tv_unshifted": unshifted, "prev_out_mass": out}
    if n == 1:
        return _report(spec, 0.0, terms, TV_EXACT, meta=meta)

    mu = laws.mu
    # the maximum of n summands adding to x is at least x / n
    t_lo = max(-(-x // n), mu.lo)
    ts = np.arange(t_lo, max(mu.hi, t_lo) + 1)
    mt = laws.mu_prob(ts)
    gain = n * mt / prob - 1.0
    keep = gain > 0
    ts, mt, gain = ts[keep], mt[keep], gain[keep]
    if ts.size == 0:
        return _report(spec, 0.0, terms, TV_EXACT, meta=meta)
    tie_hi = np.maximum((n - 1) * mt / prob - 1.0, 0.0)
    tie_lo = np.maximum(mt / prob - 1.0, 0.0)
    targets = x - ts
    if laws.finite:
        window = None
    else:
        margin = spec.window // 2
        window = (int(targets.min()) - margin, int(targets.max()) + margin)

    cache: dict = {}

    def below(level: int) -> np.ndarray:
        """``P(S_{n-1} = x - t, max <= level)`` for every ``t`` in ``ts``."""
        if level not in cache:
            if level < mu.lo:
                cache[level] = np.zeros(ts.size)
            else:
                law = power(mu.restricted(hi=level), n - 1, window)
                cache[level] = np.asarray(law.prob(targets), dtype=float)
        return cache[level]

    def bracket(i: int, j: int):
        """Bounds on the block ``ts[i..j]``, inclusive."""
        lo_law, hi_law = below(int(ts[i]) - 1), below(int(ts[j]))
        sl = slice(i, j + 1)
        lower = float(np.dot(lo_law[sl], gain[sl]))
        if i == j:
            d = lo_law[i]
            tie = hi_law[i] - d
            exact = d * gain[i]
            return exact + tie * tie_lo[i], exact + tie * tie_hi[i]
        upper = float(np.dot(hi_law[sl], gain[sl]))
        ties = float(np.dot(np.maximum(hi_law[sl] - lo_law[sl], 0.0), tie_hi[sl]))
        return lower, upper + ties

    blocks = {(0, ts.size - 1): bracket(0, ts.size - 1)}
    while True:
        lower = sum(b[0] for b in blocks.values())
        upper = sum(b[1] for b in blocks.values())
        if upper - lower <= rtol * max(upper, 1e-300) or upper - lower <= 1e-15:
            break
        (i, j), _ = max(blocks.items(), key=lambda kv: (kv[1][1] - kv[1][0], -kv[0][0]))
        if i == j:
            break
        m = (i + j) // 2
        del blocks[(i, j)]
        blocks[(i, m)] = bracket(i, m)
        blocks[(m + 1, j)] = bracket(m + 1, j)
    meta.update({"tv_lower": float(lower), "levels_evaluated": len(cache), "blocks": len(blocks)})
    return _report(spec, upper, terms, TV_EXACT, meta=meta)


def tv_mc_shifted(spec: ConditionalSpec, samples: int, rng: np.random.Generator) -> TVReport:
    """
    Monte Carlo estimate of the TV between the shifted conditional law and
    ``mu^(n-1) x nu_x``, as the mean of ``(1 - Q/P)_+`` under ``P``.

    Every preimage of ``y`` under the shift is a permutation of ``y``, so
    ``Q(y)/P(y) = 1{y_n > x_minus} P(S_n > x) / (G(x_minus) f(y))`` with
    ``f(y)`` the preimage count.
    """
    if spec.kind != EXCEED:
        raise ValueError("tv_mc_shifted needs kind='exceed'")
    if samples < 2:
        raise ValueError("need at least 2 samples")
    laws = _laws(spec)
    draw = sample_conditional_exact(spec, rng, size=samples)
    y = shift_T(draw.values)
    f = preimage_count(y)
    ratio = (y[:, -1] > spec.x_minus) * laws.G_n / (laws.G_minus * f)
    if np.any(f < 1):
        raise ValueError("degenerate preimage count")
    vals = np.maximum(1.0 - ratio, 0.0)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(samples))
    meta = {"samples": samples, "residual": draw.residual, **draw.meta}
    return _report(spec, est, thm_bound_rhs(spec, laws), TV_MC, stderr, meta)
