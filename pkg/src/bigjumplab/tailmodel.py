"""
Integer-valued power-law tail models.

The law of one summand is

    P(X = k)  = p * alpha * L(k) * k**-(1 + alpha)        / Z   (k >= 1)
    P(X = -k) = q * alpha * L(k) * k**-(1 + alpha_tilde)  / Z   (k >= 1)

with ``P(X = 0) = 0`` and ``Z`` the constant making the total mass one.
``Z`` is absorbed into the slowly varying factor, so the effective factor
``L(k) / Z`` is what enters the normalising scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .lattice import NEG_INF, LatticePMF, log_sum

# explicit summation below this index, Euler-Maclaurin above it
EXPLICIT_TERMS = 10_000
_CHUNK = 1 << 20

VARIANTS = ("constant", "log_power", "one_plus_power")


@dataclass(frozen=True)
class SlowlyVaryingFn:
    """
    Slowly varying factor ``L`` from a small analytic family.

    ``constant``        L(x) = c
    ``log_power``       L(x) = log(x)**beta
    ``one_plus_power``  L(x) = 1 + kappa * x**-gamma
    """

    variant: str = "constant"
    params: tuple = (1.0,)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        params = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", params)
        expected = {"constant": 1, "log_power": 1, "one_plus_power": 2}[self.variant]
        if len(params) != expected:
            raise ValueError(f"{self.variant} takes {expected} parameter(s)")
        if self.variant == "constant" and params[0] <= 0:
            raise ValueError("constant must be positive")
        if self.variant == "one_plus_power":
            gamma, kappa = params
            if gamma <= 0:
                raise ValueError("gamma must be positive")
            if kappa <= -1:
                raise ValueError("kappa must exceed -1 so that L stays positive")

    @classmethod
    def constant(cls, c: float = 1.0) -> "SlowlyVaryingFn":
        return cls("constant", (c,))

    @classmethod
    def log_power(cls, beta: float) -> "SlowlyVaryingFn":
        return cls("log_power", (beta,))

    @classmethod
    def one_plus_power(cls, gamma: float, kappa: float = 1.0) -> "SlowlyVaryingFn":
        return cls("one_plus_power", (gamma, kappa))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "constant":
            out = np.full(x.shape, self.params[0])
        elif self.variant == "log_power":
            out = np.log(x) ** self.params[0]
        else:
            gamma, kappa = self.params
            out = 1.0 + kappa * x ** -gamma
        return float(out) if out.ndim == 0 else out

    def lattice(self, k):
        """Values used on the integer lattice; ``log_power`` reads ``L(max(k, 2))``."""
        k = np.asarray(k, dtype=float)
        if self.variant == "log_power":
            k = np.maximum(k, 2.0)
        return self(k)

    def err(self, x, y):
        """
        Precision ``L(x + y) / L(x) - 1``, evaluated without cancellation.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.variant == "constant":
            out = np.zeros(np.broadcast(x, y).shape)
        elif self.variant == "log_power":
            (beta,) = self.params
            out = np.expm1(beta * np.log1p(np.log1p(y / x) / np.log(x)))
        else:
            gamma, kappa = self.params
            step = x**-gamma * np.expm1(-gamma * np.log1p(y / x))
            out = kappa * step / (1.0 + kappa * x**-gamma)
        return float(out) if out.ndim == 0 else out

    # tail-series helpers, f(t) = L(t) * t**-s
    def _power_terms(self):
        if self.variant == "constant":
            return [(self.params[0], 0.0)]
        if self.variant == "one_plus_power":
            gamma, kappa = self.params
            return [(1.0, 0.0), (kappa, gamma)]
        return None

    def integral(self, s: float, lower: float) -> float:
        """``int_lower^inf L(t) t**-s dt`` for ``s > 1``."""
        terms = self._power_terms()
        if terms is not None:
            return sum(c * lower ** (1.0 - s - g) / (s + g - 1.0) for c, g in terms)
        (beta,) = self.params
        z = (s - 1.0) * math.log(lower)
        if beta > -1.0:
            scale = special.gamma(beta + 1.0) / (s - 1.0) ** (beta + 1.0)
            return float(special.gammaincc(beta + 1.0, z) * scale)
        value, _ = integrate.quad(
            lambda u: u**beta * math.exp(-(s - 1.0) * u), math.log(lower), np.inf
        )
        return value

    def _f(self, s, t):
        return self(t) * t**-s

    def _fprime(self, s, t):
        terms = self._power_terms()
        if terms is not None:
            return sum(-c * (s + g) * t ** (-s - g - 1.0) for c, g in terms)
        (beta,) = self.params
        lt = math.log(t)
        return t ** (-s - 1.0) * lt ** (beta - 1.0) * (beta - s * lt)

    def to_json(self) -> dict:
        names = {
            "constant": ["c"],
            "log_power": ["beta"],
            "one_plus_power": ["gamma", "kappa"],
        }[self.variant]
        return {"variant": self.variant, "params": dict(zip(names, self.params))}

    @classmethod
    def from_json(cls, obj: dict) -> "SlowlyVaryingFn":
        variant = obj["variant"]
        params = obj.get("params", {})
        order = {
            "constant": ["c"],
            "log_power": ["beta"],
            "one_plus_power": ["gamma", "kappa"],
        }
        if variant not in order:
            raise ValueError(f"unknown variant {variant!r}")
        if isinstance(params, dict):
            params = tuple(params[name] for name in order[variant])
        return cls(variant, tuple(params))


def series_tail(L: SlowlyVaryingFn, s: float, start: int) -> tuple[float, float]:
    """
    ``sum_{k >= start} L(k) k**-s`` and a bound on the truncation error.

    Terms below ``EXPLICIT_TERMS`` are summed directly; the remainder uses
    Euler-Maclaurin with the ``f/2`` and ``f'/12`` corrections.
    """
    if s <= 1.0:
        raise ValueError("series diverges for s <= 1")
    start = max(int(start), 1)
    cut = max(start, EXPLICIT_TERMS)
    head = 0.0
    for a in range(start, cut, _CHUNK):
        k = np.arange(a, min(a + _CHUNK, cut), dtype=float)
        head += math.fsum(L.lattice(k) * k**-s)
    t = float(cut)
    f = L._f(s, t)
    tail = L.integral(s, t) + 0.5 * f - L._fprime(s, t) / 12.0
    beta = abs(L.params[0]) if L.variant == "log_power" else 0.0
    rem = (s + 3.0 + beta) ** 3 * abs(f) / t**3
    return head + tail, rem


def zeta_series(s: float) -> float:
    """Riemann zeta by direct summation with an Euler-Maclaurin tail."""
    return series_tail(SlowlyVaryingFn.constant(1.0), s, 1)[0]


def _definite_integral(L: SlowlyVaryingFn, s: float, a: float, b: float) -> float:
    """``int_a^b L(t) t**-s dt`` for any real ``s``."""
    terms = L._power_terms()
    if terms is None:
        (beta,) = L.params
        value, _ = integrate.quad(
            lambda u: u**beta * math.exp((1.0 - s) * u), math.log(a), math.log(b), limit=200
        )
        return value
    total = 0.0
    for c, g in terms:
        e = 1.0 - s - g
        total += c * (math.log(b / a) if e == 0 else (b**e - a**e) / e)
    return total


def partial_series(L: SlowlyVaryingFn, s: float, m: int) -> float:
    """
    ``sum_{k=1}^{m} L(k) k**-s`` for any real ``s``.

    Explicit below ``EXPLICIT_TERMS``; the rest by Euler-Maclaurin between
    the cut and ``m``.
    """
    m = int(m)
    if m < 1:
        return 0.0
    cut = min(m, EXPLICIT_TERMS)
    k = np.arange(1, cut + 1, dtype=float)
    head = math.fsum(L.lattice(k) * k**-s)
    if m == cut:
        return head
    a, b = float(cut), float(m)
    body = _definite_integral(L, s, a, b)
    ends = 0.5 * (L._f(s, b) - L._f(s, a))
    slopes = (L._fprime(s, b) - L._fprime(s, a)) / 12.0
    return head + body + ends + slopes


@dataclass(frozen=True)
class TailModel:
    """
    Two-sided power-law law on the integers.

    Parameters
    ----------
    alpha : float
        Right-tail exponent.
    p, q : float
        Right/left weights, ``p + q = 1``; only ``p > 0`` is supported.
    L : SlowlyVaryingFn
        Slowly varying factor shared by both tails.
    alpha_tilde : float, optional
        Left-tail exponent, at least ``alpha``; defaults to ``alpha``.
    kind : {"general", "zeta"}
        ``"zeta"`` pins the symmetric zeta(1 + alpha) law.
    """

    alpha: float
    p: float = 0.5
    q: float = 0.5
    L: SlowlyVaryingFn = field(default_factory=SlowlyVaryingFn)
    alpha_tilde: float | None = None
    kind: str = "general"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.p < 0 or self.q < 0 or abs(self.p + self.q - 1.0) > 1e-12:
            raise ValueError("need p, q >= 0 with p + q = 1")
        if self.p == 0:
            raise ValueError("p = 0 is not supported")
        if self.alpha_tilde is None:
            object.__setattr__(self, "alpha_tilde", float(self.alpha))
        if self.alpha_tilde < self.alpha:
            raise ValueError("alpha_tilde must be >= alpha")
        if self.kind not in ("general", "zeta"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "zeta" and (
            self.p != 0.5
            or self.L.variant != "constant"
            or self.alpha_tilde != self.alpha
        ):
            raise ValueError("zeta models are symmetric with constant L")

    @classmethod
    def zeta(cls, alpha: float) -> "TailModel":
        return cls(alpha=float(alpha), kind="zeta")

    @property
    def is_symmetric(self) -> bool:
        return self.p == self.q and self.alpha_tilde == self.alpha

    # unnormalised one-sided weights, k >= 1
    def _right(self, k):
        return self.p * self.alpha * self.L.lattice(k) * k ** -(1.0 + self.alpha)

    def _left(self, k):
        return self.q * self.alpha * self.L.lattice(k) * k ** -(1.0 + self.alpha_tilde)

    def _tail(self, side: str, start: int) -> tuple[float, float]:
        w, s = (self.p, self.alpha) if side == "right" else (self.q, self.alpha_tilde)
        if w == 0:
            return 0.0, 0.0
        value, rem = series_tail(self.L, 1.0 + s, start)
        return w * self.alpha * value, w * self.alpha * rem

    @cached_property
    def normalizer(self) -> float:
        return self._tail("right", 1)[0] + self._tail("left", 1)[0]

    def pmf(self, k):
        k = np.asarray(k)
        kf = np.abs(k).astype(float)
        out = np.zeros(k.shape)
        pos, neg = k > 0, k < 0
        out[pos] = self._right(kf[pos])
        out[neg] = self._left(kf[neg])
        out /= self.normalizer
        return float(out) if out.ndim == 0 else out

    def log_pmf(self, k):
        with np.errstate(divide="ignore"):
            return np.log(self.pmf(k))

    def right_tail(self, start: int) -> float:
        """``P(X >= start)`` for ``start >= 1``."""
        return self._tail("right", start)[0] / self.normalizer

    def left_tail(self, start: int) -> float:
        """``P(X <= -start)`` for ``start >= 1``."""
        return self._tail("left", start)[0] / self.normalizer

    def survival(self, x: int) -> float:
        """``G(x) = P(X > x)`` from the series, no window involved."""
        x = int(math.floor(x))
        if x >= 0:
            return self.right_tail(x + 1)
        return 1.0 - self.left_tail(-x)

    def effective_L(self, x):
        """Factor with ``P(X = x) = p alpha L_eff(x) x**-(1+alpha)`` on the right tail."""
        return self.L.lattice(x) / self.normalizer

    @cached_property
    def mean(self) -> float:
        if self.alpha <= 1 or self.alpha_tilde <= 1:
            return math.nan
        if self.is_symmetric:
            return 0.0
        right = self.p * self.alpha * series_tail(self.L, self.alpha, 1)[0]
        left = self.q * self.alpha * series_tail(self.L, self.alpha_tilde, 1)[0]
        return (right - left) / self.normalizer

    def _side_sums(self, side: str, m: float, power: int) -> float:
        """Unnormalised ``sum_{1 <= j <= m} j**power * w(j)`` on one side."""
        w, s = (self.p, self.alpha) if side == "right" else (self.q, self.alpha_tilde)
        if w == 0 or m < 1:
            return 0.0
        return w * self.alpha * partial_series(self.L, 1.0 + s - power, int(math.floor(m)))

    def truncated_moment(self, x: float, power: float, center: float = 0.0) -> float:
        """``E[|X - center|**power ; |X - center| <= x]``."""
        lo = math.ceil(center - x)
        hi = math.floor(center + x)
        if hi - lo <= 2 * _CHUNK or (center != 0 and power != 2) or power not in (0, 1, 2):
            total = 0.0
            for a in range(lo, hi + 1, _CHUNK):
                k = np.arange(a, min(a + _CHUNK, hi + 1))
                total += math.fsum(np.abs(k - center) ** power * self.pmf(k))
            return total
        power = int(power)
        if center == 0:
            total = self._side_sums("right", hi, power) + self._side_sums("left", -lo, power)
            return total / self.normalizer
        # (k - c)^2 expanded on each side, k = j on the right and k = -j on the left
        c = center
        r = [self._side_sums("right", hi, j) for j in range(3)]
        left = [self._side_sums("left", -lo, j) for j in range(3)]
        total = (r[2] - 2 * c * r[1] + c * c * r[0]) + (left[2] + 2 * c * left[1] + c * c * left[0])
        return total / self.normalizer

    def truncated_mean(self, x: float) -> float:
        """``E[X; |X| <= x]``."""
        if x <= 2 * _CHUNK:
            k = np.arange(math.ceil(-x), math.floor(x) + 1)
            return math.fsum(k * self.pmf(k))
        return (self._side_sums("right", x, 1) - self._side_sums("left", x, 1)) / self.normalizer

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "alpha": self.alpha,
            "p": self.p,
            "q": self.q,
            "alpha_tilde": self.alpha_tilde,
            "L": self.L.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TailModel":
        if obj.get("kind", "general") == "zeta":
            return cls.zeta(obj["alpha"])
        L = SlowlyVaryingFn.from_json(obj["L"]) if "L" in obj else SlowlyVaryingFn()
        return cls(
            alpha=float(obj["alpha"]),
            p=float(obj.get("p", 0.5)),
            q=float(obj.get("q", 0.5)),
            L=L,
            alpha_tilde=obj.get("alpha_tilde"),
            kind="general",
        )


def materialize_pmf(model: TailModel, half_window: int) -> LatticePMF:
    """
    Law of one summand on ``[-W, W]`` with the analytic out-of-window mass.

    The outside buckets hold the Euler-Maclaurin tail plus its error bound,
    so they never understate the true outside mass.
    """
    W = int(half_window)
    if W < 2:
        raise ValueError("half_window must be >= 2")
    k = np.arange(-W, W + 1)
    log_mass = model.log_pmf(k)
    Z = model.normalizer
    right, r_rem = model._tail("right", W + 1)
    left, l_rem = model._tail("left", W + 1)
    with np.errstate(divide="ignore"):
        out_right = math.log((right + r_rem) / Z) if right > 0 else NEG_INF
        out_left = math.log((left + l_rem) / Z) if left > 0 else NEG_INF
    return LatticePMF(
        offset=-W,
        log_mass=log_mass,
        out_left_log=out_left,
        out_right_log=out_right,
        meta={"model": model.to_json()},
    )


def tail_mass_upper_bound(model: TailModel, half_window: int) -> float:
    """
    ``P(|X| > W)`` bounded by the tail integrals from ``W``.

    Valid once ``L(t) t**-(1+alpha)`` is decreasing on ``[W, inf)``.
    """
    W = float(half_window)
    right = model.p * model.alpha * model.L.integral(1.0 + model.alpha, W)
    left = model.q * model.alpha * model.L.integral(1.0 + model.alpha_tilde, W)
    return (right + left) / model.normalizer


def survival(pmf: LatticePMF, x: int) -> float:
    """
    ``log P(X > x)`` from a windowed law.

    Inside the window this sums the window entries above ``x`` and the
    right outside bucket; beyond the right edge the bucket itself is
    returned, which bounds the survival from above.
    """
    x = int(math.floor(x))
    if x >= pmf.hi:
        return pmf.out_right_log
    start = max(x + 1 - pmf.offset, 0)
    return log_sum(np.append(pmf.log_mass[start:], pmf.out_right_log))


@dataclass(frozen=True)
class TruncatedMoments:
    mean: float
    trunc_var: float
    sigma_2alpha: float | None
    beyond_window: bool


def truncated_moments(pmf: LatticePMF, x: float, alpha: float | None = None) -> TruncatedMoments:
    """
    Mean, ``sigma^2(x) = E[(X - mu)^2; |X - mu| <= x]`` and
    ``sigma_{2,alpha}(x) = E[|X|^alpha; |X| <= x]`` from the window.

    ``beyond_window`` flags that the truncation level runs past the window,
    in which case the two truncated moments miss the outside mass.
    """
    if x < 1:
        raise ValueError("x must be >= 1")
    k = pmf.support.astype(float)
    w = pmf.probs()
    mean = float(np.dot(k, w) / w.sum())
    centred = k - mean
    keep = np.abs(centred) <= x
    var = math.fsum(centred[keep] ** 2 * w[keep])
    s2a = None
    if alpha is not None:
        keep_a = np.abs(k) <= x
        s2a = math.fsum(np.abs(k[keep_a]) ** alpha * w[keep_a])
    beyond = (mean + x > pmf.hi) or (mean - x < pmf.lo)
    return TruncatedMoments(mean, var, s2a, bool(beyond))


def slow_variation_err(L: SlowlyVaryingFn, x, y):
    """Precision ``err[x, y] = L(x + y) / L(x) - 1``."""
    return L.err(x, y)


@lru_cache(maxsize=256)
def potter_constant(
    L: SlowlyVaryingFn, delta: float, x0: float = 2.0, x_max: float = 1e12, points: int = 50
) -> float:
    """
    Smallest ``c`` with ``L(a)/L(b) <= c max((a/b)**d, (b/a)**d)`` on a
    log-grid of ``[x0, x_max]``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    grid = np.geomspace(x0, x_max, points)
    vals = np.log(L(grid))
    lg = np.log(grid)
    ratio = vals[:, None] - vals[None, :]
    envelope = delta * np.abs(lg[:, None] - lg[None, :])
    return float(np.exp(np.max(ratio - envelope)))


def potter_ratio_bound(
    L: SlowlyVaryingFn, a: float, b: float, delta: float, x0: float = 2.0, x_max: float = 1e12
) -> float:
    """Potter envelope ``c_delta * max((a/b)**delta, (b/a)**delta)``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if a < x0 or b < x0:
        raise ValueError(f"a and b must be >= x0 = {x0}")
    c = potter_constant(L, float(delta), float(x0), float(x_max))
    return c * max((a / b) ** delta, (b / a) ** delta)


def _root_log(fn, lo: float, hi: float, rtol: float) -> float:
    flo, fhi = fn(math.log(lo)), fn(math.log(hi))
    if not (flo > 0 > fhi):
        raise ValueError(
            f"scale equation does not bracket a root on [{lo:g}, {hi:g}]; "
            "n is too small for the monotone regime"
        )
    root = optimize.brentq(fn, math.log(lo), math.log(hi), xtol=rtol / 4, rtol=4 * np.finfo(float).eps)
    return math.exp(root)


def scale_an(model: TailModel, n: int, rtol: float = 1e-9) -> float:
    """
    CLT scale: root of ``L_eff(a) a**-alpha = 1/n`` for ``alpha < 2`` and of
    ``sigma^2(a) a**-2 = 1/n`` for ``alpha >= 2``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    alpha = model.alpha
    hi = float(n) ** (2.0 / min(alpha, 2.0) + 1.0)
    if alpha < 2:
        log_n = math.log(n)

        def fn(u):
            return math.log(model.effective_L(math.exp(u))) - alpha * u + log_n

    else:
        log_n = math.log(n)
        center = model.mean

        def fn(u):
            var = model.truncated_moment(math.exp(u), 2.0, center)
            return math.log(var) - 2.0 * u + log_n

    return _root_log(fn, 1.0, hi, rtol)


def scale_bn(model: TailModel, n: int) -> float:
    """Centering ``b_n``: 0, the truncated mean sum, or ``n E[X]``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    alpha = model.alpha
    if alpha < 1:
        return 0.0
    if alpha == 1:
        if model.is_symmetric:
            return 0.0
        return n * model.truncated_mean(scale_an(model, n))
    return n * model.mean
