import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigjumplab.tailmodel import (
    SlowlyVaryingFn,
    TailModel,
    materialize_pmf,
    partial_series,
    potter_constant,
    potter_ratio_bound,
    scale_an,
    scale_bn,
    slow_variation_err,
    survival,
    tail_mass_upper_bound,
    truncated_moments,
)

GENERAL_MODELS = [
    TailModel(alpha=1.5, p=0.7, q=0.3, alpha_tilde=2.5),
    TailModel(alpha=0.8, p=0.5, q=0.5, L=SlowlyVaryingFn.log_power(1.0)),
    TailModel(alpha=2.5, p=0.6, q=0.4, L=SlowlyVaryingFn.one_plus_power(1.5, 2.0)),
    TailModel(alpha=1.2, p=1.0, q=0.0, L=SlowlyVaryingFn.log_power(-0.5)),
]


# slowly varying factors


def test_slowly_varying_positive_on_grid():
    grid = np.geomspace(2, 1e12, 200)
    for L in (SlowlyVaryingFn.constant(3.0), SlowlyVaryingFn.log_power(2.0),
              SlowlyVaryingFn.log_power(-1.0), SlowlyVaryingFn.one_plus_power(0.5, -0.9)):
        assert np.all(L(grid) > 0)


def test_slowly_varying_rejects_bad_params():
    with pytest.raises(ValueError):
        SlowlyVaryingFn.constant(0.0)
    with pytest.raises(ValueError):
        SlowlyVaryingFn.one_plus_power(0.0)
    with pytest.raises(ValueError):
        SlowlyVaryingFn("exp", (1.0,))


def test_err_constant_is_zero():
    assert slow_variation_err(SlowlyVaryingFn.constant(2.0), 1e5, 300.0) == 0.0


def test_err_log_power_example():
    x = math.exp(10.0)
    expected = math.log(1.01) / 10.0  # log(1.01 e^10)/10 - 1
    assert slow_variation_err(SlowlyVaryingFn.log_power(1.0), x, x / 100) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(9.95e-4, rel=1e-3)


def test_err_one_plus_power_example():
    L = SlowlyVaryingFn.one_plus_power(1.5, 1.0)
    expected = (1 + 101**-1.5) / (1 + 100**-1.5) - 1
    assert slow_variation_err(L, 100.0, 1.0) == pytest.approx(expected, rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(1e4, 1e9), frac=st.floats(-0.01, 0.01),
       L=st.sampled_from([SlowlyVaryingFn.log_power(1.5), SlowlyVaryingFn.log_power(-2.0),
                          SlowlyVaryingFn.one_plus_power(0.7, 3.0)]))
def test_err_matches_ratio(x, frac, L):
    y = frac * x
    err = slow_variation_err(L, x, y)
    assert abs(L(x + y) / L(x) - 1 - err) <= 1e-12 + 1e-9 * abs(err)
    assert abs(L(x + y) / L(x) - 1 - err) <= 0.5 * abs(err) + 1e-15


def test_json_round_trip():
    for m in GENERAL_MODELS + [TailModel.zeta(1.5)]:
        obj = json.loads(json.dumps(m.to_json()))
        assert set(obj) == {"kind", "alpha", "p", "q", "alpha_tilde", "L"}
        assert set(obj["L"]) == {"variant", "params"}
        back = TailModel.from_json(obj)
        assert back == m


def test_model_validation():
    with pytest.raises(ValueError):
        TailModel(alpha=0.0)
    with pytest.raises(ValueError):
        TailModel(alpha=1.5, p=0.5, q=0.5 + 1e-9)
    with pytest.raises(ValueError):
        TailModel(alpha=1.5, alpha_tilde=1.0)


# point masses and normalisation


def test_zeta2_mass_at_one():
    pmf = materialize_pmf(TailModel.zeta(2.0), 10**6)
    expected = 1.0 / (2.0 * float(mp.zeta(3)))
    assert pmf.prob(1) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.415954, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.7, 1.5, 3.0])
def test_zeta_symmetric_and_zero_at_origin(alpha):
    pmf = materialize_pmf(TailModel.zeta(alpha), 500)
    k = np.arange(1, 501)
    np.testing.assert_array_equal(pmf.prob(k), pmf.prob(-k))
    assert pmf.prob(0) == 0.0
    Z = 2 * float(mp.zeta(1 + alpha))
    np.testing.assert_allclose(pmf.prob(k[:20]), k[:20] ** -(1 + alpha) / Z, rtol=1e-12)


def test_zeta15_normalisation():
    pmf = materialize_pmf(TailModel.zeta(1.5), 10**4)
    assert abs(pmf.total_mass() - 1.0) <= 1e-12


@pytest.mark.parametrize("model", GENERAL_MODELS)
def test_general_normalisation(model):
    pmf = materialize_pmf(model, 2**12)
    assert abs(pmf.total_mass() - 1.0) <= 1e-12


def test_general_pmf_against_formula():
    m = GENERAL_MODELS[0]
    Z = m.p * m.alpha * float(mp.zeta(2.5)) + m.q * m.alpha * float(mp.zeta(3.5))
    assert m.pmf(7) == pytest.approx(m.p * m.alpha * 7**-2.5 / Z, rel=1e-12)
    assert m.pmf(-7) == pytest.approx(m.q * m.alpha * 7**-3.5 / Z, rel=1e-12)


@pytest.mark.parametrize("W", [100, 1000, 10**4])
def test_outside_mass_is_an_upper_bound(W):
    pmf = materialize_pmf(TailModel.zeta(1.5), W)
    exact = float(mp.zeta(2.5, W + 1) / mp.zeta(2.5))  # both sides together
    assert math.exp(pmf.out_mass_log) >= exact * (1 - 1e-14)
    assert math.exp(pmf.out_mass_log) <= exact * (1 + 1e-9)
    assert tail_mass_upper_bound(TailModel.zeta(1.5), W) >= exact


# survival


@pytest.mark.parametrize("alpha", [0.9, 1.5, 2.0])
def test_survival_at_zero_is_half(alpha):
    pmf = materialize_pmf(TailModel.zeta(alpha), 1000)
    assert math.exp(survival(pmf, 0)) == pytest.approx(0.5, rel=1e-12)
    assert TailModel.zeta(alpha).survival(0) == pytest.approx(0.5, rel=1e-12)


def test_survival_at_100():
    pmf = materialize_pmf(TailModel.zeta(1.5), 1000)
    expected = float(mp.zeta(2.5, 101) / (2 * mp.zeta(2.5)))
    assert math.exp(survival(pmf, 100)) == pytest.approx(expected, rel=1e-10)
    assert TailModel.zeta(1.5).survival(100) == pytest.approx(expected, rel=1e-10)


def test_survival_left_of_window():
    pmf = materialize_pmf(TailModel.zeta(1.5), 200)
    assert math.exp(survival(pmf, -201)) >= 1 - math.exp(pmf.out_mass_log)


def test_survival_beyond_window_uses_bucket():
    pmf = materialize_pmf(TailModel.zeta(1.5), 200)
    assert survival(pmf, 5000) == pmf.out_right_log


def test_tail_helpers_against_series():
    m = GENERAL_MODELS[0]
    Z = m.normalizer
    assert m.right_tail(50) == pytest.approx(m.p * m.alpha * float(mp.zeta(2.5, 50)) / Z, rel=1e-10)
    assert m.left_tail(50) == pytest.approx(m.q * m.alpha * float(mp.zeta(3.5, 50)) / Z, rel=1e-10)


def test_partial_series_against_mpmath():
    # the lattice version of log_power reads L(1) as L(2)
    L = SlowlyVaryingFn.log_power(1.0)
    for s, m in [(2.5, 10**3), (-0.5, 10**5), (1.5, 3 * 10**6)]:
        exact = math.log(2) + float(mp.nsum(lambda k: mp.log(k) * k**-s, [2, m])) if m <= 10**5 else None
        got = partial_series(L, s, m)
        if exact is not None:
            assert got == pytest.approx(exact, rel=1e-10)
        else:
            # tail of a convergent series
            inf = float(-mp.zeta(s, derivative=1)) + math.log(2)
            tail = float(mp.quad(lambda t: mp.log(t) * t**-s, [m + 0.5, mp.inf]))
            assert got == pytest.approx(inf - tail, rel=1e-8)


# moments


def test_symmetric_mean_is_zero():
    tm = truncated_moments(materialize_pmf(TailModel.zeta(1.5), 1000), 50)
    assert abs(tm.mean) < 1e-15


def test_truncated_variance_zeta3():
    tm = truncated_moments(materialize_pmf(TailModel.zeta(3.0), 1000), 10, alpha=3.0)
    Z = 2 * float(mp.zeta(4))
    expected = 2 * sum(k**2 * k**-4.0 for k in range(1, 11)) / Z
    assert tm.trunc_var == pytest.approx(expected, rel=1e-13)
    assert tm.sigma_2alpha == pytest.approx(2 * sum(k**3 * k**-4.0 for k in range(1, 11)) / Z, rel=1e-13)
    assert not tm.beyond_window


def test_truncated_moments_flag_beyond_window():
    tm = truncated_moments(materialize_pmf(TailModel.zeta(3.0), 100), 500)
    assert tm.beyond_window
    with pytest.raises(ValueError):
        truncated_moments(materialize_pmf(TailModel.zeta(3.0), 100), 0.5)


@settings(max_examples=30, deadline=None)
@given(a=st.integers(1, 400), b=st.integers(1, 400))
def test_truncated_variance_monotone(a, b):
    pmf = materialize_pmf(GENERAL_MODELS[0], 500)
    lo, hi = sorted((a, b))
    assert truncated_moments(pmf, lo).trunc_var <= truncated_moments(pmf, hi).trunc_var


def test_model_truncated_moment_fast_path_matches_loop():
    m = GENERAL_MODELS[2]
    x = 5 * 2**20
    k = np.arange(-x, x + 1)
    explicit = math.fsum(k.astype(float) ** 2 * m.pmf(k))
    assert m.truncated_moment(x, 2.0) == pytest.approx(explicit, rel=1e-9)


# Potter bounds


def test_potter_constant_l():
    L = SlowlyVaryingFn.constant(4.0)
    b = potter_ratio_bound(L, 50.0, 50.0, 0.1)
    assert b >= 1.0
    assert L(50.0) / L(50.0) == 1.0


def test_potter_log_power_example():
    L = SlowlyVaryingFn.log_power(1.0)
    assert potter_ratio_bound(L, 1e6, 1e3, 0.1) >= math.log(1e6) / math.log(1e3)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(2, 1e12), b=st.floats(2, 1e12), d=st.floats(0.05, 1.0))
def test_potter_symmetric(a, b, d):
    L = SlowlyVaryingFn.log_power(2.0)
    assert potter_ratio_bound(L, a, b, d) == pytest.approx(potter_ratio_bound(L, b, a, d), rel=1e-12)


@pytest.mark.parametrize("L", [SlowlyVaryingFn.log_power(3.0), SlowlyVaryingFn.log_power(-2.0),
                               SlowlyVaryingFn.one_plus_power(0.5, 5.0)])
def test_potter_dominates_on_grid(L):
    grid = np.geomspace(2, 1e12, 50)
    for a in grid:
        for b in grid:
            assert L(a) / L(b) <= potter_ratio_bound(L, a, b, 0.2) * (1 + 1e-12)


def test_potter_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        potter_ratio_bound(SlowlyVaryingFn.constant(), 10, 20, 0.0)
    with pytest.raises(ValueError):
        potter_constant(SlowlyVaryingFn.constant(), -1.0)


# CLT scales


@pytest.mark.parametrize("model", [TailModel.zeta(1.5), TailModel.zeta(0.7), GENERAL_MODELS[1]])
def test_scale_residual(model):
    for n in [10, 100, 10**4, 10**6]:
        a = scale_an(model, n)
        assert n * model.effective_L(a) * a**-model.alpha == pytest.approx(1.0, abs=1e-6)


def test_scale_zeta15_closed_form():
    alpha = 1.5
    L = 1.0 / (alpha * float(mp.zeta(2.5)))
    for n in [10, 1000]:
        assert scale_an(TailModel.zeta(alpha), n) == pytest.approx((n * L) ** (1 / alpha), rel=1e-8)


@pytest.mark.parametrize("alpha", [0.8, 1.5, 3.0])
def test_scale_growth_rate(alpha):
    ns = np.geomspace(1e3, 1e6, 7).astype(int)
    a = [scale_an(TailModel.zeta(alpha), int(n)) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(a), 1)[0]
    assert abs(slope - max(1 / alpha, 0.5)) <= 0.02


def test_scale_doubling():
    m = TailModel.zeta(1.2)
    assert scale_an(m, 2000) / scale_an(m, 1000) == pytest.approx(2 ** (1 / 1.2), rel=1e-8)


def test_scale_strictly_increasing():
    for m in (TailModel.zeta(1.5), TailModel.zeta(2.0), TailModel.zeta(3.0)):
        a = [scale_an(m, n) for n in (5, 10, 50, 100, 1000)]
        assert all(x < y for x, y in zip(a, a[1:]))


def test_scale_gaussian_residual():
    m = TailModel.zeta(3.0)
    n = 500
    a = scale_an(m, n)
    assert n * m.truncated_moment(a, 2.0) / a**2 == pytest.approx(1.0, rel=1e-6)


def test_scale_rejects_small_n():
    with pytest.raises(ValueError):
        scale_an(TailModel.zeta(1.5), 1)
    # root below a = 1: outside the monotone regime
    with pytest.raises(ValueError, match="bracket"):
        scale_an(TailModel.zeta(1.5), 2)


def test_centering():
    assert scale_bn(TailModel(alpha=0.5, p=0.8, q=0.2), 100) == 0.0
    assert scale_bn(TailModel.zeta(1.5), 100) == 0.0
    assert scale_bn(TailModel.zeta(1.0), 100) == pytest.approx(0.0, abs=1e-12)
    m = GENERAL_MODELS[0]
    Z = m.p * m.alpha * float(mp.zeta(2.5)) + m.q * m.alpha * float(mp.zeta(3.5))
    mean = (m.p * m.alpha * float(mp.zeta(1.5)) - m.q * m.alpha * float(mp.zeta(2.5))) / Z
    assert scale_bn(m, 40) == pytest.approx(40 * mean, rel=1e-9)
