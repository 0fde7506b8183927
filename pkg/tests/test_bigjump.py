import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigjumplab.bigjump import (
    BIG_JUMP,
    GAUSSIAN,
    RegimeError,
    beta_cap,
    beta_exponent,
    bigjump_local,
    bigjump_tail,
    choose_beta,
    epsilon_sequences,
    error_bound_A,
    error_budget,
    fit_fuk_nagaev_constants,
    fuk_nagaev_bound,
    fuk_nagaev_exact,
    local_ratio,
    regime_check,
    tail_ratio,
)
from bigjumplab.conv import sum_pmf_recentered
from bigjumplab.tailmodel import SlowlyVaryingFn, TailModel, scale_an

Z25 = float(mp.zeta(2.5))


def a_n_zeta15(n):
    # L_eff = 1 / (alpha zeta(1 + alpha)) is constant for the zeta law
    return (n / (1.5 * Z25)) ** (1 / 1.5)


# single-big-jump approximations


def test_local_approximation_value(zeta15):
    assert bigjump_local(zeta15, 100, 5000) == pytest.approx(math.log(100 * 5000**-2.5 / (2 * Z25)), rel=1e-13)


def test_local_single_summand(zeta15):
    assert bigjump_local(zeta15, 1, -17) == pytest.approx(math.log(17**-2.5 / (2 * Z25)), rel=1e-13)
    with pytest.raises(ValueError):
        bigjump_local(zeta15, 3, 0)


def test_tail_approximation(zeta15):
    assert bigjump_tail(zeta15, 1, 40) == pytest.approx(math.log(zeta15.survival(39)), rel=1e-13)
    expected = math.log(64 * float(mp.zeta(2.5, 3200)) / (2 * Z25))
    assert bigjump_tail(zeta15, 64, 3200) == pytest.approx(expected, rel=1e-12)


def test_local_ratio_shrinks_with_x(zeta15):
    errs = [local_ratio(zeta15, 4, x, method="direct").error for x in (100, 400, 1600, 6400)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_local_ratio_matches_convolution(zeta15):
    r = local_ratio(zeta15, 8, 400)
    p = sum_pmf_recentered(zeta15, 8, 1600).prob(400)
    assert math.exp(r.exact_log) == pytest.approx(p, rel=1e-9)
    assert r.error == pytest.approx(abs(p / (8 * zeta15.pmf(400)) - 1), rel=1e-6)


def test_tail_ratio_near_one_in_big_jump_regime(zeta15):
    r = [tail_ratio(zeta15, 16, x).error for x in (800, 3200, 12800)]
    assert all(a > b for a, b in zip(r, r[1:]))
    assert r[-1] < 1e-3


# exponents


def test_beta_exponent_values():
    assert beta_exponent(1.5) == pytest.approx(1 / 5)
    assert beta_exponent(2.0) == pytest.approx(1 / 3)
    assert beta_exponent(3.0) == pytest.approx(3 / 8)
    with pytest.raises(ValueError):
        beta_exponent(1.0)


def test_choose_beta_zero_near_gaussian_scale():
    n = 1000
    x = 1.01 * math.sqrt(n * math.log(n))
    assert choose_beta(3.0, n, x) == 0.0


@settings(max_examples=80, deadline=None)
@given(alpha=st.floats(2.01, 8.0), n=st.integers(2, 10**8), logx=st.floats(0.0, 40.0))
def test_choose_beta_capped(alpha, n, logx):
    b = choose_beta(alpha, n, math.exp(logx))
    assert 0.0 <= b <= (alpha - 2) * (alpha + 1) / (2 * (2 * alpha + 1)) + 1e-15


def test_choose_beta_closed_form():
    alpha, n = 4.0, 10**4
    x = float(n) ** 2
    # n^-b (x/sqrt(n log n))^(1 - a1) >= n^0.01 solved for b
    free = (1 - 0.8) * math.log(x / math.sqrt(n * math.log(n))) / math.log(n) - 0.01
    assert choose_beta(alpha, n, x) == pytest.approx(min(free, beta_cap(alpha)), rel=1e-12)
    assert beta_cap(alpha) == pytest.approx(2 * 5 / (2 * 9))


# error bound


def test_leading_term_order(zeta15):
    ns = np.array([2**k for k in range(3, 12)])
    lead = [error_bound_A(zeta15, int(n), 50 * int(n)).leading_term for n in ns]
    slope = np.polyfit(np.log(ns), np.log(lead), 1)[0]
    # (a_n / x)^(alpha_1 - eps) with a_n / x ~ n^(-1/3): slope -1/5 + eps/3
    assert slope == pytest.approx(-(0.6 - 0.05) / 3, abs=1e-6)
    assert -0.2 <= slope <= -0.2 + 0.05


def test_leading_term_formula_lt2(zeta15):
    n, x = 100, 5000
    rep = error_bound_A(zeta15, n, x)
    assert rep.alpha_case == "LT2" and rep.alpha1 == pytest.approx(0.6)
    assert rep.leading_term == pytest.approx((a_n_zeta15(n) / x) ** 0.55, rel=1e-8)
    assert rep.err_term == 0.0
    assert rep.total == rep.leading_term + rep.err_term


def test_err_term_for_log_l():
    m = TailModel(alpha=1.5, L=SlowlyVaryingFn.log_power(2.0))
    rep = error_bound_A(m, 64, 3200)
    seq = epsilon_sequences(m, 64, 3200)
    expected = (math.log(3200 + seq.eps_n * 3200) / math.log(3200)) ** 2 - 1
    assert rep.err_term == pytest.approx(expected, rel=1e-10)
    assert rep.total == pytest.approx(rep.leading_term + rep.err_term)
    assert rep.err_term_literal != rep.err_term


def test_leading_term_gt2_beta_zero():
    m = TailModel.zeta(3.0)
    n = 1000
    rep = error_bound_A(m, n, n, beta=0.0)
    s = math.sqrt(n * math.log(n))
    assert rep.beta == 0.0 and rep.alpha_case == "GT2"
    assert rep.leading_term == pytest.approx(n**-0.5 * (s / n) ** (0.75 - 0.05), rel=1e-12)


def test_report_json_is_flat(zeta15):
    obj = error_bound_A(zeta15, 64, 3200).to_json()
    assert all(not isinstance(v, (dict, list)) for v in obj.values())
    assert {f"budget_{k}" for k in ("err", "eps_n", "local_mass", "fuk_nagaev", "cross")} <= set(obj)
    json.dumps(obj)


def test_bound_rejects_out_of_regime(zeta15):
    with pytest.raises(RegimeError):
        error_bound_A(zeta15, 100, 10)
    with pytest.raises(ValueError):
        error_bound_A(zeta15, 100, 5000, eps=0.7)


# sequences and budget


def test_eps_n_power(zeta15):
    n = 200
    a = scale_an(zeta15, n)
    for m in (5.0, 40.0, 300.0):
        assert epsilon_sequences(zeta15, n, m * a).eps_n == pytest.approx(m**-0.6, rel=1e-12)


def test_eps_displacement_diverges(zeta15):
    ns = [10**k for k in range(1, 7)]
    d = [epsilon_sequences(zeta15, n, 50 * n).eps_n * 50 * n / scale_an(zeta15, n) for n in ns]
    assert all(a < b for a, b in zip(d, d[1:]))
    assert d[-1] > 10


@settings(max_examples=50, deadline=None)
@given(n=st.integers(10, 10**6), c=st.floats(4.0, 1e4))
def test_eps_tilde_clipped(n, c):
    m = TailModel.zeta(1.5)
    seq = epsilon_sequences(m, n, c * scale_an(m, n))
    assert 0 < seq.eps_tilde_n <= 0.25


def test_budget_constant_l(zeta15):
    b = error_budget(zeta15, 64, 3200)
    assert b["err"] == 0.0
    assert b["local_mass"] == pytest.approx(64 * zeta15.effective_L(3200) * 3200**-2.5)


def test_budget_cross_over_eps_ratio(zeta15):
    # with constant L the cross term equals eps_n * eps_tilde^-(1 + alpha)
    for n in (16, 256, 4096):
        seq = epsilon_sequences(zeta15, n, 50 * n)
        b = error_budget(zeta15, n, 50 * n, seq=seq)
        assert b["cross"] / b["eps_n"] == pytest.approx(seq.eps_tilde_n**-2.5, rel=1e-6)


def test_budget_terms_vanish(zeta15):
    exps = [8, 12, 20, 40, 60, 80, 100]
    rows = [error_budget(zeta15, 10**e, 50 * 10**e) for e in exps]
    for key in ("eps_n", "local_mass", "cross"):
        vals = [r[key] for r in rows]
        assert all(a > b for a, b in zip(vals, vals[1:])), key
    assert all(v < 1e-10 for v in rows[-1].values())


# regimes


def test_regime_examples(zeta15):
    n = 500
    s = math.sqrt(n * math.log(n))
    m3 = TailModel.zeta(3.0)
    assert regime_check(m3, n, 10 * s).regime == BIG_JUMP
    assert regime_check(m3, n, 0.1 * s).regime == GAUSSIAN
    assert regime_check(zeta15, n, 100 * scale_an(zeta15, n)).regime == BIG_JUMP


def test_regime_alpha_two():
    m = TailModel.zeta(2.0)
    n = 1000
    rep = regime_check(m, n, 10**6)
    assert rep.regime == BIG_JUMP
    assert rep.q_value > 0


# Fuk-Nagaev


def test_fn_y_equals_x(zeta15):
    n, x = 100, 2000
    a = a_n_zeta15(n)
    L = 1 / (1.5 * Z25)
    expected = math.log(1 / a) + 0.5 * math.log(n * L * x**-1.5)
    assert fuk_nagaev_bound(zeta15, n, x, x) == pytest.approx(expected, rel=1e-9)


def test_fn_plug_in(zeta15):
    n, x, y = 100, 2000, 200
    L = 1 / (1.5 * Z25)
    r = x / y
    expected = math.log(1 / a_n_zeta15(n)) + 0.5 * r * math.log(n * L * y**-1.5 / r)
    assert fuk_nagaev_bound(zeta15, n, x, y) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("alpha", [0.7, 1.0, 1.5, 2.0, 3.0])
def test_fn_all_cases_finite(alpha):
    m = TailModel.zeta(alpha)
    n = 20
    x = int(20 * scale_an(m, n)) + 10
    assert math.isfinite(fuk_nagaev_bound(m, n, x, x // 4))


def test_fn_domain(zeta15):
    with pytest.raises(ValueError):
        fuk_nagaev_bound(zeta15, 100, 2000, 3000)
    with pytest.raises(ValueError):
        fuk_nagaev_bound(zeta15, 100, 2000, 0)
    with pytest.raises(RegimeError):
        fuk_nagaev_bound(zeta15, 100, 3, 2)


def test_fn_exact_matches_truncated_law(zeta15):
    from bigjumplab.conv import truncated_max_sum_pmf

    v = fuk_nagaev_exact(zeta15, 8, 400, 100)
    assert math.exp(v) == pytest.approx(truncated_max_sum_pmf(zeta15, 8, 100, 800).prob(400), rel=1e-12)


def _grid(model, ns):
    pts = []
    for n in ns:
        x = 50 * n
        for y in (x // 10, x // 4, x // 2):
            pts.append((n, x, y, fuk_nagaev_exact(model, n, x, y)))
    return pts


def test_fn_fit_dominates_calibration(zeta15):
    pts = _grid(zeta15, [8, 16])
    for mode in ("c3", "c1c3"):
        c = fit_fuk_nagaev_constants(zeta15, pts, free=mode)
        slack = [fuk_nagaev_bound(zeta15, n, x, y, constants=c) - ex for n, x, y, ex in pts]
        assert min(slack) >= -1e-9
        if mode == "c3":
            assert min(slack) == pytest.approx(0.0, abs=1e-9)


def test_fn_fit_skips_impossible_points(zeta15):
    # eight summands capped at x/10 cannot reach x
    pts = _grid(zeta15, [8])
    assert pts[0][3] == -math.inf
    c = fit_fuk_nagaev_constants(zeta15, pts, free="c3")
    assert math.isfinite(c["c3"])


def test_fn_fit_modes():
    with pytest.raises(ValueError):
        fit_fuk_nagaev_constants(TailModel.zeta(1.5), [])
    with pytest.raises(ValueError):
        fit_fuk_nagaev_constants(TailModel.zeta(1.5), [(8, 400, 40, -30.0)], free="c2")
