import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.special import erf

from oracles import gaussianized_model_samples, model_prob_abs_w_below
from requant.errors import DegenerateContextError
from requant.moments import (MomentMatrix, build_context, clear_cache, integral_e1, integral_e2,
                             integral_e3, integral_o, mixed_moment, moment_matrix)
from requant.scheme import gaussian_moment_fn, max_scheme
from requant.specfun import QuadratureSpec

LAMS = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5]


def test_context_on_grid():
    for M in range(1, 5):
        ctx = build_context(max_scheme(M), 0.0)
        np.testing.assert_array_equal(ctx.phi, [1.0, 0.0])
        assert ctx.P_I == 0.0 and ctx.Q_I_sq == 0.0 and ctx.alpha == 0.0
        assert ctx.degenerate
        np.testing.assert_array_equal(ctx.near_set, [0, 1])


def test_context_half():
    ctx = build_context(max_scheme(2), 0.5)
    np.testing.assert_allclose(ctx.phi, [2 / np.pi, 2 / np.pi], rtol=1e-15)
    assert ctx.P_I == pytest.approx(1 - 8 / np.pi ** 2, abs=1e-15)
    assert ctx.P_I == pytest.approx(0.18943, abs=1e-5)
    s = max_scheme(2)
    f2 = gaussian_moment_fn(s, 2)
    assert ctx.Q_I_sq == pytest.approx(ctx.A_f ** 2 * f2 * ctx.P_I, rel=1e-14)
    assert ctx.alpha == pytest.approx(math.sqrt(ctx.Q_I_sq), rel=1e-15)
    np.testing.assert_allclose(ctx.a_hat, s.a[:-1] / math.sqrt(2), rtol=1e-15)
    np.testing.assert_allclose(ctx.a_hat_prime, ctx.a_hat / ctx.alpha, rtol=1e-15)
    np.testing.assert_allclose(ctx.beta, s.y * math.sqrt(2) * ctx.A_f / ctx.alpha, rtol=1e-15)
    assert 0 < ctx.decay < 1


def test_context_sigma_scaling():
    c1 = build_context(max_scheme(3), 0.3)
    c2 = build_context(max_scheme(3), 0.3, sigma=2.0)
    assert c2.P_I == pytest.approx(4 * c1.P_I, rel=1e-14)


def test_P_I_shrinks_with_h():
    P = [build_context(max_scheme(1), 0.5, h=h).P_I for h in (1, 2, 4, 8, 32)]
    assert np.all(np.diff(P) < 0)
    assert P[-1] < 0.01


def test_context_errors():
    s = max_scheme(2)
    for lam in (-0.1, 1.1, float("nan")):
        with pytest.raises(ValueError):
            build_context(s, lam)
    with pytest.raises(ValueError):
        build_context(s, 0.3, h=0)
    with pytest.raises(ValueError):
        build_context(s, 0.3, h=2, window=2)
    with pytest.raises(ValueError):
        build_context(s, 0.3, window=3)


def test_finite_window_tail():
    s = max_scheme(1)
    ctx = build_context(s, 0.5, window=8)
    G = np.arange(-3, 5)
    tail = np.sum(np.sinc(0.5 - G) ** 2) - 8 / np.pi ** 2
    assert ctx.Q_I_sq == pytest.approx(ctx.A_f ** 2 * gaussian_moment_fn(s, 2) * tail, rel=1e-13)
    assert build_context(s, 0.5, window=2).Q_I_sq == 0.0
    assert build_context(s, 0.5, window=8).Q_I_sq < build_context(s, 0.5).Q_I_sq


@pytest.mark.parametrize("M, lam", [(2, 0.2), (4, 0.5), (3, 0.05)])
def test_e1_is_erf(M, lam):
    ctx = build_context(max_scheme(M), lam)
    for b in list(ctx.a_hat[1:]) + [0.3, 2.0]:
        assert abs(integral_e1(ctx, b) - erf(b)) < 1e-9
    assert abs(integral_e1(ctx, 50.0) - 1.0) < 1e-6


def test_e1_truncation_independent():
    ctx = build_context(max_scheme(2), 0.3)
    b = ctx.a_hat[1]
    assert abs(integral_e1(ctx, b, QuadratureSpec(truncation_halfwidth=12.0)) - integral_e1(ctx, b)) < 1e-8
    bp = ctx.a_hat_prime[1]
    v8 = integral_e3(ctx, b, bp)
    v12 = integral_e3(ctx, b, bp, QuadratureSpec(truncation_halfwidth=12.0))
    assert abs(v8 - v12) < 1e-9


@pytest.mark.parametrize("M, lam, h, window", [(2, 0.3, 1, None), (4, 0.5, 1, None),
                                                 (3, 0.15, 2, None), (4, 0.4, 1, 16)])
def test_e2_exact_model_oracle(M, lam, h, window):
    s = max_scheme(M)
    ctx = build_context(s, lam, h=h, window=window)
    for j in range(1, M):
        want = model_prob_abs_w_below(s.a, s.y, lam, s.a[j], h, window)
        assert abs(integral_e2(ctx, ctx.a_hat_prime[j]) - want) < 1e-12


def test_e2_sign_invariance():
    # the s-sum is symmetric: flipping phi flips every Gamma and leaves the value unchanged
    s = max_scheme(3)
    c1 = build_context(s, 0.3)
    c2 = build_context(s, 0.7)
    for j in range(1, 3):
        assert integral_e2(c1, c1.a_hat_prime[j]) == pytest.approx(integral_e2(c2, c2.a_hat_prime[j]), abs=1e-14)


@pytest.mark.parametrize("M, lam", [(2, 0.3), (4, 0.45)])
def test_e3_limits(M, lam):
    ctx = build_context(max_scheme(M), lam)
    b, bp = ctx.a_hat[1], ctx.a_hat_prime[M - 1]
    assert abs(integral_e3(ctx, 50.0, bp) - integral_e2(ctx, bp)) < 1e-5
    assert abs(integral_e3(ctx, b, 50.0) - integral_e1(ctx, b)) < 1e-5


@pytest.mark.parametrize("M, lam, h, window", [(1, 0.5, 1, None), (2, 0.2, 2, None),
                                                 (3, 0.45, 1, 8), (4, 0.3, 1, None)])
def test_integrals_vs_model_sampling(M, lam, h, window):
    s = max_scheme(M)
    ctx = build_context(s, lam, h=h, window=window)
    n = 2_000_000
    x, w = gaussianized_model_samples(s.a, s.y, lam, n, seed=11, h=h, window=window)
    sgn = np.sign(x) * np.sign(w)
    ax, aw = np.abs(x), np.abs(w)
    a = s.a

    def check(theory, ev):
        se = ev.std() / math.sqrt(n)
        assert abs(theory - ev.mean()) < 4.5 * se + 1e-12, (theory, ev.mean(), se)

    for i in range(M):
        for j in range(M):
            check(integral_o(ctx, ctx.a_hat[i], ctx.a_hat_prime[j]), sgn * (ax >= a[i]) * (aw >= a[j]))
    for i in range(1, M):
        for j in range(1, M):
            check(integral_e3(ctx, ctx.a_hat[i], ctx.a_hat_prime[j]), ((ax < a[i]) & (aw < a[j])) * 1.0)


def test_o_zero_args_M1_is_rho_like():
    s = max_scheme(1)
    ctx = build_context(s, 0.5)
    assert mixed_moment(ctx, 1, 1) == pytest.approx(s.y[0] ** 2 * integral_o(ctx, 0.0, 0.0), rel=1e-14)


def test_integrals_reject_degenerate():
    ctx = build_context(max_scheme(2), 0.0)
    with pytest.raises(DegenerateContextError):
        integral_e1(ctx, 0.5)
    with pytest.raises(DegenerateContextError):
        integral_o(ctx, 0.0, 0.0)
    ctx2 = build_context(max_scheme(2), 0.3, window=2)
    with pytest.raises(DegenerateContextError):
        integral_e2(ctx2, 0.5)
    with pytest.raises(ValueError):
        integral_e1(build_context(max_scheme(2), 0.3), -1.0)


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_structure(M):
    s = max_scheme(M)
    for lam in (0.05, 0.25, 0.5):
        mm = moment_matrix(build_context(s, lam))
        mu = mm.mu
        assert mu.shape == (2 * M, 2 * M)
        assert abs(mu[0, 0] - 1) < 1e-6
        n, m = np.indices(mu.shape)
        assert np.all(mu[(n + m) % 2 == 1] == 0.0)
        for k in range(0, 2 * M, 2):
            assert abs(mu[k, 0] - gaussian_moment_fn(s, k)) < 5e-3
        assert mm.var_target == pytest.approx(gaussian_moment_fn(s, 2), abs=5e-3)


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_normalization_over_grid(M):
    s = max_scheme(M)
    for lam in LAMS:
        assert abs(mixed_moment(build_context(s, lam), 0, 0) - 1) < 1e-6


def test_mu20_lambda_independent_M1():
    s = max_scheme(1)
    for lam in (0.0, 0.1, 0.5, 0.9):
        assert mixed_moment(build_context(s, lam), 2, 0) == pytest.approx(0.636804, abs=1e-9)


def test_lambda_symmetry():
    for M in (1, 3, 4):
        for lam in (0.1, 0.3):
            a = mixed_moment(build_context(max_scheme(M), lam), 1, 1)
            b = mixed_moment(build_context(max_scheme(M), 1 - lam), 1, 1)
            assert abs(a - b) < 1e-6


def test_degenerate_branch_exact():
    s = max_scheme(4)
    mm = moment_matrix(build_context(s, 0.0))
    for n in range(8):
        for m in range(8):
            want = gaussian_moment_fn(s, n + m) if (n + m) % 2 == 0 else 0.0
            assert mm.mu[n, m] == pytest.approx(want, rel=1e-14, abs=1e-15)
    np.testing.assert_array_equal(moment_matrix(build_context(s, 1.0)).mu, mm.mu)


def test_cache_soundness_bitwise():
    s = max_scheme(3)
    ctx = build_context(s, 0.35)
    clear_cache()
    full = moment_matrix(ctx).mu
    clear_cache()
    elem = np.array([[mixed_moment(ctx, n, m) for m in range(6)] for n in range(6)])
    np.testing.assert_array_equal(full, elem)
    # standalone integral calls give the family values bit for bit
    clear_cache()
    direct = integral_e3(ctx, ctx.a_hat[1], ctx.a_hat_prime[2])
    moment_matrix(ctx)
    assert integral_e3(ctx, ctx.a_hat[1], ctx.a_hat_prime[2]) == direct


def test_thread_determinism():
    s = max_scheme(4)
    lams = [0.1, 0.3, 0.45]
    clear_cache()
    serial = [moment_matrix(build_context(s, lam)).mu for lam in lams]
    clear_cache()
    with ThreadPoolExecutor(max_workers=8) as ex:
        par = list(ex.map(lambda lam: moment_matrix(build_context(s, lam)).mu, lams * 3))
    for i, mu in enumerate(par):
        np.testing.assert_array_equal(mu, serial[i % 3])


def test_moment_matrix_M1_and_size():
    mm = moment_matrix(build_context(max_scheme(1), 0.5))
    assert isinstance(mm, MomentMatrix)
    assert mm.mu.shape == (2, 2)
    assert mm.mu[0, 1] == 0 and mm.mu[1, 0] == 0 and mm.mu[0, 0] == pytest.approx(1, abs=1e-12)
    big = moment_matrix(build_context(max_scheme(1), 0.5), size=3)
    assert big.mu[2, 0] == pytest.approx(0.636804, abs=1e-9)
    np.testing.assert_array_equal(big.mu[:2, :2], mm.mu)


def test_parity_h2():
    mu = moment_matrix(build_context(max_scheme(2), 0.3, h=2)).mu
    n, m = np.indices(mu.shape)
    assert np.all(mu[(n + m) % 2 == 1] == 0.0)
    assert abs(mu[0, 0] - 1) < 1e-6
