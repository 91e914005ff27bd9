import math

import numpy as np
import pytest

from requant import _fallback
from requant.dist import rho_context
from requant.mc import (BLOCK_SIZE, SimulationConfig, batch_stderr, block_rng, finite_window_rho,
                        window_near_halfwidth,
                        reconstruct_w, reconstruct_x, simulate_codes, simulate_joint, tally,
                        window_indices)
from requant.moments import build_context, mixed_moment
from requant.scheme import max_scheme, quantize, scale_factor_Af

try:
    from requant import _kernels
except ImportError:
    _kernels = None


def test_window_indices():
    np.testing.assert_array_equal(window_indices(2), [0, 1])
    np.testing.assert_array_equal(window_indices(6), [-2, -1, 0, 1, 2, 3])
    for bad in (0, 1, 3):
        with pytest.raises(ValueError):
            window_indices(bad)


def test_reconstruct_x_grid_points():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(200)
    k = window_indices(200)
    assert reconstruct_x(x, 0.0) == x[k == 0][0]
    assert reconstruct_x(x, 1.0) == x[k == 1][0]


def test_reconstruct_constant_sequence():
    k = np.arange(-100, 101)
    c = 1.7
    assert abs(reconstruct_x(np.full(k.size, c), 0.5, indices=k) - c) < 3e-3
    s = max_scheme(1)
    af = scale_factor_Af(s)
    assert abs(reconstruct_w(np.full(k.size, s.y[0]), 0.5, af, indices=k) - af * s.y[0]) < 3e-3


def test_reconstruct_w_properties():
    rng = np.random.default_rng(1)
    s = max_scheme(3)
    q = quantize(s, rng.standard_normal(200))
    af = scale_factor_Af(s)
    k = window_indices(200)
    assert reconstruct_w(q, 0.0, af) == af * q[k == 0][0]
    assert reconstruct_w(-q, 0.37, af) == -reconstruct_w(q, 0.37, af)


def test_config_validation():
    s = max_scheme(2)
    for kw in ({"lam": 1.5}, {"trials": 0}, {"recon_terms_x": 3}, {"recon_terms_w": 0},
               {"seed": -1}, {"sigma": 0.0}):
        args = dict(scheme=s, lam=0.3)
        args.update(kw)
        with pytest.raises(ValueError):
            SimulationConfig(**args)
    cfg = SimulationConfig(scheme=s, lam=0.3)
    assert cfg.trials == 100_000 and cfg.recon_terms_x == 200 and cfg.recon_terms_w == 200
    assert cfg.gain() == pytest.approx(scale_factor_Af(s))
    assert SimulationConfig(scheme=s, lam=0.3, A_f=1.0).gain() == 1.0


def test_grid_point_no_degradation():
    rep = simulate_joint(SimulationConfig(max_scheme(4), 0.0, trials=5000, seed=2))
    off = rep.counts - np.diag(np.diag(rep.counts))
    assert off.sum() == 0
    assert rep.empirical_rho == 1.0


def test_counts_and_mass():
    cfg = SimulationConfig(max_scheme(3), 0.3, trials=12_345, seed=9)
    rep = simulate_joint(cfg)
    assert rep.counts.sum() == 12_345 == rep.trials_used
    assert rep.counts.dtype.kind == "i"
    np.testing.assert_array_equal(rep.empirical_p.p, rep.counts / 12_345)
    assert rep.empirical_p.p.sum() == pytest.approx(1.0, abs=1e-15)
    d = rep.to_dict()
    assert d["config"]["seed"] == 9 and d["trials_used"] == 12_345


def test_sign_flip_symmetry():
    n = 100_000
    rep = simulate_joint(SimulationConfig(max_scheme(4), 0.35, trials=n, seed=4))
    p = rep.empirical_p.p
    se = np.sqrt(np.maximum(p, 1 / n) * (1 - p) / n)
    assert np.all(np.abs(p - p[::-1, ::-1]) <= 4 * np.sqrt(2) * se)


def test_matches_theory_M1_half():
    s = max_scheme(1)
    n = 100_000
    cfg = SimulationConfig(s, 0.5, trials=n, seed=21)
    ix, iw = simulate_codes(cfg)
    rep = simulate_joint(cfg)
    ctx = build_context(s, 0.5)
    rho = rho_context(ctx)
    assert abs(rep.empirical_rho - rho) <= max(0.01, 3 * rep.rho_stderr)
    prod = np.sign(ix) * np.sign(iw) * s.y[0] ** 2
    se = prod.std() / math.sqrt(n)
    assert abs(prod.mean() - mixed_moment(ctx, 1, 1)) < 3 * se
    assert rep.empirical_mu.mu[1, 1] == pytest.approx(prod.mean(), abs=1e-12)


def test_stderr_scale():
    s = max_scheme(2)
    cfg = SimulationConfig(s, 0.4, trials=100_000, seed=5)
    ix, iw = simulate_codes(cfg)
    se = batch_stderr(ix, iw, s)
    assert 5e-4 < se < 5e-3
    assert math.isnan(batch_stderr(ix[:50], iw[:50], s))


def test_determinism_and_threads(monkeypatch):
    cfg = SimulationConfig(max_scheme(4), 0.25, trials=7 * BLOCK_SIZE + 123, seed=77)
    monkeypatch.setenv("REQUANT_THREADS", "1")
    a = simulate_joint(cfg)
    b = simulate_joint(cfg)
    monkeypatch.setenv("REQUANT_THREADS", "8")
    c = simulate_joint(cfg)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.counts, c.counts)
    assert a.empirical_rho == c.empirical_rho and a.rho_stderr == c.rho_stderr
    d = simulate_joint(SimulationConfig(max_scheme(4), 0.25, trials=cfg.trials, seed=78))
    assert not np.array_equal(a.counts, d.counts)


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("REQUANT_THREADS", "many")
    with pytest.raises(ValueError):
        simulate_joint(SimulationConfig(max_scheme(1), 0.2, trials=10))


def test_block_rng_prefix_stable():
    # trials of a shorter run are a prefix of a longer run with the same seed
    s = max_scheme(2)
    short = simulate_codes(SimulationConfig(s, 0.3, trials=2500, seed=3))
    long = simulate_codes(SimulationConfig(s, 0.3, trials=4000, seed=3))
    np.testing.assert_array_equal(short[0], long[0][:2500])
    np.testing.assert_array_equal(short[1], long[1][:2500])
    x1 = block_rng(3, 1).standard_normal(5)
    x2 = block_rng(3, 1).standard_normal(5)
    np.testing.assert_array_equal(x1, x2)
    assert not np.array_equal(x1, block_rng(3, 2).standard_normal(5))


@pytest.mark.skipif(_kernels is None, reason="compiled extension not built")
def test_quantize_codes_backend_parity():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((3000, 200))
    k = window_indices(200)
    phi = np.sinc(0.3 - k)
    phiw = np.where(np.abs(k) < 40, phi, 0.0)
    s = max_scheme(4)
    thr = np.asarray(s.thresholds)
    a = _kernels.quantize_codes(X, phi, phiw, thr, s.y, 1.01)
    b = _fallback.quantize_codes(X, phi, phiw, thr, s.y, 1.01)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    # codes agree with quantizing the sinc sums directly
    np.testing.assert_array_equal(np.abs(a[0]), np.abs(tally_levels(X @ phi, s)))


def tally_levels(v, s):
    return np.searchsorted(np.asarray(s.thresholds), np.abs(v), side="right") + 1


def test_tally_layout():
    ix = np.array([-2, -1, 1, 2, 2], dtype=np.int8)
    iw = np.array([-2, 1, 1, -1, 2], dtype=np.int8)
    c = tally(ix, iw, 2)
    want = np.zeros((4, 4), dtype=int)
    for a, b in zip(ix, iw):
        want[a + 2 if a < 0 else a + 1, b + 2 if b < 0 else b + 1] += 1
    np.testing.assert_array_equal(c, want)


def test_finite_window_rho():
    s = max_scheme(1)
    sizes = [2, 4, 8, 16, 64, 200, 500]
    th = finite_window_rho(s, 0.5, sizes, theory=True)
    r = np.array([v for _, v in th])
    assert np.all(np.diff(r) > 0)
    assert abs(r[-1] - r[-2]) <= 1e-3
    mc = finite_window_rho(s, 0.5, [2, 4, 16], theory=False, trials=50_000, seed=1)
    thd = dict(th)
    for g, b in mc:
        assert abs(thd[g] - b) < 0.01, g
    with pytest.raises(ValueError):
        finite_window_rho(s, 0.5, [8, 4], theory=True)
    with pytest.raises(ValueError):
        finite_window_rho(s, 0.0, [4], theory=True)


@pytest.mark.parametrize("G", [4, 8])
def test_finite_window_theory_small_G_exact(G):
    # the near set covers the whole window, so no Gaussian tail is assumed
    from oracles import sign_window_rho
    th = dict(finite_window_rho(max_scheme(1), 0.5, [G], theory=True))[G]
    assert abs(th - sign_window_rho(G, 0.5)) < 2e-3
    assert window_near_halfwidth(max_scheme(1), G) == G // 2
