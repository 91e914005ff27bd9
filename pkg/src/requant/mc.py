"""Monte Carlo estimation of the joint level distribution.

Each trial draws an i.i.d. unit Gaussian window (the flat-spectrum process
sampled at the Nyquist rate is white), forms x(lambda) and w(lambda) by
truncated sinc sums and counts the joint level pair.

Random streams: trial blocks of ``BLOCK_SIZE`` trials, block b drawing from
PCG64(SeedSequence(seed, spawn_key=(b,))).  Tallies depend only on
(seed, config), never on the number of worker threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .dist import BivariateDistribution
from .moments import MomentMatrix, build_context
from .scheme import QuantizationScheme, scale_factor_Af
from .specfun import sinc

BLOCK_SIZE = 1000
N_BATCHES = 100
GENERATOR_VERSION = "requant-mc/1 PCG64 SeedSequence(seed, spawn_key=(block,)) standard_normal block=1000"


def n_threads() -> int:
    """Worker count from REQUANT_THREADS (default 1)."""
    raw = os.environ.get("REQUANT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"REQUANT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Generator for trial block ``block``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(block),))))


def window_indices(G: int) -> np.ndarray:
    """Indices -(G/2-1)..G/2 of a G-sample window."""
    if G < 2 or G % 2:
        raise ValueError(f"window size must be an even integer >= 2, got {G}")
    return np.arange(-(G // 2 - 1), G // 2 + 1)


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo settings; ``A_f`` defaults to <x f>/<f^2>."""

    scheme: QuantizationScheme
    lam: float
    trials: int = 100_000
    recon_terms_x: int = 200
    recon_terms_w: int = 200
    seed: int = 0
    sigma: float = 1.0
    A_f: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        for g in (self.recon_terms_x, self.recon_terms_w):
            if g < 2 or g % 2:
                raise ValueError("reconstruction terms must be even and >= 2")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def gain(self) -> float:
        return scale_factor_Af(self.scheme, self.sigma) if self.A_f is None else float(self.A_f)

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.to_dict(), "lambda": self.lam, "trials": self.trials,
                "recon_terms_x": self.recon_terms_x, "recon_terms_w": self.recon_terms_w,
                "seed": int(self.seed), "sigma": self.sigma, "A_f": self.gain(),
                "block_size": BLOCK_SIZE, "generator": GENERATOR_VERSION}


@dataclass(frozen=True, eq=False)
class SimulationReport:
    empirical_p: BivariateDistribution
    empirical_mu: MomentMatrix
    empirical_rho: float
    rho_stderr: float
    trials_used: int
    counts: np.ndarray = field(repr=False)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "trials_used": self.trials_used,
                "empirical_rho": self.empirical_rho, "rho_stderr": self.rho_stderr,
                "levels": self.empirical_p.indices.tolist(),
                "counts": self.counts.tolist(), "p": self.empirical_p.p.tolist(),
                "mu": self.empirical_mu.mu.tolist(),
                "mu20": self.empirical_mu.var_target, "mu02": self.empirical_mu.var_estimate}


def reconstruct_x(samples, lam: float, indices=None) -> float:
    """sum_k x_k sinc(lam - k) over the window (default -(G/2-1)..G/2)."""
    x = np.asarray(samples, dtype=np.float64)
    k = window_indices(x.shape[-1]) if indices is None else np.asarray(indices)
    return x @ sinc(lam - k)


def reconstruct_w(quantized, lam: float, A_f: float, indices=None) -> float:
    """A_f sum_k f(x_k) sinc(lam - k) over the window."""
    return A_f * reconstruct_x(quantized, lam, indices)


def simulate_codes(config: SimulationConfig, extra_w_terms=()):
    """Signed level codes (ix, iw) per trial, in trial order.

    ``extra_w_terms`` requests additional estimate paths on the same
    samples with other window sizes; their codes are returned after iw.
    """
    s = config.scheme
    gx, gw = config.recon_terms_x, config.recon_terms_w
    gws = (gw,) + tuple(extra_w_terms)
    W = max((gx,) + gws)
    k = window_indices(W)
    phi = sinc(config.lam - k)
    phix = np.ascontiguousarray(np.where(np.isin(k, window_indices(gx)), phi, 0.0))
    phiws = [np.ascontiguousarray(np.where(np.isin(k, window_indices(g)), phi, 0.0)) for g in gws]
    thr = np.ascontiguousarray(s.thresholds, dtype=np.float64)
    lev = np.ascontiguousarray(s.y)
    af = config.gain()
    kern = _backend.kernels.quantize_codes
    nblocks = -(-config.trials // BLOCK_SIZE)

    def run(b):
        n = min(BLOCK_SIZE, config.trials - b * BLOCK_SIZE)
        X = block_rng(config.seed, b).standard_normal((n, W))
        if config.sigma != 1.0:
            X *= config.sigma
        codes = []
        for i, pw in enumerate(phiws):
            ix, iw = kern(X, phix, pw, thr, lev, af)
            if i == 0:
                codes.append(ix)
            codes.append(iw)
        return codes

    nt = n_threads()
    if nt > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            parts = list(ex.map(run, range(nblocks)))
    else:
        parts = [run(b) for b in range(nblocks)]
    return [np.concatenate([p[i] for p in parts]) for i in range(len(parts[0]))]


def tally(ix, iw, M: int) -> np.ndarray:
    """2M x 2M integer counts in signed-level order."""
    pos = lambda c: np.where(c < 0, c + M, c + M - 1).astype(np.int64)
    flat = pos(ix) * (2 * M) + pos(iw)
    return np.bincount(flat, minlength=4 * M * M).reshape(2 * M, 2 * M)


def _moments_from_counts(counts, scheme, size):
    lv = scheme.signed_levels
    p = counts / counts.sum()
    mu = np.zeros((size, size))
    for n in range(size):
        for m in range(size):
            mu[n, m] = (lv ** n) @ p @ (lv ** m)
    mu20 = (lv ** 2) @ p.sum(axis=1)
    mu02 = (lv ** 2) @ p.sum(axis=0)
    return mu, float(mu20), float(mu02)


def rho_from_counts(counts, scheme) -> float:
    _, m20, m02 = _moments_from_counts(counts, scheme, 2)
    lv = scheme.signed_levels
    p = counts / counts.sum()
    return float(lv @ p @ lv / np.sqrt(m20 * m02))


def batch_stderr(ix, iw, scheme, n_batches: int = N_BATCHES) -> float:
    """Standard error of rho from batch means over contiguous trial batches."""
    n = len(ix)
    if n < 2 * n_batches:
        return float("nan")
    edges = np.linspace(0, n, n_batches + 1).astype(np.int64)
    r = np.array([rho_from_counts(tally(ix[a:b], iw[a:b], scheme.M), scheme)
                  for a, b in zip(edges[:-1], edges[1:])])
    return float(np.std(r, ddof=1) / np.sqrt(n_batches))


def report_from_codes(ix, iw, config: SimulationConfig) -> SimulationReport:
    s = config.scheme
    counts = tally(ix, iw, s.M)
    mu, m20, m02 = _moments_from_counts(counts, s, 2 * s.M)
    P = BivariateDistribution(M=s.M, p=counts / counts.sum())
    rho = float(mu[1, 1] / np.sqrt(m20 * m02))
    return SimulationReport(
        empirical_p=P, empirical_mu=MomentMatrix(M=s.M, mu=mu, var_target=m20, var_estimate=m02),
        empirical_rho=rho, rho_stderr=batch_stderr(ix, iw, s), trials_used=int(len(ix)),
        counts=counts, config=config.to_dict())


def simulate_joint(config: SimulationConfig) -> SimulationReport:
    """Run the Monte Carlo experiment and tally the joint level pairs."""
    ix, iw = simulate_codes(config)
    return report_from_codes(ix, iw, config)


NEAR_PATTERN_BUDGET = 4096


def window_near_halfwidth(scheme: QuantizationScheme, G: int, budget: int = NEAR_PATTERN_BUDGET) -> int:
    """Largest near-set half-size h <= G/2 with (2M)**(2h) level patterns within budget."""
    h = 1
    while h < G // 2 and (2 * scheme.M) ** (2 * (h + 1)) <= budget:
        h += 1
    return h


def finite_window_rho(scheme: QuantizationScheme, lam: float, window_sizes, theory: bool,
                      trials: int = 100_000, seed: int = 0, x_terms: int = 500,
                      h: int | None = None):
    """rho versus the estimate-path window size G.

    The empirical branch keeps the target path at ``x_terms`` samples and
    evaluates every G on the same trials; the theory branch replaces the
    estimate tail variance by its finite-window value.

    With ``h=None`` the theory near set grows with the window (see
    ``window_near_halfwidth``): a tail of only a few quantized terms is far
    from Gaussian, and treating it as one overstates rho by about 0.014 at
    G=4 for M=1.
    """
    sizes = [int(g) for g in window_sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("window sizes must be ascending")
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    if theory:
        from .dist import rho_context
        return [(g, rho_context(build_context(scheme, lam, window=g,
                                              h=window_near_halfwidth(scheme, g) if h is None else h)))
                for g in sizes]
    cfg = SimulationConfig(scheme=scheme, lam=lam, trials=trials, recon_terms_x=x_terms,
                           recon_terms_w=sizes[0], seed=seed)
    codes = simulate_codes(cfg, extra_w_terms=sizes[1:])
    ix = codes[0]
    return [(g, rho_from_counts(tally(ix, iw, scheme.M), scheme)) for g, iw in zip(sizes, codes[1:])]
