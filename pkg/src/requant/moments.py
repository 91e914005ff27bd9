"""Mixed moments of the target and the requantized estimate.

The near set N = {-h+1..h} of interpolation terms is treated exactly and
the remaining terms are replaced by a Gaussian variable.  Everything then
reduces to the integrals I^(e,1), I^(e,2), I^(e,3) and I^(o) over a
single variable xi, evaluated here with the Faddeeva function in scaled
form so that no intermediate overflows.
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from . import _backend
from .errors import DegenerateContextError
from .scheme import (QuantizationScheme, bin_masses, gaussian_moment_fn,
                     gaussian_moment_xf, quantize)
from .specfun import (DEFAULT_QUADRATURE, QuadratureSpec, adaptive_panels,
                      fsum_panels, sinc, window_halfwidth)

DEGENERATE_TOL = 1e-12
_SMALL_XI = 1e-8


@dataclass(frozen=True, eq=False)
class LambdaContext:
    """All lambda-dependent constants of the theory.

    Attributes
    ----------
    lam : float
        Interpolation instant in [0, 1], in units of the sampling period.
    scheme : QuantizationScheme
    sigma : float
        Standard deviation of the signal.
    h : int
        Half-size of the near set.
    near_set : ndarray of int
        Indices -h+1..h.
    phi : ndarray
        sinc(lam - k) over the near set.
    A_f : float
        Gain applied to the quantized samples.
    P_I, Q_I_sq : float
        Tail variances of the target and the estimate.
    alpha : float
        Q_I / sigma.
    beta : ndarray
        y_j sqrt(2) A_f / Q_I (inf when Q_I = 0).
    a_hat : ndarray
        a_j / (sigma sqrt 2) for j = 1..M.
    a_hat_prime : ndarray
        a_hat / alpha (inf when alpha = 0, except a_hat_1 = 0).
    window : tuple or None
        Finite window G used for the estimate path, if any.
    """

    lam: float
    scheme: QuantizationScheme
    sigma: float
    h: int
    near_set: np.ndarray
    phi: np.ndarray
    A_f: float
    f2: float
    P_I: float
    Q_I_sq: float
    alpha: float
    beta: np.ndarray
    a_hat: np.ndarray
    a_hat_prime: np.ndarray
    window: tuple | None = None
    key: tuple = field(default=(), repr=False)

    @property
    def lambda_(self) -> float:
        return self.lam

    @property
    def N(self) -> int:
        return 2 * self.h

    @property
    def degenerate(self) -> bool:
        """On the sampling grid: the near set carries the whole signal."""
        return float(np.sum(self.phi ** 2)) > 1.0 - DEGENERATE_TOL

    @property
    def decay(self) -> float:
        """Gaussian decay rate of the Appendix C integrands."""
        return max(1.0 - float(np.sum(self.phi ** 2)) - self.alpha ** 2, 0.0)


def _window_indices(window):
    if window is None:
        return None
    if np.isscalar(window):
        G = int(window)
        if G < 2 or G % 2:
            raise ValueError(f"window size must be an even integer >= 2, got {window}")
        return tuple(range(-(G // 2 - 1), G // 2 + 1))
    idx = tuple(sorted({int(k) for k in window}))
    return idx


def build_context(scheme: QuantizationScheme, lam: float, h: int = 1, window=None,
                  sigma: float = 1.0, A_f: float | None = None) -> LambdaContext:
    """Derived constants for interpolation instant ``lam``.

    Parameters
    ----------
    scheme : QuantizationScheme
    lam : float
        Instant in [0, 1].
    h : int
        Near-set half-size; the near set is -h+1..h.
    window : int or sequence of int, optional
        Finite index window G of the estimate path.  An int G means the
        indices -(G/2-1)..G/2.  The tail variance of the estimate becomes
        A_f^2 <f^2> (sum_G phi^2 - sum_N phi^2).
    sigma : float
        Signal standard deviation.
    A_f : float, optional
        Gain override; defaults to <x f>/<f^2>.
    """
    lam = float(lam)
    if not (0.0 <= lam <= 1.0) or math.isnan(lam):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if int(h) != h or h < 1:
        raise ValueError(f"h must be a positive integer, got {h}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    h = int(h)
    near = np.arange(-h + 1, h + 1)
    win = _window_indices(window)
    if win is not None and not set(near.tolist()) <= set(win):
        raise ValueError(f"near set {near.tolist()} is not contained in the window")

    phi = sinc(lam - near)
    sp2 = float(np.sum(phi ** 2))
    f2 = gaussian_moment_fn(scheme, 2, sigma)
    if A_f is None:
        A_f = gaussian_moment_xf(scheme, sigma) / f2
    A_f = float(A_f)
    P_I = sigma ** 2 * max(1.0 - sp2, 0.0)
    if win is None:
        tail = max(1.0 - sp2, 0.0)
    else:
        phig = sinc(lam - np.asarray(win))
        tail = max(float(np.sum(phig ** 2)) - sp2, 0.0)
    Q_I_sq = A_f ** 2 * f2 * tail
    Q_I = math.sqrt(Q_I_sq)
    alpha = Q_I / sigma
    a_hat = scheme.a[:-1] / (sigma * math.sqrt(2.0))
    y = scheme.y
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = y * math.sqrt(2.0) * A_f / Q_I if Q_I > 0 else np.full(scheme.M, np.inf)
        a_hat_prime = a_hat / alpha if alpha > 0 else np.where(a_hat > 0, np.inf, 0.0)
    key = (scheme.thresholds, scheme.levels, lam, h, float(sigma), A_f, win)
    return LambdaContext(lam=lam, scheme=scheme, sigma=float(sigma), h=h, near_set=near,
                         phi=phi, A_f=A_f, f2=f2, P_I=P_I, Q_I_sq=Q_I_sq, alpha=alpha,
                         beta=beta, a_hat=a_hat, a_hat_prime=a_hat_prime,
                         window=win, key=key)


# ----------------------------------------------------------------------------
# integrand family


def _combos(ctx):
    # (j, s) over the near set; j zero-based
    M, N = ctx.scheme.M, ctx.N
    J = np.array(list(itertools.product(range(M), repeat=N)), dtype=int).reshape(-1, N)
    S = np.array(list(itertools.product((1, -1), repeat=N)), dtype=int).reshape(-1, N)
    jv = np.repeat(J, len(S), axis=0)
    sv = np.tile(S, (len(J), 1))
    return jv, sv


def _erf_offsets(ctx, aprime, raw=None):
    """Kernel offsets for the requested a_hat' values.

    At alpha = 0 the offsets are the raw thresholds ``raw`` and the kernel
    takes the sign limit of the erf factor.
    """
    if ctx.alpha > 0:
        return np.asarray(aprime, dtype=np.float64), 1.0 / (math.sqrt(2.0) * math.sqrt(ctx.Q_I_sq))
    if raw is None:
        raise DegenerateContextError("alpha = 0 needs raw thresholds")
    return np.asarray(raw, dtype=np.float64), np.inf


def _kernel_values(ctx, xi, aprime, raw=None):
    offs, cscale = _erf_offsets(ctx, aprime, raw)
    ahat = np.append(ctx.a_hat, np.inf)
    wlev = ctx.A_f * ctx.scheme.y
    fn = _backend.kernels.integrand_sums
    return fn(np.ascontiguousarray(xi, dtype=np.float64), ahat,
              np.ascontiguousarray(ctx.phi), np.ascontiguousarray(offs),
              np.ascontiguousarray(wlev), float(cscale), float(ctx.alpha), ctx.decay)


def _slope_at_zero(ctx, aprime, raw=None):
    """d/dxi Im S(xi) at xi = 0, analytically, for each a_hat'."""
    jv, sv = _combos(ctx)
    ahat = np.append(ctx.a_hat, np.inf)
    lo, hi = ahat[jv], ahat[jv + 1]
    E = erf(lo) - erf(hi)
    gl = np.exp(-lo ** 2) - np.exp(-hi ** 2)
    dE = -sv * ctx.phi[None, :] * (2.0 / math.sqrt(math.pi)) * gl
    d = np.sum(sv * ctx.A_f * ctx.scheme.y[jv] * ctx.phi[None, :], axis=1)
    prodE = np.prod(E, axis=1)
    dprod = np.zeros(len(jv))
    for k in range(ctx.N):
        others = np.prod(np.delete(E, k, axis=1), axis=1)
        dprod += dE[:, k] * others
    offs, cscale = _erf_offsets(ctx, aprime, raw)
    out = []
    for c0 in offs:
        if np.isinf(cscale):
            C = np.ones(len(jv)) if np.isinf(c0) else np.sign(c0 + d)
            dC = np.zeros(len(jv))
        elif np.isinf(c0):
            C = np.ones(len(jv))
            dC = np.zeros(len(jv))
        else:
            c = c0 + d * cscale
            C = erf(c)
            dC = ctx.alpha * (2.0 / math.sqrt(math.pi)) * np.exp(-c * c)
        out.append(math.fsum(dprod * C + prodE * dC))
    return np.array(out)


class _Family:
    """Vector-valued integrand for a list of I-integral components.

    Each component is (kind, b, col) with kind 'sin' (real part times
    sin(2 b xi)/(pi xi)) or 'cos' (imaginary part over xi times
    cos(2 b xi)/pi); col selects the a_hat' column.
    """

    def __init__(self, ctx, aprime, comps, raw=None):
        self.ctx = ctx
        self.raw = raw
        self.aprime = np.asarray(aprime, dtype=np.float64)
        self.comps = comps
        self.norm = 2.0 / 2 ** ctx.N  # half-range doubled, 1/2^N prefactor
        self._slope = None

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=np.float64)
        S = _kernel_values(self.ctx, xi, self.aprime, self.raw)
        small = np.abs(xi) < _SMALL_XI
        safe = np.where(small, 1.0, xi)
        imq = S.imag / safe[:, None]
        if small.any():
            if self._slope is None:
                self._slope = _slope_at_zero(self.ctx, self.aprime, self.raw)
            imq[small] = self._slope[None, :]
        out = np.empty((xi.size, len(self.comps)))
        for c, (kind, b, col) in enumerate(self.comps):
            if kind == "sin":
                ker = np.where(small, 2.0 * b / math.pi, np.sin(2.0 * b * xi) / (math.pi * safe))
                out[:, c] = ker * S[:, col].real
            else:
                out[:, c] = np.cos(2.0 * b * xi) / math.pi * imq[:, col]
        return out * self.norm


def _integrate_family(ctx, aprime, comps, quad: QuadratureSpec, halfwidth=None, raw=None):
    fam = _Family(ctx, aprime, comps, raw)
    decay = ctx.decay
    if halfwidth is None:
        halfwidth = window_halfwidth(quad, decay if decay > 0 else None)
    _, vals = adaptive_panels(fam, 0.0, halfwidth, quad.abs_tolerance / 2.0,
                              int(quad.max_subdivisions))
    return np.atleast_1d(fsum_panels(vals))


# ----------------------------------------------------------------------------
# caches

_lock = threading.Lock()
_family_cache: dict = {}
_single_cache: dict = {}


def clear_cache():
    """Drop all memoized integral values."""
    with _lock:
        _family_cache.clear()
        _single_cache.clear()


def _fkey(x):
    return float(x).hex()


def _family_values(ctx, quad=DEFAULT_QUADRATURE):
    """All I-values needed by the moment formulas for one context.

    Returns dict with 'e1' (M-1,), 'e3' (M-1, M-1), 'o' (M, M): rows index
    the target-side argument (0 or a_hat_2..a_hat_M), columns the
    estimate-side argument.
    """
    key = (ctx.key, quad)
    with _lock:
        hit = _family_cache.get(key)
    if hit is not None:
        return hit
    M = ctx.scheme.M
    ah = ctx.a_hat
    # columns: a_hat'_1 (=0), a_hat'_2..a_hat'_M, inf
    aprime = np.append(ctx.a_hat_prime, np.inf)
    raw = np.append(ctx.scheme.a[:-1], np.inf)
    comps = []
    for i in range(1, M):
        comps.append(("sin", ah[i], M))
    for i in range(1, M):
        for j in range(1, M):
            comps.append(("sin", ah[i], j))
    for i in range(M):
        for j in range(M):
            comps.append(("cos", ah[i], j))
    vals = _integrate_family(ctx, aprime, comps, quad, raw=raw)
    n1 = M - 1
    out = {
        "e1": vals[:n1].copy(),
        "e3": vals[n1:n1 + n1 * n1].reshape(n1, n1).copy(),
        "o": vals[n1 + n1 * n1:].reshape(M, M).copy(),
        "e2": _e2_closed(ctx, ctx.a_hat_prime[1:], ctx.scheme.a[1:-1]),
    }
    with _lock:
        _family_cache[key] = out
    return out


def _lookup(values, target):
    # index of target in values with bitwise equality, or None
    hits = np.nonzero(np.asarray(values) == target)[0]
    return int(hits[0]) if hits.size else None


def _require_regular(ctx):
    if ctx.degenerate:
        raise DegenerateContextError(
            f"lambda = {ctx.lam} lies on the sampling grid; moments follow from the exact branch")
    if not ctx.alpha > 0:
        raise DegenerateContextError("alpha = 0: the estimate has no tail term")


def _single(ctx, kind, b, bp, quad):
    key = (ctx.key, quad, kind, _fkey(b), _fkey(bp))
    with _lock:
        hit = _single_cache.get(key)
    if hit is not None:
        return hit
    comp = [("sin" if kind in ("e1", "e3") else "cos", float(b), 0)]
    val = float(_integrate_family(ctx, [bp], comp, quad)[0])
    with _lock:
        _single_cache[key] = val
    return val


def integral_e1(ctx: LambdaContext, a_hat: float, quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """I^(e,1)(a_hat): probability-type integral over the target threshold.

    Because x(lambda) is exactly Gaussian the value equals erf(a_hat); it is
    nevertheless computed by quadrature as a check of the machinery.
    """
    if not a_hat > 0:
        raise ValueError("a_hat must be positive")
    _require_regular(ctx)
    i = _lookup(ctx.a_hat[1:], a_hat)
    if i is not None:
        return float(_family_values(ctx, quad)["e1"][i])
    return _single(ctx, "e1", a_hat, np.inf, quad)


def _e2_closed(ctx, aprime, raw=None):
    jv, sv = _combos(ctx)
    ahat = np.append(ctx.a_hat, np.inf)
    E = np.prod(erf(ahat[jv]) - erf(ahat[jv + 1]), axis=1)
    d = np.sum(sv * ctx.A_f * ctx.scheme.y[jv] * ctx.phi[None, :], axis=1)
    offs, cscale = _erf_offsets(ctx, aprime, raw)
    out = []
    for c0 in np.atleast_1d(offs):
        if np.isinf(cscale):
            C = np.ones(len(jv)) if np.isinf(c0) else np.sign(c0 + d)
        else:
            C = erf(c0 + d * cscale)
        out.append(math.fsum(E * C) / 2 ** ctx.N)
    return np.array(out)


def integral_e2(ctx: LambdaContext, a_hat_prime: float) -> float:
    """I^(e,2)(a_hat'): closed-form sum, no quadrature."""
    if not a_hat_prime > 0:
        raise ValueError("a_hat_prime must be positive")
    _require_regular(ctx)
    return float(_e2_closed(ctx, [a_hat_prime])[0])


def integral_e3(ctx: LambdaContext, a_hat: float, a_hat_prime: float,
                quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """I^(e,3)(a_hat, a_hat'): joint probability-type integral."""
    if not (a_hat > 0 and a_hat_prime > 0):
        raise ValueError("a_hat and a_hat_prime must be positive")
    _require_regular(ctx)
    i = _lookup(ctx.a_hat[1:], a_hat)
    j = _lookup(ctx.a_hat_prime[1:], a_hat_prime)
    if i is not None and j is not None:
        return float(_family_values(ctx, quad)["e3"][i, j])
    return _single(ctx, "e3", a_hat, a_hat_prime, quad)


def integral_o(ctx: LambdaContext, a_hat: float, a_hat_prime: float,
               quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """I^(o)(a_hat, a_hat'): odd-moment integral; zero arguments allowed."""
    if a_hat < 0 or a_hat_prime < 0:
        raise ValueError("arguments must be >= 0")
    _require_regular(ctx)
    i = _lookup(ctx.a_hat, a_hat)
    j = _lookup(ctx.a_hat_prime, a_hat_prime)
    if i is not None and j is not None:
        return float(_family_values(ctx, quad)["o"][i, j])
    return _single(ctx, "o", a_hat, a_hat_prime, quad)


# ----------------------------------------------------------------------------
# moments


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """mu[n, m] = <f(x)^n f(w)^m> for n, m = 0..2M-1.

    ``var_target`` and ``var_estimate`` hold mu_20 and mu_02, which for
    M = 1 fall outside the 2 x 2 matrix but are needed for rho.
    """

    M: int
    mu: np.ndarray
    var_target: float = float("nan")
    var_estimate: float = float("nan")

    def __getitem__(self, nm):
        return self.mu[nm]


def _exact_moment(ctx, n, m):
    # no degradation: the estimate is f(A_f f(x))
    y = ctx.scheme.y
    yq = np.abs(quantize(ctx.scheme, ctx.A_f * y))
    mass = bin_masses(ctx.scheme, ctx.sigma)
    if (n + m) % 2:
        return 0.0
    return float(2.0 * np.sum(mass * y ** n * yq ** m))


def _moment_from_family(ctx, fam, n, m):
    y = ctx.scheme.y
    dn = y[:-1] ** n - y[1:] ** n
    dm = y[:-1] ** m - y[1:] ** m
    if n % 2 == 0:
        yM = y[-1]
        terms = [yM ** (n + m)]
        terms += list(yM ** m * dn * fam["e1"])
        terms += list(yM ** n * dm * fam["e2"])
        terms += list((dn[:, None] * dm[None, :] * fam["e3"]).ravel())
    else:
        y1 = y[0]
        o = fam["o"]
        terms = [y1 ** (n + m) * o[0, 0]]
        terms += list(-(y1 ** m) * dn * o[1:, 0])
        terms += list(-(y1 ** n) * dm * o[0, 1:])
        terms += list((dn[:, None] * dm[None, :] * o[1:, 1:]).ravel())
    return math.fsum(terms)


def mixed_moment(ctx: LambdaContext, n: int, m: int,
                 quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """mu_{n,m} = <f(x(lambda))^n f(w(lambda))^m>.

    Mixed parity gives exactly 0.  On the sampling grid the exact
    no-degradation moments are returned.
    """
    n, m = int(n), int(m)
    if n < 0 or m < 0:
        raise ValueError("moment orders must be >= 0")
    if (n + m) % 2:
        return 0.0
    if ctx.degenerate:
        return _exact_moment(ctx, n, m)
    return _moment_from_family(ctx, _family_values(ctx, quad), n, m)


def moment_matrix(ctx: LambdaContext, size: int | None = None,
                  quad: QuadratureSpec = DEFAULT_QUADRATURE) -> MomentMatrix:
    """Full mixed-moment matrix, 2M x 2M by default.

    All entries share one evaluation of the integral family, so the cost
    is that of the M^2 + (M-1)^2 + (M-1) distinct I-values.
    """
    M = ctx.scheme.M
    size = 2 * M if size is None else int(size)
    mu = np.zeros((size, size))
    for n in range(size):
        for m in range(size):
            mu[n, m] = mixed_moment(ctx, n, m, quad)
    return MomentMatrix(M=M, mu=mu, var_target=mixed_moment(ctx, 2, 0, quad),
                        var_estimate=mixed_moment(ctx, 0, 2, quad))
