"""Special functions and damped-integrand quadrature."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _backend
from .errors import NonConvergenceError, OverflowRangeError

_SQRTPI_INV2 = 1.12837916709551257388  # 2/sqrt(pi)

# Gauss-Kronrod 10/21 rule on [-1, 1] (QUADPACK qk21); nodes listed from
# the outside in, the last Kronrod node is 0.  Gauss nodes are xgk[1::2].
_XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0])
_WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600525452668, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821])
_WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338])

# full 21-point node set on [-1, 1] and the matching weights
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_gw = np.zeros(11)
_gw[1::2] = _WG
G_WEIGHTS = np.concatenate([_gw[:-1], _gw[::-1]])


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration settings for ``integrate_damped``.

    Attributes
    ----------
    truncation_halfwidth : float
        X; the window is [-X, X], or [-X/sqrt(decay), X/sqrt(decay)] when a
        damping rate is supplied.
    abs_tolerance : float
        Target absolute error (per component for vector integrands).
    max_subdivisions : int
        Cap on the number of panels ever created.
    max_halfwidth : float
        Hard cap on the scaled window; exceeding it emits a warning.
    """

    truncation_halfwidth: float = 8.0
    abs_tolerance: float = 1e-9
    max_subdivisions: int = 2 ** 20
    max_halfwidth: float = 2.0e4

    def __post_init__(self):
        if not self.truncation_halfwidth >= 6:
            raise ValueError("truncation_halfwidth must be >= 6")
        if not self.abs_tolerance > 0:
            raise ValueError("abs_tolerance must be > 0")
        if int(self.max_subdivisions) < 1:
            raise ValueError("max_subdivisions must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()


def sinc(x):
    """Normalized sinc, exactly 1 at 0 and exactly 0 at other integers."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sinc(x)
    out = np.where((x == np.round(x)) & (x != 0.0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def normal_cdf(x):
    out = ndtr(np.asarray(x, dtype=np.float64))
    return float(out) if np.ndim(out) == 0 else out


def wofz(z):
    """Faddeeva function w(z) = exp(-z^2) erfc(-iz) (active backend)."""
    return _backend.kernels.wofz(z)


def erf_complex(z):
    """Error function of complex argument.

    Small |z| uses the Maclaurin series; elsewhere
    erf(z) = 1 - exp(-z^2) w(iz) on Re z >= 0 and oddness for Re z < 0,
    so w is only evaluated in the closed upper half-plane.

    Raises
    ------
    OverflowRangeError
        If the value exceeds the double range (roughly Im(z)^2 - Re(z)^2 > 709).
    """
    z = np.asarray(z, dtype=np.complex128)
    scalar = z.ndim == 0
    zf = np.atleast_1d(z).ravel()
    if np.any(~np.isfinite(zf)):
        raise ValueError("erf_complex needs finite arguments")
    expo = zf.imag ** 2 - zf.real ** 2
    if np.any(expo > 700.0):
        raise OverflowRangeError("erf(z) overflows for Im(z)^2 - Re(z)^2 > 700")
    out = np.empty_like(zf)
    small = np.abs(zf) <= 1.0
    if small.any():
        zs = zf[small]
        z2 = zs * zs
        term = zs.copy()
        acc = zs.copy()
        for n in range(1, 40):
            term = -term * z2 / n
            acc = acc + term / (2 * n + 1)
        out[small] = _SQRTPI_INV2 * acc
    big = ~small
    if big.any():
        zb = zf[big]
        sgn = np.where(zb.real < 0.0, -1.0, 1.0)
        za = zb * sgn
        out[big] = sgn * (1.0 - np.exp(-za * za) * wofz(1j * za))
    if not np.all(np.isfinite(out)):
        raise OverflowRangeError("erf(z) not representable")
    out = out.reshape(np.shape(z))
    return complex(out) if scalar else out


def _panel_rule(a, b):
    # nodes (P, 21) and half-widths (P,) for panels [a_i, b_i]
    mid = 0.5 * (a + b)
    hw = 0.5 * (b - a)
    return mid[:, None] + hw[:, None] * GK_NODES[None, :], hw


def _eval(fn, nodes):
    flat = nodes.ravel()
    vals = np.asarray(fn(flat))
    if vals.shape[:1] != flat.shape:
        vals = np.array([fn(t) for t in flat])
    return vals.reshape(nodes.shape + vals.shape[1:])


def adaptive_panels(fn, lo: float, hi: float, tol: float, max_panels: int,
                    init_width: float = 2.0):
    """Bulk-adaptive Gauss-Kronrod 10/21 on [lo, hi].

    Panels are split in halves until each has |K - G| <= tol * width/(hi - lo)
    in every component.  Returns the accepted panel edges (sorted) and the
    per-panel Kronrod estimates, shape (P,) or (P, K).
    """
    total = hi - lo
    npan = max(8, int(math.ceil(total / init_width)))
    if npan > max_panels:
        raise NonConvergenceError(f"window needs {npan} panels, above the cap of {max_panels}")
    edges = np.linspace(lo, hi, npan + 1)
    a, b = edges[:-1], edges[1:]
    created = npan
    acc_a, acc_b, acc_v = [], [], []
    while a.size:
        nodes, hw = _panel_rule(a, b)
        vals = _eval(fn, nodes)
        ext = (slice(None),) + (None,) * (vals.ndim - 2)
        kron = np.einsum("pk...,k->p...", vals, GK_WEIGHTS) * hw[ext]
        gaus = np.einsum("pk...,k->p...", vals, G_WEIGHTS) * hw[ext]
        err = np.abs(kron - gaus)
        if err.ndim > 1:
            err = err.reshape(err.shape[0], -1).max(axis=1)
        ok = err <= tol * (b - a) / total
        acc_a.append(a[ok])
        acc_b.append(b[ok])
        acc_v.append(kron[ok])
        bad = ~ok
        if not bad.any():
            break
        created += 2 * int(bad.sum())
        if created > max_panels:
            raise NonConvergenceError(
                f"quadrature did not reach tolerance {tol:g} within {max_panels} subdivisions")
        ma = 0.5 * (a[bad] + b[bad])
        a = np.concatenate([a[bad], ma])
        b = np.concatenate([ma, b[bad]])
    pa = np.concatenate(acc_a)
    order = np.argsort(pa, kind="stable")
    vals = np.concatenate(acc_v)[order]
    return np.concatenate([pa[order], np.concatenate(acc_b)[order][-1:]]), vals


def window_halfwidth(spec: QuadratureSpec, decay: float | None = None) -> float:
    """Truncation half-width X / sqrt(decay), capped at spec.max_halfwidth."""
    X = spec.truncation_halfwidth
    if decay is not None:
        if decay <= 0:
            raise ValueError("decay rate must be positive")
        X = X / math.sqrt(min(decay, 1.0))
    if X > spec.max_halfwidth:
        warnings.warn(
            f"truncation window {X:.3g} clamped to {spec.max_halfwidth:.3g}; "
            "tail error may exceed the tolerance", RuntimeWarning, stacklevel=3)
        X = spec.max_halfwidth
    return X


def fsum_panels(vals):
    """Correctly rounded sum over the panel axis (order independent)."""
    vals = np.asarray(vals)
    if vals.ndim == 1:
        if np.iscomplexobj(vals):
            return complex(math.fsum(vals.real), math.fsum(vals.imag))
        return math.fsum(vals)
    flat = vals.reshape(vals.shape[0], -1)
    out = np.array([math.fsum(flat[:, i].real) for i in range(flat.shape[1])])
    if np.iscomplexobj(vals):
        out = out + 1j * np.array([math.fsum(flat[:, i].imag) for i in range(flat.shape[1])])
    return out.reshape(vals.shape[1:])


def integrate_damped(fn, spec: QuadratureSpec = DEFAULT_QUADRATURE, *,
                     decay: float | None = None, even: bool = False):
    """Integrate a Gaussian-damped integrand over the truncated real line.

    Parameters
    ----------
    fn : callable
        Vectorized callable mapping an array of nodes to values of shape
        (n,) or (n, K); scalar callables are also accepted.
    spec : QuadratureSpec
        Window, tolerance and subdivision cap.
    decay : float, optional
        Known Gaussian decay rate v of the integrand (|fn| ~ exp(-v xi^2));
        the window is widened to X/sqrt(v).
    even : bool
        Integrand known to be even: integrate [0, X] and double.

    Returns
    -------
    float or ndarray
        Integral estimate.

    Raises
    ------
    NonConvergenceError
        If the tolerance is not met within ``spec.max_subdivisions`` panels.
    """
    X = window_halfwidth(spec, decay)
    lo = 0.0 if even else -X
    tol = spec.abs_tolerance / (2.0 if even else 1.0)
    _, vals = adaptive_panels(fn, lo, X, tol, int(spec.max_subdivisions))
    total = fsum_panels(vals)
    if even:
        total = 2.0 * total
    if isinstance(total, np.ndarray) and total.ndim == 0:
        total = total.item()
    return total
