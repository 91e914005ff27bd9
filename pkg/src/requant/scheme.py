"""Antisymmetric 2M-level quantizers and their Gaussian expectations."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import SchemeError

# Max (1960) minimum-distortion schemes for a unit-variance Gaussian.
# Keys: M; values: (thresholds a_1..a_M with a_1 = 0, levels y_1..y_M).
MAX_SCHEMES = {
    1: ((0.0,), (0.798,)),
    2: ((0.0, 0.9816), (0.4528, 1.510)),
    3: ((0.0, 0.6589, 1.447), (0.3177, 1.0, 1.894)),
    4: ((0.0, 0.5006, 1.050, 1.748), (0.2451, 0.7560, 1.344, 2.152)),
}


@dataclass(frozen=True)
class QuantizationScheme:
    """Antisymmetric staircase with 2M output levels.

    Attributes
    ----------
    M : int
        Half the number of output levels.
    thresholds : tuple of float
        Finite positive thresholds a_2..a_M (a_1 = 0 and a_{M+1} = inf
        are implicit), in units of sigma.
    levels : tuple of float
        Output levels y_1..y_M, in units of sigma.
    """

    M: int
    thresholds: tuple
    levels: tuple

    def __post_init__(self):
        thr = tuple(float(t) for t in self.thresholds)
        lev = tuple(float(y) for y in self.levels)
        object.__setattr__(self, "thresholds", thr)
        object.__setattr__(self, "levels", lev)
        if int(self.M) != self.M or self.M < 1:
            raise SchemeError(f"M must be a positive integer, got {self.M}")
        if len(thr) != self.M - 1 or len(lev) != self.M:
            raise SchemeError(
                f"need {self.M - 1} finite thresholds and {self.M} levels, "
                f"got {len(thr)} and {len(lev)}")
        a = np.array((0.0,) + thr)
        if not np.all(np.isfinite(a)) or np.any(np.diff(a) <= 0):
            raise SchemeError("thresholds must be finite, positive and strictly ascending")
        y = np.array(lev)
        if not np.all(np.isfinite(y)) or y[0] <= 0 or np.any(np.diff(y) <= 0):
            raise SchemeError("levels must be finite, positive and strictly ascending")

    @classmethod
    def from_sequences(cls, a: Sequence[float], y: Sequence[float]) -> "QuantizationScheme":
        """Build from a = [0, a_2, ..., a_M] (leading 0 optional) and y."""
        a = [float(t) for t in a]
        if a and a[0] == 0.0:
            a = a[1:]
        return cls(M=len(y), thresholds=tuple(a), levels=tuple(y))

    @property
    def a(self) -> np.ndarray:
        """Thresholds a_1..a_{M+1} including the implicit 0 and inf."""
        return np.array((0.0,) + self.thresholds + (np.inf,))

    @property
    def y(self) -> np.ndarray:
        return np.array(self.levels)

    @property
    def signed_levels(self) -> np.ndarray:
        """Levels in the order -y_M..-y_1, y_1..y_M."""
        y = self.y
        return np.concatenate([-y[::-1], y])

    @property
    def signed_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(-self.M, 0), np.arange(1, self.M + 1)])

    def to_dict(self) -> dict:
        return {"M": self.M, "a": [0.0] + list(self.thresholds), "y": list(self.levels)}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizationScheme":
        try:
            scheme = cls.from_sequences(d["a"], d["y"])
        except (KeyError, TypeError) as exc:
            raise SchemeError(f"scheme JSON needs keys 'M', 'a', 'y': {exc}") from None
        if "M" in d and int(d["M"]) != scheme.M:
            raise SchemeError(f"M = {d['M']} does not match {scheme.M} levels")
        return scheme

    @classmethod
    def from_json(cls, path) -> "QuantizationScheme":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class FtPowerCoefficients:
    """Symbolic Fourier structure of f(x)^n.

    For even n the transform is ``dc_weight * delta(p)`` plus real-even
    step terms; for odd n it is ``base_coeff`` plus imaginary-odd step
    terms.  Each step term is a pair (Delta_j, a_{j+1}).
    """

    parity: str
    dc_weight: float
    step_coeffs: tuple
    base_coeff: float


def max_scheme(M: int) -> QuantizationScheme:
    """Tabulated Max scheme for M = 1..4."""
    if M not in MAX_SCHEMES:
        raise SchemeError(f"no tabulated Max scheme for M = {M}; construct a custom scheme")
    a, y = MAX_SCHEMES[M]
    return QuantizationScheme(M=M, thresholds=a[1:], levels=y)


def level_index(scheme: QuantizationScheme, x):
    """Signed level index in {-M..-1, 1..M}; x = 0 maps to +1."""
    x = np.asarray(x, dtype=np.float64)
    j = np.searchsorted(np.asarray(scheme.thresholds), np.abs(x), side="right") + 1
    out = np.where(x >= 0.0, j, -j)
    return int(out) if out.ndim == 0 else out


def quantize(scheme: QuantizationScheme, x):
    """f(x) = sign(x) y_j for |x| in [a_j, a_{j+1}); f(0) = +y_1."""
    x = np.asarray(x, dtype=np.float64)
    j = np.searchsorted(np.asarray(scheme.thresholds), np.abs(x), side="right")
    lev = scheme.y[j]
    out = np.where(x >= 0.0, lev, -lev)
    return float(out) if out.ndim == 0 else out


def bin_masses(scheme: QuantizationScheme, sigma: float = 1.0) -> np.ndarray:
    """P(a_j <= x < a_{j+1}) for x ~ N(0, sigma^2), j = 1..M (one side)."""
    c = ndtr(scheme.a / sigma)
    return np.diff(c)


def gaussian_moment_fn(scheme: QuantizationScheme, n: int, sigma: float = 1.0) -> float:
    """<f(x)^n> for x ~ N(0, sigma^2), in closed form."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if n < 0:
        raise ValueError("n must be >= 0")
    if n % 2:
        return 0.0
    return float(2.0 * np.sum(scheme.y ** n * bin_masses(scheme, sigma)))


def gaussian_moment_xf(scheme: QuantizationScheme, sigma: float = 1.0) -> float:
    """<x f(x)> for x ~ N(0, sigma^2).

    Integration by parts of x pdf(x) over each bin gives
    2 sigma sum_j y_j [pdf(a_j/sigma) - pdf(a_{j+1}/sigma)].
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    u = scheme.a / sigma
    pdf = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    return float(2.0 * sigma * np.sum(scheme.y * (pdf[:-1] - pdf[1:])))


def scale_factor_Af(scheme: QuantizationScheme, sigma: float = 1.0) -> float:
    """A_f = <x f(x)> / <f(x)^2>, the least-squares gain for the quantized samples."""
    return gaussian_moment_xf(scheme, sigma) / gaussian_moment_fn(scheme, 2, sigma)


def ft_power_coefficients(scheme: QuantizationScheme, n: int) -> FtPowerCoefficients:
    """Coefficient structure of the Fourier transform of f(x)^n."""
    if n < 0:
        raise ValueError("n must be >= 0")
    y = scheme.y
    delta = y[:-1] ** n - y[1:] ** n
    steps = tuple((float(d), float(t)) for d, t in zip(delta, scheme.thresholds))
    if n % 2 == 0:
        return FtPowerCoefficients("even", float(y[-1] ** n), steps, 0.0)
    return FtPowerCoefficients("odd", 0.0, steps, float(y[0] ** n))


def levels_inside_bins(scheme: QuantizationScheme, A_f: float = 1.0) -> bool:
    """True when f(A_f y_j) = y_j for every level, i.e. requantization is idempotent."""
    return bool(np.all(quantize(scheme, A_f * scheme.y) == scheme.y))
