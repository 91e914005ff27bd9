"""Bivariate level distribution and correlation coefficient."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .moments import LambdaContext, MomentMatrix, build_context, mixed_moment
from .scheme import QuantizationScheme, bin_masses

COND_WARN = 1e12
NEG_REPORT = -5e-3


class IllConditionedWarning(RuntimeWarning):
    pass


class NegativeProbabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class BivariateDistribution:
    """Joint probabilities p[i, j] of target level i and estimate level j.

    Rows and columns are ordered by signed level index -M..-1, 1..M.
    ``negatives`` lists entries below -5e-3 as (i, j, value).
    """

    M: int
    p: np.ndarray
    residual: float = 0.0
    negatives: tuple = field(default=())

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([np.arange(-self.M, 0), np.arange(1, self.M + 1)])

    def entry(self, i: int, j: int) -> float:
        """p_{i,j} addressed by signed level indices."""
        pos = {k: n for n, k in enumerate(self.indices)}
        return float(self.p[pos[i], pos[j]])

    def pretty(self) -> np.ndarray:
        """Display copy: small negatives clipped to 0 and mass renormalized."""
        q = np.where((self.p < 0) & (self.p > NEG_REPORT), 0.0, self.p)
        return q / q.sum()


@dataclass(frozen=True)
class VandermondeSystem:
    """Y[n, c] = level_c ** n over levels -y_M..-y_1, y_1..y_M."""

    Y: np.ndarray

    @classmethod
    def for_scheme(cls, scheme: QuantizationScheme) -> "VandermondeSystem":
        lv = scheme.signed_levels
        return cls(Y=np.vander(lv, len(lv), increasing=True).T)

    def condition(self) -> float:
        return float(np.linalg.cond(self.Y))


def bivariate_distribution(moments: MomentMatrix, scheme: QuantizationScheme) -> BivariateDistribution:
    """Solve Y P Y^T = mu for P.

    Two sequences of LU solves with partial pivoting (Y Z = mu, then
    Y P^T = Z^T); Y is never inverted explicitly.
    """
    M = scheme.M
    if moments.M != M:
        raise ValueError(f"moment matrix is for M = {moments.M}, scheme has M = {M}")
    vs = VandermondeSystem.for_scheme(scheme)
    Y = vs.Y
    cond = vs.condition()
    if cond > COND_WARN:
        warnings.warn(f"Vandermonde condition number {cond:.3g} exceeds {COND_WARN:g}",
                      IllConditionedWarning, stacklevel=2)
    mu = np.asarray(moments.mu)[:2 * M, :2 * M]
    Z = np.linalg.solve(Y, mu)
    P = np.linalg.solve(Y, Z.T).T
    resid = float(np.max(np.abs(Y @ P @ Y.T - mu)) / np.max(np.abs(mu)))
    idx = np.concatenate([np.arange(-M, 0), np.arange(1, M + 1)])
    neg = tuple((int(idx[a]), int(idx[b]), float(P[a, b]))
                for a, b in zip(*np.nonzero(P < NEG_REPORT)))
    if neg:
        warnings.warn(f"{len(neg)} probabilities below {NEG_REPORT}: {neg}",
                      NegativeProbabilityWarning, stacklevel=2)
    return BivariateDistribution(M=M, p=P, residual=resid, negatives=neg)


def correlation_coefficient(moments: MomentMatrix) -> float:
    """rho = mu_11 / sqrt(mu_02 mu_20)."""
    mu20, mu02 = moments.var_target, moments.var_estimate
    if not (mu20 > 0 and mu02 > 0):
        raise ValueError("moments have non-positive variances")
    return float(moments.mu[1, 1] / np.sqrt(mu02 * mu20))


def rho_from_distribution(dist: BivariateDistribution, scheme: QuantizationScheme) -> float:
    """rho computed from P via sum p_ij y_i y_j."""
    lv = scheme.signed_levels
    P = dist.p
    m11 = lv @ P @ lv
    m20 = np.sum(P.sum(axis=1) * lv ** 2)
    m02 = np.sum(P.sum(axis=0) * lv ** 2)
    return float(m11 / np.sqrt(m20 * m02))


def rho_context(ctx: LambdaContext) -> float:
    """rho for one context from the three moments it needs."""
    m11 = mixed_moment(ctx, 1, 1)
    m20 = mixed_moment(ctx, 2, 0)
    m02 = mixed_moment(ctx, 0, 2)
    return float(m11 / np.sqrt(m20 * m02))


def rho_sweep(scheme: QuantizationScheme, lambdas, h: int = 1, window=None,
              sigma: float = 1.0):
    """(lambda, rho) for each lambda; one context per lambda."""
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.ndim != 1 or np.any(np.diff(lam) < 0):
        raise ValueError("lambdas must be an ascending 1-D sequence")
    out = []
    for x in lam:
        ctx = build_context(scheme, float(x), h=h, window=window, sigma=sigma)
        out.append((float(x), rho_context(ctx)))
    return out


def marginal(scheme: QuantizationScheme, which: str, moments: MomentMatrix) -> np.ndarray:
    """Row sums (``target``) or column sums (``estimate``) of P."""
    P = bivariate_distribution(moments, scheme).p
    if which == "target":
        return P.sum(axis=1)
    if which == "estimate":
        return P.sum(axis=0)
    raise ValueError("which must be 'target' or 'estimate'")


def gaussian_level_masses(scheme: QuantizationScheme, sigma: float = 1.0) -> np.ndarray:
    """Closed-form level probabilities in the order -M..-1, 1..M."""
    m = bin_masses(scheme, sigma)
    return np.concatenate([m[::-1], m])
