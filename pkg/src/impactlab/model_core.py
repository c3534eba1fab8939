"""Power-law impact model and the analytic law of its order statistics.

Everything downstream (simulation, fitting, information matrices, portfolio
costs) is written against the two impact curves defined here and the joint
Gaussian law of the post-trade return I and the cost statistic J - I/2.
Prices are handled internally on the relative (bps) scale (S_t - S0) / S0;
the initial price only matters for I/O.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PARAM_ORDER",
    "ImpactParams",
    "OrderConfig",
    "MomentPair",
    "permanent_impact",
    "temporary_impact",
    "ij_mean",
    "ij_cov",
    "ij_moments",
    "vwap_cost",
]

# Canonical parameter ordering used by every Jacobian / information matrix.
PARAM_ORDER = ("gamma", "eta", "alpha", "beta")

# Solver box for the exponents. Fitting is conceptually unconstrained, but a
# finite box keeps line searches out of absurd territory; reported estimates
# live far inside it.
EXPONENT_BOX = (0.0, 2.0)


@dataclass(frozen=True)
class ImpactParams:
    """Parameter vector (gamma, eta, alpha, beta) of the power-law model.

    gamma / alpha drive the permanent impact per unit time g(v) = gamma * v**alpha,
    eta / beta the temporary impact h(v) = eta * v**beta. Coefficients may be
    zero (cost-free limits used as baselines); exponents must lie in (0, 2).
    """

    gamma: float
    eta: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.gamma >= 0.0 and self.eta >= 0.0):
            raise ValueError("gamma and eta must be non-negative")
        lo, hi = EXPONENT_BOX
        if not (lo < self.alpha < hi and lo < self.beta < hi):
            raise ValueError(f"alpha and beta must lie in ({lo}, {hi})")

    def as_array(self) -> np.ndarray:
        """Return (gamma, eta, alpha, beta) as a float array."""
        return np.array([self.gamma, self.eta, self.alpha, self.beta], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ImpactParams":
        g, e, a, b = np.asarray(arr, dtype=float)
        return cls(float(g), float(e), float(a), float(b))

    def scaled(self, factor: float) -> "ImpactParams":
        """Scale both coefficients by ``factor``, exponents unchanged."""
        return ImpactParams(self.gamma * factor, self.eta * factor, self.alpha, self.beta)


@dataclass(frozen=True)
class OrderConfig:
    """Hyper-parameters of one metaorder and its simulation grid.

    ``T`` and ``t_post`` are absolute times on the volume clock (``t_post`` is
    the post-trade observation time, not the wait after T). ``dt`` is the
    Euler step used both for path generation and for the numerical cost
    integral.
    """

    s0: float
    sigma: float
    T: float
    t_post: float
    v: float
    dt: float

    def __post_init__(self):
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not (0 < self.T < self.t_post):
            raise ValueError("need 0 < T < t_post")
        if not (0 < self.dt <= self.T):
            raise ValueError("need 0 < dt <= T")
        if not (0 < self.v < 1):
            raise ValueError("participation rate v must lie in (0, 1)")


@dataclass(frozen=True)
class MomentPair:
    """Mean vector and covariance of (I, J - I/2) for one order."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValueError("mean must be a 2-vector and cov a 2x2 matrix")
        if not np.allclose(cov, cov.T):
            raise ValueError("cov must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def _check_rate(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("participation rate must be positive")
    return v


def permanent_impact(v, p: ImpactParams):
    """Permanent impact per unit time, g(v) = gamma * v**alpha (v > 0)."""
    v = _check_rate(v)
    out = p.gamma * v**p.alpha
    return float(out) if out.ndim == 0 else out


def temporary_impact(v, p: ImpactParams):
    """Temporary impact, h(v) = eta * v**beta (v > 0)."""
    v = _check_rate(v)
    out = p.eta * v**p.beta
    return float(out) if out.ndim == 0 else out


def ij_mean(p: ImpactParams, T: float, v: float) -> np.ndarray:
    """Mean of (I, J - I/2): (T * g(v), h(v))."""
    if T <= 0:
        raise ValueError("T must be positive")
    return np.array([T * permanent_impact(v, p), temporary_impact(v, p)])


def ij_cov(T: float, t_post: float, sigma: float) -> np.ndarray:
    """Covariance of (I, J - I/2); depends only on the clock, not on theta.

    sigma**2 * [[t_post, -(t_post - T)/2], [-(t_post - T)/2, t_post/4 - T/6]]
    """
    if not (0 < T < t_post):
        raise ValueError("need 0 < T < t_post")
    off = -(t_post - T) / 2.0
    return sigma**2 * np.array([[t_post, off], [off, t_post / 4.0 - T / 6.0]])


def ij_moments(p: ImpactParams, T: float, t_post: float, sigma: float, v: float) -> MomentPair:
    """Bundle ij_mean and ij_cov for one order."""
    return MomentPair(mean=ij_mean(p, T, v), cov=ij_cov(T, t_post, sigma))


def vwap_cost(p: ImpactParams, T: float, v: float) -> float:
    """Expected execution cost in return units: T*g(v)/2 + h(v).

    T = 0 is allowed (instantaneous trade, permanent term vanishes).
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    cost = 0.5 * T * permanent_impact(v, p) + temporary_impact(v, p)
    return float(cost)
