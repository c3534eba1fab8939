"""Randomized K-asset markets: vols, returns, correlations, impact parameters.

All generated numbers are rounded to 4 decimals before use, and the rounded
correlation matrix is re-validated for positive definiteness (rounding can in
principle break it), matching the workflow that produced the published runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .model_core import ImpactParams

__all__ = ["MarketSpec", "gen_market", "gen_corr", "cov_from"]

_ROUND_DECIMALS = 4
_MAX_CORR_TRIES = 100


@dataclass(frozen=True)
class MarketSpec:
    """A K-asset market with per-asset impact parameters.

    sigma and returns are annualized-scale vectors; corr is the rounded,
    validated correlation matrix and cov = diag(sigma) corr diag(sigma).
    m converts portfolio weight into participation rate (v = m * |w|);
    big_t is the trading horizon and leverage the l1 cap on sum |w|.
    """

    k: int
    sigma: np.ndarray
    returns: np.ndarray
    corr: np.ndarray
    cov: np.ndarray
    thetas: tuple[ImpactParams, ...]
    m: float = 0.1
    big_t: float = 1.0
    leverage: float = 2.0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        returns = np.asarray(self.returns, dtype=float)
        corr = np.asarray(self.corr, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        k = self.k
        if sigma.shape != (k,) or returns.shape != (k,) or corr.shape != (k, k) or cov.shape != (k, k):
            raise ValueError("shape mismatch in market spec")
        if len(self.thetas) != k:
            raise ValueError("need one impact parameter set per asset")
        if np.any(sigma <= 0):
            raise ValueError("vols must be positive")
        if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
            raise ValueError("corr must be symmetric with unit diagonal")
        if float(np.linalg.eigvalsh(corr).min()) <= 0:
            raise ValueError("corr must be positive definite")
        if not np.allclose(cov, sigma[:, None] * corr * sigma[None, :]):
            raise ValueError("cov must equal diag(sigma) corr diag(sigma)")
        if self.m <= 0 or self.big_t <= 0:
            raise ValueError("m and big_t must be positive")
        if self.leverage < 1:
            raise ValueError("leverage cap must be at least 1")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "returns", returns)
        object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "cov", cov)

    def with_thetas(self, thetas) -> "MarketSpec":
        """Same market, different impact parameters (used for estimated costs)."""
        return replace(self, thetas=tuple(thetas))

    def with_leverage(self, leverage: float) -> "MarketSpec":
        return replace(self, leverage=float(leverage))

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "sigma": self.sigma.tolist(),
            "returns": self.returns.tolist(),
            "corr": self.corr.tolist(),
            "thetas": [
                {"gamma": t.gamma, "eta": t.eta, "alpha": t.alpha, "beta": t.beta}
                for t in self.thetas
            ],
            "m": self.m,
            "big_t": self.big_t,
            "leverage": self.leverage,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MarketSpec":
        doc = json.loads(text)
        sigma = np.asarray(doc["sigma"], dtype=float)
        corr = np.asarray(doc["corr"], dtype=float)
        return cls(
            k=doc["k"],
            sigma=sigma,
            returns=np.asarray(doc["returns"], dtype=float),
            corr=corr,
            cov=cov_from(sigma, corr),
            thetas=tuple(ImpactParams(**t) for t in doc["thetas"]),
            m=doc["m"],
            big_t=doc["big_t"],
            leverage=doc["leverage"],
        )


def gen_corr(k: int, rng: np.random.Generator) -> np.ndarray:
    """Random correlation matrix, positive definite after rounding to 4 decimals.

    Normalized Gram matrix of a K x K standard-normal draw; resamples in the
    rare event that rounding destroys positive definiteness.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    for _ in range(_MAX_CORR_TRIES):
        a = rng.standard_normal((k, k))
        gram = a @ a.T
        d = np.sqrt(np.diag(gram))
        corr = gram / np.outer(d, d)
        corr = np.round(corr, _ROUND_DECIMALS)
        np.fill_diagonal(corr, 1.0)
        corr = 0.5 * (corr + corr.T)
        if float(np.linalg.eigvalsh(corr).min()) > 0:
            return corr
    raise RuntimeError(f"could not generate a valid correlation matrix in {_MAX_CORR_TRIES} tries")


def cov_from(sigma: np.ndarray, corr: np.ndarray) -> np.ndarray:
    """Covariance diag(sigma) corr diag(sigma)."""
    sigma = np.asarray(sigma, dtype=float)
    corr = np.asarray(corr, dtype=float)
    if corr.shape != (sigma.size, sigma.size):
        raise ValueError("shape mismatch between sigma and corr")
    return sigma[:, None] * corr * sigma[None, :]


def gen_market(k: int, seed: int, m: float = 0.1, big_t: float = 1.0, leverage: float = 2.0) -> MarketSpec:
    """Generate the randomized market: vols, returns, impact parameters, correlation.

    sigma_i ~ U[0.05, 0.15]; returns r_i = zeta_i * sigma_i with zeta ~ U[-4, 4];
    alpha_i, beta_i ~ U[0.5, 0.9999]; gamma_i, eta_i ~ U[0.1, 0.5]. Everything
    is rounded to 4 decimals as generated.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    sigma = np.round(rng.uniform(0.05, 0.15, size=k), _ROUND_DECIMALS)
    zeta = rng.uniform(-4.0, 4.0, size=k)
    returns = np.round(zeta * sigma, _ROUND_DECIMALS)
    alpha = np.round(rng.uniform(0.5, 0.9999, size=k), _ROUND_DECIMALS)
    beta = np.round(rng.uniform(0.5, 0.9999, size=k), _ROUND_DECIMALS)
    gamma = np.round(rng.uniform(0.1, 0.5, size=k), _ROUND_DECIMALS)
    eta = np.round(rng.uniform(0.1, 0.5, size=k), _ROUND_DECIMALS)
    corr = gen_corr(k, rng)
    thetas = tuple(
        ImpactParams(gamma=float(g), eta=float(e), alpha=float(a), beta=float(b))
        for g, e, a, b in zip(gamma, eta, alpha, beta)
    )
    return MarketSpec(
        k=k,
        sigma=sigma,
        returns=returns,
        corr=corr,
        cov=cov_from(sigma, corr),
        thetas=thetas,
        m=m,
        big_t=big_t,
        leverage=leverage,
    )
