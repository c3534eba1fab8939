"""Closed-form information matrices per sampling design and dominance tests.

Every design reduces, through sufficiency, to a 2x2 kernel W acting on the
Jacobian of the mean pair (T*g, h): per-sample information = J^T W J. The
kernels are theta-free, so design comparisons happen at the kernel level and
carry over to any impact curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model_core import PARAM_ORDER, ImpactParams
from .sim_engine import Design, DesignKind, OrderDistribution

__all__ = [
    "InfoMatrix",
    "DominanceResult",
    "EarlySampleRules",
    "jacobian_ij",
    "weight_matrix",
    "fisher",
    "dominance",
    "early_sample_rules",
    "dominance_grid",
]

PSD_RTOL = 1e-10
GAUSS_LEGENDRE_NODES = 64


@dataclass(frozen=True)
class InfoMatrix:
    """Fisher information restricted to the free parameters, in PARAM_ORDER."""

    matrix: np.ndarray
    param_order: tuple[str, ...]
    design: Design
    order_dist: OrderDistribution

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        k = len(self.param_order)
        if m.shape != (k, k):
            raise ValueError("matrix shape must match the parameter ordering")
        if not np.allclose(m, m.T):
            raise ValueError("information matrix must be symmetric")
        min_eig = float(np.linalg.eigvalsh(m).min())
        if min_eig < -PSD_RTOL * max(1.0, float(np.linalg.norm(m))):
            raise ValueError("information matrix must be positive semidefinite")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class DominanceResult:
    psd: bool
    min_eig: float


@dataclass(frozen=True)
class EarlySampleRules:
    """The two published early-sampling predicates for the extra point t."""

    final_rule: bool  # t/T <= 1/4
    draft_rule: bool  # t/T < T / (3 * t_post)


def jacobian_ij(p: ImpactParams, T: float, v: float) -> np.ndarray:
    """d(T*g, h)/d(gamma, eta, alpha, beta) as a 2x4 matrix."""
    if v <= 0:
        raise ValueError("participation rate must be positive")
    if T <= 0:
        raise ValueError("T must be positive")
    log_v = np.log(v)
    va = v**p.alpha
    vb = v**p.beta
    return np.array(
        [
            [T * va, 0.0, T * p.gamma * va * log_v, 0.0],
            [0.0, vb, 0.0, p.eta * vb * log_v],
        ]
    )


def weight_matrix(
    design: Design, T: float, t_post: float, sigma: float, t: float | None = None
) -> np.ndarray:
    """The 2x2 kernel W of a design, so per-sample information is J^T W J.

    For point designs ``t`` is the early sampling time; when omitted it is
    taken from the design's earliest ratio. Includes the 1/sigma**2 factor.
    """
    if not (0 < T < t_post):
        raise ValueError("need 0 < T < t_post")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    inv_s2 = 1.0 / sigma**2

    if design.kind is DesignKind.ALMGREN_IJ:
        denom = t_post / 3.0 - T / 4.0
        return inv_s2 / T * np.array(
            [
                [(t_post / 4.0 - T / 6.0) / denom, (t_post - T) / (2.0 * denom)],
                [(t_post - T) / (2.0 * denom), t_post / denom],
            ]
        )
    if design.kind is DesignKind.TWO_POINT:
        return inv_s2 * np.array(
            [
                [1.0 / T, 1.0 / T],
                [1.0 / T, t_post / (T * (t_post - T))],
            ]
        )
    # K_POINT: only the earliest in-trade sample matters (sufficiency).
    if t is None:
        t = design.earliest_ratio * T
    if not (0 < t <= T):
        raise ValueError("need 0 < t <= T for the early sample")
    return inv_s2 * np.array(
        [
            [1.0 / T, 1.0 / T],
            [1.0 / T, 1.0 / t + 1.0 / (t_post - T)],
        ]
    )


def _free_indices(free_params: Sequence[str]) -> list[int]:
    bad = [name for name in free_params if name not in PARAM_ORDER]
    if bad:
        raise ValueError(f"unknown parameters: {bad}")
    idx = [PARAM_ORDER.index(name) for name in free_params]
    if sorted(idx) != idx:
        raise ValueError(f"free parameters must follow the ordering {PARAM_ORDER}")
    return idx


def fisher(
    design: Design,
    p: ImpactParams,
    order_dist: OrderDistribution,
    free_params: Sequence[str] = PARAM_ORDER,
    sigma: float = 1.0,
) -> InfoMatrix:
    """Per-sample Fisher information E_(v,T)[J^T W J] on the free parameters.

    Point-mass order distributions evaluate exactly; uniform-v distributions
    integrate with fixed Gauss-Legendre nodes, so results are deterministic.
    """
    idx = _free_indices(free_params)
    W = weight_matrix(design, order_dist.T, order_dist.t_post, sigma)

    def per_v(v: float) -> np.ndarray:
        J = jacobian_ij(p, order_dist.T, v)[:, idx]
        return J.T @ W @ J

    if order_dist.is_point_mass:
        total = per_v(order_dist.v_low)
    else:
        nodes, weights = np.polynomial.legendre.leggauss(GAUSS_LEGENDRE_NODES)
        mid = 0.5 * (order_dist.v_low + order_dist.v_high)
        half = 0.5 * (order_dist.v_high - order_dist.v_low)
        total = np.zeros((len(idx), len(idx)))
        for x, w in zip(nodes, weights):
            total += 0.5 * w * per_v(mid + half * x)  # weights sum to 2 -> average

    total = 0.5 * (total + total.T)
    return InfoMatrix(matrix=total, param_order=tuple(free_params), design=design, order_dist=order_dist)


def dominance(a: InfoMatrix, b: InfoMatrix) -> DominanceResult:
    """Test a >= b in the positive-semidefinite order via eigenvalues of a - b."""
    if a.param_order != b.param_order:
        raise ValueError("information matrices must share the parameter ordering")
    if a.matrix.shape != b.matrix.shape:
        raise ValueError("shape mismatch")
    diff = a.matrix - b.matrix
    min_eig = float(np.linalg.eigvalsh(0.5 * (diff + diff.T)).min())
    tol = PSD_RTOL * max(1.0, float(np.linalg.norm(a.matrix)))
    return DominanceResult(psd=min_eig >= -tol, min_eig=min_eig)


def early_sample_rules(t: float, T: float, t_post: float) -> EarlySampleRules:
    """Evaluate both published predicates for the early sampling time."""
    if not (0 < t < T < t_post):
        raise ValueError("need 0 < t < T < t_post")
    return EarlySampleRules(
        final_rule=t / T <= 0.25,
        draft_rule=t / T < T / (3.0 * t_post),
    )


def dominance_grid(
    T_values: Sequence[float],
    t_post_ratios: Sequence[float],
    t_ratios: Sequence[float],
    p: ImpactParams,
    v0: float = 0.1,
    sigma: float = 1.0,
) -> list[dict]:
    """Sweep (T, t_post/T, t/T) and record the three-point-vs-(I,J) comparison.

    Rows carry the minimum eigenvalue of the information difference (free
    exponents at a point-mass order) together with both early-sample rules.
    """
    rows = []
    free = ("alpha", "beta")
    for T in T_values:
        for tp_ratio in t_post_ratios:
            t_post = T * tp_ratio
            dist = OrderDistribution.point(v0, T, t_post)
            info_ij = fisher(Design.almgren_ij(), p, dist, free, sigma)
            for t_ratio in t_ratios:
                info_3p = fisher(Design.three_point(t_ratio), p, dist, free, sigma)
                result = dominance(info_3p, info_ij)
                rules = early_sample_rules(t_ratio * T, T, t_post)
                rows.append(
                    {
                        "T": T,
                        "t_post": t_post,
                        "t": t_ratio * T,
                        "min_eig": result.min_eig,
                        "psd": result.psd,
                        "final_rule": rules.final_rule,
                        "draft_rule": rules.draft_rule,
                    }
                )
    return rows
