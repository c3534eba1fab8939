"""Cost-aware efficient frontiers and optimal portfolios via split-variable SQP.

Weights are represented as w = z - y with the stacked non-negative vector
x = (z_1..z_K, y_1..y_K), which removes the |w| terms from the constraints.
All problems are solved with SLSQP using analytic gradients; the nonlinear
piece is the trading cost A(x) and its derivative B(x).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .market_gen import MarketSpec

__all__ = [
    "SplitVector",
    "FrontierPoint",
    "FrontierCurve",
    "OptimalPortfolio",
    "cost_vector",
    "cost_gradient",
    "net_return",
    "net_return_gradient",
    "c_bounds",
    "frontier_point",
    "build_frontier",
    "optimal_portfolio",
    "utility_loss",
    "frontier_band",
]

X_FLOOR = 1e-8  # gradient-only floor: dA/dx blows up at 0 when exponents < 1
_NORM_EPS = 1e-16  # regularizer for the sqrt gradient at sigma_p = 0
_FEAS_TOL_EQ = 1e-8
_FEAS_TOL_RETURN = 1e-6
_SLSQP_OPTS = {"maxiter": 500, "ftol": 1e-12}


@dataclass(frozen=True)
class SplitVector:
    """Non-negative stacked vector x = (z, y) with weights w = z - y."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size % 2:
            raise ValueError("x must be a flat vector of even length")
        if np.any(x < 0):
            raise ValueError("split variables must be non-negative")
        object.__setattr__(self, "x", x)

    @property
    def weights(self) -> np.ndarray:
        k = self.x.size // 2
        return self.x[:k] - self.x[k:]


@dataclass(frozen=True)
class FrontierPoint:
    c1: float
    sigma_p: float
    weights: np.ndarray
    feasible: bool
    x: np.ndarray


@dataclass(frozen=True)
class FrontierCurve:
    points: tuple[FrontierPoint, ...]
    c_min: float
    c_max: float
    spec_digest: str

    def to_csv(self, path) -> None:
        k = self.points[0].weights.size if self.points else 0
        header = ["c1", "sigma_p"] + [f"w{i + 1}" for i in range(k)] + ["feasible"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for pt in self.points:
                writer.writerow(
                    [repr(pt.c1), repr(pt.sigma_p)]
                    + [repr(float(w)) for w in pt.weights]
                    + [str(pt.feasible)]
                )

    def to_json(self) -> str:
        doc = {
            "c_min": self.c_min,
            "c_max": self.c_max,
            "spec_digest": self.spec_digest,
            "points": [
                {
                    "c1": pt.c1,
                    "sigma_p": pt.sigma_p,
                    "weights": pt.weights.tolist(),
                    "feasible": pt.feasible,
                }
                for pt in self.points
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


@dataclass(frozen=True)
class OptimalPortfolio:
    weights: np.ndarray
    r_p: float
    sigma_p: float
    utility: float
    risk_aversion: float
    r_f: float
    x: np.ndarray

    def to_json(self) -> str:
        doc = {
            "weights": self.weights.tolist(),
            "r_p": self.r_p,
            "sigma_p": self.sigma_p,
            "utility": self.utility,
            "risk_aversion": self.risk_aversion,
            "r_f": self.r_f,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def spec_digest(spec: MarketSpec) -> str:
    return hashlib.sha256(spec.to_json().encode()).hexdigest()[:16]


def _tiled_params(spec: MarketSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    g = np.array([t.gamma for t in spec.thetas])
    e = np.array([t.eta for t in spec.thetas])
    a = np.array([t.alpha for t in spec.thetas])
    b = np.array([t.beta for t in spec.thetas])
    return np.tile(g, 2), np.tile(e, 2), np.tile(a, 2), np.tile(b, 2)


def _sigma_star(spec: MarketSpec) -> np.ndarray:
    s = spec.cov
    return np.block([[s, -s], [-s, s]])


def _r_star(spec: MarketSpec) -> np.ndarray:
    return np.concatenate([spec.returns, -spec.returns])


def _as_x(x) -> np.ndarray:
    x = np.asarray(getattr(x, "x", x), dtype=float)
    if np.any(x < -1e-12):
        raise ValueError("split variables must be non-negative")
    return np.maximum(x, 0.0)


def cost_vector(x, spec: MarketSpec) -> np.ndarray:
    """Per-leg trading cost A_i = T/2 * gamma (m x_i)^alpha + eta (m x_i)^beta.

    Exact at x_i = 0 (no trade, no cost); the leg for asset j appears at
    positions j and K + j.
    """
    x = _as_x(x)
    g, e, a, b = _tiled_params(spec)
    rate = spec.m * x
    return 0.5 * spec.big_t * g * rate**a + e * rate**b


def cost_gradient(x, spec: MarketSpec) -> np.ndarray:
    """Elementwise derivative B_i = dA_i/dx_i, evaluated at max(x_i, floor).

    The floor keeps SQP steps finite where the derivative diverges at 0;
    the cost value itself stays exact at 0.
    """
    x = np.maximum(_as_x(x), X_FLOOR)
    g, e, a, b = _tiled_params(spec)
    rate = spec.m * x
    return (
        0.5 * spec.big_t * g * a * spec.m * rate ** (a - 1.0)
        + e * b * spec.m * rate ** (b - 1.0)
    )


def net_return(x, spec: MarketSpec) -> float:
    """Expected portfolio return net of trading costs: x.(R, -R) - sum A(x)."""
    x = _as_x(x)
    return float(x @ _r_star(spec) - cost_vector(x, spec).sum())


def net_return_gradient(x, spec: MarketSpec) -> np.ndarray:
    return _r_star(spec) - cost_gradient(x, spec)


def _portfolio_constraints(spec: MarketSpec, l1: float) -> list[dict]:
    k = spec.k
    budget_grad = np.concatenate([np.ones(k), -np.ones(k)])
    lev_grad = np.ones(2 * k)
    return [
        {"type": "eq", "fun": lambda x: x @ budget_grad - 1.0, "jac": lambda x: budget_grad},
        {"type": "ineq", "fun": lambda x: l1 - x.sum(), "jac": lambda x: -lev_grad},
    ]


def _default_starts(spec: MarketSpec, l1: float) -> list[np.ndarray]:
    k = spec.k
    starts = [np.concatenate([np.full(k, 1.0 / k), np.zeros(k)])]
    best = int(np.argmax(spec.returns))
    worst = int(np.argmin(spec.returns))
    for hi, lo in ((best, worst), (worst, best)):
        x = np.zeros(2 * k)
        if l1 > 1.0 and hi != lo:
            x[hi] = (l1 + 1.0) / 2.0
            x[k + lo] = (l1 - 1.0) / 2.0
        else:
            x[hi] = 1.0
        starts.append(x)
    x = np.zeros(2 * k)
    x[best] = 1.0
    starts.append(x)
    return starts


def _solve(objective, jac, x0, spec, l1, extra_constraints=(), bounds=None):
    cons = _portfolio_constraints(spec, l1) + list(extra_constraints)
    if bounds is None:
        bounds = [(0.0, None)] * (2 * spec.k)
    x0 = np.asarray(x0, dtype=float)
    x0 = np.clip(x0, [b[0] for b in bounds], [np.inf if b[1] is None else b[1] for b in bounds])
    return minimize(
        objective,
        x0,
        jac=jac,
        bounds=bounds,
        constraints=cons,
        method="SLSQP",
        options=_SLSQP_OPTS,
    )


def _pattern_bounds(pattern: np.ndarray) -> list[tuple[float, float | None]]:
    """Box bounds pinning the off-sign leg of each asset to zero.

    Restricting to a sign orthant removes two-sided (z and y both positive)
    positions, which only burn cost and never describe a genuine portfolio.
    """
    bounds: list[tuple[float, float | None]] = []
    for s in pattern:
        bounds.append((0.0, None) if s >= 0 else (0.0, 0.0))
    for s in pattern:
        bounds.append((0.0, 0.0) if s >= 0 else (0.0, None))
    return bounds


def _candidate_patterns(spec: MarketSpec, solutions=()) -> list[tuple[int, ...]]:
    k = spec.k
    patterns = {tuple([1] * k)}
    r = spec.returns
    best, worst = int(np.argmax(r)), int(np.argmin(r))
    for signs in (np.sign(r), -np.sign(r)):
        patterns.add(tuple(int(1 if s >= 0 else -1) for s in signs))
    for flip in (best, worst):
        base = [1] * k
        base[flip] = -1
        patterns.add(tuple(base))
    for x in solutions:
        w = x[:k] - x[k:]
        patterns.add(tuple(int(1 if wi >= 0 else -1) for wi in w))
    return sorted(patterns)


def _check_feasible(x, spec, l1, c1=None) -> bool:
    k = spec.k
    w = x[:k] - x[k:]
    ok = abs(w.sum() - 1.0) <= _FEAS_TOL_EQ and np.abs(w).sum() <= l1 + _FEAS_TOL_EQ
    if c1 is not None:
        ok = ok and abs(net_return(x, spec) - c1) <= _FEAS_TOL_RETURN
    return bool(ok)


def _collect(objective, jac, spec, l1, starts, extra_constraints=(), bounds=None, c1=None):
    """Run SLSQP from each start; keep constraint-verified end points.

    The cost gradient is legitimately steep near zero positions, which makes
    SLSQP occasionally stop with a line-search stall at an already-feasible
    point, so candidates are screened by explicit constraint checks rather
    than by the solver status, and ranked by the re-evaluated objective.
    """
    out = []
    for x0 in starts:
        start = np.maximum(np.asarray(x0, dtype=float), 0.0)
        if _check_feasible(start, spec, l1, c1):
            out.append((float(objective(start)), start))  # boundary targets: the
            # feasible set may be one point, and SLSQP can walk off it
        res = _solve(objective, jac, x0, spec, l1, extra_constraints, bounds)
        x = np.maximum(res.x, 0.0)
        if _check_feasible(x, spec, l1, c1):
            out.append((float(objective(x)), x))
    return out


def _polished_candidates(objective, jac, spec, l1, extra_constraints=(), c1=None):
    """Split solves plus sign-pattern-restricted polishing.

    Pattern solves pin the off-sign leg of every asset to zero, which both
    removes wasteful two-sided positions and eliminates the near-zero legs
    whose cost gradients destabilize the line search.
    """
    starts = _default_starts(spec, l1)
    split = _collect(objective, jac, spec, l1, starts, extra_constraints, c1=c1)
    split.sort(key=lambda t: t[0])
    seeds = [x for _, x in split[:2]]
    candidates = []
    for pattern in _candidate_patterns(spec, seeds):
        bounds = _pattern_bounds(np.asarray(pattern))
        candidates += _collect(
            objective, jac, spec, l1, seeds[:1] + starts[:1], extra_constraints, bounds, c1
        )
    return candidates, split


def _c_bounds_solutions(spec: MarketSpec, l1: float) -> tuple[float, float, np.ndarray, np.ndarray]:
    def neg(x):
        return -net_return(x, spec)

    def neg_jac(x):
        return -net_return_gradient(x, spec)

    def pos(x):
        return net_return(x, spec)

    def pos_jac(x):
        return net_return_gradient(x, spec)

    hi, _ = _polished_candidates(neg, neg_jac, spec, l1)
    lo, _ = _polished_candidates(pos, pos_jac, spec, l1)
    if not hi or not lo:
        raise RuntimeError("return-range subproblems did not converge")
    fun_max, x_max = min(hi, key=lambda t: t[0])
    fun_min, x_min = min(lo, key=lambda t: t[0])
    return float(fun_min), float(-fun_max), x_min, x_max


def c_bounds(spec: MarketSpec, l1: float | None = None) -> tuple[float, float]:
    """Attainable net-return range over genuine (one-sided) portfolios.

    Uses the same SQP machinery as the frontier: split solves seed candidate
    sign patterns, and each pattern is polished with its off-sign legs pinned
    to zero. Without the pinning, the minimization would happily churn (hold
    z and y simultaneously) to burn cost below any real portfolio's return.
    """
    l1 = spec.leverage if l1 is None else float(l1)
    c_min, c_max, _, _ = _c_bounds_solutions(spec, l1)
    return c_min, c_max


def _make_frontier_point(c1, x, spec, feasible) -> FrontierPoint:
    k = spec.k
    w = x[:k] - x[k:]
    sigma_p = float(np.sqrt(max(w @ spec.cov @ w, 0.0)))
    return FrontierPoint(c1=float(c1), sigma_p=sigma_p, weights=w, feasible=feasible, x=x)


def _markowitz_start(spec: MarketSpec, c1: float) -> np.ndarray | None:
    """Closed-form two-equality minimum-variance weights, split canonically.

    The cost-free problem is a small perturbation of the cost-aware one, so
    its solution predicts the right sign orthant and is an excellent warm
    start along the whole frontier.
    """
    k = spec.k
    kkt = np.zeros((k + 2, k + 2))
    kkt[:k, :k] = 2.0 * spec.cov
    kkt[:k, k] = spec.returns
    kkt[:k, k + 1] = 1.0
    kkt[k, :k] = spec.returns
    kkt[k + 1, :k] = 1.0
    rhs = np.concatenate([np.zeros(k), [c1, 1.0]])
    try:
        w = np.linalg.solve(kkt, rhs)[:k]
    except np.linalg.LinAlgError:
        return None
    return np.concatenate([np.maximum(w, 0.0), np.maximum(-w, 0.0)])


def frontier_point(
    c1: float,
    spec: MarketSpec,
    l1: float | None = None,
    x0: np.ndarray | None = None,
    extra_starts: Sequence[np.ndarray] = (),
) -> FrontierPoint:
    """Minimum-variance portfolio at target net return c1.

    Solutions are polished within sign patterns so reported points hold no
    two-sided positions. Non-convergence yields a point flagged infeasible
    rather than an error, so frontier sweeps continue past hard targets.
    """
    l1 = spec.leverage if l1 is None else float(l1)
    sigma_star = _sigma_star(spec)

    def objective(x):
        return float(x @ sigma_star @ x)

    def jac(x):
        return 2.0 * sigma_star @ x

    return_con = [
        {
            "type": "eq",
            "fun": lambda x: net_return(x, spec) - c1,
            "jac": lambda x: net_return_gradient(x, spec),
        }
    ]
    def attempt(starts):
        split = _collect(objective, jac, spec, l1, starts, return_con, c1=c1)
        if not split:
            return []
        split.sort(key=lambda t: t[0])
        seeds = [x for _, x in split[:1]]
        k = spec.k
        w = seeds[0][:k] - seeds[0][k:]
        patterns = {
            tuple(int(1 if wi >= 0 else -1) for wi in w),
            tuple([1] * k),
        }
        candidates = []
        for pattern in sorted(patterns):
            bounds = _pattern_bounds(np.asarray(pattern))
            candidates += _collect(objective, jac, spec, l1, seeds, return_con, bounds, c1)
        if not candidates:
            # the seed's own orthant cannot meet the target; widen the search
            for pattern in _candidate_patterns(spec, seeds):
                bounds = _pattern_bounds(np.asarray(pattern))
                candidates += _collect(
                    objective, jac, spec, l1, seeds + starts[:1], return_con, bounds, c1
                )
        return candidates or split  # pattern-restricted solutions preferred

    primary = ([x0] if x0 is not None else []) + list(extra_starts)
    pool = attempt(primary) if primary else []
    if not pool:
        pool = attempt(_default_starts(spec, l1) + list(extra_starts))
    if not pool and not extra_starts:
        # boundary targets admit essentially one portfolio: seed from the
        # return-range extremizers before giving up
        _, _, x_lo, x_hi = _c_bounds_solutions(spec, l1)
        pool = attempt([x_hi, x_lo])
    if not pool:
        x_fail = np.maximum(primary[0] if primary else _default_starts(spec, l1)[0], 0.0)
        return _make_frontier_point(c1, x_fail, spec, feasible=False)
    _, x_best = min(pool, key=lambda t: t[0])
    return _make_frontier_point(c1, x_best, spec, feasible=True)


def build_frontier(spec: MarketSpec, l1: float | None = None, n_points: int = 50) -> FrontierCurve:
    """Frontier on a uniform c1 grid, warm-starting each solve from the last.

    The return-range maximizer and minimizer seed the boundary targets, where
    the feasible set degenerates to nearly a single portfolio.
    """
    if n_points < 2:
        raise ValueError("need at least the two endpoint targets")
    l1 = spec.leverage if l1 is None else float(l1)
    c_min, c_max, x_min, x_max = _c_bounds_solutions(spec, l1)
    grid = np.linspace(c_min, c_max, n_points)
    points: list[FrontierPoint] = []
    x_prev = x_min
    for c1 in grid:
        pt = frontier_point(float(c1), spec, l1, x0=x_prev, extra_starts=(x_min, x_max))
        points.append(pt)
        if pt.feasible:
            x_prev = pt.x
    # second pass downward: warm starts from the neighbor above repair any
    # point the ascending sweep left on a worse local basin
    for i in range(n_points - 2, -1, -1):
        if not points[i + 1].feasible:
            continue
        retry = frontier_point(grid[i], spec, l1, x0=points[i + 1].x)
        if retry.feasible and (not points[i].feasible or retry.sigma_p < points[i].sigma_p):
            points[i] = retry
    return FrontierCurve(
        points=tuple(points), c_min=c_min, c_max=c_max, spec_digest=spec_digest(spec)
    )


def optimal_portfolio(
    risk_aversion: float,
    r_f: float,
    spec: MarketSpec,
    l1: float | None = None,
) -> OptimalPortfolio:
    """Maximize the linear utility (r_p - r_f) - lambda * sigma_p.

    Solved as min sigma_p - (net - r_f)/lambda; multi-started because the
    concave cost makes the objective nonconvex.
    """
    if risk_aversion <= 0:
        raise ValueError("risk aversion must be positive")
    l1 = spec.leverage if l1 is None else float(l1)
    sigma_star = _sigma_star(spec)
    inv_lam = 1.0 / risk_aversion
    k = spec.k

    def objective(x):
        quad = float(x @ sigma_star @ x)
        return np.sqrt(max(quad, 0.0)) - inv_lam * (net_return(x, spec) - r_f)

    def jac(x):
        quad = float(x @ sigma_star @ x)
        return sigma_star @ x / np.sqrt(quad + _NORM_EPS) - inv_lam * net_return_gradient(x, spec)

    candidates, split = _polished_candidates(objective, jac, spec, l1)
    pool = candidates or split
    if not pool:
        raise RuntimeError("optimal-portfolio solve did not converge from any start")
    _, x = min(pool, key=lambda t: t[0])
    w = x[:k] - x[k:]
    r_p = net_return(x, spec)
    sigma_p = float(np.sqrt(max(w @ spec.cov @ w, 0.0)))
    utility = (r_p - r_f) - risk_aversion * sigma_p
    return OptimalPortfolio(
        weights=w,
        r_p=r_p,
        sigma_p=sigma_p,
        utility=utility,
        risk_aversion=risk_aversion,
        r_f=r_f,
        x=x,
    )


def _utility_of_weights(w: np.ndarray, spec: MarketSpec, risk_aversion: float, r_f: float) -> float:
    """True-cost utility of a weight vector, re-split canonically (z and y = w+-)."""
    x = np.concatenate([np.maximum(w, 0.0), np.maximum(-w, 0.0)])
    r_p = net_return(x, spec)
    sigma_p = float(np.sqrt(max(w @ spec.cov @ w, 0.0)))
    return (r_p - r_f) - risk_aversion * sigma_p


def utility_loss(
    theta_hats,
    spec_true: MarketSpec,
    risk_aversion: float,
    r_f: float = 0.0,
    l1: float | None = None,
) -> float:
    """Utility given up by optimizing under estimated instead of true costs.

    Solves the optimal portfolio under the estimated parameters, re-prices
    its weights under the true costs, and returns the (non-negative up to
    solver tolerance) shortfall against the true optimum.
    """
    if len(theta_hats) != spec_true.k:
        raise ValueError("need one estimated parameter set per asset")
    l1 = spec_true.leverage if l1 is None else float(l1)
    opt_true = optimal_portfolio(risk_aversion, r_f, spec_true, l1)
    opt_hat = optimal_portfolio(risk_aversion, r_f, spec_true.with_thetas(theta_hats), l1)
    u_hat = _utility_of_weights(opt_hat.weights, spec_true, risk_aversion, r_f)
    # the estimated-cost portfolio is feasible for the true problem, so it is
    # a legitimate extra candidate for the true optimum
    u_true = max(
        _utility_of_weights(opt_true.weights, spec_true, risk_aversion, r_f), u_hat
    )
    return float(u_true - u_hat)


def frontier_band(
    curves, n_sigma: int = 50, quantiles=(0.05, 0.5, 0.95)
) -> list[dict]:
    """Aggregate replicated frontiers into per-sigma return quantiles.

    Each curve is reduced to its upper branch (max return at given risk) and
    interpolated on a common sigma grid; rows report the requested quantiles
    across replications.
    """
    branches = []
    for curve in curves:
        pts = [p for p in curve.points if p.feasible]
        if len(pts) < 2:
            continue
        i_min = int(np.argmin([p.sigma_p for p in pts]))
        upper = pts[i_min:]
        sig = np.array([p.sigma_p for p in upper])
        ret = np.array([p.c1 for p in upper])
        order = np.argsort(sig)
        branches.append((sig[order], ret[order]))
    if not branches:
        return []
    lo = max(b[0][0] for b in branches)
    hi = min(b[0][-1] for b in branches)
    if hi <= lo:
        return []
    grid = np.linspace(lo, hi, n_sigma)
    samples = np.array([np.interp(grid, sig, ret) for sig, ret in branches])
    rows = []
    for i, s in enumerate(grid):
        row = {"sigma_p": float(s)}
        for q in quantiles:
            row[f"q{int(round(q * 100)):02d}"] = float(np.quantile(samples[:, i], q))
        rows.append(row)
    return rows
