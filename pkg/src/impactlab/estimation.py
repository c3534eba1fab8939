"""Maximum-likelihood fitting of impact parameters under each sampling design.

Every design factors into independent Gaussian residuals that are affine in
the impact pair (g(v), h(v)), so the likelihood is minimized with a damped
Levenberg-Marquardt iteration on the stacked whitened residuals, and the
observed information is the Gauss-Newton sum of per-sample J^T W J blocks.
sigma is treated as known throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .fisher_info import jacobian_ij, weight_matrix
from .model_core import PARAM_ORDER, ImpactParams, ij_cov
from .sim_engine import Design, DesignKind, OrderSample

__all__ = [
    "IdentifiabilityError",
    "SingularInformationError",
    "FitSpec",
    "FitResult",
    "neg_log_likelihood",
    "nll_gradient",
    "fit",
    "theoretical_sd",
    "reparametrize",
]

# Solver box: coefficients positive, exponents inside (0, 2).
_LOWER = np.array([1e-10, 1e-10, 1e-6, 1e-6])
_UPPER = np.array([1e6, 1e6, 2.0 - 1e-6, 2.0 - 1e-6])


class IdentifiabilityError(ValueError):
    """The dataset cannot identify the requested free parameters."""


class SingularInformationError(ValueError):
    """The observed information matrix is rank deficient."""


@dataclass(frozen=True)
class FitSpec:
    """What to fit and how: design, free parameters, fixed values, solver knobs."""

    design: Design
    free: tuple[str, ...] = PARAM_ORDER
    fixed: Mapping[str, float] = field(default_factory=dict)
    init: ImpactParams | None = None
    max_iter: int = 200
    grad_tol: float = 1e-8
    step_tol: float = 1e-12

    def __post_init__(self):
        if not self.free:
            raise ValueError("at least one free parameter is required")
        names = set(self.free) | set(self.fixed)
        if set(self.free) & set(self.fixed):
            raise ValueError("free and fixed parameters overlap")
        if names != set(PARAM_ORDER):
            raise ValueError(f"free + fixed must cover exactly {PARAM_ORDER}")
        object.__setattr__(self, "free", tuple(n for n in PARAM_ORDER if n in self.free))
        if self.init is not None:
            arr = self.init.as_array()
            if np.any(arr < _LOWER) or np.any(arr > _UPPER):
                raise ValueError("init lies outside the solver box")


@dataclass(frozen=True)
class FitResult:
    theta_hat: ImpactParams
    converged: bool
    iterations: int
    nll: float
    theoretical_sd: Mapping[str, float]
    sample_size: int

    CSV_HEADER = (
        "design,n,gamma_hat,eta_hat,alpha_hat,beta_hat,"
        "sd_gamma,sd_eta,sd_alpha,sd_beta,converged,seed"
    )

    def to_csv_row(self, design: Design, seed=None) -> str:
        theta = self.theta_hat
        sds = [self.theoretical_sd.get(name, float("nan")) for name in PARAM_ORDER]
        cells = [design.label, str(self.sample_size)]
        cells += [repr(x) for x in (theta.gamma, theta.eta, theta.alpha, theta.beta)]
        cells += [repr(s) for s in sds]
        cells += [str(self.converged), "" if seed is None else str(seed)]
        return ",".join(cells)


def reparametrize(p: ImpactParams, v0: float, c1: float, c2: float) -> ImpactParams:
    """The degenerate-equivalent parameters at a single participation rate v0.

    g and h at v0 are unchanged under (gamma*v0**c1, eta*v0**c2, alpha-c1,
    beta-c2), which is why constant-POV datasets cannot identify all four
    parameters.
    """
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    return ImpactParams(
        gamma=p.gamma * v0**c1,
        eta=p.eta * v0**c2,
        alpha=p.alpha - c1,
        beta=p.beta - c2,
    )


class _ResidualStack:
    """Whitened residual rows r_i = cg_i * g(v_i) + ch_i * h(v_i) - y_i.

    Each design contributes rows with constant coefficients (cg, ch) and
    whitened observations y; only g and h depend on theta, which keeps the
    Jacobian a rank-one update per row.
    """

    def __init__(self, design: Design, data: Sequence[OrderSample], sigma: float):
        if not data:
            raise ValueError("data must be non-empty")
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.design = design
        self.n_samples = len(data)

        cg, ch, y, v, log_scale = [], [], [], [], 0.0
        if design.kind is DesignKind.ALMGREN_IJ:
            for s in data:
                cov = ij_cov(s.T, s.t_post, sigma)
                l11 = math.sqrt(cov[0, 0])
                l21 = cov[1, 0] / l11
                l22 = math.sqrt(cov[1, 1] - l21 * l21)
                obs1 = s.i_stat
                obs2 = s.j_stat - 0.5 * s.i_stat
                # rows of L^{-1} @ ([T, 0; 0, 1] (g, h) - obs)
                cg.append(s.T / l11)
                ch.append(0.0)
                y.append(obs1 / l11)
                v.append(s.v)
                cg.append(-l21 * s.T / (l11 * l22))
                ch.append(1.0 / l22)
                y.append(obs2 / l22 - l21 * obs1 / (l11 * l22))
                v.append(s.v)
                log_scale += math.log(l11 * l22)
        else:
            ratios = design.ratios
            for s in data:
                prev_ratio = None
                for ratio in ratios:
                    p_now = s.point(ratio)
                    if prev_ratio is None:
                        scale = sigma * math.sqrt(ratio * s.T)
                        cg.append(ratio * s.T / scale)
                        ch.append(1.0 / scale)
                        y.append(p_now / scale)
                    else:
                        dt_seg = (ratio - prev_ratio) * s.T
                        scale = sigma * math.sqrt(dt_seg)
                        cg.append(dt_seg / scale)
                        ch.append(0.0)
                        y.append((p_now - s.point(prev_ratio)) / scale)
                    v.append(s.v)
                    log_scale += math.log(scale)
                    prev_ratio = ratio
                scale = sigma * math.sqrt(s.t_post - s.T)
                cg.append(0.0)
                ch.append(1.0 / scale)
                y.append((s.point(1.0) - s.i_stat) / scale)
                v.append(s.v)
                log_scale += math.log(scale)

        self.cg = np.asarray(cg)
        self.ch = np.asarray(ch)
        self.y = np.asarray(y)
        self.v = np.asarray(v)
        self.log_v = np.log(self.v)
        self.norm_const = log_scale + 0.5 * len(self.y) * math.log(2.0 * math.pi)

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        gamma, eta, alpha, beta = theta
        g = gamma * self.v**alpha
        h = eta * self.v**beta
        return self.cg * g + self.ch * h - self.y

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        gamma, eta, alpha, beta = theta
        va = self.v**alpha
        vb = self.v**beta
        J = np.empty((len(self.y), 4))
        J[:, 0] = self.cg * va
        J[:, 1] = self.ch * vb
        J[:, 2] = self.cg * gamma * va * self.log_v
        J[:, 3] = self.ch * eta * vb * self.log_v
        return J

    def nll(self, theta: np.ndarray) -> float:
        r = self.residuals(theta)
        return 0.5 * float(r @ r) + self.norm_const


def neg_log_likelihood(
    design: Design, data: Sequence[OrderSample], p: ImpactParams, sigma: float
) -> float:
    """Exact Gaussian negative log-likelihood of the data under the design."""
    return _ResidualStack(design, data, sigma).nll(p.as_array())


def nll_gradient(
    design: Design, data: Sequence[OrderSample], p: ImpactParams, sigma: float
) -> np.ndarray:
    """Analytic gradient of the negative log-likelihood in PARAM_ORDER."""
    stack = _ResidualStack(design, data, sigma)
    theta = p.as_array()
    return stack.jacobian(theta).T @ stack.residuals(theta)


def _default_init(spec: FitSpec, data: Sequence[OrderSample]) -> np.ndarray:
    """Free exponents start at 0.75; coefficients at a method-of-moments guess."""
    theta = np.empty(4)
    for i, name in enumerate(PARAM_ORDER):
        if name in spec.fixed:
            theta[i] = spec.fixed[name]
    v_bar = float(np.mean([s.v for s in data]))
    t_bar = float(np.mean([s.T for s in data]))
    i_bar = float(np.mean([s.i_stat for s in data]))
    jmi_bar = float(np.mean([s.j_stat - 0.5 * s.i_stat for s in data]))
    guesses = {
        "alpha": 0.75,
        "beta": 0.75,
        "gamma": max(i_bar / (t_bar * v_bar**0.75), 1e-6),
        "eta": max(jmi_bar / v_bar**0.75, 1e-6),
    }
    for name in spec.free:
        theta[PARAM_ORDER.index(name)] = guesses[name]
    return np.clip(theta, _LOWER, _UPPER)


def _check_identifiable(spec: FitSpec, data: Sequence[OrderSample]) -> None:
    if len(spec.free) < 3:
        return
    distinct = len({s.v for s in data})
    if distinct < 2:
        raise IdentifiabilityError(
            f"{len(spec.free)} free parameters need at least 2 distinct POV values, "
            f"dataset has {distinct}; constant-POV data admits a reparametrization family"
        )


def fit(spec: FitSpec, data: Sequence[OrderSample], sigma: float) -> FitResult:
    """Damped Levenberg-Marquardt on the stacked whitened residuals.

    Uses Marquardt diagonal scaling (coefficients and exponents live on very
    different scales) and clips trial steps into the solver box. Converged
    means the projected gradient test passed at exit.
    """
    _check_identifiable(spec, data)
    stack = _ResidualStack(spec.design, data, sigma)
    free_idx = [PARAM_ORDER.index(name) for name in spec.free]

    theta = spec.init.as_array() if spec.init is not None else _default_init(spec, data)
    for name, value in spec.fixed.items():
        theta[PARAM_ORDER.index(name)] = value

    r = stack.residuals(theta)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    converged = False
    iterations = 0

    for iterations in range(1, spec.max_iter + 1):
        J = stack.jacobian(theta)[:, free_idx]
        grad = J.T @ r
        if np.max(np.abs(grad)) <= spec.grad_tol * (1.0 + abs(cost)):
            converged = True
            break

        JtJ = J.T @ J
        diag = np.diag(JtJ).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta.copy()
            trial[free_idx] = np.clip(
                theta[free_idx] + step, _LOWER[free_idx], _UPPER[free_idx]
            )
            r_trial = stack.residuals(trial)
            cost_trial = 0.5 * float(r_trial @ r_trial)
            if cost_trial < cost:
                moved = np.linalg.norm(trial[free_idx] - theta[free_idx])
                theta, r, cost = trial, r_trial, cost_trial
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if moved <= spec.step_tol * (1.0 + np.linalg.norm(theta[free_idx])):
                    J = stack.jacobian(theta)[:, free_idx]
                    converged = bool(
                        np.max(np.abs(J.T @ r)) <= spec.grad_tol * (1.0 + abs(cost))
                    )
                    accepted = False  # stop: step stalled
                break
            lam *= 3.0
        if not accepted:
            if not converged:
                # re-test the gradient at the final point
                J = stack.jacobian(theta)[:, free_idx]
                converged = bool(np.max(np.abs(J.T @ r)) <= spec.grad_tol * (1.0 + abs(cost)))
            break

    theta_hat = ImpactParams.from_array(theta)
    result_spec = replace(spec, init=None)
    try:
        sds = theoretical_sd(result_spec, theta_hat, data, sigma)
    except SingularInformationError:
        sds = {name: float("nan") for name in spec.free}
    return FitResult(
        theta_hat=theta_hat,
        converged=converged,
        iterations=iterations,
        nll=stack.nll(theta),
        theoretical_sd=sds,
        sample_size=len(data),
    )


def theoretical_sd(
    spec: FitSpec, theta: ImpactParams, data: Sequence[OrderSample], sigma: float
) -> dict[str, float]:
    """Hessian-implied standard deviations from the observed information.

    Sums the per-sample J^T W J blocks of the design, restricts to the free
    parameters, inverts, and returns sqrt of the diagonal.
    """
    free_idx = [PARAM_ORDER.index(name) for name in spec.free]
    k = len(free_idx)
    info = np.zeros((k, k))
    for s in data:
        W = weight_matrix(spec.design, s.T, s.t_post, sigma)
        J = jacobian_ij(theta, s.T, s.v)[:, free_idx]
        info += J.T @ W @ J
    rank = np.linalg.matrix_rank(info, tol=1e-12 * max(1.0, float(np.abs(info).max())))
    if rank < k:
        raise SingularInformationError(
            f"observed information on {spec.free} has rank {rank} < {k}"
        )
    cov = np.linalg.inv(info)
    return {name: float(np.sqrt(cov[i, i])) for i, name in enumerate(spec.free)}
