import itertools

import numpy as np
import pytest

from impactlab import (
    ImpactParams,
    MarketSpec,
    SplitVector,
    build_frontier,
    c_bounds,
    cost_gradient,
    cost_vector,
    cov_from,
    frontier_point,
    gen_market,
    net_return,
    net_return_gradient,
    optimal_portfolio,
    utility_loss,
    vwap_cost,
)
from impactlab.portfolio_opt import frontier_band

MARKET = gen_market(5, seed=2718)
ZERO_COST = MARKET.with_thetas([ImpactParams(0.0, 0.0, 1.0, 1.0)] * 5)


def one_asset_market(theta=ImpactParams(0.3, 0.14, 0.9, 0.6), r=0.08, sig=0.1):
    sigma = np.array([sig])
    corr = np.eye(1)
    return MarketSpec(
        k=1, sigma=sigma, returns=np.array([r]), corr=corr,
        cov=cov_from(sigma, corr), thetas=(theta,), m=0.1, big_t=1.0, leverage=2.0,
    )


def markowitz_oracle(cov, returns, c1):
    """Two-equality-constraint minimum variance via the KKT linear system."""
    k = len(returns)
    kkt = np.zeros((k + 2, k + 2))
    kkt[:k, :k] = 2 * cov
    kkt[:k, k] = returns
    kkt[:k, k + 1] = 1.0
    kkt[k, :k] = returns
    kkt[k + 1, :k] = 1.0
    rhs = np.concatenate([np.zeros(k), [c1, 1.0]])
    sol = np.linalg.solve(kkt, rhs)
    w = sol[:k]
    return w, float(w @ cov @ w)


class TestCostVector:
    def test_zero_positions(self):
        assert np.all(cost_vector(np.zeros(10), MARKET) == 0.0)

    def test_single_asset_matches_vwap_cost(self):
        spec = one_asset_market()
        x = np.array([1.0, 0.0])
        a = cost_vector(x, spec)
        assert a[0] == pytest.approx(vwap_cost(spec.thetas[0], T=1.0, v=0.1), rel=1e-12)
        assert a[0] == pytest.approx(0.0540504, abs=5e-7)
        assert a[1] == 0.0

    def test_depends_only_on_m_times_x(self):
        import dataclasses

        x = np.array([0.4, 0.2, 0.6, 0.1, 0.3, 0.0, 0.5, 0.2, 0.1, 0.7])
        half_m = dataclasses.replace(MARKET, m=MARKET.m / 2)
        assert np.allclose(cost_vector(x, half_m), cost_vector(x / 2, MARKET), rtol=1e-12)

    def test_leg_layout_tiles_assets(self):
        x = np.zeros(10)
        x[2] = 0.5
        a1 = cost_vector(x, MARKET)
        x2 = np.zeros(10)
        x2[7] = 0.5  # same asset, short leg
        a2 = cost_vector(x2, MARKET)
        assert a1[2] == a2[7] and a1.sum() == a2.sum()


class TestCostGradient:
    def test_finite_differences(self):
        x = np.full(10, 0.5)
        grad = cost_gradient(x, MARKET)
        eps = 1e-6
        for i in range(10):
            hi, lo = x.copy(), x.copy()
            hi[i] += eps
            lo[i] -= eps
            fd = (cost_vector(hi, MARKET)[i] - cost_vector(lo, MARKET)[i]) / (2 * eps)
            assert abs(grad[i] - fd) / abs(fd) < 1e-5

    def test_linear_cost_constant_gradient(self):
        spec = MARKET.with_thetas([ImpactParams(0.3, 0.14, 1.0, 1.0)] * 5)
        g1 = cost_gradient(np.full(10, 0.2), spec)
        g2 = cost_gradient(np.full(10, 0.8), spec)
        assert np.allclose(g1, g2, rtol=1e-12)
        expected = spec.m * (0.5 * spec.big_t * 0.3 + 0.14)
        assert np.allclose(g1, expected, rtol=1e-12)

    def test_concave_power_gradient_decreasing(self):
        grads = [cost_gradient(np.full(10, x), MARKET) for x in (0.1, 0.4, 0.9)]
        assert np.all(grads[0] > grads[1]) and np.all(grads[1] > grads[2])

    def test_floor_keeps_gradient_finite_at_zero(self):
        g = cost_gradient(np.zeros(10), MARKET)
        assert np.all(np.isfinite(g))


class TestNetReturn:
    def test_zero_costs(self):
        x = np.array([0.7, 0.3, 0.2, 0.0, 0.4, 0.0, 0.1, 0.0, 0.2, 0.0])
        w = x[:5] - x[5:]
        assert net_return(x, ZERO_COST) == pytest.approx(float(w @ ZERO_COST.returns), rel=1e-12)

    def test_single_asset_full_weight(self):
        spec = one_asset_market()
        x = np.array([1.0, 0.0])
        expected = spec.returns[0] - cost_vector(x, spec).sum()
        assert net_return(x, spec) == pytest.approx(expected, rel=1e-12)

    def test_two_sided_position_pays_double_cost(self):
        x_net = np.zeros(10)
        x_both = np.zeros(10)
        x_both[0] = x_both[5] = 0.5  # z = y -> w = 0 but both legs trade
        assert net_return(x_both, MARKET) == pytest.approx(
            -2 * cost_vector(x_both, MARKET)[0], rel=1e-12
        )
        assert net_return(x_net, MARKET) == 0.0

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            x = rng.uniform(0.1, 1.0, size=10)
            grad = net_return_gradient(x, MARKET)
            eps = 1e-6
            for i in range(10):
                hi, lo = x.copy(), x.copy()
                hi[i] += eps
                lo[i] -= eps
                fd = (net_return(hi, MARKET) - net_return(lo, MARKET)) / (2 * eps)
                assert abs(grad[i] - fd) / max(1e-8, abs(fd)) < 1e-5


class TestCBounds:
    def test_single_asset_degenerate(self):
        spec = one_asset_market()
        c_min, c_max = c_bounds(spec, l1=2.0)
        expected = spec.returns[0] - vwap_cost(spec.thetas[0], 1.0, 0.1)
        assert c_min == pytest.approx(expected, abs=1e-8)
        assert c_max == pytest.approx(expected, abs=1e-8)

    def test_zero_costs_long_only(self):
        c_min, c_max = c_bounds(ZERO_COST, l1=1.0)
        assert c_max == pytest.approx(float(ZERO_COST.returns.max()), abs=1e-8)
        assert c_min == pytest.approx(float(ZERO_COST.returns.min()), abs=1e-8)

    def test_zero_costs_lp_vertex_oracle(self):
        sigma = np.array([0.1, 0.1])
        corr = np.eye(2)
        spec = MarketSpec(
            k=2, sigma=sigma, returns=np.array([0.05, 0.10]), corr=corr,
            cov=cov_from(sigma, corr),
            thetas=(ImpactParams(0.0, 0.0, 1.0, 1.0),) * 2, m=0.1, big_t=1.0, leverage=2.0,
        )
        c_min, c_max = c_bounds(spec, l1=2.0)
        assert c_max == pytest.approx(1.5 * 0.10 - 0.5 * 0.05, abs=1e-8)  # 0.125
        assert c_min == pytest.approx(1.5 * 0.05 - 0.5 * 0.10, abs=1e-8)

    def test_zero_costs_match_vertex_enumeration(self):
        l1 = 2.0
        rets = ZERO_COST.returns
        vertices = [rets[i] for i in range(5)]
        for i, j in itertools.permutations(range(5), 2):
            vertices.append((l1 + 1) / 2 * rets[i] - (l1 - 1) / 2 * rets[j])
        c_min, c_max = c_bounds(ZERO_COST, l1=l1)
        assert c_max == pytest.approx(max(vertices), abs=1e-7)
        assert c_min == pytest.approx(min(vertices), abs=1e-7)


class TestFrontierPoint:
    def test_markowitz_oracle_zero_costs(self):
        # targets from the desk-scale leverage range, solved with the cap slack
        c_min, c_max = c_bounds(ZERO_COST, l1=2.0)
        for c1 in np.linspace(c_min, c_max, 7):
            pt = frontier_point(float(c1), ZERO_COST, l1=1000.0)
            assert pt.feasible
            w_oracle, var_oracle = markowitz_oracle(ZERO_COST.cov, ZERO_COST.returns, float(c1))
            assert np.abs(w_oracle).sum() < 1000.0  # leverage cap indeed slack
            assert pt.sigma_p**2 == pytest.approx(var_oracle, abs=1e-6)

    def test_top_of_frontier_matches_c_max(self):
        c_min, c_max = c_bounds(MARKET, l1=2.0)
        pt = frontier_point(c_max - 1e-9, MARKET, l1=2.0)
        assert pt.feasible
        assert net_return(pt.x, MARKET) == pytest.approx(c_max, abs=1e-6)

    def test_cost_on_form_lower_returns_at_same_risk(self):
        l1 = 2.0
        curve_on = build_frontier(MARKET, l1=l1, n_points=12)
        curve_off = build_frontier(ZERO_COST, l1=l1, n_points=24)
        off_pts = [p for p in curve_off.points if p.feasible]
        i_min = int(np.argmin([p.sigma_p for p in off_pts]))
        upper = off_pts[i_min:]
        sig = np.array([p.sigma_p for p in upper])
        ret = np.array([p.c1 for p in upper])
        order = np.argsort(sig)
        for pt in curve_on.points:
            if not pt.feasible:
                continue
            off_ret = np.interp(pt.sigma_p, sig[order], ret[order])
            assert pt.c1 <= off_ret + 1e-8

    def test_split_consistency(self):
        c_min, c_max = c_bounds(MARKET, l1=2.0)
        for c1 in np.linspace(c_min, c_max, 7)[1:-1]:
            pt = frontier_point(float(c1), MARKET, l1=2.0)
            assert pt.feasible
            z, y = pt.x[:5], pt.x[5:]
            assert np.all(np.minimum(z, y) <= 1e-6)

    def test_constraint_residuals(self):
        c_min, c_max = c_bounds(MARKET, l1=2.0)
        c1 = 0.5 * (c_min + c_max)
        pt = frontier_point(c1, MARKET, l1=2.0)
        assert abs(pt.weights.sum() - 1.0) <= 1e-8
        assert np.abs(pt.weights).sum() <= 2.0 + 1e-8
        assert abs(net_return(pt.x, MARKET) - c1) <= 1e-6


class TestBuildFrontier:
    def test_two_points_endpoints(self):
        curve = build_frontier(MARKET, l1=2.0, n_points=2)
        assert len(curve.points) == 2
        assert curve.points[0].c1 == pytest.approx(curve.c_min)
        assert curve.points[1].c1 == pytest.approx(curve.c_max)

    def test_deterministic(self):
        a = build_frontier(MARKET, l1=2.0, n_points=8)
        b = build_frontier(MARKET, l1=2.0, n_points=8)
        for p, q in zip(a.points, b.points):
            assert p.c1 == q.c1 and p.sigma_p == q.sigma_p
            assert np.array_equal(p.weights, q.weights)

    def test_risk_quasiconvex_along_targets(self):
        curve = build_frontier(MARKET, l1=2.0, n_points=15)
        sig = np.array([p.sigma_p for p in curve.points if p.feasible])
        i_min = int(np.argmin(sig))
        assert np.all(np.diff(sig[: i_min + 1]) <= 1e-7)
        assert np.all(np.diff(sig[i_min:]) >= -1e-7)

    def test_csv_and_json_outputs(self, tmp_path):
        curve = build_frontier(MARKET, l1=2.0, n_points=4)
        path = tmp_path / "curve.csv"
        curve.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "c1,sigma_p,w1,w2,w3,w4,w5,feasible"
        doc = curve.to_json()
        assert '"c_min"' in doc and '"points"' in doc

    def test_band_aggregation(self):
        curves = [build_frontier(MARKET, l1=2.0, n_points=10) for _ in range(3)]
        rows = frontier_band(curves, n_sigma=12)
        assert rows and all(r["q05"] <= r["q50"] <= r["q95"] for r in rows)


class TestOptimalPortfolio:
    def test_single_asset(self):
        spec = one_asset_market()
        opt = optimal_portfolio(risk_aversion=1.0, r_f=0.0, spec=spec, l1=2.0)
        assert opt.weights[0] == pytest.approx(1.0, abs=1e-8)
        expected_rp = spec.returns[0] - vwap_cost(spec.thetas[0], 1.0, 0.1)
        assert opt.r_p == pytest.approx(expected_rp, abs=1e-8)
        assert opt.utility == pytest.approx(expected_rp - spec.sigma[0], abs=1e-7)

    def test_utility_identity(self):
        opt = optimal_portfolio(risk_aversion=2.0, r_f=0.01, spec=MARKET, l1=2.0)
        assert opt.utility == (opt.r_p - opt.r_f) - opt.risk_aversion * opt.sigma_p

    def test_high_risk_aversion_reaches_min_variance(self):
        from scipy.optimize import minimize

        k = MARKET.k
        cons = [{"type": "eq", "fun": lambda w: w.sum() - 1.0}]
        res = minimize(
            lambda w: w @ MARKET.cov @ w,
            np.full(k, 1.0 / k),
            jac=lambda w: 2 * MARKET.cov @ w,
            constraints=cons,
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        w_minvar = res.x
        if np.abs(w_minvar).sum() <= 2.0:  # leverage slack at the min-variance point
            opt = optimal_portfolio(risk_aversion=1e3, r_f=0.0, spec=MARKET, l1=2.0)
            assert np.max(np.abs(opt.weights - w_minvar)) < 1e-3

    def test_beats_frontier_grid(self):
        lam, r_f = 1.0, 0.0
        curve = build_frontier(MARKET, l1=2.0, n_points=15)
        opt = optimal_portfolio(lam, r_f, MARKET, l1=2.0)
        for pt in curve.points:
            if not pt.feasible:
                continue
            u_grid = (net_return(pt.x, MARKET) - r_f) - lam * pt.sigma_p
            assert opt.utility >= u_grid - 1e-6

    def test_objective_gradient_matches_fd(self):
        from impactlab.portfolio_opt import _sigma_star

        lam, r_f = 2.0, 0.0
        sigma_star = _sigma_star(MARKET)
        rng = np.random.default_rng(23)

        def objective(x):
            quad = float(x @ sigma_star @ x)
            return np.sqrt(quad) - (net_return(x, MARKET) - r_f) / lam

        def grad(x):
            quad = float(x @ sigma_star @ x)
            return sigma_star @ x / np.sqrt(quad + 1e-16) - net_return_gradient(x, MARKET) / lam

        for _ in range(10):
            x = rng.uniform(0.05, 0.8, size=10)
            g = grad(x)
            eps = 1e-6
            for i in range(10):
                hi, lo = x.copy(), x.copy()
                hi[i] += eps
                lo[i] -= eps
                fd = (objective(hi) - objective(lo)) / (2 * eps)
                assert abs(g[i] - fd) / max(1e-8, abs(fd)) < 1e-5


class TestUtilityLoss:
    def test_zero_at_truth(self):
        loss = utility_loss(MARKET.thetas, MARKET, risk_aversion=1.0, r_f=0.0, l1=2.0)
        assert abs(loss) <= 1e-6

    def test_nonnegative_for_perturbed_estimates(self):
        rng = np.random.default_rng(6)
        for _ in range(3):
            hats = [
                ImpactParams(
                    gamma=t.gamma * rng.uniform(0.5, 1.8),
                    eta=t.eta * rng.uniform(0.5, 1.8),
                    alpha=min(1.9, t.alpha * rng.uniform(0.8, 1.2)),
                    beta=min(1.9, t.beta * rng.uniform(0.8, 1.2)),
                )
                for t in MARKET.thetas
            ]
            loss = utility_loss(hats, MARKET, risk_aversion=1.0, r_f=0.0, l1=2.0)
            assert loss >= -1e-6

    def test_doubled_gamma_loses_utility(self):
        # recorded on the default seeded market: lambda = 0.5 separates the optima
        hats = [
            ImpactParams(gamma=2 * t.gamma, eta=t.eta, alpha=t.alpha, beta=t.beta)
            for t in MARKET.thetas
        ]
        loss = utility_loss(hats, MARKET, risk_aversion=0.5, r_f=0.0, l1=2.0)
        assert loss > 1e-4


class TestSplitVector:
    def test_weights(self):
        sv = SplitVector(np.array([0.6, 0.0, 0.1, 0.3]))
        assert np.allclose(sv.weights, [0.5, -0.3])

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            SplitVector(np.array([0.5, -0.1]))
