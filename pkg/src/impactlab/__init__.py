"""Market-impact simulation, estimation and portfolio toolkit."""

from .model_core import (
    PARAM_ORDER,
    ImpactParams,
    MomentPair,
    OrderConfig,
    ij_cov,
    ij_mean,
    ij_moments,
    permanent_impact,
    temporary_impact,
    vwap_cost,
)
from .sim_engine import (
    AlignmentError,
    Design,
    DesignKind,
    OrderDistribution,
    OrderSample,
    PricePath,
    child_rng,
    extract_stats,
    simulate_orders,
    simulate_path,
)
from .estimation import (
    FitResult,
    FitSpec,
    IdentifiabilityError,
    SingularInformationError,
    fit,
    neg_log_likelihood,
    nll_gradient,
    reparametrize,
    theoretical_sd,
)
from .fisher_info import (
    DominanceResult,
    EarlySampleRules,
    InfoMatrix,
    dominance,
    dominance_grid,
    early_sample_rules,
    fisher,
    jacobian_ij,
    weight_matrix,
)
from .market_gen import MarketSpec, cov_from, gen_corr, gen_market
from .portfolio_opt import (
    FrontierCurve,
    FrontierPoint,
    OptimalPortfolio,
    SplitVector,
    build_frontier,
    c_bounds,
    cost_gradient,
    cost_vector,
    frontier_band,
    frontier_point,
    net_return,
    net_return_gradient,
    optimal_portfolio,
    utility_loss,
)

__version__ = "0.1.0"
