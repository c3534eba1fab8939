"""Path simulation for impacted orders and extraction of design statistics.

Paths follow the piecewise dynamics on the bps scale: during the trade
P_t = g(v) t + h(v) + sigma W_t, after it P_t = g(v) T + sigma W_t. Because
the in-trade drift is constant, stepping the diffusion on the grid is exact
in distribution; the only numerical approximation in the whole pipeline is
the quadrature for the cost statistic J.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model_core import ImpactParams, OrderConfig, permanent_impact, temporary_impact

__all__ = [
    "AlignmentError",
    "Design",
    "DesignKind",
    "OrderDistribution",
    "OrderSample",
    "PricePath",
    "child_rng",
    "extract_stats",
    "simulate_path",
    "simulate_orders",
    "save_samples_csv",
    "load_samples_csv",
    "save_dataset_manifest",
]

_GRID_RTOL = 1e-9


class AlignmentError(ValueError):
    """A requested sampling time does not coincide with a grid node."""


class DesignKind(enum.Enum):
    ALMGREN_IJ = "almgren_ij"
    TWO_POINT = "two_point"
    K_POINT = "k_point"


@dataclass(frozen=True)
class Design:
    """Which statistics an estimator observes for each order.

    ``ratios`` are the in-trade sampling times as fractions of T, strictly
    increasing, ending at 1; the post-trade point t_post is always observed
    in addition. ALMGREN_IJ uses (I, J) instead of sampled prices.
    """

    kind: DesignKind
    ratios: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind is DesignKind.ALMGREN_IJ:
            if self.ratios:
                raise ValueError("ALMGREN_IJ design takes no sampling ratios")
            return
        r = self.ratios
        if not r:
            raise ValueError("point designs need at least the ratio 1.0")
        if any(not (0 < x <= 1) for x in r) or any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("ratios must be strictly increasing in (0, 1]")
        if r[-1] != 1.0:
            raise ValueError("the last ratio must be 1 (the trade end)")
        if self.kind is DesignKind.TWO_POINT and r != (1.0,):
            raise ValueError("TWO_POINT observes exactly (P_T, P_t_post)")

    @classmethod
    def almgren_ij(cls) -> "Design":
        return cls(DesignKind.ALMGREN_IJ)

    @classmethod
    def two_point(cls) -> "Design":
        return cls(DesignKind.TWO_POINT, (1.0,))

    @classmethod
    def k_point(cls, *ratios: float) -> "Design":
        return cls(DesignKind.K_POINT, tuple(float(r) for r in ratios))

    @classmethod
    def three_point(cls, early_ratio: float) -> "Design":
        return cls.k_point(early_ratio, 1.0)

    @property
    def uses_points(self) -> bool:
        return self.kind is not DesignKind.ALMGREN_IJ

    @property
    def earliest_ratio(self) -> float:
        if not self.uses_points:
            raise ValueError("ALMGREN_IJ has no sampling ratios")
        return self.ratios[0]

    @property
    def label(self) -> str:
        if self.kind is DesignKind.ALMGREN_IJ:
            return "almgren_ij"
        if self.kind is DesignKind.TWO_POINT:
            return "two_point"
        inner = ",".join(f"{r:g}" for r in self.ratios)
        return f"k_point[{inner}]"


@dataclass(frozen=True)
class OrderDistribution:
    """Distribution of the order hyper-parameters (v, T) with fixed clock.

    v is uniform on [v_low, v_high] (a point mass when the ends coincide);
    T and t_post are fixed, which covers every study in the toolkit.
    """

    v_low: float
    v_high: float
    T: float
    t_post: float

    def __post_init__(self):
        if not (0 < self.v_low <= self.v_high < 1):
            raise ValueError("need 0 < v_low <= v_high < 1")
        if not (0 < self.T < self.t_post):
            raise ValueError("need 0 < T < t_post")

    @classmethod
    def point(cls, v: float, T: float, t_post: float) -> "OrderDistribution":
        return cls(v, v, T, t_post)

    @classmethod
    def uniform_v(cls, v_low: float, v_high: float, T: float, t_post: float) -> "OrderDistribution":
        return cls(v_low, v_high, T, t_post)

    @property
    def is_point_mass(self) -> bool:
        return self.v_low == self.v_high

    def sample_v(self, rng: np.random.Generator, size=None):
        if self.is_point_mass:
            return self.v_low if size is None else np.full(size, self.v_low)
        return rng.uniform(self.v_low, self.v_high, size=size)


@dataclass(frozen=True)
class PricePath:
    """One simulated path on the grid 0 = t_0 < ... < T < ... < t_post (bps scale)."""

    times: np.ndarray
    values: np.ndarray
    n_trade: int  # index of the node at exactly T
    config: OrderConfig

    def __post_init__(self):
        if self.values[0] != 0.0:
            raise ValueError("paths start at 0 on the bps scale")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def trade_end_value(self) -> float:
        return float(self.values[self.n_trade])


@dataclass(frozen=True)
class OrderSample:
    """Observable statistics of one order, enough for every design."""

    v: float
    T: float
    t_post: float
    i_stat: float  # P at t_post
    j_stat: float  # numerical (1/T) * integral of P over [0, T]
    points: Mapping[float, float] = field(default_factory=dict)  # ratio -> P at ratio*T

    def point(self, ratio: float) -> float:
        try:
            return self.points[ratio]
        except KeyError:
            raise AlignmentError(f"sample does not carry the ratio {ratio!r}") from None


def child_rng(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based per-order stream: independent of worker count and order.

    Philox keyed by (master_seed, index) gives each order its own stream, so
    serial and parallel sweeps produce bit-identical data.
    """
    if not (0 <= master_seed < 2**64 and 0 <= index < 2**64):
        raise ValueError("seed and index must be unsigned 64-bit integers")
    key = np.array([master_seed, index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _grid_counts(cfg: OrderConfig) -> tuple[int, int]:
    n_trade = round(cfg.T / cfg.dt)
    n_post = round((cfg.t_post - cfg.T) / cfg.dt)
    if n_trade < 1 or abs(n_trade * cfg.dt - cfg.T) > _GRID_RTOL * max(1.0, cfg.T):
        raise ValueError(f"dt={cfg.dt} does not divide the trade duration T={cfg.T}")
    if n_post < 1 or abs(n_post * cfg.dt - (cfg.t_post - cfg.T)) > _GRID_RTOL * max(1.0, cfg.t_post):
        raise ValueError(f"dt={cfg.dt} does not divide the post-trade window")
    return n_trade, n_post


def simulate_path(cfg: OrderConfig, p: ImpactParams, rng: np.random.Generator) -> PricePath:
    """Simulate one order's price path on the regular dt grid.

    In-trade nodes carry g*t + h plus the running diffusion; the first node
    after T drops the temporary term, matching the piecewise dynamics.
    """
    n_trade, n_post = _grid_counts(cfg)
    g = permanent_impact(cfg.v, p)
    h = temporary_impact(cfg.v, p)

    times = np.concatenate(
        [np.linspace(0.0, cfg.T, n_trade + 1), np.linspace(cfg.T, cfg.t_post, n_post + 1)[1:]]
    )
    shocks = rng.standard_normal(n_trade + n_post)
    diffusion = cfg.sigma * np.sqrt(cfg.dt) * np.cumsum(shocks)

    values = np.empty(n_trade + n_post + 1)
    values[0] = 0.0
    values[1 : n_trade + 1] = g * times[1 : n_trade + 1] + h + diffusion[:n_trade]
    values[n_trade + 1 :] = g * cfg.T + diffusion[n_trade:]
    return PricePath(times=times, values=values, n_trade=n_trade, config=cfg)


def _trade_average(path: PricePath) -> float:
    """Trapezoidal average of P over [0, T], aware of the jump at 0+.

    The in-trade price jumps by h(v) immediately after the start, so the
    stored pre-trade node P_0 = 0 is not representative of the first cell.
    With at least two in-trade nodes the 0+ limit is reconstructed by linear
    extrapolation (2 P_1 - P_2), which makes the rule exact on the linear
    in-trade truth; on a two-node grid it falls back to the plain trapezoid.
    """
    cfg = path.config
    n = path.n_trade
    vals = path.values
    if n == 1:
        return float(0.5 * (vals[0] + vals[1]))
    trade = vals[1 : n + 1]
    inner = cfg.dt * (0.5 * (trade[0] + trade[-1]) + trade[1:-1].sum())
    first_cell = 0.5 * ((2.0 * vals[1] - vals[2]) + vals[1]) * cfg.dt
    return float((inner + first_cell) / cfg.T)


def extract_stats(path: PricePath, designs: Iterable[Design]) -> OrderSample:
    """Reduce a path to the statistics any of the given designs consumes.

    Sampling ratios must land exactly on grid nodes; there is no
    interpolation, so estimator inputs are exactly the simulated marginals.
    """
    cfg = path.config
    ratios = {1.0}
    for d in designs:
        if d.uses_points:
            ratios.update(d.ratios)

    points = {}
    for ratio in sorted(ratios):
        idx = round(ratio * path.n_trade)
        t_req = ratio * cfg.T
        if idx < 0 or idx > path.n_trade or abs(path.times[idx] - t_req) > _GRID_RTOL * max(1.0, cfg.T):
            raise AlignmentError(f"ratio {ratio} (t={t_req}) is not on the simulation grid")
        points[ratio] = float(path.values[idx])

    return OrderSample(
        v=cfg.v,
        T=cfg.T,
        t_post=cfg.t_post,
        i_stat=float(path.values[-1]),
        j_stat=_trade_average(path),
        points=points,
    )


def simulate_orders(
    m: int,
    order_dist: OrderDistribution,
    cfg_template: OrderConfig,
    p: ImpactParams,
    master_seed: int,
    designs: Sequence[Design] = (),
) -> list[OrderSample]:
    """Simulate m independent orders; order k uses the (master_seed, k) stream.

    (v, T, t_post) come from ``order_dist``; s0, sigma and dt from the
    template config. The result is independent of worker count or iteration
    order by construction, and identical to composing :func:`simulate_path`
    with :func:`extract_stats` order by order (the loop below just skips the
    intermediate path object, which dominates runtime at study scale).
    """
    if m < 0:
        raise ValueError("m must be non-negative")
    T, t_post, dt, sigma = order_dist.T, order_dist.t_post, cfg_template.dt, cfg_template.sigma
    probe_cfg = OrderConfig(
        s0=cfg_template.s0, sigma=sigma, T=T, t_post=t_post,
        v=0.5 * (order_dist.v_low + order_dist.v_high), dt=dt,
    )
    n_trade, n_post = _grid_counts(probe_cfg)
    trade_times = np.linspace(0.0, T, n_trade + 1)

    ratios = sorted({1.0} | {r for d in designs if d.uses_points for r in d.ratios})
    ratio_idx = []
    for ratio in ratios:
        idx = round(ratio * n_trade)
        if idx < 1 or abs(trade_times[idx] - ratio * T) > _GRID_RTOL * max(1.0, T):
            raise AlignmentError(f"ratio {ratio} (t={ratio * T}) is not on the simulation grid")
        ratio_idx.append(idx)

    sqrt_dt = np.sqrt(dt)
    samples = []
    for k in range(m):
        rng = child_rng(master_seed, k)
        v = float(order_dist.sample_v(rng))
        g = permanent_impact(v, p)
        h = temporary_impact(v, p)
        diffusion = sigma * sqrt_dt * np.cumsum(rng.standard_normal(n_trade + n_post))
        trade_vals = g * trade_times[1:] + h + diffusion[:n_trade]

        if n_trade == 1:
            j_stat = 0.5 * trade_vals[0]
        else:
            inner = dt * (0.5 * (trade_vals[0] + trade_vals[-1]) + trade_vals[1:-1].sum())
            first_cell = 0.5 * (3.0 * trade_vals[0] - trade_vals[1]) * dt
            j_stat = (inner + first_cell) / T
        samples.append(
            OrderSample(
                v=v,
                T=T,
                t_post=t_post,
                i_stat=float(g * T + diffusion[-1]),
                j_stat=float(j_stat),
                points={r: float(trade_vals[i - 1]) for r, i in zip(ratios, ratio_idx)},
            )
        )
    return samples


# ---------------------------------------------------------------------------
# dataset serialization


def _point_columns(samples: Sequence[OrderSample]) -> list[float]:
    ratios = sorted({r for s in samples for r in s.points})
    return ratios


def save_samples_csv(samples: Sequence[OrderSample], path) -> None:
    """Write a dataset as CSV: order_id, v, T, t_post, I, J, point:tau=... columns."""
    ratios = _point_columns(samples)
    header = ["order_id", "v", "T", "t_post", "I", "J"] + [f"point:tau={r!r}" for r in ratios]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, s in enumerate(samples):
            row = [k, repr(s.v), repr(s.T), repr(s.t_post), repr(s.i_stat), repr(s.j_stat)]
            row += [repr(s.points[r]) if r in s.points else "" for r in ratios]
            writer.writerow(row)


def load_samples_csv(path) -> list[OrderSample]:
    """Read a dataset written by :func:`save_samples_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ratio_cols = [(i, float(name.split("=", 1)[1])) for i, name in enumerate(header) if name.startswith("point:tau=")]
        samples = []
        for row in reader:
            points = {r: float(row[i]) for i, r in ratio_cols if row[i] != ""}
            samples.append(
                OrderSample(
                    v=float(row[1]),
                    T=float(row[2]),
                    t_post=float(row[3]),
                    i_stat=float(row[4]),
                    j_stat=float(row[5]),
                    points=points,
                )
            )
    return samples


def save_dataset_manifest(path, *, seed: int, cfg: OrderConfig, order_dist: OrderDistribution, p: ImpactParams) -> None:
    """Write the JSON manifest that makes a dataset reproducible."""
    doc = {
        "seed": seed,
        "config": {"s0": cfg.s0, "sigma": cfg.sigma, "T": cfg.T, "t_post": cfg.t_post, "v": cfg.v, "dt": cfg.dt},
        "order_distribution": {
            "v_low": order_dist.v_low,
            "v_high": order_dist.v_high,
            "T": order_dist.T,
            "t_post": order_dist.t_post,
        },
        "theta": {"gamma": p.gamma, "eta": p.eta, "alpha": p.alpha, "beta": p.beta},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
