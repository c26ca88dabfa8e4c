"""Classic heuristic policies and a common-random-number grid tuner.

Replenishment heuristics (base-stock, (s,S)) act on the inventory
position (on-hand + pipeline - backlog).  Joint pricing heuristics (BSLP,
(s,S,p), Myopic) choose a price on a grid by maximizing the expected
one-period profit under the logit-Poisson demand model; the expectation
uses truncated Poisson sums (tail mass < 1e-9), so pricing decisions are
deterministic and directly testable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import EnvAction, EnvObservation, EvalStats, ManagementEnv, evaluate
from .envs.inventory import SerialChainEnv, SingleEchelonEnv
from .envs.pricing import PricingConfig, PricingEnv, demand_rate


class EmptyGrid(Exception):
    """grid_tune called with no candidates."""


@dataclass(frozen=True)
class PolicySpec:
    """A tuned (or hand-set) heuristic: family name + parameter map."""

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family in ("sS", "sSp") and not self.params.get("s", 0) < self.params.get("S", 1):
            raise ValueError(f"{self.family} requires s < S")


# ---------------------------------------------------------------------------
# Inventory position helpers
# ---------------------------------------------------------------------------

def inventory_position_single(env: SingleEchelonEnv, obs: EnvObservation) -> float:
    """on-hand + pipeline - backlog for the single-echelon layout."""
    cfg = env.config
    feats = obs.features
    ip = feats[0] + feats[1 : 1 + cfg.L].sum()
    if cfg.mode == "backlog":
        ip -= feats[1 + cfg.L]
    return float(ip)


def inventory_position_pricing(env: PricingEnv, obs: EnvObservation) -> float:
    cfg = env.config
    feats = obs.features
    return float(feats[0] - feats[1] + feats[3 : 3 + cfg.L].sum())


def inventory_positions_serial(env: SerialChainEnv, obs: EnvObservation) -> list[float]:
    """Per-echelon net level + pipeline (net already subtracts backlog)."""
    cfg = env.config
    out = []
    pos = 0
    for m in range(cfg.M):
        net = obs.features[pos]
        pipe = obs.features[pos + 1 : pos + 1 + cfg.L[m]].sum()
        out.append(float(net + pipe))
        pos += 2 + cfg.L[m]
    return out


# ---------------------------------------------------------------------------
# Order rules
# ---------------------------------------------------------------------------

def base_stock_order(ip: float, S: float) -> float:
    """Order up to S: q = max(S - inventory position, 0)."""
    return max(S - ip, 0.0)


def s_s_order(ip: float, s: float, S: float) -> float:
    """Order up to S as soon as the position drops below s, else nothing."""
    return S - ip if ip < s else 0.0


class BaseStockPolicy:
    """Order-up-to-S for the single-echelon env."""

    def __init__(self, env: SingleEchelonEnv, S: float):
        self._env = env
        self.S = S

    def act(self, obs: EnvObservation) -> EnvAction:
        ip = inventory_position_single(self._env, obs)
        return EnvAction(components=np.array([base_stock_order(ip, self.S)]))


class SSPolicy:
    """(s, S) for the single-echelon env."""

    def __init__(self, env: SingleEchelonEnv, s: float, S: float):
        if not s < S:
            raise ValueError("(s,S) requires s < S")
        self._env = env
        self.s, self.S = s, S

    def act(self, obs: EnvObservation) -> EnvAction:
        ip = inventory_position_single(self._env, obs)
        return EnvAction(components=np.array([s_s_order(ip, self.s, self.S)]))


class SerialBaseStockPolicy:
    """Per-echelon order-up-to levels for the serial chain."""

    def __init__(self, env: SerialChainEnv, levels: Sequence[float]):
        if len(levels) != env.config.M:
            raise ValueError("one base-stock level per echelon required")
        self._env = env
        self.levels = list(levels)

    def act(self, obs: EnvObservation) -> EnvAction:
        ips = inventory_positions_serial(self._env, obs)
        q = [base_stock_order(ip, S) for ip, S in zip(ips, self.levels)]
        return EnvAction(components=np.array(q))


# ---------------------------------------------------------------------------
# Expected one-period profit under Poisson demand
# ---------------------------------------------------------------------------

def poisson_pmf_table(rate: float, tail: float = 1e-9) -> np.ndarray:
    """pmf values k = 0.. until the remaining tail mass drops below `tail`."""
    if rate <= 0:
        return np.array([1.0])
    pmf = [math.exp(-rate)]
    cum = pmf[0]
    k = 0
    while 1.0 - cum > tail and k < 100000:
        k += 1
        pmf.append(pmf[-1] * rate / k)
        cum += pmf[-1]
    return np.array(pmf)


def expected_newsvendor_terms(rate: float, avail: float) -> tuple[float, float, float]:
    """E[min(D, y)], E[(y-D)^+], E[(D-y)^+] for D ~ Poisson(rate), y = avail."""
    y = max(0.0, avail)
    pmf = poisson_pmf_table(rate)
    ks = np.arange(pmf.size, dtype=float)
    sales = np.minimum(ks, y) @ pmf
    leftover = np.maximum(y - ks, 0.0) @ pmf
    short = np.maximum(ks - y, 0.0) @ pmf
    # lump the truncated tail at the last tabulated point
    missing = 1.0 - pmf.sum()
    if missing > 0:
        k_last = float(pmf.size - 1)
        sales += missing * min(k_last, y)
        leftover += missing * max(y - k_last, 0.0)
        short += missing * max(k_last - y, 0.0)
    return float(sales), float(leftover), float(short)


def expected_period_profit(
    price: float,
    avail: float,
    order: float,
    o: float,
    r: float,
    cfg: PricingConfig,
    carried: float = 0.0,
) -> float:
    """Expected one-period profit at `price`.

    `avail` is the physical stock serviceable this period and `carried`
    the backlog owed from earlier periods (0 unless backlog carryover is
    active).  Exact up to Poisson tail truncation.
    """
    rate = demand_rate(price, o, r, np.array(cfg.beta), cfg.eta, cfg.delta)
    net = avail - carried
    if net >= 0:
        sales, leftover, short = expected_newsvendor_terms(rate, net)
        sales += carried
    else:
        sales, leftover, short = avail, 0.0, (carried - avail) + rate
    fixed = cfg.k_fixed if order > 0 else 0.0
    return price * sales - cfg.h * leftover - cfg.b * short - cfg.c * order - fixed


def best_grid_price(
    avail: float,
    order: float,
    o: float,
    r: float,
    cfg: PricingConfig,
    grid: Sequence[float],
    carried: float = 0.0,
) -> float:
    """Deterministic argmax of expected one-period profit over a price grid."""
    if len(grid) == 0:
        raise ValueError("price grid must be nonempty")
    best_p, best_v = None, -math.inf
    for p in grid:
        v = expected_period_profit(p, avail, order, o, r, cfg, carried)
        if v > best_v + 1e-12:
            best_p, best_v = p, v
    return float(best_p)


# ---------------------------------------------------------------------------
# Joint pricing heuristics
# ---------------------------------------------------------------------------

def _pricing_state(env: PricingEnv, obs: EnvObservation):
    cfg = env.config
    feats = obs.features
    on_hand = float(feats[0])
    backlog = float(feats[1])
    arriving = float(feats[3]) if cfg.L > 0 else 0.0
    o = float(feats[3 + cfg.L])
    r = float(feats[4 + cfg.L])
    return on_hand, backlog, arriving, o, r


class MyopicPolicy:
    """Price maximizes expected one-period profit; orders follow base-stock."""

    def __init__(self, env: PricingEnv, S: float, price_grid: Sequence[float]):
        if len(price_grid) == 0:
            raise ValueError("price grid must be nonempty")
        self._env = env
        self.S = S
        self.grid = list(price_grid)

    def _order(self, obs: EnvObservation) -> float:
        ip = inventory_position_pricing(self._env, obs)
        q = base_stock_order(ip, self.S)
        return min(q, self._env.config.q_max)

    def act(self, obs: EnvObservation) -> EnvAction:
        cfg = self._env.config
        on_hand, backlog, arriving, o, r = _pricing_state(self._env, obs)
        q = self._order(obs)
        avail = on_hand + arriving + (q if cfg.L == 0 else 0.0)
        carried = backlog if (cfg.mode == "backlog" and cfg.carryover) else 0.0
        p = best_grid_price(avail, q, o, r, cfg, self.grid, carried)
        return EnvAction(components=np.array([p, q]))


class BslpPolicy:
    """Base-stock list-price: order up to y*; list price at or below base stock,
    re-optimized price above it."""

    def __init__(self, env: PricingEnv, y_star: float, list_price: float, price_grid: Sequence[float]):
        self._env = env
        self.y_star = y_star
        self.list_price = list_price
        self.grid = list(price_grid)

    def act(self, obs: EnvObservation) -> EnvAction:
        cfg = self._env.config
        on_hand, backlog, arriving, o, r = _pricing_state(self._env, obs)
        ip = inventory_position_pricing(self._env, obs)
        q = min(base_stock_order(ip, self.y_star), cfg.q_max)
        if ip <= self.y_star:
            p = self.list_price
        else:
            avail = on_hand + arriving + (q if cfg.L == 0 else 0.0)
            carried = backlog if (cfg.mode == "backlog" and cfg.carryover) else 0.0
            p = best_grid_price(avail, q, o, r, cfg, self.grid, carried)
        return EnvAction(components=np.array([p, q]))


class SSPPolicy:
    """(s,S,p): order to S when the position drops below s; re-optimize the
    price on the grid every period."""

    def __init__(self, env: PricingEnv, s: float, S: float, price_grid: Sequence[float]):
        if not s < S:
            raise ValueError("(s,S,p) requires s < S")
        self._env = env
        self.s, self.S = s, S
        self.grid = list(price_grid)

    def act(self, obs: EnvObservation) -> EnvAction:
        cfg = self._env.config
        on_hand, backlog, arriving, o, r = _pricing_state(self._env, obs)
        ip = inventory_position_pricing(self._env, obs)
        q = min(s_s_order(ip, self.s, self.S), cfg.q_max)
        avail = on_hand + arriving + (q if cfg.L == 0 else 0.0)
        carried = backlog if (cfg.mode == "backlog" and cfg.carryover) else 0.0
        p = best_grid_price(avail, q, o, r, cfg, self.grid, carried)
        return EnvAction(components=np.array([p, q]))


class CollabHeuristic:
    """Order-up-to heuristic for the collaborative env.

    Cheapest production method, per-item base stock S, one fixed price,
    recommendation intensity pinned at 1 (it has no cost in the profit
    model).
    """

    def __init__(self, env, S: float, price: float):
        cfg = env.config
        self._n_items = cfg.n_items
        self._method = int(np.argmin(cfg.c_prod))
        self._q_max = cfg.q_max
        self.S = S
        self.price = min(max(price, cfg.p_min), cfg.p_max)

    def act(self, obs: EnvObservation) -> EnvAction:
        n = self._n_items
        on_hand = obs.features[n : 2 * n]
        q = np.minimum(np.maximum(self.S - on_hand, 0.0), self._q_max)
        return EnvAction(
            components=np.concatenate(
                [
                    np.full(n, float(self._method)),
                    q,
                    np.full(n, self.price),
                    np.ones(n),
                ]
            )
        )


# ---------------------------------------------------------------------------
# Grid tuner (common random numbers)
# ---------------------------------------------------------------------------

def grid_tune(
    family: str,
    env_factory: Callable[[], ManagementEnv],
    policy_factory: Callable[[ManagementEnv, dict], object],
    param_grid: dict[str, Sequence],
    n_eval: int,
    seed: int,
) -> tuple[PolicySpec, EvalStats]:
    """Exhaustively evaluate `param_grid` with common random numbers.

    Every candidate is scored on the same episode seeds (seed..seed+n-1);
    the argmax by mean return wins, ties broken by lexicographically
    smallest parameter tuple.
    """
    names = sorted(param_grid.keys())
    combos = list(itertools.product(*(param_grid[k] for k in names)))
    if not combos:
        raise EmptyGrid(f"no candidates for family {family!r}")
    best: tuple | None = None
    best_stats: EvalStats | None = None
    for combo in sorted(combos):
        params = dict(zip(names, combo))
        try:
            env = env_factory()
            policy = policy_factory(env, params)
        except ValueError:
            continue  # infeasible combo, e.g. s >= S
        stats = evaluate(env, policy, n_eval, seed)
        if best is None or stats.mean > best_stats.mean + 1e-12:
            best = combo
            best_stats = stats
    if best is None:
        raise EmptyGrid(f"all candidates infeasible for family {family!r}")
    return PolicySpec(family=family, params=dict(zip(names, best))), best_stats
