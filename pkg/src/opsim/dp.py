"""Exact finite-horizon dynamic programming oracle for tiny instances.

Solves discretized single-location inventory(/pricing) MDPs by backward
value iteration.  The state is the net inventory level (negative values
encode backlog); actions are (price index, order quantity) pairs over
finite grids; demand is a finite pmf table per price.  Intended as a
ground-truth optimum for desk-scale validation, not as a production
solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs.inventory import SingleEchelonConfig
from .baselines import poisson_pmf_table


class SpaceTooLarge(Exception):
    """State-action space exceeds the tiny-instance budget."""


MAX_ENTRIES = 1_000_000


@dataclass
class TinyMdpSpec:
    """Discretized MDP: net level in [-backlog_cap, inv_cap], L = 0.

    demand_pmfs[i] is the demand pmf under price_grid[i]; rewards are
    price*sales - h*I_t - b*unmet - c*q - k_fixed*1{q>0}.  In lost mode
    unmet demand vanishes; in backlog mode it carries as negative net
    level (capped at backlog_cap).
    """

    inv_cap: int
    order_grid: tuple
    demand_pmfs: tuple                 # one pmf (tuple of probs) per price
    horizon: int
    h: float
    b: float
    c: float
    price_grid: tuple = (0.0,)
    k_fixed: float = 0.0
    mode: str = "lost_sales"
    backlog_cap: int = 0

    def __post_init__(self):
        if len(self.demand_pmfs) != len(self.price_grid):
            raise ValueError("one demand pmf per grid price required")
        for pmf in self.demand_pmfs:
            if abs(sum(pmf) - 1.0) > 1e-12:
                raise ValueError("demand pmf must sum to 1 within 1e-12")
        if self.mode not in ("lost_sales", "backlog"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "lost_sales" and self.backlog_cap != 0:
            raise ValueError("lost_sales mode has no backlog states")

    @property
    def states(self) -> np.ndarray:
        return np.arange(-self.backlog_cap, self.inv_cap + 1)

    def size(self) -> int:
        return len(self.states) * len(self.order_grid) * len(self.price_grid)


@dataclass
class DpSolution:
    spec: TinyMdpSpec
    value: np.ndarray                  # (horizon+1, n_states)
    policy_order: np.ndarray           # (horizon, n_states) order quantity
    policy_price: np.ndarray           # (horizon, n_states) grid price
    initial_state: int = 0

    def optimal_value(self, initial_level: int = 0) -> float:
        return float(self.value[0, self._idx(initial_level)])

    def _idx(self, level: int) -> int:
        return int(level + self.spec.backlog_cap)

    def greedy_base_stock(self, t: int = 0) -> int:
        """Order-up-to level implied by the greedy policy at period t, empty state."""
        return int(self.policy_order[t, self._idx(0)])


def dp_solve(spec: TinyMdpSpec) -> DpSolution:
    """Backward induction over the discretized MDP (exact, no sampling)."""
    if spec.size() > MAX_ENTRIES:
        raise SpaceTooLarge(f"{spec.size()} state-action entries exceed {MAX_ENTRIES}")
    states = spec.states
    n_states = states.size
    level_of = {int(x): i for i, x in enumerate(states)}

    V = np.zeros((spec.horizon + 1, n_states))
    pol_q = np.zeros((spec.horizon, n_states), dtype=int)
    pol_p = np.zeros((spec.horizon, n_states))

    # Precompute transitions per (price, order, state): reward + next index.
    for t in range(spec.horizon - 1, -1, -1):
        v_next = V[t + 1]
        for si, x in enumerate(states):
            best_v, best_q, best_p = -math.inf, 0, spec.price_grid[0]
            for pi, price in enumerate(spec.price_grid):
                pmf = np.asarray(spec.demand_pmfs[pi])
                for q in spec.order_grid:
                    q = int(q)
                    stock = max(int(x), 0) + q
                    stock = min(stock, spec.inv_cap)
                    owed = -min(int(x), 0)
                    exp_v = 0.0
                    fixed = spec.k_fixed if q > 0 else 0.0
                    for d, prob in enumerate(pmf):
                        if prob == 0.0:
                            continue
                        serviceable = d + owed
                        sales = min(serviceable, stock)
                        unmet = serviceable - sales
                        inv = stock - sales
                        if spec.mode == "backlog":
                            unmet = min(unmet, spec.backlog_cap)
                            nxt = inv - unmet
                        else:
                            nxt = inv
                        reward = (
                            price * sales
                            - spec.h * inv
                            - spec.b * unmet
                            - spec.c * q
                            - fixed
                        )
                        exp_v += prob * (reward + v_next[level_of[int(nxt)]])
                    if exp_v > best_v + 1e-12:
                        best_v, best_q, best_p = exp_v, q, price
            V[t, si] = best_v
            pol_q[t, si] = best_q
            pol_p[t, si] = best_p
    return DpSolution(spec=spec, value=V, policy_order=pol_q, policy_price=pol_p)


def tiny_spec_from_single_echelon(
    cfg: SingleEchelonConfig, tail: float = 1e-12
) -> TinyMdpSpec:
    """Discretize a lead-time-0 single-echelon config into a TinyMdpSpec.

    Requires L = 0 and an inventory cap; Poisson demand is truncated with
    the residual tail lumped into the last point so the pmf sums to 1.
    """
    if cfg.L != 0:
        raise ValueError("the DP oracle covers L = 0 instances only")
    if cfg.inv_cap is None:
        raise ValueError("config needs inv_cap for a finite state space")
    if cfg.demand.kind == "poisson":
        pmf = poisson_pmf_table(cfg.demand.lam, tail=tail)
        pmf = pmf / pmf.sum()
    elif cfg.demand.kind == "uniform":
        n = cfg.demand.hi - cfg.demand.lo + 1
        pmf = np.zeros(cfg.demand.hi + 1)
        pmf[cfg.demand.lo :] = 1.0 / n
    else:
        raise ValueError("DP discretization supports poisson and uniform demand")
    return TinyMdpSpec(
        inv_cap=cfg.inv_cap,
        order_grid=tuple(range(cfg.q_max + 1)),
        demand_pmfs=(tuple(pmf),),
        horizon=cfg.T,
        h=cfg.h,
        b=cfg.b,
        c=cfg.c,
        price_grid=(cfg.p,),
        mode="lost_sales" if cfg.mode == "lost_sales" else "backlog",
        backlog_cap=0 if cfg.mode == "lost_sales" else cfg.inv_cap,
    )


class DpPolicy:
    """Act greedily from a DpSolution on the matching single-echelon env."""

    def __init__(self, solution: DpSolution):
        self._sol = solution

    def act(self, obs):
        from .core import EnvAction

        t = min(obs.t, self._sol.spec.horizon - 1)
        level = int(round(obs.features[0]))
        if self._sol.spec.mode == "backlog":
            level -= int(round(obs.features[-1]))
        level = max(-self._sol.spec.backlog_cap, min(level, self._sol.spec.inv_cap))
        q = self._sol.policy_order[t, self._sol._idx(level)]
        return EnvAction(components=np.array([float(q)]))
