"""Collaborative multi-decision environment: production method, ordering,
pricing, and recommendation intensity set jointly each period.

Demand for item i is Poisson with rate
base_i * logistic(beta0 - beta_p * p_i) * (1 + beta_k * k_i): price
suppresses it, recommendation intensity lifts it linearly.  Profit is
revenue on satisfiable demand minus production and ordering costs; the
chosen production method only selects its unit cost.  Orders arrive next
period (lead time 1); unmet demand is lost.  There is no holding cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import ActionLayout, EnvObservation, ManagementEnv, SliceSpec


@dataclass
class CollabConfig:
    n_items: int = 2
    c_prod: tuple = (1.0, 0.6)       # unit production cost per method
    c_order: float = 0.5
    p_min: float = 2.0
    p_max: float = 6.0
    base_rate: tuple = (8.0, 6.0)    # demand scale per item
    beta0: float = 2.5
    beta_p: float = 0.5
    beta_k: float = 0.4
    q_max: int = 20
    T: int = 20
    n0: tuple = (0, 0)
    method_lead: tuple | None = None  # optional per-method lead; None = 1 period

    def __post_init__(self):
        if len(self.base_rate) != self.n_items or len(self.n0) != self.n_items:
            raise ValueError("base_rate and n0 must have one entry per item")
        if any(c < 0 for c in self.c_prod) or self.c_order < 0:
            raise ValueError("costs must be nonnegative")
        if not self.p_min < self.p_max:
            raise ValueError("need p_min < p_max")
        if self.method_lead is not None:
            if len(self.method_lead) != len(self.c_prod):
                raise ValueError("method_lead needs one entry per method")
            if any(lead < 1 for lead in self.method_lead):
                raise ValueError("method leads must be >= 1 period")

    @property
    def n_methods(self) -> int:
        return len(self.c_prod)


def collab_demand(
    prices: np.ndarray,
    intensities: np.ndarray,
    config: CollabConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-item Poisson demand draws at the configured price/intensity response."""
    rates = collab_demand_rate(prices, intensities, config)
    return np.array([rng.poisson(r) if r > 0 else 0 for r in rates], dtype=int)


def collab_demand_rate(
    prices: np.ndarray, intensities: np.ndarray, config: CollabConfig
) -> np.ndarray:
    rates = []
    for i in range(config.n_items):
        z = config.beta0 - config.beta_p * float(prices[i])
        if z >= 0:
            logistic = 1.0 / (1.0 + math.exp(-z))
        else:
            ez = math.exp(z)
            logistic = ez / (1.0 + ez)
        rates.append(
            config.base_rate[i] * logistic * (1.0 + config.beta_k * float(intensities[i]))
        )
    return np.array(rates, dtype=float)


class CollabEnv(ManagementEnv):
    """Joint (method, order, price, intensity) decisions per item.

    Action layout: ("method", I categorical over J), ("order", I),
    ("price", I), ("intensity", I).  Observation layout:
    (d_vec, n_vec, one-hot(u_vec), q_vec, p_vec, k_vec) -- the last
    demand, current on-hand, and last action.
    """

    def __init__(self, config: CollabConfig):
        super().__init__()
        self.config = config
        self.horizon = config.T
        n, j = config.n_items, config.n_methods
        self.action_layout = ActionLayout(
            [
                SliceSpec("method", n, "categorical", 0.0, float(j)),
                SliceSpec("order", n, "box", 0.0, float(config.q_max)),
                SliceSpec("price", n, "box", config.p_min, config.p_max),
                SliceSpec("intensity", n, "box", 0.0, 1.0),
            ]
        )
        self._d = np.zeros(n, dtype=int)
        self._n = np.zeros(n, dtype=int)
        self._u = np.zeros(n, dtype=int)
        self._q = np.zeros(n, dtype=int)
        self._p = np.full(n, config.p_min)
        self._k = np.zeros(n)
        self._pipeline: dict[int, np.ndarray] = {}  # arrival period -> quantities

    def observation_names(self) -> list[str]:
        n, j = self.config.n_items, self.config.n_methods
        names = [f"last_demand_{i+1}" for i in range(n)]
        names += [f"on_hand_{i+1}" for i in range(n)]
        for i in range(n):
            names += [f"method_{i+1}_is_{m}" for m in range(j)]
        names += [f"last_order_{i+1}" for i in range(n)]
        names += [f"last_price_{i+1}" for i in range(n)]
        names += [f"last_intensity_{i+1}" for i in range(n)]
        return names

    def _do_reset(self) -> None:
        cfg = self.config
        n = cfg.n_items
        self._d = np.zeros(n, dtype=int)
        self._n = np.array(cfg.n0, dtype=int)
        self._u = np.zeros(n, dtype=int)
        self._q = np.zeros(n, dtype=int)
        self._p = np.full(n, cfg.p_min)
        self._k = np.zeros(n)
        self._pipeline = {}

    def _do_step(self, components: np.ndarray) -> tuple[float, dict]:
        cfg = self.config
        layout = self.action_layout
        u = layout.get(components, "method").astype(int)
        q = np.rint(layout.get(components, "order")).astype(int)
        q = np.clip(q, 0, cfg.q_max)
        p = layout.get(components, "price").copy()
        k = layout.get(components, "intensity").copy()

        d = collab_demand(p, k, cfg, self.rng("demand"))

        sold = np.minimum(self._n, d)
        revenue = float(np.sum(p * sold))
        c_u = float(sum(cfg.c_prod[u[i]] * q[i] for i in range(cfg.n_items)))
        c_q = float(cfg.c_order * q.sum())
        reward = revenue - c_u - c_q

        remaining = np.maximum(self._n - d, 0)
        if cfg.method_lead is None:
            self._n = remaining + q
        else:
            for i in range(cfg.n_items):
                due = self._t + cfg.method_lead[u[i]]
                bucket = self._pipeline.setdefault(due, np.zeros(cfg.n_items, dtype=int))
                bucket[i] += q[i]
            arrivals = self._pipeline.pop(self._t + 1, np.zeros(cfg.n_items, dtype=int))
            self._n = remaining + arrivals
        self._d, self._u, self._q = d, u, q
        self._p, self._k = p, k

        info = {"revenue": revenue, "production_cost": c_u, "ordering_cost": c_q}
        for i in range(cfg.n_items):
            info[f"demand_{i+1}"] = float(d[i])
            info[f"sold_{i+1}"] = float(sold[i])
            info[f"on_hand_{i+1}"] = float(self._n[i])
            info[f"order_{i+1}"] = float(q[i])
            info[f"price_{i+1}"] = float(p[i])
            info[f"method_{i+1}"] = float(u[i])
        return reward, info

    def _observe(self) -> EnvObservation:
        cfg = self.config
        one_hot = np.zeros((cfg.n_items, cfg.n_methods))
        one_hot[np.arange(cfg.n_items), self._u] = 1.0
        feats = np.concatenate(
            [
                self._d.astype(float),
                self._n.astype(float),
                one_hot.ravel(),
                self._q.astype(float),
                self._p.astype(float),
                self._k.astype(float),
            ]
        )
        return EnvObservation(features=feats, t=self._t)
