"""Coordinated inventory management + recommendation environment.

Recommendation intensities lift customer ratings toward a ceiling, a
softmax over each customer's ratings gives purchase probabilities, and
binomial draws against each customer's purchasing capacity produce the
external demand that hits an N-product inventory system.

The intensity matrix alpha is normalized per product across customers
(each product's exposure budget sums to 1).  Ratings are recomputed from
the static base matrix every period; they do not compound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ActionLayout, EnvObservation, ManagementEnv, SliceSpec


class AlphaConstraintViolated(Exception):
    """A product's intensity row does not sum to 1 within tolerance."""


def rating_update(r_base: np.ndarray, alpha: np.ndarray, e: float, r_max: float) -> np.ndarray:
    """R = R_base + (R_max - R_base) * alpha * E, elementwise."""
    r_base = np.asarray(r_base, dtype=float)
    return r_base + (r_max - r_base) * np.asarray(alpha, dtype=float) * e


def purchase_probs(ratings_col: np.ndarray) -> np.ndarray:
    """Softmax over one customer's product ratings (max-subtracted)."""
    col = np.asarray(ratings_col, dtype=float)
    z = col - col.max()
    e = np.exp(z)
    return e / e.sum()


def sample_customer_demand(
    capacity: int, probs: np.ndarray, rng: np.random.Generator, multinomial: bool = False
) -> np.ndarray:
    """Per-product purchases of one customer.

    Default draws Binomial(capacity, prob) independently per product, so a
    customer's realized total can exceed its capacity.  The multinomial
    option allocates exactly `capacity` purchases across products instead.
    """
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    probs = np.asarray(probs, dtype=float)
    if capacity == 0:
        return np.zeros(probs.size, dtype=int)
    if multinomial:
        return rng.multinomial(capacity, probs / probs.sum()).astype(int)
    return rng.binomial(capacity, np.clip(probs, 0.0, 1.0)).astype(int)


@dataclass
class RecsysConfig:
    n_products: int = 2
    m_customers: int = 3
    r_base: tuple = ((2.0, 2.0, 2.0), (2.0, 2.0, 2.0))  # N x M
    r_max: float = 5.0
    efficiency: float = 0.8
    capacity: tuple = (3, 3, 3)        # per-customer purchasing capacity
    L: tuple = (1, 1)                  # per-product lead time
    p_out: tuple = (6.0, 6.0)          # unit sell price
    p_in: tuple = (2.0, 2.0)           # unit reorder cost
    h: tuple = (0.5, 0.5)              # unit holding cost
    b: tuple = (1.0, 1.0)              # unit lost-sales / backlog penalty
    q_max: tuple = (10, 10)
    T: int = 20
    mode: str = "lost_sales"           # lost_sales | backlog
    multinomial: bool = False
    override: str = "none"             # none | im_only | rs_only
    I0: tuple = (0, 0)

    def __post_init__(self):
        n, m = self.n_products, self.m_customers
        if len(self.r_base) != n or any(len(row) != m for row in self.r_base):
            raise ValueError("r_base must be N x M")
        rb = np.asarray(self.r_base, dtype=float)
        if rb.min() < 0 or rb.max() > self.r_max:
            raise ValueError("base ratings must lie in [0, r_max]")
        if len(self.capacity) != m or any(cj < 0 for cj in self.capacity):
            raise ValueError("capacity must have M nonnegative entries")
        for name in ("L", "p_out", "p_in", "h", "b", "q_max", "I0"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per product")
        if self.mode not in ("lost_sales", "backlog"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.override not in ("none", "im_only", "rs_only"):
            raise ValueError(f"unknown override {self.override!r}")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must be in [0, 1]")


class RecsysEnv(ManagementEnv):
    """N products, M customers, joint ordering + recommending decisions.

    Action layout: ("order", N) then one simplex slice ("alpha_i", M) per
    product.  Observation layout: ({I^i}, {per-product pipeline}) -- the
    minimal inventory state; the base rating matrix is static config and
    not observed.

    The `override` config replaces one action slice with draws from the
    environment's own seeded stream: im_only randomizes alpha (agent
    controls orders only), rs_only randomizes orders.
    """

    ALPHA_TOL = 1e-6

    def __init__(self, config: RecsysConfig):
        super().__init__()
        self.config = config
        self.horizon = config.T
        n, m = config.n_products, config.m_customers
        slices = [SliceSpec("order", n, "box", 0.0, float(max(config.q_max)))]
        slices += [SliceSpec(f"alpha_{i+1}", m, "simplex") for i in range(n)]
        self.action_layout = ActionLayout(slices)
        self._r_base = np.asarray(config.r_base, dtype=float)
        self._I = np.zeros(n, dtype=int)
        self._B = np.zeros(n, dtype=int)
        self._pipes: list[list[int]] = []

    def observation_names(self) -> list[str]:
        names = [f"on_hand_{i+1}" for i in range(self.config.n_products)]
        for i in range(self.config.n_products):
            names += [f"pipe_{i+1}_{k}" for k in range(self.config.L[i])]
        return names

    def _do_reset(self) -> None:
        cfg = self.config
        self._I = np.array(cfg.I0, dtype=int)
        self._B = np.zeros(cfg.n_products, dtype=int)
        self._pipes = [[0] * cfg.L[i] for i in range(cfg.n_products)]

    def _random_alpha(self) -> np.ndarray:
        cfg = self.config
        u = self.rng("override_alpha").uniform(
            0.1, 1.0, size=(cfg.n_products, cfg.m_customers)
        )
        return u / u.sum(axis=1, keepdims=True)

    def _random_orders(self) -> np.ndarray:
        cfg = self.config
        gen = self.rng("override_order")
        return np.array(
            [gen.integers(0, cfg.q_max[i] + 1) for i in range(cfg.n_products)],
            dtype=float,
        )

    def _do_step(self, components: np.ndarray) -> tuple[float, dict]:
        cfg = self.config
        n, m = cfg.n_products, cfg.m_customers
        layout = self.action_layout

        orders = layout.get(components, "order").copy()
        alpha = np.stack(
            [layout.get(components, f"alpha_{i+1}") for i in range(n)]
        ).astype(float)

        if cfg.override == "im_only":
            alpha = self._random_alpha()
        elif cfg.override == "rs_only":
            orders = self._random_orders()

        alpha = np.clip(alpha, 0.0, 1.0)
        sums = alpha.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > self.ALPHA_TOL) or not np.all(np.isfinite(sums)):
            raise AlphaConstraintViolated(
                f"per-product intensity sums {sums} must equal 1 within {self.ALPHA_TOL}"
            )
        alpha = alpha / sums[:, None]

        q = np.array(
            [max(0, min(int(round(orders[i])), cfg.q_max[i])) for i in range(n)]
        )

        ratings = rating_update(self._r_base, alpha, cfg.efficiency, cfg.r_max)
        demand = np.zeros(n, dtype=int)
        gen = self.rng("demand")
        for j in range(m):
            gamma_j = purchase_probs(ratings[:, j])
            demand += sample_customer_demand(
                cfg.capacity[j], gamma_j, gen, multinomial=cfg.multinomial
            )

        arrivals = np.zeros(n, dtype=int)
        for i in range(n):
            if cfg.L[i] == 0:
                arrivals[i] = q[i]
            else:
                arrivals[i] = self._pipes[i].pop(0)
                self._pipes[i].append(q[i])

        carried = self._B if cfg.mode == "backlog" else np.zeros(n, dtype=int)
        serviceable = demand + carried
        avail = self._I + arrivals
        sales = np.minimum(serviceable, avail)
        unmet = serviceable - sales
        self._I = avail - sales
        self._B = unmet if cfg.mode == "backlog" else np.zeros(n, dtype=int)

        p_out = np.array(cfg.p_out)
        p_in = np.array(cfg.p_in)
        h = np.array(cfg.h)
        b = np.array(cfg.b)
        profit = p_out * sales - p_in * q - h * self._I - b * unmet
        reward = float(profit.sum())

        info = {"demand_total": float(demand.sum()), "sales_total": float(sales.sum())}
        for i in range(n):
            info[f"demand_{i+1}"] = float(demand[i])
            info[f"sales_{i+1}"] = float(sales[i])
            info[f"lost_{i+1}"] = float(unmet[i] if cfg.mode == "lost_sales" else 0)
            info[f"backlog_{i+1}"] = float(self._B[i])
            info[f"on_hand_{i+1}"] = float(self._I[i])
            info[f"order_{i+1}"] = float(q[i])
            info[f"profit_{i+1}"] = float(profit[i])
        return reward, info

    def _observe(self) -> EnvObservation:
        feats = [float(x) for x in self._I]
        for i in range(self.config.n_products):
            feats += [float(x) for x in self._pipes[i]]
        return EnvObservation(features=np.array(feats, dtype=float), t=self._t)
