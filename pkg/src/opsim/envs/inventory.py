"""Single-echelon and serial multi-echelon inventory environments.

The single-echelon env models one stocking point under periodic review
with a fixed lead time, in lost-sales or backlog mode.  The serial env
chains M echelons: external demand hits echelon 1, each echelon orders
from the one above, echelon M orders from an unconstrained source.  The
serial reward is shared (fully cooperative): the sum of per-echelon
period profits, with revenue earned at echelon 1 only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import ActionLayout, EnvObservation, ManagementEnv, SliceSpec


# ---------------------------------------------------------------------------
# Demand distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemandSpec:
    """Integer demand distribution.

    kind: poisson(lam) | uniform(lo, hi) inclusive integers |
    normal(mu, sigma) truncated at 0 and rounded.
    """

    kind: str
    lam: float = 0.0
    lo: int = 0
    hi: int = 0
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("poisson", "uniform", "normal"):
            raise ValueError(f"unknown demand kind {self.kind!r}")
        if self.kind == "uniform" and self.hi < self.lo:
            raise ValueError("uniform demand needs lo <= hi")

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "poisson":
            return int(rng.poisson(self.lam))
        if self.kind == "uniform":
            return int(rng.integers(self.lo, self.hi + 1))
        return int(round(max(0.0, rng.normal(self.mu, self.sigma))))

    def mean(self) -> float:
        if self.kind == "poisson":
            return self.lam
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        return self.mu  # ignores truncation; used only for sizing grids

    @staticmethod
    def from_dict(d: dict) -> "DemandSpec":
        return DemandSpec(**d)


# ---------------------------------------------------------------------------
# Single echelon
# ---------------------------------------------------------------------------

@dataclass
class SingleEchelonConfig:
    T: int = 20
    L: int = 0
    demand: DemandSpec = field(default_factory=lambda: DemandSpec("poisson", lam=5.0))
    h: float = 1.0          # unit holding cost per period
    b: float = 2.0          # unit shortage penalty (lost or backlogged)
    c: float = 2.0          # unit ordering cost
    p: float = 8.0          # unit sell price
    mode: str = "lost_sales"  # lost_sales | backlog
    q_max: int = 20
    I0: int = 0
    inv_cap: int | None = None  # optional warehouse cap; overflow discarded

    def __post_init__(self):
        if self.mode not in ("lost_sales", "backlog"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if min(self.h, self.b, self.c, self.p) < 0:
            raise ValueError("costs and price must be nonnegative")
        if self.q_max <= 0 or self.T < 1 or self.L < 0:
            raise ValueError("need q_max > 0, T >= 1, L >= 0")


class SingleEchelonEnv(ManagementEnv):
    """Periodic-review single stocking point.

    Observation layout: (I_t, pipeline q_{t-L}..q_{t-1}[, backlog]) --
    length 1 + L (+1 in backlog mode).  Action: one order quantity in
    [0, q_max], rounded to an integer at the boundary.
    """

    def __init__(self, config: SingleEchelonConfig):
        super().__init__()
        self.config = config
        self.horizon = config.T
        self.action_layout = ActionLayout(
            [SliceSpec("order", 1, "box", 0.0, float(config.q_max))]
        )
        self._I = 0
        self._B = 0
        self._pipeline: list[int] = []

    def observation_names(self) -> list[str]:
        names = ["on_hand"] + [f"pipe_{k}" for k in range(self.config.L)]
        if self.config.mode == "backlog":
            names.append("backlog")
        return names

    def _do_reset(self) -> None:
        self._I = int(self.config.I0)
        self._B = 0
        self._pipeline = [0] * self.config.L

    def _do_step(self, components: np.ndarray) -> tuple[float, dict]:
        cfg = self.config
        q = int(round(float(components[0])))
        q = max(0, min(q, cfg.q_max))

        if cfg.L == 0:
            arrival = q
        else:
            arrival = self._pipeline.pop(0)
            self._pipeline.append(q)

        stock = self._I + arrival
        overflow = 0
        if cfg.inv_cap is not None and stock > cfg.inv_cap:
            overflow = stock - cfg.inv_cap
            stock = cfg.inv_cap

        d = cfg.demand.sample(self.rng("demand"))
        serviceable = d + (self._B if cfg.mode == "backlog" else 0)
        sales = min(serviceable, stock)
        unmet = serviceable - sales
        self._I = stock - sales
        self._B = unmet if cfg.mode == "backlog" else 0

        reward = cfg.p * sales - cfg.h * self._I - cfg.b * unmet - cfg.c * q
        info = {
            "demand": float(d),
            "sales": float(sales),
            "lost": float(unmet if cfg.mode == "lost_sales" else 0),
            "backlog": float(self._B),
            "on_hand": float(self._I),
            "order": float(q),
            "holding_cost": float(cfg.h * self._I),
            "overflow": float(overflow),
        }
        return reward, info

    def _observe(self) -> EnvObservation:
        feats = [float(self._I)] + [float(x) for x in self._pipeline]
        if self.config.mode == "backlog":
            feats.append(float(self._B))
        return EnvObservation(features=np.array(feats, dtype=float), t=self._t)


# ---------------------------------------------------------------------------
# Serial chain (beer-game style, fully cooperative)
# ---------------------------------------------------------------------------

@dataclass
class SerialChainConfig:
    M: int = 2
    T: int = 20
    L: tuple[int, ...] = (1, 1)          # lead time of shipments INTO echelon m
    h: tuple[float, ...] = (1.0, 0.5)    # per-echelon holding cost
    c: tuple[float, ...] = (2.0, 1.0)    # per-echelon unit ordering cost
    b: float = 2.0                       # backlog penalty at echelon 1 only
    p: float = 8.0                       # sell price at echelon 1
    demand: DemandSpec = field(default_factory=lambda: DemandSpec("poisson", lam=5.0))
    q_max: int = 20
    I0: tuple[int, ...] = (0, 0)
    reward_mode: str = "shared"          # fully cooperative: summed profits

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("serial chain needs M >= 2")
        if self.reward_mode != "shared":
            raise ValueError(
                "only the shared (fully cooperative) reward is supported; "
                "fix other echelons' policies to study individual objectives"
            )
        for name in ("L", "h", "c", "I0"):
            if len(getattr(self, name)) != self.M:
                raise ValueError(f"{name} must have one entry per echelon")


class SerialChainEnv(ManagementEnv):
    """Serial supply chain with shared (summed) reward.

    Within a period, processing cascades from the source down: echelon M's
    order ships from an unconstrained source, each echelon receives
    arrivals, then ships min(downstream order + owed backlog, on-hand)
    downstream, and finally external demand hits echelon 1.  A lead time
    of zero means a shipment arrives in the same period it is sent.

    Observation layout, per echelon m: (net level I^m - B^m, pipeline
    entries, last downstream order), concatenated over echelons.  Negative
    net level encodes backlog.
    """

    def __init__(self, config: SerialChainConfig):
        super().__init__()
        self.config = config
        self.horizon = config.T
        self.action_layout = ActionLayout(
            [
                SliceSpec(f"order_{m+1}", 1, "box", 0.0, float(config.q_max))
                for m in range(config.M)
            ]
        )
        self._I = [0] * config.M
        self._B = [0] * config.M          # owed downstream (customers for m=0)
        self._pipes: list[list[int]] = []
        self._last_down_order = [0.0] * config.M

    def observation_names(self) -> list[str]:
        names = []
        for m in range(self.config.M):
            names.append(f"net_{m+1}")
            names += [f"pipe_{m+1}_{k}" for k in range(self.config.L[m])]
            names.append(f"down_order_{m+1}")
        return names

    def _do_reset(self) -> None:
        cfg = self.config
        self._I = [int(x) for x in cfg.I0]
        self._B = [0] * cfg.M
        self._pipes = [[0] * cfg.L[m] for m in range(cfg.M)]
        self._last_down_order = [0.0] * cfg.M

    def _ship_into(self, m: int, qty: int) -> int:
        """Send qty toward echelon m; returns what arrives immediately (L=0)."""
        if self.config.L[m] == 0:
            return qty
        self._pipes[m][-1] += qty
        return 0

    def _do_step(self, components: np.ndarray) -> tuple[float, dict]:
        cfg = self.config
        orders = [max(0, min(int(round(float(q))), cfg.q_max)) for q in components]

        d = cfg.demand.sample(self.rng("demand"))

        arrivals = [0] * cfg.M
        # Pipelines advance first: entry 0 arrives this period.
        for m in range(cfg.M):
            if cfg.L[m] > 0:
                arrivals[m] = self._pipes[m].pop(0)
                self._pipes[m].append(0)

        source_in = orders[cfg.M - 1]
        sales = 0
        shipped = [0] * cfg.M
        # Cascade from the top: source -> M -> ... -> 1 -> customers.
        for m in range(cfg.M - 1, -1, -1):
            inbound = source_in if m == cfg.M - 1 else shipped[m + 1]
            arrivals[m] += self._ship_into(m, inbound)
            self._I[m] += arrivals[m]
            if m > 0:
                owed = orders[m - 1] + self._B[m]
                ship = min(owed, self._I[m])
                self._I[m] -= ship
                self._B[m] = owed - ship
                shipped[m] = ship
                self._last_down_order[m] = float(orders[m - 1])
            else:
                serviceable = d + self._B[0]
                sales = min(serviceable, self._I[0])
                self._I[0] -= sales
                self._B[0] = serviceable - sales
                self._last_down_order[0] = float(d)

        profits = []
        for m in range(cfg.M):
            fm = -cfg.h[m] * self._I[m] - cfg.c[m] * orders[m]
            if m == 0:
                fm += cfg.p * sales - cfg.b * self._B[0]
            profits.append(fm)
        reward = sum(profits)

        info = {
            "demand": float(d),
            "sales": float(sales),
            "backlog_1": float(self._B[0]),
            "source_in": float(source_in),
            "system_stock": float(sum(self._I) + sum(sum(p) for p in self._pipes)),
        }
        for m in range(cfg.M):
            info[f"on_hand_{m+1}"] = float(self._I[m])
            info[f"profit_{m+1}"] = float(profits[m])
        return reward, info

    def _observe(self) -> EnvObservation:
        feats: list[float] = []
        for m in range(self.config.M):
            feats.append(float(self._I[m] - self._B[m]))
            feats += [float(x) for x in self._pipes[m]]
            feats.append(self._last_down_order[m])
        return EnvObservation(features=np.array(feats, dtype=float), t=self._t)
