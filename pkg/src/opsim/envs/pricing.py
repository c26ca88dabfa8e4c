"""Joint dynamic pricing and replenishment under competition.

Demand is logit-Poisson: the period rate is eta * Delta * logistic(x'beta)
with regressors x(p, o, r) = (1, p, o, r, p-o, p-r) built from our price,
the competitor's price, and a smoothed reference price.  Inventory follows
lost-sales or backlog dynamics with a replenishment lead time, and the
period profit is p*sales - holding - shortage - ordering - fixed cost.

Four scenario presets (a-d) cover {backlog, lost} x {no fixed cost, fixed
cost}; see `scenario_preset`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import ActionLayout, EnvObservation, ManagementEnv, SliceSpec


@dataclass(frozen=True)
class CompetitorProcess:
    """Exogenous competitor price path.

    kind: constant(o_bar) | cyclic(o_bar, amp, period) with
    o_t = o_bar + amp*cos(2*pi*t/period) | ar1(o_bar, rho, sigma) with
    o_{t+1} = o_bar + rho*(o_t - o_bar) + sigma*eps, started at `o0`
    (defaults to o_bar).
    """

    kind: str = "constant"
    o_bar: float = 5.0
    amp: float = 0.0
    period: int = 4
    rho: float = 0.8
    sigma: float = 0.0
    o0: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "cyclic", "ar1"):
            raise ValueError(f"unknown competitor process {self.kind!r}")

    def initial(self) -> float:
        if self.kind == "cyclic":
            return self.o_bar + self.amp
        if self.o0 is not None:
            return self.o0
        return self.o_bar

    def advance(self, t_next: int, o_prev: float, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.o_bar
        if self.kind == "cyclic":
            return self.o_bar + self.amp * math.cos(2.0 * math.pi * t_next / self.period)
        eps = rng.normal() if self.sigma > 0 else 0.0
        return self.o_bar + self.rho * (o_prev - self.o_bar) + self.sigma * eps


def demand_rate(
    p: float, o: float, r: float, beta: np.ndarray, eta: float, delta: float
) -> float:
    """Poisson rate eta*Delta*logistic(x'beta), x = (1, p, o, r, p-o, p-r).

    Numerically stable for large |x'beta| via a sign branch on the
    logistic.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (6,):
        raise ValueError("beta must have exactly 6 entries")
    x = np.array([1.0, p, o, r, p - o, p - r])
    z = float(x @ beta)
    if z >= 0:
        logistic = 1.0 / (1.0 + math.exp(-z))
    else:
        ez = math.exp(z)
        logistic = ez / (1.0 + ez)
    return eta * delta * logistic


def sample_demand(rate: float, rng: np.random.Generator) -> int:
    """One Poisson draw at `rate` (0 allowed)."""
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0:
        return 0
    return int(rng.poisson(rate))


def reference_price_update(r: float, p: float, zeta: float) -> float:
    """Exponential smoothing r' = zeta*r + (1-zeta)*p."""
    if not 0.0 <= zeta < 1.0:
        raise ValueError("zeta must be in [0, 1)")
    return zeta * r + (1.0 - zeta) * p


@dataclass
class PricingConfig:
    T: int = 30
    L: int = 1
    eta: float = 30.0
    delta: float = 1.0
    beta: tuple[float, ...] = (3.0, -0.7, 0.3, 0.25, -0.3, -0.2)
    h: float = 0.3
    b: float = 1.0
    c: float = 2.0
    k_fixed: float = 0.0
    p_min: float = 2.0
    p_max: float = 8.0
    q_max: int = 30
    mode: str = "backlog"              # backlog | lost
    competitor: CompetitorProcess = field(default_factory=CompetitorProcess)
    zeta: float = 0.7                  # reference price smoothing
    r0: float = 5.0
    I0: int = 0
    carryover: bool = True             # backlog adds to next period serviceable
    # carryover=False reproduces the literal per-period backlog equations

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must be in [0, 1]")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if len(self.beta) != 6:
            raise ValueError("beta must have exactly 6 entries")
        if not self.p_min < self.p_max:
            raise ValueError("need p_min < p_max")
        if self.mode not in ("backlog", "lost"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.k_fixed < 0:
            raise ValueError("k_fixed must be >= 0")


def scenario_preset(name: str, base: PricingConfig | None = None, k_fixed: float = 15.0) -> PricingConfig:
    """Scenario presets a: backlog K=0, b: lost K=0, c: backlog K>0, d: lost K>0."""
    import dataclasses

    cfg = base if base is not None else PricingConfig()
    table = {
        "a": ("backlog", 0.0),
        "b": ("lost", 0.0),
        "c": ("backlog", k_fixed),
        "d": ("lost", k_fixed),
    }
    if name not in table:
        raise ValueError(f"unknown scenario {name!r} (expected a, b, c, or d)")
    mode, k = table[name]
    return dataclasses.replace(cfg, mode=mode, k_fixed=k)


class PricingEnv(ManagementEnv):
    """Price + order decisions against logit-Poisson demand.

    Observation layout: (I_{t-1}, B_{t-1}, d_{t-1}, pipeline
    q_{t-L}..q_{t-1}, o_t, r_t) -- length 3 + L + 2.  Action: (price in
    [p_min, p_max], order in [0, q_max]).
    """

    def __init__(self, config: PricingConfig):
        super().__init__()
        self.config = config
        self.horizon = config.T
        self.action_layout = ActionLayout(
            [
                SliceSpec("price", 1, "box", config.p_min, config.p_max),
                SliceSpec("order", 1, "box", 0.0, float(config.q_max)),
            ]
        )
        self._I = 0
        self._B = 0
        self._d_prev = 0
        self._pipeline: list[int] = []
        self._o = 0.0
        self._r = 0.0

    def observation_names(self) -> list[str]:
        return (
            ["on_hand", "backlog", "last_demand"]
            + [f"pipe_{k}" for k in range(self.config.L)]
            + ["competitor_price", "reference_price"]
        )

    def _do_reset(self) -> None:
        cfg = self.config
        self._I = int(cfg.I0)
        self._B = 0
        self._d_prev = 0
        self._pipeline = [0] * cfg.L
        self._o = cfg.competitor.initial()
        self._r = cfg.r0

    def _do_step(self, components: np.ndarray) -> tuple[float, dict]:
        cfg = self.config
        price = float(components[self.action_layout.slice_of("price")][0])
        q = int(round(float(components[self.action_layout.slice_of("order")][0])))
        q = max(0, min(q, cfg.q_max))

        if cfg.L == 0:
            arrival = q
        else:
            arrival = self._pipeline.pop(0)
            self._pipeline.append(q)

        rate = demand_rate(price, self._o, self._r, np.array(cfg.beta), cfg.eta, cfg.delta)
        d = sample_demand(rate, self.rng("demand"))

        avail = self._I + arrival
        carried = self._B if (cfg.mode == "backlog" and cfg.carryover) else 0
        serviceable = d + carried
        sales = min(serviceable, avail)
        unmet = serviceable - sales
        self._I = avail - sales
        self._B = unmet if cfg.mode == "backlog" else 0

        fixed = cfg.k_fixed if q > 0 else 0.0
        reward = price * sales - cfg.h * self._I - cfg.b * unmet - cfg.c * q - fixed

        info = {
            "price": price,
            "order": float(q),
            "rate": rate,
            "demand": float(d),
            "sales": float(sales),
            "lost": float(unmet if cfg.mode == "lost" else 0),
            "backlog": float(self._B),
            "on_hand": float(self._I),
            "holding_cost": float(cfg.h * self._I),
            "fixed_cost": float(fixed),
            "competitor_price": self._o,
            "reference_price": self._r,
        }

        self._d_prev = d
        self._o = cfg.competitor.advance(self._t + 1, self._o, self.rng("competitor"))
        self._r = reference_price_update(self._r, price, cfg.zeta)
        return reward, info

    def _observe(self) -> EnvObservation:
        feats = (
            [float(self._I), float(self._B), float(self._d_prev)]
            + [float(x) for x in self._pipeline]
            + [self._o, self._r]
        )
        return EnvObservation(features=np.array(feats, dtype=float), t=self._t)
