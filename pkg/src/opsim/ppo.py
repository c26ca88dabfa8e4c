"""Clipped-surrogate policy-gradient trainer (PPO style).

Rollouts are whole episodes collected with the current stochastic policy;
advantages come from GAE with terminal bootstrap 0; updates maximize the
clipped surrogate with an entropy bonus and a value MSE term, optimized
by Adam with global gradient-norm clipping.  Observations are normalized
by running statistics updated during collection and frozen at evaluation;
rewards are scaled by a running estimate of the discounted-return scale
for value learning (evaluation always reports raw env returns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .core import ManagementEnv, evaluate
from .nn import Adam, MlpPolicyValue, NeuralPolicy, clip_grad_norm
from .rng import RngStreams


class NonFiniteLoss(Exception):
    """A non-finite update loss; carries the last good parameter vector."""

    def __init__(self, message: str, params: np.ndarray | None = None):
        super().__init__(message)
        self.params = params


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    episodes_per_batch: int = 8
    eval_interval: int = 0            # env steps between curve points; 0 = end only
    eval_episodes: int = 20
    normalize_rewards: bool = True
    lr_decay: bool = True             # anneal lr linearly to 0 over total_steps
    categorical_orders: bool = False  # integer order slices as categorical heads

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must be in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")


@dataclass
class RolloutBatch:
    obs: np.ndarray            # (n, obs_dim), already normalized
    actions: np.ndarray        # (n, act_dim) stored raw actions
    log_probs: np.ndarray      # (n,)
    rewards: np.ndarray        # (n,) scaled rewards used for targets
    values: np.ndarray         # (n,)
    episode_starts: list[int]  # start index of each episode segment
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return self.obs.shape[0]

    def segments(self) -> list[tuple[int, int]]:
        bounds = self.episode_starts + [len(self)]
        return [(bounds[i], bounds[i + 1]) for i in range(len(self.episode_starts))]


def categorical_order_layout(layout):
    """Swap integer-bounded "order" box slices for categorical heads.

    Works for small grids: each order component becomes a choice over
    {0, ..., hi}; the sampled index is already a valid env action.
    """
    from .core import ActionLayout, SliceSpec

    slices = []
    for s in layout.slices:
        if s.kind == "box" and s.name.startswith("order") and s.lo == 0.0:
            slices.append(
                SliceSpec(s.name, s.size, "categorical", 0.0, float(int(s.hi) + 1))
            )
        else:
            slices.append(s)
    return ActionLayout(slices)


def gae(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation for one episode (bootstrap 0).

    delta_t = r_t + gamma*V_{t+1} - V_t;  A_t = sum_k (gamma*lam)^k delta_{t+k};
    returns = A + V.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must align")
    n = rewards.size
    adv = np.zeros(n)
    next_value = 0.0
    acc = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


def compute_batch_advantages(batch: RolloutBatch, gamma: float, lam: float) -> None:
    adv = np.zeros(len(batch))
    ret = np.zeros(len(batch))
    for lo, hi in batch.segments():
        a, r = gae(batch.rewards[lo:hi], batch.values[lo:hi], gamma, lam)
        adv[lo:hi] = a
        ret[lo:hi] = r
    batch.advantages = adv
    batch.returns = ret


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / max(std, 1e-8)


# ---------------------------------------------------------------------------
# Update
# ---------------------------------------------------------------------------

def ppo_loss(
    net: MlpPolicyValue,
    flat: ad.Tensor,
    obs: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
) -> tuple[ad.Tensor, dict]:
    """Clipped-surrogate loss (to minimize) and scalar diagnostics."""
    raw, log_std, value = net.forward(flat, obs)
    logp_new = net.log_prob(raw, log_std, actions)
    ratio = ad.exp(logp_new - ad.constant(logp_old))
    adv = ad.constant(advantages)
    unclipped = ratio * adv
    clipped = ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    surrogate = ad.mean(ad.minimum(unclipped, clipped))
    entropy = ad.mean(net.entropy(raw, log_std))
    v_err = value - ad.constant(returns)
    v_loss = ad.mean(v_err * v_err)
    loss = (
        surrogate * -1.0 + v_loss * cfg.value_coef + entropy * -cfg.entropy_coef
    )
    diag = {
        "surrogate": float(surrogate.value),
        "value_loss": float(v_loss.value),
        "entropy": float(entropy.value),
        "approx_kl": float(np.mean(logp_old - logp_new.value)),
        "clip_fraction": float(
            np.mean(np.abs(ratio.value - 1.0) > cfg.clip_eps)
        ),
    }
    return loss, diag


def ppo_update(
    net: MlpPolicyValue, batch: RolloutBatch, cfg: PpoConfig, adam: Adam,
    shuffle_rng: np.random.Generator,
) -> dict:
    """Run cfg.epochs of minibatch updates; returns averaged diagnostics.

    Advantages are normalized per batch here.  On a non-finite loss the
    parameters are restored to their entry state and NonFiniteLoss raised.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("advantages must be populated before ppo_update")
    snapshot = net.params.copy()
    adv = normalize_advantages(batch.advantages)
    n = len(batch)
    diags: list[dict] = []
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            flat = ad.param(net.params)
            loss, diag = ppo_loss(
                net,
                flat,
                batch.obs[idx],
                batch.actions[idx],
                batch.log_probs[idx],
                adv[idx],
                batch.returns[idx],
                cfg,
            )
            if not np.isfinite(loss.value):
                net.params = snapshot
                raise NonFiniteLoss("non-finite PPO loss", params=snapshot)
            (grad,) = ad.grad_of(loss, [flat])
            grad = clip_grad_norm(grad, cfg.max_grad_norm)
            net.params = adam.step(net.params, grad)
            diags.append(diag)
    if not diags:
        return {}
    keys = diags[0].keys()
    return {k: float(np.mean([d[k] for d in diags])) for k in keys}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class RewardScaler:
    """Running discounted-return scale, as in common vec-normalize wrappers."""

    gamma: float
    var: float = 1.0
    count: float = 1e-4
    acc: float = 0.0

    def scale(self, reward: float, episode_start: bool) -> float:
        if episode_start:
            self.acc = 0.0
        self.acc = self.gamma * self.acc + reward
        delta = self.acc - 0.0
        self.count += 1.0
        self.var += (delta * delta - self.var) / self.count
        return float(np.clip(reward / math.sqrt(self.var + 1e-8), -10.0, 10.0))


@dataclass
class TrainResult:
    net: MlpPolicyValue
    curve: list[dict] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    total_steps: int = 0


def collect_batch(
    env: ManagementEnv,
    net: MlpPolicyValue,
    n_episodes: int,
    seed_rng: np.random.Generator,
    sample_rng: np.random.Generator,
    scaler: RewardScaler | None,
) -> tuple[RolloutBatch, float]:
    """Collect whole episodes with the current stochastic policy."""
    obs_rows, act_rows, logp_rows, rew_rows, val_rows = [], [], [], [], []
    starts: list[int] = []
    raw_return_sum = 0.0
    policy = NeuralPolicy(net, rng=sample_rng, deterministic=False)
    for _ in range(n_episodes):
        starts.append(len(obs_rows))
        ep_seed = int(seed_rng.integers(0, 2**62))
        obs = env.reset(ep_seed)
        first = True
        while not env.done:
            action = policy.act(obs)
            result = env.step(action)
            obs_rows.append(policy.last_norm_obs)
            act_rows.append(policy.last_stored)
            logp_rows.append(policy.last_logp)
            val_rows.append(policy.last_value)
            raw_return_sum += result.reward
            r = result.reward
            if scaler is not None:
                r = scaler.scale(r, first)
            rew_rows.append(r)
            net.obs_norm.update(net.input_vector(obs)[None, :])
            obs = result.obs
            first = False
    batch = RolloutBatch(
        obs=np.array(obs_rows),
        actions=np.array(act_rows),
        log_probs=np.array(logp_rows),
        rewards=np.array(rew_rows),
        values=np.array(val_rows),
        episode_starts=starts,
    )
    return batch, raw_return_sum / max(n_episodes, 1)


def train(
    env_factory: Callable[[], ManagementEnv],
    cfg: PpoConfig,
    total_steps: int,
    net: MlpPolicyValue | None = None,
    eval_seed0: int = 10_000,
) -> TrainResult:
    """Alternate rollout collection and clipped-surrogate updates.

    Fully deterministic given cfg.seed (single-worker).  Periodic
    evaluation snapshots (deterministic policy, frozen normalization, raw
    env rewards) populate the learning curve every cfg.eval_interval env
    steps, plus one final point.
    """
    env = env_factory()
    eval_env = env_factory()
    if net is None:
        layout = env.action_layout
        if cfg.categorical_orders:
            layout = categorical_order_layout(layout)
        net = MlpPolicyValue(
            obs_dim=len(env.reset(0).features),
            action_layout=layout,
            hidden=cfg.hidden,
            seed=cfg.seed,
            init_log_std=cfg.init_log_std,
            time_scale=float(env.horizon) if env.horizon > 1 else None,
        )
    streams = RngStreams(cfg.seed)
    seed_rng = streams.stream("episode_seeds")
    sample_rng = streams.stream("action_sampling")
    shuffle_rng = streams.stream("minibatch_shuffle")
    adam = Adam(lr=cfg.lr)
    scaler = RewardScaler(cfg.gamma) if cfg.normalize_rewards else None

    result = TrainResult(net=net)
    steps_done = 0
    next_eval = cfg.eval_interval if cfg.eval_interval > 0 else None
    last_good = net.params.copy()
    while steps_done < total_steps:
        batch, mean_raw_return = collect_batch(
            env, net, cfg.episodes_per_batch, seed_rng, sample_rng, scaler
        )
        compute_batch_advantages(batch, cfg.gamma, cfg.lam)
        if cfg.lr_decay:
            adam.lr = cfg.lr * max(1.0 - steps_done / total_steps, 0.05)
        try:
            diag = ppo_update(net, batch, cfg, adam, shuffle_rng)
        except NonFiniteLoss:
            raise NonFiniteLoss("non-finite PPO loss", params=last_good)
        last_good = net.params.copy()
        steps_done += len(batch)
        diag["steps"] = steps_done
        diag["mean_rollout_return"] = mean_raw_return
        result.diagnostics.append(diag)
        if next_eval is not None and steps_done >= next_eval:
            result.curve.append(_eval_point(eval_env, net, cfg, steps_done, eval_seed0))
            next_eval += cfg.eval_interval
    if not result.curve or result.curve[-1]["steps"] != steps_done:
        result.curve.append(_eval_point(eval_env, net, cfg, steps_done, eval_seed0))
    result.total_steps = steps_done
    return result


def _eval_point(
    env: ManagementEnv, net: MlpPolicyValue, cfg: PpoConfig, steps: int, seed0: int
) -> dict:
    frozen = net.obs_norm.frozen
    net.obs_norm.frozen = True
    stats = evaluate(env, NeuralPolicy(net, deterministic=True), cfg.eval_episodes, seed0)
    net.obs_norm.frozen = frozen
    return {"steps": steps, "mean": stats.mean, "std": stats.std}
