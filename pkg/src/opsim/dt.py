"""Toy-scale return-conditioned sequence model over decision trajectories.

A small causal transformer reads interleaved (return-to-go, state, action)
token triples plus a learned timestep embedding, and predicts the action
from each state token's position.  Training is supervised regression of
logged actions over offline trajectories; rollouts condition on a target
return that is decremented by realized rewards.

Everything runs on the package's own autodiff tape in float64; the
default configuration stays well under 100k parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .core import ActionLayout, EnvAction, EnvObservation, ManagementEnv, Trajectory, run_episode
from .nn import Adam, ParamLayout, clip_grad_norm, save_checkpoint, load_checkpoint
from .rng import RngStreams


class WindowTooLong(Exception):
    """More triples passed to embed() than the configured context."""


class EmptyDataset(Exception):
    """dt_train needs at least one trajectory."""


@dataclass
class DtConfig:
    context: int = 8             # triples per window
    embed_dim: int = 32
    n_layers: int = 1
    n_heads: int = 2
    dropout: float = 0.0
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    rtg_scale: float = 100.0     # return-to-go divided by this before embedding
    max_timestep: int = 256
    lr_decay: bool = True

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.context < 1:
            raise ValueError("context must be >= 1")


@dataclass
class TokenBatch:
    """Interleaved (rtg, obs, act) windows, front-padded to the context length."""

    rtg: np.ndarray        # (B, K)
    obs: np.ndarray        # (B, K, obs_dim)
    act: np.ndarray        # (B, K, act_dim)
    timesteps: np.ndarray  # (B, K) ints
    mask: np.ndarray       # (B, K) 1.0 for real triples (padding only at front)


class DtModel:
    """Parameter container + forward pass for the decision transformer."""

    def __init__(self, obs_dim: int, act_dim: int, config: DtConfig):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.config = config
        d = config.embed_dim
        entries: list[tuple[str, tuple]] = [
            ("w_rtg", (1, d)),
            ("b_rtg", (d,)),
            ("w_obs", (obs_dim, d)),
            ("b_obs", (d,)),
            ("w_act", (act_dim, d)),
            ("b_act", (d,)),
            ("t_emb", (config.max_timestep, d)),
        ]
        for layer in range(config.n_layers):
            entries += [
                (f"ln1_g{layer}", (d,)),
                (f"ln1_b{layer}", (d,)),
                (f"w_qkv{layer}", (d, 3 * d)),
                (f"b_qkv{layer}", (3 * d,)),
                (f"w_proj{layer}", (d, d)),
                (f"b_proj{layer}", (d,)),
                (f"ln2_g{layer}", (d,)),
                (f"ln2_b{layer}", (d,)),
                (f"w_fc{layer}", (d, 4 * d)),
                (f"b_fc{layer}", (4 * d,)),
                (f"w_out{layer}", (4 * d, d)),
                (f"b_out{layer}", (d,)),
            ]
        entries += [("lnf_g", (d,)), ("lnf_b", (d,)), ("w_head", (d, act_dim)), ("b_head", (act_dim,))]
        self.param_layout = ParamLayout(entries)
        self.params = self._init_params(config.seed)
        # dataset normalization, filled by dt_train
        self.obs_mean = np.zeros(obs_dim)
        self.obs_std = np.ones(obs_dim)
        self.act_mean = np.zeros(act_dim)
        self.act_std = np.ones(act_dim)

    def _init_params(self, seed: int) -> np.ndarray:
        gen = RngStreams(seed).stream("dt_init")
        flat = np.zeros(self.param_layout.size)
        for name, shape, offset, size in self.param_layout.entries:
            if name.startswith(("w_", "t_emb")):
                fan_in = shape[0] if len(shape) == 2 else shape[1]
                flat[offset : offset + size] = gen.normal(0.0, 0.02, size=size)
            elif name.startswith(("ln1_g", "ln2_g", "lnf_g")):
                flat[offset : offset + size] = 1.0
        return flat

    @property
    def n_params(self) -> int:
        return self.param_layout.size

    # -- forward --------------------------------------------------------

    def _layer_norm(self, x: ad.Tensor, gain: ad.Tensor, bias: ad.Tensor) -> ad.Tensor:
        mu = ad.mean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = ad.mean(xc * xc, axis=-1, keepdims=True)
        return xc * ad.power(var + 1e-5, -0.5) * gain + bias

    def embed(self, flat: ad.Tensor, batch: TokenBatch) -> tuple[ad.Tensor, np.ndarray]:
        """Token sequence (B, 3K, d) plus per-token real mask (B, 3K)."""
        cfg = self.config
        b, k = batch.rtg.shape
        if k > cfg.context:
            raise WindowTooLong(f"window of {k} triples exceeds context {cfg.context}")
        view = self.param_layout.view
        rtg = ad.constant((batch.rtg / cfg.rtg_scale)[:, :, None])
        obs = ad.constant((batch.obs - self.obs_mean) / self.obs_std)
        act = ad.constant((batch.act - self.act_mean) / self.act_std)
        te = view(flat, "t_emb")[np.minimum(batch.timesteps, cfg.max_timestep - 1)]
        rtg_e = rtg @ view(flat, "w_rtg") + view(flat, "b_rtg") + te
        obs_e = obs @ view(flat, "w_obs") + view(flat, "b_obs") + te
        act_e = act @ view(flat, "w_act") + view(flat, "b_act") + te
        d = cfg.embed_dim
        tokens = ad.concat(
            [
                ad.reshape(rtg_e, (b, k, 1, d)),
                ad.reshape(obs_e, (b, k, 1, d)),
                ad.reshape(act_e, (b, k, 1, d)),
            ],
            axis=2,
        )
        tokens = ad.reshape(tokens, (b, 3 * k, d))
        token_mask = np.repeat(batch.mask, 3, axis=1)
        return tokens, token_mask

    def causal_forward(
        self, flat: ad.Tensor, batch: TokenBatch,
        dropout_rng: np.random.Generator | None = None,
    ) -> ad.Tensor:
        """Predicted actions at every state-token position: (B, K, act_dim).

        Dropout (inverted scaling) is applied to the residual branches only
        when a generator is passed, i.e. during training.
        """
        cfg = self.config
        b, k = batch.rtg.shape
        d, heads = cfg.embed_dim, cfg.n_heads
        dh = d // heads
        x, token_mask = self.embed(flat, batch)
        seq = 3 * k

        def dropped(t: ad.Tensor) -> ad.Tensor:
            if dropout_rng is None or cfg.dropout <= 0.0:
                return t
            keep = 1.0 - cfg.dropout
            mask = dropout_rng.random(t.value.shape) < keep
            return t * ad.constant(mask / keep)

        causal = np.tril(np.ones((seq, seq), dtype=bool))
        allowed = causal[None, :, :] & token_mask[:, None, :].astype(bool)
        allowed |= np.eye(seq, dtype=bool)[None, :, :]  # padding rows see themselves only
        bias = np.where(allowed, 0.0, -1e9)[:, None, :, :]  # (B, 1, T, T)

        view = self.param_layout.view
        for layer in range(cfg.n_layers):
            ln1 = self._layer_norm(
                x, view(flat, f"ln1_g{layer}"), view(flat, f"ln1_b{layer}")
            )
            qkv = ln1 @ view(flat, f"w_qkv{layer}") + view(flat, f"b_qkv{layer}")
            q = _split_heads(qkv[:, :, slice(0, d)], b, seq, heads, dh)
            key = _split_heads(qkv[:, :, slice(d, 2 * d)], b, seq, heads, dh)
            v = _split_heads(qkv[:, :, slice(2 * d, 3 * d)], b, seq, heads, dh)
            scores = (q @ ad.swapaxes(key, -1, -2)) * (1.0 / math.sqrt(dh))
            attn = ad.softmax(scores + ad.constant(bias), axis=-1)
            ctx = attn @ v
            ctx = ad.reshape(ad.swapaxes(ctx, 1, 2), (b, seq, d))
            x = x + dropped(ctx @ view(flat, f"w_proj{layer}") + view(flat, f"b_proj{layer}"))
            ln2 = self._layer_norm(
                x, view(flat, f"ln2_g{layer}"), view(flat, f"ln2_b{layer}")
            )
            hidden = ad.gelu(ln2 @ view(flat, f"w_fc{layer}") + view(flat, f"b_fc{layer}"))
            x = x + dropped(hidden @ view(flat, f"w_out{layer}") + view(flat, f"b_out{layer}"))

        x = self._layer_norm(x, view(flat, "lnf_g"), view(flat, "lnf_b"))
        state_tokens = x[:, slice(1, seq, 3), :]
        return state_tokens @ view(flat, "w_head") + view(flat, "b_head")

    def predict_np(self, batch: TokenBatch) -> np.ndarray:
        """Normalized-space predictions without building gradients."""
        return self.causal_forward(ad.constant(self.params), batch).value

    def loss(
        self, flat: ad.Tensor, batch: TokenBatch,
        dropout_rng: np.random.Generator | None = None,
    ) -> ad.Tensor:
        """Masked MSE between predicted and logged (normalized) actions."""
        pred = self.causal_forward(flat, batch, dropout_rng)
        target = (batch.act - self.act_mean) / self.act_std
        se = (pred - ad.constant(target)) ** 2.0
        w = batch.mask[:, :, None]
        denom = float(batch.mask.sum()) * self.act_dim
        return ad.total(se * ad.constant(w)) * (1.0 / max(denom, 1.0))


def _split_heads(t: ad.Tensor, b: int, seq: int, heads: int, dh: int) -> ad.Tensor:
    return ad.swapaxes(ad.reshape(t, (b, seq, heads, dh)), 1, 2)


# ---------------------------------------------------------------------------
# Dataset windows
# ---------------------------------------------------------------------------

def _window(traj: Trajectory, end: int, context: int, obs_dim: int, act_dim: int):
    lo = max(0, end - context + 1)
    k = context
    rtg = np.zeros(k)
    obs = np.zeros((k, obs_dim))
    act = np.zeros((k, act_dim))
    ts = np.zeros(k, dtype=int)
    mask = np.zeros(k)
    rows = traj.records[lo : end + 1]
    off = k - len(rows)
    for i, rec in enumerate(rows):
        rtg[off + i] = rec.rtg
        obs[off + i] = rec.obs.features
        act[off + i] = rec.act.components
        ts[off + i] = rec.obs.t
        mask[off + i] = 1.0
    return rtg, obs, act, ts, mask


def build_token_batch(
    trajectories: list[Trajectory],
    picks: list[tuple[int, int]],
    context: int,
    obs_dim: int,
    act_dim: int,
) -> TokenBatch:
    rows = [ _window(trajectories[ti], end, context, obs_dim, act_dim) for ti, end in picks ]
    return TokenBatch(
        rtg=np.stack([r[0] for r in rows]),
        obs=np.stack([r[1] for r in rows]),
        act=np.stack([r[2] for r in rows]),
        timesteps=np.stack([r[3] for r in rows]),
        mask=np.stack([r[4] for r in rows]),
    )


@dataclass
class DtTrainResult:
    model: DtModel
    loss_curve: list[float] = field(default_factory=list)


def dt_train(
    trajectories: list[Trajectory], obs_dim: int, act_dim: int, config: DtConfig,
    model: DtModel | None = None,
) -> DtTrainResult:
    """Supervised training on sampled windows; deterministic given config.seed."""
    if not trajectories:
        raise EmptyDataset("dt_train needs at least one trajectory")
    if model is None:
        model = DtModel(obs_dim, act_dim, config)
    all_obs = np.concatenate([np.stack([r.obs.features for r in t.records]) for t in trajectories])
    all_act = np.concatenate([np.stack([r.act.components for r in t.records]) for t in trajectories])
    model.obs_mean = all_obs.mean(axis=0)
    model.obs_std = np.maximum(all_obs.std(axis=0), 1e-6)
    model.act_mean = all_act.mean(axis=0)
    model.act_std = np.maximum(all_act.std(axis=0), 1e-6)

    lengths = [len(t) for t in trajectories]
    flat_index = [(ti, end) for ti, n in enumerate(lengths) for end in range(n)]
    n_windows = len(flat_index)
    streams = RngStreams(config.seed)
    rng = streams.stream("dt_batches")
    dropout_rng = streams.stream("dt_dropout") if config.dropout > 0 else None
    adam = Adam(lr=config.lr)
    result = DtTrainResult(model=model)
    steps_per_epoch = max(1, -(-n_windows // config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    step = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(n_windows)
        epoch_sq = 0.0
        epoch_count = 0.0
        for start in range(0, n_windows, config.batch_size):
            picks = [flat_index[i] for i in order[start : start + config.batch_size]]
            batch = build_token_batch(trajectories, picks, config.context, obs_dim, act_dim)
            flat = ad.param(model.params)
            loss = model.loss(flat, batch, dropout_rng)
            count = float(batch.mask.sum()) * act_dim
            epoch_sq += float(loss.value) * count
            epoch_count += count
            (grad,) = ad.grad_of(loss, [flat])
            grad = clip_grad_norm(grad, 1.0)
            if config.lr_decay:
                adam.lr = config.lr * max(1.0 - step / total_steps, 0.05)
            model.params = adam.step(model.params, grad)
            step += 1
        result.loss_curve.append(epoch_sq / epoch_count)
    return result


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------

class DtPolicy:
    """Act with a trained model, conditioning on a decaying target return.

    Keeps a rolling window of the last `context` triples.  Box slices are
    env-clamped as usual; simplex slices are projected back onto the
    simplex; categorical components are rounded.
    """

    def __init__(self, model: DtModel, layout: ActionLayout, target_return: float):
        self.model = model
        self.layout = layout
        self.target_return = target_return
        self.reset()

    def reset(self) -> None:
        self._rtg: list[float] = []
        self._obs: list[np.ndarray] = []
        self._act: list[np.ndarray] = []
        self._ts: list[int] = []
        self._remaining = self.target_return

    def act(self, obs: EnvObservation) -> EnvAction:
        self._rtg.append(self._remaining)
        self._obs.append(np.asarray(obs.features, dtype=float))
        self._act.append(np.zeros(self.model.act_dim))
        self._ts.append(obs.t)
        c = self.model.config.context
        k = min(len(self._rtg), c)
        rtg = np.zeros((1, c))
        obs_w = np.zeros((1, c, self.model.obs_dim))
        act_w = np.zeros((1, c, self.model.act_dim))
        ts = np.zeros((1, c), dtype=int)
        mask = np.zeros((1, c))
        rtg[0, c - k :] = self._rtg[-k:]
        obs_w[0, c - k :] = np.stack(self._obs[-k:])
        act_w[0, c - k :] = np.stack(self._act[-k:])
        ts[0, c - k :] = self._ts[-k:]
        mask[0, c - k :] = 1.0
        batch = TokenBatch(rtg=rtg, obs=obs_w, act=act_w, timesteps=ts, mask=mask)
        pred = self.model.predict_np(batch)[0, -1]
        components = self._project(pred * self.model.act_std + self.model.act_mean)
        self._act[-1] = components.copy()
        return EnvAction(components=components)

    def observe(self, reward: float) -> None:
        self._remaining -= reward

    def _project(self, components: np.ndarray) -> np.ndarray:
        out = components.copy()
        for s in self.layout.slices:
            sl = self.layout.slice_of(s.name)
            if s.kind == "box":
                out[sl] = np.clip(out[sl], s.lo, s.hi)
            elif s.kind == "simplex":
                seg = np.clip(out[sl], 1e-8, None)
                out[sl] = seg / seg.sum()
            else:
                out[sl] = np.clip(np.rint(out[sl]), 0, s.hi - 1)
        return out


def dt_rollout(
    env: ManagementEnv, model: DtModel, target_return: float, seed: int
) -> Trajectory:
    """Run one conditioned episode; the policy window sees realized rewards."""
    policy = DtPolicy(model, env.action_layout, target_return)
    return run_episode(env, policy, seed)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_dt_checkpoint(path, model: DtModel, env_config_hash: str, step_count: int) -> None:
    save_checkpoint(
        path,
        "dt",
        model.params,
        {
            "obs_dim": model.obs_dim,
            "act_dim": model.act_dim,
            "dt_config": asdict(model.config),
            "env_config_hash": env_config_hash,
            "step_count": int(step_count),
            "obs_mean": model.obs_mean.tolist(),
            "obs_std": model.obs_std.tolist(),
            "act_mean": model.act_mean.tolist(),
            "act_std": model.act_std.tolist(),
        },
    )


def load_dt_checkpoint(path) -> DtModel:
    header, params = load_checkpoint(path)
    if header["kind"] != "dt":
        raise ValueError(f"{path}: expected a dt checkpoint, got {header['kind']}")
    cfg = DtConfig(**header["dt_config"])
    model = DtModel(header["obs_dim"], header["act_dim"], cfg)
    if params.size != model.n_params:
        raise ValueError(f"{path}: parameter count mismatch")
    model.params = params
    model.obs_mean = np.array(header["obs_mean"])
    model.obs_std = np.array(header["obs_std"])
    model.act_mean = np.array(header["act_mean"])
    model.act_std = np.array(header["act_std"])
    return model
