"""Dense policy/value network over the autodiff tape.

One flat float64 parameter vector holds the whole network: a tanh trunk
shared by a policy head, a state-independent log-std vector, and a value
head.  The policy head emits one raw output per box/simplex action
component (Gaussian means in unconstrained space; the environment layout
squashes them into bounds) and one block of logits per categorical
component.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core import ActionLayout, EnvAction, EnvObservation
from .rng import RngStreams

LOG_2PI = float(np.log(2.0 * np.pi))


class ShapeMismatch(Exception):
    """Input length does not match the network input layer."""


# ---------------------------------------------------------------------------
# Flat parameter vector bookkeeping
# ---------------------------------------------------------------------------

class ParamLayout:
    """Maps named arrays onto segments of one flat vector."""

    def __init__(self, entries: list[tuple[str, tuple]]):
        self.entries = []
        offset = 0
        for name, shape in entries:
            size = int(np.prod(shape)) if shape else 1
            self.entries.append((name, tuple(shape), offset, size))
            offset += size
        self.size = offset
        self._by_name = {e[0]: e for e in self.entries}

    def view(self, flat: ad.Tensor, name: str) -> ad.Tensor:
        _, shape, offset, size = self._by_name[name]
        seg = flat[slice(offset, offset + size)]
        return ad.reshape(seg, shape) if shape else seg

    def view_np(self, flat: np.ndarray, name: str) -> np.ndarray:
        _, shape, offset, size = self._by_name[name]
        return flat[offset : offset + size].reshape(shape)


def raw_dim_of(layout: ActionLayout) -> int:
    """Policy-head output width for an action layout."""
    dim = 0
    for s in layout.slices:
        if s.kind == "categorical":
            dim += s.size * int(s.hi)
        else:
            dim += s.size
    return dim


def gaussian_dim_of(layout: ActionLayout) -> int:
    return sum(s.size for s in layout.slices if s.kind != "categorical")


@dataclass
class RunningNorm:
    """Welford running mean/variance used for observation normalization."""

    mean: np.ndarray
    var: np.ndarray
    count: float = 1e-4
    frozen: bool = False

    @staticmethod
    def for_dim(dim: int) -> "RunningNorm":
        return RunningNorm(mean=np.zeros(dim), var=np.ones(dim))

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.atleast_2d(batch)
        n = batch.shape[0]
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        delta = batch_mean - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        m_a = self.var * self.count
        m_b = batch_var * n
        self.var = (m_a + m_b + delta**2 * self.count * n / tot) / tot
        self.count = tot

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -10.0, 10.0)


class MlpPolicyValue:
    """Shared tanh trunk with policy, log-std, and value heads."""

    def __init__(
        self,
        obs_dim: int,
        action_layout: ActionLayout,
        hidden: tuple[int, ...] = (64, 64),
        seed: int = 0,
        init_log_std: float = -0.5,
        time_scale: float | None = None,
    ):
        # time_scale adds t/time_scale as an extra input so value estimates
        # can see the remaining horizon (env feature layouts stay untouched)
        self.env_obs_dim = obs_dim
        self.time_scale = time_scale
        self.obs_dim = obs_dim + (1 if time_scale else 0)
        self.action_layout = action_layout
        self.hidden = tuple(hidden)
        self.raw_dim = raw_dim_of(action_layout)
        self.gaussian_dim = gaussian_dim_of(action_layout)
        self.layer_sizes = (self.obs_dim, *self.hidden)

        entries: list[tuple[str, tuple]] = []
        for i in range(len(self.layer_sizes) - 1):
            entries.append((f"w{i}", (self.layer_sizes[i], self.layer_sizes[i + 1])))
            entries.append((f"b{i}", (self.layer_sizes[i + 1],)))
        trunk_out = self.layer_sizes[-1]
        entries.append(("policy_w", (trunk_out, self.raw_dim)))
        entries.append(("policy_b", (self.raw_dim,)))
        if self.gaussian_dim:
            entries.append(("log_std", (self.gaussian_dim,)))
        entries.append(("value_w", (trunk_out, 1)))
        entries.append(("value_b", (1,)))
        self.param_layout = ParamLayout(entries)

        self.params = self._init_params(seed, init_log_std)
        self.obs_norm = RunningNorm.for_dim(self.obs_dim)

    def input_vector(self, obs: EnvObservation) -> np.ndarray:
        """Raw network input for one observation (appends scaled time if set)."""
        if self.time_scale:
            return np.append(obs.features, obs.t / self.time_scale)
        return np.asarray(obs.features, dtype=float)

    # -- parameters -------------------------------------------------------

    def _init_params(self, seed: int, init_log_std: float) -> np.ndarray:
        gen = RngStreams(seed).stream("param_init")
        flat = np.zeros(self.param_layout.size)
        for name, shape, offset, size in self.param_layout.entries:
            if name.startswith("w"):
                fan_in = shape[0]
                flat[offset : offset + size] = gen.normal(
                    0.0, 1.0 / np.sqrt(fan_in), size=size
                )
            elif name == "policy_w":
                fan_in = shape[0]
                flat[offset : offset + size] = gen.normal(
                    0.0, 0.01 / np.sqrt(fan_in), size=size
                )
            elif name == "value_w":
                fan_in = shape[0]
                flat[offset : offset + size] = gen.normal(
                    0.0, 1.0 / np.sqrt(fan_in), size=size
                )
            elif name == "log_std":
                flat[offset : offset + size] = init_log_std
        return flat

    @property
    def n_params(self) -> int:
        return self.param_layout.size

    # -- forward ------------------------------------------------------------

    def forward(self, flat: ad.Tensor, obs: np.ndarray) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
        """(raw policy outputs (n, raw_dim), log_std (gauss_dim,), value (n,))."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if obs.shape[1] != self.obs_dim:
            raise ShapeMismatch(f"expected obs dim {self.obs_dim}, got {obs.shape[1]}")
        h = ad.constant(obs)
        for i in range(len(self.layer_sizes) - 1):
            w = self.param_layout.view(flat, f"w{i}")
            b = self.param_layout.view(flat, f"b{i}")
            h = ad.tanh(h @ w + b)
        raw = h @ self.param_layout.view(flat, "policy_w") + self.param_layout.view(
            flat, "policy_b"
        )
        value = h @ self.param_layout.view(flat, "value_w") + self.param_layout.view(
            flat, "value_b"
        )
        value = ad.reshape(value, (obs.shape[0],))
        if self.gaussian_dim:
            log_std = self.param_layout.view(flat, "log_std")
        else:
            log_std = ad.constant(np.zeros(0))
        return raw, log_std, value

    def forward_np(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raw, log_std, value = self.forward(ad.constant(self.params), obs)
        return raw.value, log_std.value, value.value

    # -- distribution pieces ----------------------------------------------

    def split_raw(self, raw: np.ndarray) -> dict[str, np.ndarray]:
        """Per-slice raw segments; categorical logits get shape (n, size, k)."""
        out = {}
        pos = 0
        n = raw.shape[0]
        for s in self.action_layout.slices:
            if s.kind == "categorical":
                k = int(s.hi)
                out[s.name] = raw[:, pos : pos + s.size * k].reshape(n, s.size, k)
                pos += s.size * k
            else:
                out[s.name] = raw[:, pos : pos + s.size]
                pos += s.size
        return out

    def sample_stored(
        self, raw: np.ndarray, log_std: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Sample the stored-action vector (one row of obs at a time).

        Box/simplex components store the raw Gaussian draw; categorical
        components store the sampled index.
        """
        segs = self.split_raw(raw)
        stored = np.empty(self.action_layout.dim)
        gpos = 0
        for s in self.action_layout.slices:
            sl = self.action_layout.slice_of(s.name)
            if s.kind == "categorical":
                logits = segs[s.name][0]
                idx = []
                for comp in range(s.size):
                    z = logits[comp] - logits[comp].max()
                    p = np.exp(z)
                    p /= p.sum()
                    idx.append(rng.choice(p.size, p=p))
                stored[sl] = np.array(idx, dtype=float)
            else:
                mu = segs[s.name][0]
                std = np.exp(log_std[gpos : gpos + s.size])
                stored[sl] = mu + std * rng.normal(size=s.size)
                gpos += s.size
        return stored

    def mode_stored(self, raw: np.ndarray) -> np.ndarray:
        """Deterministic action: Gaussian means, categorical argmax."""
        segs = self.split_raw(raw)
        stored = np.empty(self.action_layout.dim)
        for s in self.action_layout.slices:
            sl = self.action_layout.slice_of(s.name)
            if s.kind == "categorical":
                stored[sl] = segs[s.name][0].argmax(axis=-1).astype(float)
            else:
                stored[sl] = segs[s.name][0]
        return stored

    def log_prob(
        self, raw: ad.Tensor, log_std: ad.Tensor, stored: np.ndarray
    ) -> ad.Tensor:
        """Joint log-density of stored actions under (raw, log_std); (n,) Tensor."""
        n = raw.value.shape[0]
        terms: list[ad.Tensor] = []
        pos = 0
        gpos = 0
        for s in self.action_layout.slices:
            sl = self.action_layout.slice_of(s.name)
            a = stored[:, sl]
            if s.kind == "categorical":
                k = int(s.hi)
                logits = ad.reshape(
                    raw[:, slice(pos, pos + s.size * k)], (n, s.size, k)
                )
                logp = ad.log_softmax(logits, axis=-1)
                idx = a.astype(int)
                rows = np.arange(n)[:, None].repeat(s.size, axis=1)
                comps = np.arange(s.size)[None, :].repeat(n, axis=0)
                picked = logp[(rows, comps, idx)]
                terms.append(ad.total(picked, axis=1))
                pos += s.size * k
            else:
                mu = raw[:, slice(pos, pos + s.size)]
                lstd = log_std[slice(gpos, gpos + s.size)]
                inv_var = ad.exp(lstd * -2.0)
                diff = ad.constant(a) - mu
                quad = ad.total(diff * diff * inv_var, axis=1)
                logdet = ad.total(lstd) * 2.0
                terms.append(
                    (quad + logdet + s.size * LOG_2PI) * -0.5
                )
                pos += s.size
                gpos += s.size
        out = terms[0]
        for t in terms[1:]:
            out = out + t
        return out

    def entropy(self, raw: ad.Tensor, log_std: ad.Tensor) -> ad.Tensor:
        """Summed per-slice entropies; (n,) Tensor."""
        n = raw.value.shape[0]
        terms: list[ad.Tensor] = []
        pos = 0
        gpos = 0
        for s in self.action_layout.slices:
            if s.kind == "categorical":
                k = int(s.hi)
                logits = ad.reshape(
                    raw[:, slice(pos, pos + s.size * k)], (n, s.size, k)
                )
                logp = ad.log_softmax(logits, axis=-1)
                p = ad.softmax(logits, axis=-1)
                terms.append(ad.total(p * logp, axis=(1, 2)) * -1.0)
                pos += s.size * k
            else:
                lstd = log_std[slice(gpos, gpos + s.size)]
                ent = ad.total(lstd) + 0.5 * s.size * (1.0 + LOG_2PI)
                ones = ad.constant(np.ones(n))
                terms.append(ones * ent)
                pos += s.size
                gpos += s.size
        out = terms[0]
        for t in terms[1:]:
            out = out + t
        return out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


# ---------------------------------------------------------------------------
# Policy wrapper over an environment's action layout
# ---------------------------------------------------------------------------

class NeuralPolicy:
    """Wrap MlpPolicyValue as an acting policy.

    In stochastic mode, raw Gaussian draws / categorical samples come from
    `rng`; in deterministic mode, means and argmaxes.  Stored raw actions
    and log-probs from the latest act() are kept for rollout collection.
    """

    def __init__(self, net: MlpPolicyValue, rng: np.random.Generator | None = None,
                 deterministic: bool = True):
        self.net = net
        self.rng = rng
        self.deterministic = deterministic
        self.last_stored: np.ndarray | None = None
        self.last_logp: float = 0.0
        self.last_value: float = 0.0
        self.last_norm_obs: np.ndarray | None = None

    def act(self, obs: EnvObservation) -> EnvAction:
        x = self.net.obs_norm.normalize(self.net.input_vector(obs))[None, :]
        self.last_norm_obs = x[0]
        flat = ad.constant(self.net.params)
        raw_t, log_std_t, value_t = self.net.forward(flat, x)
        raw, log_std = raw_t.value, log_std_t.value
        if self.deterministic or self.rng is None:
            stored = self.net.mode_stored(raw)
        else:
            stored = self.net.sample_stored(raw, log_std, self.rng)
        self.last_stored = stored
        self.last_value = float(value_t.value[0])
        logp_t = self.net.log_prob(raw_t, log_std_t, stored[None, :])
        self.last_logp = float(logp_t.value[0])
        env_units = self.net.action_layout.transform_raw(stored)
        return EnvAction(components=env_units)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "opsim-checkpoint"


def save_checkpoint(
    path,
    kind: str,
    params: np.ndarray,
    header_extra: dict,
) -> None:
    """Write a checkpoint: JSON header line + little-endian float64 params."""
    header = {"magic": CHECKPOINT_MAGIC, "kind": kind, "n_params": int(params.size)}
    header.update(header_extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(struct.pack(f"<{params.size}d", *params.astype(np.float64)))


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not an opsim checkpoint")
        n = int(header["n_params"])
        blob = fh.read(8 * n)
        if len(blob) != 8 * n:
            raise ValueError(f"{path}: truncated checkpoint payload")
        params = np.array(struct.unpack(f"<{n}d", blob))
    if not np.all(np.isfinite(params)):
        raise ValueError(f"{path}: non-finite parameters")
    return header, params


def save_mlp_checkpoint(
    path, net: MlpPolicyValue, env_config_hash: str, step_count: int
) -> None:
    save_checkpoint(
        path,
        "mlp",
        net.params,
        {
            "layer_sizes": list(net.layer_sizes),
            "action_layout": net.action_layout.to_dict(),
            "env_config_hash": env_config_hash,
            "step_count": int(step_count),
            "obs_mean": net.obs_norm.mean.tolist(),
            "obs_var": net.obs_norm.var.tolist(),
            "obs_count": float(net.obs_norm.count),
            "time_scale": net.time_scale,
        },
    )


def load_mlp_checkpoint(path) -> MlpPolicyValue:
    header, params = load_checkpoint(path)
    if header["kind"] != "mlp":
        raise ValueError(f"{path}: expected an mlp checkpoint, got {header['kind']}")
    layout = ActionLayout.from_dict(header["action_layout"])
    layer_sizes = header["layer_sizes"]
    time_scale = header.get("time_scale")
    net = MlpPolicyValue(
        obs_dim=layer_sizes[0] - (1 if time_scale else 0),
        action_layout=layout,
        hidden=tuple(layer_sizes[1:]),
        time_scale=time_scale,
    )
    if params.size != net.n_params:
        raise ValueError(f"{path}: parameter count mismatch")
    net.params = params
    net.obs_norm = RunningNorm(
        mean=np.array(header["obs_mean"]),
        var=np.array(header["obs_var"]),
        count=float(header["obs_count"]),
        frozen=True,
    )
    return net
