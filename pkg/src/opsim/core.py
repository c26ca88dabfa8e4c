"""Environment contract, episode execution, and evaluation statistics.

All environments in this package implement the same minimal interface:
``reset(seed) -> EnvObservation`` and ``step(EnvAction) -> StepResult``.
Episodes are fully determined by (environment config, seed, action
sequence); every draw flows through :class:`opsim.rng.RngStreams`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import RngStreams


class EpisodeFinished(Exception):
    """step() called after the episode reached its horizon."""


class ActionShapeMismatch(Exception):
    """Action component count does not match the environment layout."""


class EmptySamples(Exception):
    """No samples supplied where at least one is required."""


# ---------------------------------------------------------------------------
# Action layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SliceSpec:
    """One named slice of the action vector.

    kind:
      box          continuous in [lo, hi] (clamped by the env)
      simplex      nonnegative, sums to 1 over the slice
      categorical  each component an integer index in {0, ..., hi-1}
    """

    name: str
    size: int
    kind: str = "box"
    lo: float = 0.0
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in ("box", "simplex", "categorical"):
            raise ValueError(f"unknown slice kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("slice size must be >= 1")


class ActionLayout:
    """Names each slice of a flat action vector and applies its bounds."""

    def __init__(self, slices: Sequence[SliceSpec]):
        self.slices = tuple(slices)
        self.dim = sum(s.size for s in self.slices)
        self._offsets: dict[str, slice] = {}
        pos = 0
        for s in self.slices:
            self._offsets[s.name] = slice(pos, pos + s.size)
            pos += s.size

    def slice_of(self, name: str) -> slice:
        return self._offsets[name]

    def get(self, components: np.ndarray, name: str) -> np.ndarray:
        return components[self._offsets[name]]

    def clamp(self, components: np.ndarray) -> tuple[np.ndarray, int]:
        """Clamp box slices to bounds; return (clamped copy, #components moved)."""
        out = np.array(components, dtype=float)
        if out.shape != (self.dim,):
            raise ActionShapeMismatch(
                f"expected {self.dim} action components, got {out.shape}"
            )
        n_clamped = 0
        for s in self.slices:
            sl = self._offsets[s.name]
            if s.kind == "box":
                clipped = np.clip(out[sl], s.lo, s.hi)
                n_clamped += int(np.sum(clipped != out[sl]))
                out[sl] = clipped
            elif s.kind == "categorical":
                idx = np.clip(np.rint(out[sl]), 0, s.hi - 1)
                n_clamped += int(np.sum(idx != out[sl]))
                out[sl] = idx
        return out, n_clamped

    def transform_raw(self, raw: np.ndarray) -> np.ndarray:
        """Map an unconstrained policy output into env units.

        box slices go through a scaled sigmoid onto [lo, hi]; simplex
        slices through a softmax; categorical slices are passed through
        (the sampled index).
        """
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (self.dim,):
            raise ActionShapeMismatch(
                f"expected {self.dim} raw components, got {raw.shape}"
            )
        out = np.empty_like(raw)
        for s in self.slices:
            sl = self._offsets[s.name]
            x = raw[sl]
            if s.kind == "box":
                out[sl] = s.lo + (s.hi - s.lo) * _sigmoid(x)
            elif s.kind == "simplex":
                z = x - np.max(x)
                e = np.exp(z)
                out[sl] = e / np.sum(e)
            else:  # categorical index sampled upstream
                out[sl] = x
        return out

    def to_dict(self) -> list[dict]:
        return [
            {"name": s.name, "size": s.size, "kind": s.kind, "lo": s.lo, "hi": s.hi}
            for s in self.slices
        ]

    @staticmethod
    def from_dict(items: Iterable[dict]) -> "ActionLayout":
        return ActionLayout([SliceSpec(**it) for it in items])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Core records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvObservation:
    """Flat real-valued view of the environment state at period `t`."""

    features: np.ndarray
    t: int


@dataclass
class EnvAction:
    """Flat decision vector, in environment units, laid out per ActionLayout."""

    components: np.ndarray

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)


@dataclass
class StepResult:
    obs: EnvObservation
    reward: float
    done: bool
    info: dict


@dataclass
class TrajectoryStep:
    rtg: float
    obs: EnvObservation
    act: EnvAction
    reward: float


@dataclass
class Trajectory:
    """One episode: (return-to-go, observation, action, reward) per period.

    `rtg[t]` is the undiscounted suffix sum of rewards from t onward.
    """

    records: list[TrajectoryStep] = field(default_factory=list)
    gamma: float = 1.0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records], dtype=float)

    @property
    def total_return(self) -> float:
        return float(sum(r.reward for r in self.records))


@dataclass
class EvalStats:
    mean: float
    std: float
    n: int
    ci95: float
    samples: list[float]


class ManagementEnv:
    """Base class for all environments in this package.

    Subclasses set `horizon` and `action_layout`, implement `_do_reset`
    and `_do_step`, and document their observation layout via
    `observation_names`.
    """

    horizon: int
    action_layout: ActionLayout

    def __init__(self):
        self._t = 0
        self._done = False
        self._streams: RngStreams | None = None

    # -- interface ----------------------------------------------------------

    def reset(self, seed: int) -> EnvObservation:
        self._streams = RngStreams(seed)
        self._t = 0
        self._done = self.horizon == 0
        self._do_reset()
        return self._observe()

    def step(self, action: EnvAction) -> StepResult:
        if self._streams is None:
            raise RuntimeError("reset() must be called before step()")
        if self._done:
            raise EpisodeFinished(f"episode ended at t={self._t}")
        components, n_clamped = self.action_layout.clamp(action.components)
        reward, info = self._do_step(components)
        info.setdefault("clamped", float(n_clamped))
        self._t += 1
        self._done = self._t >= self.horizon
        obs = self._observe()
        return StepResult(obs=obs, reward=float(reward), done=self._done, info=info)

    @property
    def t(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    def rng(self, name: str) -> np.random.Generator:
        assert self._streams is not None, "reset() not called"
        return self._streams.stream(name)

    # -- to implement ---------------------------------------------------

    def observation_names(self) -> list[str]:
        raise NotImplementedError

    def _do_reset(self) -> None:
        raise NotImplementedError

    def _do_step(self, components: np.ndarray) -> tuple[float, dict]:
        raise NotImplementedError

    def _observe(self) -> EnvObservation:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Episode execution and evaluation
# ---------------------------------------------------------------------------

def run_episode(env: ManagementEnv, policy, seed: int) -> Trajectory:
    """Roll one episode and return its trajectory with return-to-go filled in.

    `policy` maps EnvObservation -> EnvAction via `act`; policies that keep
    per-episode state may expose `reset()`.
    """
    obs = env.reset(seed)
    if hasattr(policy, "reset"):
        policy.reset()
    feedback = getattr(policy, "observe", None)
    steps: list[tuple[EnvObservation, EnvAction, float]] = []
    while not env.done:
        act = policy.act(obs)
        result = env.step(act)
        if feedback is not None:
            feedback(result.reward)
        steps.append((obs, act, result.reward))
        obs = result.obs
    rtg = 0.0
    records: list[TrajectoryStep] = []
    for o, a, r in reversed(steps):
        rtg += r
        records.append(TrajectoryStep(rtg=rtg, obs=o, act=a, reward=r))
    records.reverse()
    return Trajectory(records=records, gamma=1.0)


def evaluate(env: ManagementEnv, policy, n_episodes: int, seed0: int) -> EvalStats:
    """Evaluate `policy` on episode seeds seed0..seed0+n-1."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    samples = [
        run_episode(env, policy, seed0 + i).total_return for i in range(n_episodes)
    ]
    return stats_from_samples(samples)


def stats_from_samples(samples: Sequence[float]) -> EvalStats:
    arr = np.asarray(samples, dtype=float)
    n = arr.size
    if n == 0:
        raise EmptySamples("no episode returns")
    mean = float(arr.mean())
    std = 0.0 if n == 1 else float(arr.std(ddof=1))
    ci95 = 1.96 * std / math.sqrt(n)
    return EvalStats(mean=mean, std=std, n=n, ci95=ci95, samples=[float(x) for x in arr])


# ---------------------------------------------------------------------------
# Kernel density estimation
# ---------------------------------------------------------------------------

def kde(
    samples: Sequence[float], bandwidth: float, grid_size: int = 512
) -> list[tuple[float, float]]:
    """Gaussian-kernel density of `samples` on an evenly spaced grid.

    The grid extends five bandwidths past the sample range (covering the
    nominal [min-3h, max+3h] span) so the trapezoid integral of the curve
    is 1 to within 1e-3 even for a single sample.
    """
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise EmptySamples("kde requires at least one sample")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    lo = arr.min() - 5.0 * bandwidth
    hi = arr.max() + 5.0 * bandwidth
    # keep grid spacing <= bandwidth/4 so the trapezoid mass stays within 1e-3
    needed = int(np.ceil((hi - lo) / (bandwidth / 4.0))) + 1
    grid_size = min(max(grid_size, needed), 200_000)
    xs = np.linspace(lo, hi, grid_size)
    z = (xs[:, None] - arr[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (
        arr.size * bandwidth * math.sqrt(2.0 * math.pi)
    )
    return list(zip(xs.tolist(), dens.tolist()))


# ---------------------------------------------------------------------------
# Trajectory persistence (newline-delimited JSON)
# ---------------------------------------------------------------------------

def save_trajectories(
    path, trajectories: Sequence[Trajectory], config_hash: str, seeds: Sequence[int]
) -> None:
    """Write episodes as NDJSON blocks.

    Each episode starts with a header line recording the env config hash
    and the episode seed, followed by one record per period with keys
    t, rtg, obs, act, reward.
    """
    if len(trajectories) != len(seeds):
        raise ValueError("one seed per trajectory required")
    with open(path, "w", encoding="utf-8") as fh:
        for traj, seed in zip(trajectories, seeds):
            header = {"config_hash": config_hash, "seed": int(seed), "gamma": traj.gamma}
            fh.write(json.dumps(header) + "\n")
            for rec in traj.records:
                row = {
                    "t": rec.obs.t,
                    "rtg": rec.rtg,
                    "obs": [float(x) for x in rec.obs.features],
                    "act": [float(x) for x in rec.act.components],
                    "reward": rec.reward,
                }
                fh.write(json.dumps(row) + "\n")


def load_trajectories(path) -> tuple[list[Trajectory], list[dict]]:
    """Read episodes written by :func:`save_trajectories`.

    Returns (trajectories, per-episode headers).
    """
    trajectories: list[Trajectory] = []
    headers: list[dict] = []
    current: Trajectory | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if "config_hash" in row:
                current = Trajectory(records=[], gamma=float(row.get("gamma", 1.0)))
                trajectories.append(current)
                headers.append(row)
                continue
            if current is None:
                raise ValueError(f"{path}: record before header line")
            current.records.append(
                TrajectoryStep(
                    rtg=float(row["rtg"]),
                    obs=EnvObservation(
                        features=np.array(row["obs"], dtype=float), t=int(row["t"])
                    ),
                    act=EnvAction(components=np.array(row["act"], dtype=float)),
                    reward=float(row["reward"]),
                )
            )
    return trajectories, headers


# ---------------------------------------------------------------------------
# Simple scripted policies shared across modules
# ---------------------------------------------------------------------------

class FunctionPolicy:
    """Wrap obs -> EnvAction callables as a policy."""

    def __init__(self, fn: Callable[[EnvObservation], EnvAction]):
        self._fn = fn

    def act(self, obs: EnvObservation) -> EnvAction:
        return self._fn(obs)


class ConstantActionPolicy:
    """Emit the same action components every period."""

    def __init__(self, components):
        self._components = np.asarray(components, dtype=float)

    def act(self, obs: EnvObservation) -> EnvAction:
        return EnvAction(components=self._components.copy())


class SliceCompositePolicy:
    """Assemble the action from several policies, one per named slice.

    Lets one decision slice come from a trained agent while the others
    follow fixed scripted policies (e.g. a single echelon training
    against scripted partners, or composing two single-lever agents).
    Every assigned policy sees the full observation and emits a full
    action vector; only its assigned slices are used.
    """

    def __init__(self, layout: ActionLayout, assignments: dict):
        missing = [s.name for s in layout.slices if s.name not in assignments]
        if missing:
            raise ValueError(f"no policy assigned for slices {missing}")
        self._layout = layout
        self._assignments = dict(assignments)

    def reset(self) -> None:
        seen: set = set()
        for policy in self._assignments.values():
            if id(policy) not in seen and hasattr(policy, "reset"):
                policy.reset()
            seen.add(id(policy))

    def act(self, obs: EnvObservation) -> EnvAction:
        parts = np.empty(self._layout.dim)
        cache: dict[int, np.ndarray] = {}
        for s in self._layout.slices:
            policy = self._assignments[s.name]
            key = id(policy)
            if key not in cache:
                cache[key] = policy.act(obs).components
            parts[self._layout.slice_of(s.name)] = cache[key][
                self._layout.slice_of(s.name)
            ]
        return EnvAction(components=parts)


class RandomPolicy:
    """Seeded uniform-random policy over an action layout.

    Draws raw values per slice: box slices uniform in [lo, hi] (finite
    bounds required), simplex slices as normalized uniforms, categorical
    slices as uniform indices.
    """

    def __init__(self, layout: ActionLayout, seed: int):
        self._layout = layout
        self._rng = RngStreams(seed).stream("random_policy")

    def act(self, obs: EnvObservation) -> EnvAction:
        parts = []
        for s in self._layout.slices:
            if s.kind == "box":
                parts.append(self._rng.uniform(s.lo, s.hi, size=s.size))
            elif s.kind == "simplex":
                u = self._rng.uniform(0.1, 1.0, size=s.size)
                parts.append(u / u.sum())
            else:
                parts.append(self._rng.integers(0, int(s.hi), size=s.size).astype(float))
        return EnvAction(components=np.concatenate(parts))
