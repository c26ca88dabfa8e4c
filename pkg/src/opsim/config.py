"""Experiment configuration: TOML documents, schema validation, builders.

One file describes one experiment: an `[experiment]` block, an `[env]`
block choosing and parameterizing the environment, optional `[policy]`
and `[trainer.*]` blocks, and one block per orchestrated experiment kind
(`[pricing_grid]`, `[imrs]`, `[collab_dt]`, `[oracle]`).  Unknown keys are
rejected so typos fail fast, before any simulation runs.
"""

from __future__ import annotations

import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .envs.collab import CollabConfig, CollabEnv
from .envs.inventory import (
    DemandSpec,
    SerialChainConfig,
    SerialChainEnv,
    SingleEchelonConfig,
    SingleEchelonEnv,
)
from .envs.pricing import CompetitorProcess, PricingConfig, PricingEnv
from .envs.recsys import RecsysConfig, RecsysEnv
from .dt import DtConfig
from .ppo import PpoConfig


class ConfigError(Exception):
    """Schema violation, unknown key, or unbuildable section."""


_ENV_KINDS = ("inventory", "serial", "pricing", "recsys", "collab")

_SCHEMA: dict[str, set] = {
    "experiment": {"id", "seeds", "out_dir", "workers"},
    "env": {"kind", "inventory", "serial", "pricing", "recsys", "collab"},
    "env.inventory": {
        "T", "L", "h", "b", "c", "p", "mode", "q_max", "I0", "inv_cap", "demand",
    },
    "env.inventory.demand": {"kind", "lam", "lo", "hi", "mu", "sigma"},
    "env.serial": {"M", "T", "L", "h", "c", "b", "p", "q_max", "I0", "demand", "reward_mode"},
    "env.serial.demand": {"kind", "lam", "lo", "hi", "mu", "sigma"},
    "env.pricing": {
        "T", "L", "eta", "delta", "beta", "h", "b", "c", "k_fixed", "p_min",
        "p_max", "q_max", "mode", "zeta", "r0", "I0", "carryover", "competitor",
    },
    "env.pricing.competitor": {"kind", "o_bar", "amp", "period", "rho", "sigma", "o0"},
    "env.recsys": {
        "n_products", "m_customers", "r_base", "r_max", "efficiency", "capacity",
        "L", "p_out", "p_in", "h", "b", "q_max", "T", "mode", "multinomial",
        "override", "I0",
    },
    "env.collab": {
        "n_items", "c_prod", "c_order", "p_min", "p_max", "base_rate", "beta0",
        "beta_p", "beta_k", "q_max", "T", "n0", "method_lead",
    },
    "policy": {
        "kind", "S", "s", "y_star", "list_price", "q", "price_grid", "levels",
        "checkpoint", "target_return", "im_checkpoint", "rs_checkpoint",
    },
    "trainer": {"ppo", "dt"},
    "trainer.ppo": {
        "clip_eps", "gamma", "lam", "lr", "epochs", "minibatch_size",
        "entropy_coef", "value_coef", "max_grad_norm", "seed", "hidden",
        "init_log_std", "episodes_per_batch", "eval_interval", "eval_episodes",
        "normalize_rewards", "lr_decay", "total_steps", "categorical_orders",
    },
    "trainer.dt": {
        "context", "embed_dim", "n_layers", "n_heads", "dropout", "lr",
        "epochs", "batch_size", "seed", "rtg_scale", "max_timestep",
        "lr_decay", "target_return",
    },
    "pricing_grid": {
        "scenarios", "k_fixed", "price_grid_points", "eval_episodes",
        "eval_seed", "tune_episodes", "tune_seed", "total_steps",
        "myopic_S", "bslp_y", "bslp_price", "ssp_s", "ssp_S",
    },
    "imrs": {
        "scenarios", "eval_episodes", "eval_seed", "total_steps", "kde_bandwidth",
    },
    "collab_dt": {
        "eval_episodes", "eval_seed", "ppo_total_steps", "dataset_episodes",
        "dataset_mix", "heuristic_S", "trace_seed",
    },
    "collab_dt.dataset_mix": {"ppo", "heuristic", "random"},
    "oracle": {"n_eval", "eval_seed", "base_stock_grid", "total_steps"},
    "simulate": {"episodes", "seed", "save_trajectories"},
    "collect": {"episodes", "seed", "stochastic"},
}


def _validate(table: dict, path: str) -> None:
    allowed = _SCHEMA.get(path)
    if allowed is None:
        raise ConfigError(f"unknown config section [{path}]")
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{path}]")
        if isinstance(value, dict):
            _validate(value, f"{path}.{key}")


def validate_config(doc: dict) -> None:
    """Reject unknown sections/keys anywhere in the document."""
    for section, value in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(value, dict):
            raise ConfigError(f"top-level [{section}] must be a table")
        _validate(value, section)
    env = doc.get("env")
    if env is not None:
        kind = env.get("kind")
        if kind not in _ENV_KINDS:
            raise ConfigError(f"env.kind must be one of {_ENV_KINDS}, got {kind!r}")


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")
    validate_config(doc)
    return doc


def config_hash(doc: dict) -> str:
    """Stable 12-hex-digit digest of a resolved config document."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _demand_from(table: dict) -> DemandSpec:
    return DemandSpec(**table)


def build_env(doc: dict):
    """Instantiate the environment described by the [env] section."""
    env = doc.get("env")
    if env is None:
        raise ConfigError("missing [env] section")
    kind = env.get("kind")
    table = dict(env.get(kind, {}))
    try:
        if kind == "inventory":
            if "demand" in table:
                table["demand"] = _demand_from(table["demand"])
            if "inv_cap" in table and table["inv_cap"] in ("none", 0):
                table["inv_cap"] = None
            return SingleEchelonEnv(SingleEchelonConfig(**table))
        if kind == "serial":
            if "demand" in table:
                table["demand"] = _demand_from(table["demand"])
            for key in ("L", "h", "c", "I0"):
                if key in table:
                    table[key] = tuple(table[key])
            return SerialChainEnv(SerialChainConfig(**table))
        if kind == "pricing":
            if "competitor" in table:
                table["competitor"] = CompetitorProcess(**table["competitor"])
            if "beta" in table:
                table["beta"] = tuple(table["beta"])
            return PricingEnv(PricingConfig(**table))
        if kind == "recsys":
            for key in ("r_base", "capacity", "L", "p_out", "p_in", "h", "b", "q_max", "I0"):
                if key in table:
                    table[key] = tuple(
                        tuple(row) if isinstance(row, list) else row for row in table[key]
                    )
            return RecsysEnv(RecsysConfig(**table))
        if kind == "collab":
            for key in ("c_prod", "base_rate", "n0", "method_lead"):
                if key in table and table[key] is not None:
                    table[key] = tuple(table[key])
            return CollabEnv(CollabConfig(**table))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [env.{kind}] section: {exc}")
    raise ConfigError(f"env.kind must be one of {_ENV_KINDS}, got {kind!r}")


def build_ppo_config(doc: dict) -> tuple[PpoConfig, int]:
    """(PpoConfig, total_steps) from [trainer.ppo]."""
    table = dict(doc.get("trainer", {}).get("ppo", {}))
    total_steps = int(table.pop("total_steps", 100_000))
    if "hidden" in table:
        table["hidden"] = tuple(table["hidden"])
    try:
        return PpoConfig(**table), total_steps
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [trainer.ppo] section: {exc}")


def build_dt_config(doc: dict) -> tuple[DtConfig, float | None]:
    """(DtConfig, target_return or None) from [trainer.dt]."""
    table = dict(doc.get("trainer", {}).get("dt", {}))
    target = table.pop("target_return", None)
    try:
        return DtConfig(**table), target
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [trainer.dt] section: {exc}")


def build_policy(doc: dict, env):
    """Instantiate the [policy] section against a built environment."""
    from .baselines import (
        BaseStockPolicy,
        BslpPolicy,
        MyopicPolicy,
        SerialBaseStockPolicy,
        SSPolicy,
        SSPPolicy,
    )
    from .core import ConstantActionPolicy, RandomPolicy
    from .envs.pricing import PricingEnv as _PricingEnv

    table = doc.get("policy")
    if table is None:
        raise ConfigError("missing [policy] section")
    kind = table.get("kind")
    try:
        if kind == "random":
            return RandomPolicy(env.action_layout, seed=int(table.get("S", 0)))
        if kind == "constant":
            return ConstantActionPolicy(table["q"])
        if kind == "base_stock":
            if hasattr(env, "config") and hasattr(env.config, "M"):
                return SerialBaseStockPolicy(env, table["levels"])
            return BaseStockPolicy(env, table["S"])
        if kind == "sS":
            return SSPolicy(env, table["s"], table["S"])
        if kind in ("myopic", "bslp", "sSp"):
            if not isinstance(env, _PricingEnv):
                raise ConfigError(f"policy {kind!r} requires the pricing env")
            grid = table.get("price_grid")
            if grid is None:
                grid = default_price_grid(env.config)
            if kind == "myopic":
                return MyopicPolicy(env, table["S"], grid)
            if kind == "bslp":
                return BslpPolicy(env, table["y_star"], table["list_price"], grid)
            return SSPPolicy(env, table["s"], table["S"], grid)
        if kind == "ppo":
            from .nn import NeuralPolicy, load_mlp_checkpoint

            net = load_mlp_checkpoint(table["checkpoint"])
            return NeuralPolicy(net, deterministic=True)
        if kind == "dt":
            from .dt import DtPolicy, load_dt_checkpoint

            model = load_dt_checkpoint(table["checkpoint"])
            return DtPolicy(model, env.action_layout, float(table["target_return"]))
        if kind == "naive_imrs":
            from .experiments import CompositePolicy
            from .nn import load_mlp_checkpoint

            return CompositePolicy(
                load_mlp_checkpoint(table["im_checkpoint"]),
                load_mlp_checkpoint(table["rs_checkpoint"]),
            )
    except KeyError as exc:
        raise ConfigError(f"policy {kind!r} missing parameter {exc}")
    raise ConfigError(f"unknown policy kind {kind!r}")


def default_price_grid(cfg: PricingConfig, points: int = 13) -> list[float]:
    step = (cfg.p_max - cfg.p_min) / (points - 1)
    return [round(cfg.p_min + i * step, 6) for i in range(points)]
