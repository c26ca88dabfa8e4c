"""Experiment orchestration: the pricing scenario grid, the inventory +
recommendation ablation, the collaborative-env sequence-model comparison,
and the oracle validation suite.

Each orchestrator reads its block of the config document, runs the cells
(scenario x policy training/evaluation), and emits CSV + SVG reports.
Independent cells can run in a process pool; report rows are sorted so
output bytes do not depend on completion order.  Timings go to a log
file, never into CSVs, so identical configs reproduce identical CSVs.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import (
    BaseStockPolicy,
    BslpPolicy,
    CollabHeuristic,
    MyopicPolicy,
    SSPPolicy,
    grid_tune,
)
from .config import (
    ConfigError,
    build_dt_config,
    build_env,
    build_ppo_config,
    config_hash,
    default_price_grid,
)
from .core import (
    EnvAction,
    RandomPolicy,
    SliceCompositePolicy,
    Trajectory,
    kde,
    run_episode,
    save_trajectories,
    stats_from_samples,
)
from .dt import DtPolicy, dt_train, save_dt_checkpoint
from .envs.pricing import PricingEnv, scenario_preset
from .envs.recsys import RecsysEnv
from .nn import MlpPolicyValue, NeuralPolicy, save_mlp_checkpoint
from .ppo import train
from .report import svg_grouped_bars, svg_kde, svg_lines, write_csv


class MissingDataset(Exception):
    """collab-dt needs a trajectory dataset (or --collect)."""


def _run_cells(fn, payloads: list, workers: int) -> list:
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


def _eval_samples(env, policy, seeds: list[int]) -> list[float]:
    return [run_episode(env, policy, s).total_return for s in seeds]


# ---------------------------------------------------------------------------
# Pricing grid (scenarios a-d x {BSLP, sSp, Myopic, PPO})
# ---------------------------------------------------------------------------

def _pricing_cell(payload: dict) -> dict:
    """Tune the heuristics and train PPO for one scenario; evaluate all."""
    doc = payload["doc"]
    scenario = payload["scenario"]
    grid_cfg = doc.get("pricing_grid", {})
    t0 = time.perf_counter()

    base_env = build_env(doc)
    if not isinstance(base_env, PricingEnv):
        raise ConfigError("pricing-grid requires env.kind = 'pricing'")
    cfg = scenario_preset(scenario, base_env.config, float(grid_cfg.get("k_fixed", 15.0)))
    price_grid = default_price_grid(cfg, int(grid_cfg.get("price_grid_points", 13)))

    tune_eval = int(grid_cfg.get("tune_episodes", 40))
    tune_seed = int(grid_cfg.get("tune_seed", 7000))
    env_factory = lambda: PricingEnv(cfg)  # noqa: E731

    spec_m, _ = grid_tune(
        "myopic", env_factory,
        lambda env, p: MyopicPolicy(env, p["S"], price_grid),
        {"S": list(grid_cfg.get("myopic_S", list(range(0, 49, 4))))},
        tune_eval, tune_seed,
    )
    spec_b, _ = grid_tune(
        "bslp", env_factory,
        lambda env, p: BslpPolicy(env, p["y_star"], p["list_price"], price_grid),
        {
            "y_star": list(grid_cfg.get("bslp_y", list(range(0, 49, 4)))),
            "list_price": list(grid_cfg.get("bslp_price", [4.0, 4.5, 5.0, 5.5, 6.0])),
        },
        tune_eval, tune_seed,
    )
    spec_s, _ = grid_tune(
        "sSp", env_factory,
        lambda env, p: SSPPolicy(env, p["s"], p["S"], price_grid),
        {
            "s": list(grid_cfg.get("ssp_s", list(range(0, 41, 8)))),
            "S": list(grid_cfg.get("ssp_S", list(range(8, 57, 8)))),
        },
        tune_eval, tune_seed,
    )

    ppo_cfg, total_steps = build_ppo_config(doc)
    total_steps = int(grid_cfg.get("total_steps", total_steps))
    result = train(env_factory, ppo_cfg, total_steps)
    net = result.net
    net.obs_norm.frozen = True

    eval_seed = int(grid_cfg.get("eval_seed", 9000))
    n_eval = int(grid_cfg.get("eval_episodes", 40))
    seeds = list(range(eval_seed, eval_seed + n_eval))
    policies = {
        "bslp": BslpPolicy(env_factory(), spec_b.params["y_star"], spec_b.params["list_price"], price_grid),
        "ssp": SSPPolicy(env_factory(), spec_s.params["s"], spec_s.params["S"], price_grid),
        "myopic": MyopicPolicy(env_factory(), spec_m.params["S"], price_grid),
        "ppo": NeuralPolicy(net, deterministic=True),
    }
    rows, summary = [], {}
    for name, policy in policies.items():
        samples = _eval_samples(env_factory(), policy, seeds)
        summary[name] = stats_from_samples(samples)
        for seed, ret in zip(seeds, samples):
            rows.append(
                {"experiment": payload["experiment_id"], "scenario": scenario,
                 "policy": name, "seed": seed, "episode_return": float(ret)}
            )
    return {
        "scenario": scenario,
        "rows": rows,
        "summary": {k: dataclasses.asdict(v) for k, v in summary.items()},
        "tuned": {"myopic": spec_m.params, "bslp": spec_b.params, "ssp": spec_s.params},
        "elapsed": time.perf_counter() - t0,
    }


def run_pricing_grid(doc: dict, out_dir, workers: int = 1) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid_cfg = doc.get("pricing_grid", {})
    scenarios = list(grid_cfg.get("scenarios", ["a", "b", "c", "d"]))
    experiment_id = doc.get("experiment", {}).get("id", "pricing_grid")
    chash = config_hash(doc)

    payloads = [
        {"doc": doc, "scenario": sc, "experiment_id": experiment_id} for sc in scenarios
    ]
    cells = _run_cells(_pricing_cell, payloads, workers)

    rows = [r for cell in cells for r in cell["rows"]]
    rows.sort(key=lambda r: (r["scenario"], r["policy"], r["seed"]))
    write_csv(
        out / "pricing_grid.csv",
        ["experiment", "scenario", "policy", "seed", "episode_return"],
        rows, chash,
    )

    summary_rows = []
    series: dict[str, list[float]] = {}
    for cell in sorted(cells, key=lambda c: c["scenario"]):
        for policy in sorted(cell["summary"]):
            s = cell["summary"][policy]
            summary_rows.append(
                {"scenario": cell["scenario"], "policy": policy, "mean": s["mean"],
                 "std": s["std"], "n": s["n"], "ci95": s["ci95"]}
            )
            series.setdefault(policy, []).append(s["mean"])
    write_csv(
        out / "pricing_grid_summary.csv",
        ["scenario", "policy", "mean", "std", "n", "ci95"],
        summary_rows, chash,
    )
    svg = svg_grouped_bars(
        "Mean episode profit by scenario", [f"({s})" for s in scenarios], series
    )
    (out / "pricing_grid.svg").write_text(svg)
    with open(out / "pricing_grid.log", "w") as fh:
        for cell in cells:
            fh.write(
                f"scenario {cell['scenario']}: tuned={json.dumps(cell['tuned'], sort_keys=True)} "
                f"elapsed={cell['elapsed']:.1f}s\n"
            )
    return {"cells": {c["scenario"]: c["summary"] for c in cells}, "rows": len(rows)}


# ---------------------------------------------------------------------------
# IM-RS ablation (Joint / IM-Only / RS-Only / Naive, lost_sales + backlog)
# ---------------------------------------------------------------------------

class CompositePolicy:
    """Naive IM-RS: order slice from one trained net, alpha slices from another."""

    def __init__(self, im_net: MlpPolicyValue, rs_net: MlpPolicyValue):
        layout = im_net.action_layout
        im_policy = NeuralPolicy(im_net, deterministic=True)
        rs_policy = NeuralPolicy(rs_net, deterministic=True)
        self._inner = SliceCompositePolicy(
            layout,
            {s.name: (im_policy if s.name == "order" else rs_policy)
             for s in layout.slices},
        )

    def act(self, obs):
        return self._inner.act(obs)


def _imrs_train_cell(payload: dict) -> dict:
    doc = payload["doc"]
    mode, override = payload["mode"], payload["override"]
    t0 = time.perf_counter()
    env_table = dict(doc["env"]["recsys"])
    env_table["mode"] = mode
    env_table["override"] = override
    doc2 = {**doc, "env": {"kind": "recsys", "recsys": env_table}}
    ppo_cfg, total_steps = build_ppo_config(doc2)
    total_steps = int(doc.get("imrs", {}).get("total_steps", total_steps))
    result = train(lambda: build_env(doc2), ppo_cfg, total_steps)
    result.net.obs_norm.frozen = True
    return {
        "mode": mode,
        "override": override,
        "net": result.net,
        "elapsed": time.perf_counter() - t0,
    }


def run_imrs_ablation(doc: dict, out_dir, workers: int = 1) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imrs_cfg = doc.get("imrs", {})
    scenarios = list(imrs_cfg.get("scenarios", ["lost_sales", "backlog"]))
    chash = config_hash(doc)
    experiment_id = doc.get("experiment", {}).get("id", "imrs")
    n_eval = int(imrs_cfg.get("eval_episodes", 50))
    seed0 = int(imrs_cfg.get("eval_seed", 9000))
    bandwidth_factor = float(imrs_cfg.get("kde_bandwidth", 0.35))

    payloads = [
        {"doc": doc, "mode": mode, "override": ov}
        for mode in scenarios
        for ov in ("none", "im_only", "rs_only")
    ]
    cells = _run_cells(_imrs_train_cell, payloads, workers)
    nets = {(c["mode"], c["override"]): c["net"] for c in cells}

    rows, kde_rows, summaries = [], [], {}
    for mode in scenarios:
        env_table = dict(doc["env"]["recsys"])
        env_table["mode"] = mode

        def env_with(override: str) -> RecsysEnv:
            table = dict(env_table)
            table["override"] = override
            return build_env({"env": {"kind": "recsys", "recsys": table}})

        variants = {
            "joint": (NeuralPolicy(nets[(mode, "none")], deterministic=True), "none"),
            "im_only": (NeuralPolicy(nets[(mode, "im_only")], deterministic=True), "im_only"),
            "rs_only": (NeuralPolicy(nets[(mode, "rs_only")], deterministic=True), "rs_only"),
            "naive": (CompositePolicy(nets[(mode, "im_only")], nets[(mode, "rs_only")]), "none"),
        }
        seeds = list(range(seed0, seed0 + n_eval))
        for name, (policy, override) in variants.items():
            samples = _eval_samples(env_with(override), policy, seeds)
            summaries[(mode, name)] = stats_from_samples(samples)
            for seed, ret in zip(seeds, samples):
                rows.append(
                    {"experiment": experiment_id, "scenario": mode, "variant": name,
                     "seed": seed, "episode_return": float(ret)}
                )
        # KDE curves share one bandwidth per scenario so shapes are comparable
        pooled_std = float(
            np.std([r["episode_return"] for r in rows if r["scenario"] == mode])
        )
        bandwidth = max(pooled_std * bandwidth_factor, 1e-6)
        for name in variants:
            samples = summaries[(mode, name)].samples
            for x, dens in kde(samples, bandwidth):
                kde_rows.append(
                    {"scenario": mode, "variant": name, "x": float(x), "density": float(dens)}
                )

    rows.sort(key=lambda r: (r["scenario"], r["variant"], r["seed"]))
    write_csv(
        out / "imrs_returns.csv",
        ["experiment", "scenario", "variant", "seed", "episode_return"],
        rows, chash,
    )
    kde_rows.sort(key=lambda r: (r["scenario"], r["variant"], r["x"]))
    write_csv(out / "imrs_kde.csv", ["scenario", "variant", "x", "density"], kde_rows, chash)

    for mode in scenarios:
        curves = {}
        for name in sorted({r["variant"] for r in kde_rows}):
            pts = [
                (r["x"], r["density"])
                for r in kde_rows
                if r["scenario"] == mode and r["variant"] == name
            ]
            curves[name] = pts
        (out / f"imrs_kde_{mode}.svg").write_text(
            svg_kde(f"Episode return KDE ({mode})", curves)
        )
    summary_rows = [
        {"scenario": mode, "variant": name, "mean": s.mean, "std": s.std, "n": s.n}
        for (mode, name), s in sorted(summaries.items())
    ]
    write_csv(
        out / "imrs_summary.csv",
        ["scenario", "variant", "mean", "std", "n"],
        summary_rows, chash,
    )
    with open(out / "imrs.log", "w") as fh:
        for cell in cells:
            fh.write(f"{cell['mode']}/{cell['override']}: elapsed={cell['elapsed']:.1f}s\n")
    return {
        "summaries": {f"{m}/{n}": dataclasses.asdict(s) for (m, n), s in summaries.items()}
    }


# ---------------------------------------------------------------------------
# Collaborative env: offline dataset -> DT vs PPO vs heuristic
# ---------------------------------------------------------------------------

def collect_dataset(doc: dict, out_path, episodes: int, seed: int, stochastic: bool = True) -> tuple[list[Trajectory], MlpPolicyValue]:
    """Mixture dataset on the configured env: PPO, tuned heuristic, random."""
    cd = doc.get("collab_dt", {})
    mix = dict(cd.get("dataset_mix", {"ppo": 0.5, "heuristic": 0.25, "random": 0.25}))
    total = sum(mix.values())
    names = list(mix.keys())
    counts = {k: int(episodes * mix[k] / total) for k in names}
    i = 0
    while sum(counts.values()) < episodes:  # spread the rounding remainder
        counts[names[i % len(names)]] += 1
        i += 1

    env = build_env(doc)
    ppo_cfg, total_steps = build_ppo_config(doc)
    total_steps = int(cd.get("ppo_total_steps", total_steps))
    result = train(lambda: build_env(doc), ppo_cfg, total_steps)
    net = result.net
    net.obs_norm.frozen = True

    heur = _tuned_heuristic(doc)

    trajectories, seeds = [], []
    next_seed = seed
    from .rng import RngStreams

    sample_rng = RngStreams(seed).stream("dataset_sampling")
    sources = {
        "ppo": NeuralPolicy(net, rng=sample_rng, deterministic=not stochastic),
        "heuristic": heur,
        "random": RandomPolicy(env.action_layout, seed=seed),
    }
    for name, count in counts.items():
        policy = sources[name]
        for _ in range(count):
            trajectories.append(run_episode(build_env(doc), policy, next_seed))
            seeds.append(next_seed)
            next_seed += 1
    save_trajectories(out_path, trajectories, config_hash(doc), seeds)
    return trajectories, net


class UniformAlphaBaseStock:
    """Recsys heuristic: order up to S per product, spread exposure evenly."""

    def __init__(self, env: RecsysEnv, S: float):
        self._env = env
        self.S = S

    def act(self, obs):
        cfg = self._env.config
        n, m = cfg.n_products, cfg.m_customers
        pos = 0
        orders = []
        feats = obs.features
        on_hand = feats[:n]
        pos = n
        for i in range(n):
            pipe = feats[pos : pos + cfg.L[i]].sum()
            pos += cfg.L[i]
            orders.append(max(self.S - (on_hand[i] + pipe), 0.0))
        alpha = np.full(n * m, 1.0 / m)
        return EnvAction(components=np.concatenate([np.array(orders), alpha]))


def _tuned_collab_heuristic(doc: dict):
    cd = doc.get("collab_dt", {})
    env = build_env(doc)
    cfg = env.config
    s_grid = list(cd.get("heuristic_S", list(range(0, cfg.q_max + 1, 2))))
    p_grid = [round(x, 3) for x in np.linspace(cfg.p_min, cfg.p_max, 9)]
    spec, _ = grid_tune(
        "collab_heuristic",
        lambda: build_env(doc),
        lambda env, p: CollabHeuristic(env, p["S"], p["price"]),
        {"S": s_grid, "price": p_grid},
        n_eval=int(cd.get("eval_episodes", 40)),
        seed=int(cd.get("eval_seed", 9000)) + 100_000,
    )
    return CollabHeuristic(build_env(doc), spec.params["S"], spec.params["price"])


def _tuned_heuristic(doc: dict, tune_eval: int = 40, tune_seed: int = 109_000):
    """A sensible tuned heuristic source for any env kind."""
    from .envs.collab import CollabEnv
    from .envs.inventory import SerialChainEnv, SingleEchelonEnv
    from .baselines import SerialBaseStockPolicy

    env = build_env(doc)
    if isinstance(env, CollabEnv):
        return _tuned_collab_heuristic(doc)
    if isinstance(env, SingleEchelonEnv):
        grid = {"S": list(range(0, env.config.q_max + 1, 2))}
        spec, _ = grid_tune("base_stock", lambda: build_env(doc),
                            lambda e, p: BaseStockPolicy(e, p["S"]), grid,
                            tune_eval, tune_seed)
        return BaseStockPolicy(build_env(doc), spec.params["S"])
    if isinstance(env, SerialChainEnv):
        grid = {"S": list(range(0, env.config.q_max + 1, 4))}
        spec, _ = grid_tune("serial_base_stock", lambda: build_env(doc),
                            lambda e, p: SerialBaseStockPolicy(e, [p["S"]] * e.config.M),
                            grid, tune_eval, tune_seed)
        return SerialBaseStockPolicy(build_env(doc), [spec.params["S"]] * env.config.M)
    if isinstance(env, PricingEnv):
        price_grid = default_price_grid(env.config)
        spec, _ = grid_tune("myopic", lambda: build_env(doc),
                            lambda e, p: MyopicPolicy(e, p["S"], price_grid),
                            {"S": list(range(0, 49, 4))}, tune_eval, tune_seed)
        return MyopicPolicy(build_env(doc), spec.params["S"], price_grid)
    if isinstance(env, RecsysEnv):
        qmax = max(env.config.q_max)
        spec, _ = grid_tune("uniform_alpha_base_stock", lambda: build_env(doc),
                            lambda e, p: UniformAlphaBaseStock(e, p["S"]),
                            {"S": list(range(0, qmax + 1, 2))}, tune_eval, tune_seed)
        return UniformAlphaBaseStock(build_env(doc), spec.params["S"])
    raise ConfigError(f"no heuristic source for env {type(env).__name__}")


def run_collab_dt(doc: dict, out_dir, workers: int = 1, dataset_path=None, collect: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cd = doc.get("collab_dt", {})
    chash = config_hash(doc)
    experiment_id = doc.get("experiment", {}).get("id", "collab_dt")
    t0 = time.perf_counter()

    dataset_path = Path(dataset_path) if dataset_path else out / "collab_dataset.ndjson"
    net = None
    if collect:
        trajectories, net = collect_dataset(
            doc, dataset_path,
            episodes=int(cd.get("dataset_episodes", 120)),
            seed=int(cd.get("eval_seed", 9000)) + 500_000,
        )
    elif dataset_path.exists():
        from .core import load_trajectories

        trajectories, _headers = load_trajectories(dataset_path)
    else:
        raise MissingDataset(
            f"no trajectory dataset at {dataset_path}; pass --collect to build one"
        )
    if not trajectories:
        raise MissingDataset(f"no trajectories found at {dataset_path}")

    if net is None:
        ppo_cfg, total_steps = build_ppo_config(doc)
        total_steps = int(cd.get("ppo_total_steps", total_steps))
        result = train(lambda: build_env(doc), ppo_cfg, total_steps)
        net = result.net
        net.obs_norm.frozen = True

    env = build_env(doc)
    obs_dim = len(env.reset(0).features)
    act_dim = env.action_layout.dim
    dt_cfg, target = build_dt_config(doc)
    dt_result = dt_train(trajectories, obs_dim, act_dim, dt_cfg)
    model = dt_result.model
    if target is None:
        target = float(np.quantile([t.total_return for t in trajectories], 0.95))

    heur = _tuned_collab_heuristic(doc)
    n_eval = int(cd.get("eval_episodes", 40))
    seed0 = int(cd.get("eval_seed", 9000))
    seeds = list(range(seed0, seed0 + n_eval))
    policies = {
        "dt": DtPolicy(model, env.action_layout, target),
        "ppo": NeuralPolicy(net, deterministic=True),
        "heuristic": heur,
    }
    rows, summaries = [], {}
    for name, policy in policies.items():
        samples = _eval_samples(build_env(doc), policy, seeds)
        summaries[name] = stats_from_samples(samples)
        for seed, ret in zip(seeds, samples):
            rows.append(
                {"experiment": experiment_id, "policy": name, "seed": seed,
                 "episode_return": float(ret)}
            )
    rows.sort(key=lambda r: (r["policy"], r["seed"]))
    write_csv(
        out / "collab_returns.csv",
        ["experiment", "policy", "seed", "episode_return"], rows, chash,
    )
    summary_rows = [
        {"policy": k, "mean": v.mean, "std": v.std, "n": v.n, "ci95": v.ci95}
        for k, v in sorted(summaries.items())
    ]
    write_csv(
        out / "collab_summary.csv",
        ["policy", "mean", "std", "n", "ci95"], summary_rows, chash,
    )
    (out / "collab_returns.svg").write_text(
        svg_grouped_bars(
            "Collaborative env: mean episode profit", ["collab"],
            {k: [v.mean] for k, v in sorted(summaries.items())},
        )
    )

    # Order-decision trace of one DT episode (orders + inventory per period)
    trace_seed = int(cd.get("trace_seed", seed0))
    traj = run_episode(build_env(doc), DtPolicy(model, env.action_layout, target), trace_seed)
    n_items = env.config.n_items
    layout = env.action_layout
    trace_rows = []
    for rec in traj.records:
        row = {"t": rec.obs.t, "reward": rec.reward}
        orders = layout.get(rec.act.components, "order")
        prices = layout.get(rec.act.components, "price")
        for i in range(n_items):
            row[f"order_{i+1}"] = float(orders[i])
            row[f"price_{i+1}"] = float(prices[i])
            row[f"on_hand_{i+1}"] = float(rec.obs.features[n_items + i])
            row[f"last_demand_{i+1}"] = float(rec.obs.features[i])
        trace_rows.append(row)
    fields = ["t", "reward"]
    for i in range(n_items):
        fields += [f"order_{i+1}", f"price_{i+1}", f"on_hand_{i+1}", f"last_demand_{i+1}"]
    write_csv(out / "collab_trace.csv", fields, trace_rows, chash)
    curves = {}
    for i in range(n_items):
        curves[f"order_{i+1}"] = [(r["t"], r[f"order_{i+1}"]) for r in trace_rows]
        curves[f"on_hand_{i+1}"] = [(r["t"], r[f"on_hand_{i+1}"]) for r in trace_rows]
    (out / "collab_trace.svg").write_text(
        svg_lines("Order decisions and inventory (one episode)", curves, "period", "units")
    )

    save_mlp_checkpoint(out / "collab_ppo.ckpt", net, chash, 0)
    save_dt_checkpoint(out / "collab_dt.ckpt", model, chash, dt_cfg.epochs)
    with open(out / "collab_dt.log", "w") as fh:
        fh.write(f"dataset={dataset_path} episodes={len(trajectories)} target_return={target}\n")
        fh.write(f"dt_final_loss={dt_result.loss_curve[-1]:.6f} elapsed={time.perf_counter()-t0:.1f}s\n")
    return {
        "summaries": {k: dataclasses.asdict(v) for k, v in summaries.items()},
        "target_return": target,
        "dt_loss": dt_result.loss_curve[-1],
    }


# ---------------------------------------------------------------------------
# Validation suite (oracle checks)
# ---------------------------------------------------------------------------

def run_validate(checkpoints: list = ()) -> tuple[bool, list[dict]]:
    """Fast oracle suite: DP agreement, gradient checks, identities."""
    from .validate import all_checks

    results = []
    ok = True
    for name, passed, detail in all_checks(checkpoints):
        results.append({"check": name, "status": "pass" if passed else "FAIL", "detail": detail})
        ok &= passed
    return ok, results
