"""Command-line front door.

Subcommands: simulate, tune, train-ppo, collect, train-dt, pricing-grid,
imrs-ablation, collab-dt, validate, report.  Exit codes: 0 ok, 2 config
error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from .config import (
    ConfigError,
    build_dt_config,
    build_env,
    build_policy,
    build_ppo_config,
    config_hash,
    load_config,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opsim",
        description="Simulation and learning suite for management decision problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override base seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="parallel cells")

    p = sub.add_parser("simulate", help="run a policy on an env, print stats")
    common(p)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--save-trajectories", default=None, help="NDJSON output path")
    p.add_argument("--override", default=None,
                   choices=["none", "im_only", "rs_only", "naive"],
                   help="recsys ablation: replace an action slice with "
                        "scripted randomness (naive needs a naive_imrs policy)")

    p = sub.add_parser("tune", help="grid-tune a heuristic policy family")
    common(p)
    p.add_argument("--family", required=True,
                   choices=["base_stock", "sS", "myopic", "bslp", "sSp"])

    p = sub.add_parser("train-ppo", help="train the policy-gradient agent")
    common(p)

    p = sub.add_parser("collect", help="collect an offline trajectory dataset")
    common(p)
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("train-dt", help="train the sequence model on a dataset")
    common(p)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("pricing-grid", help="scenario grid: heuristics vs PPO")
    common(p)

    p = sub.add_parser("imrs-ablation", help="joint/IM-only/RS-only/naive ablation")
    common(p)

    p = sub.add_parser("collab-dt", help="offline DT vs PPO vs heuristic")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--collect", action="store_true", help="(re)collect the dataset")

    p = sub.add_parser("validate", help="run the oracle validation suite")
    p.add_argument("--checkpoint", action="append", default=[],
                   help="also verify checkpoint file integrity")

    p = sub.add_parser("report", help="regenerate SVG charts from report CSVs")
    p.add_argument("--out", required=True, help="directory holding report CSVs")

    return parser


def _apply_overrides(doc: dict, args) -> dict:
    if args.seed is not None:
        doc.setdefault("trainer", {}).setdefault("ppo", {})["seed"] = args.seed
        doc.setdefault("trainer", {}).setdefault("dt", {})["seed"] = args.seed
    if args.out is not None:
        doc.setdefault("experiment", {})["out_dir"] = args.out
    return doc


def _out_dir(doc: dict, args) -> Path:
    out = args.out or doc.get("experiment", {}).get("out_dir", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _workers(doc: dict, args) -> int:
    if args.workers != 1:
        return args.workers
    return int(doc.get("experiment", {}).get("workers", 1))


def cmd_simulate(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    if args.override is not None:
        if doc.get("env", {}).get("kind") != "recsys":
            raise ConfigError("--override applies to the recsys env only")
        if args.override == "naive":
            if doc.get("policy", {}).get("kind") != "naive_imrs":
                raise ConfigError(
                    "--override naive composes two trained agents; set "
                    "[policy] kind = 'naive_imrs' with im/rs checkpoints"
                )
        else:
            doc["env"]["recsys"]["override"] = args.override
    sim = doc.get("simulate", {})
    env = build_env(doc)
    policy = build_policy(doc, env)
    from .core import run_episode, save_trajectories, stats_from_samples

    exp_seeds = doc.get("experiment", {}).get("seeds")
    if exp_seeds and args.episodes is None:
        seeds = [int(s) for s in exp_seeds]
    else:
        episodes = args.episodes or int(sim.get("episodes", 20))
        seed0 = args.seed if args.seed is not None else int(sim.get("seed", 0))
        seeds = list(range(seed0, seed0 + episodes))
    stats = stats_from_samples(
        [run_episode(env, policy, s).total_return for s in seeds]
    )
    print(f"episodes={stats.n} mean={stats.mean:.3f} std={stats.std:.3f} ci95={stats.ci95:.3f}")
    if args.save_trajectories:
        trajs = [run_episode(build_env(doc), policy, s) for s in seeds]
        save_trajectories(args.save_trajectories, trajs, config_hash(doc), seeds)
        print(f"saved {len(trajs)} trajectories to {args.save_trajectories}")
    return EXIT_OK


def cmd_tune(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .baselines import (
        BaseStockPolicy, BslpPolicy, MyopicPolicy, SSPolicy, SSPPolicy, grid_tune,
    )
    from .config import default_price_grid

    env = build_env(doc)
    sim = doc.get("simulate", {})
    n_eval = int(sim.get("episodes", 40))
    seed = args.seed if args.seed is not None else int(sim.get("seed", 5000))
    grid = None
    if hasattr(env.config, "p_min"):
        grid = default_price_grid(env.config)
    factories = {
        "base_stock": (lambda env, p: BaseStockPolicy(env, p["S"]),
                       {"S": list(range(0, 41, 2))}),
        "sS": (lambda env, p: SSPolicy(env, p["s"], p["S"]),
               {"s": list(range(0, 31, 2)), "S": list(range(2, 51, 2))}),
        "myopic": (lambda env, p: MyopicPolicy(env, p["S"], grid),
                   {"S": list(range(0, 49, 4))}),
        "bslp": (lambda env, p: BslpPolicy(env, p["y_star"], p["list_price"], grid),
                 {"y_star": list(range(0, 49, 4)),
                  "list_price": grid[2::2] if grid else [5.0]}),
        "sSp": (lambda env, p: SSPPolicy(env, p["s"], p["S"], grid),
                {"s": list(range(0, 41, 8)), "S": list(range(8, 57, 8))}),
    }
    factory, grid_params = factories[args.family]
    spec, stats = grid_tune(
        args.family, lambda: build_env(doc), factory, grid_params, n_eval, seed
    )
    print(f"family={spec.family} params={json.dumps(spec.params, sort_keys=True)} "
          f"mean={stats.mean:.3f} ci95={stats.ci95:.3f}")
    out = _out_dir(doc, args)
    frag = out / f"tuned_{args.family}.toml"
    lines = ["[policy]", f'kind = "{args.family}"']
    for k, v in sorted(spec.params.items()):
        lines.append(f"{k} = {v}")
    frag.write_text("\n".join(lines) + "\n")
    print(f"wrote {frag}")
    return EXIT_OK


def cmd_train_ppo(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .nn import save_mlp_checkpoint
    from .ppo import train
    from .report import write_csv

    ppo_cfg, total_steps = build_ppo_config(doc)
    result = train(lambda: build_env(doc), ppo_cfg, total_steps)
    out = _out_dir(doc, args)
    ckpt = out / "ppo.ckpt"
    save_mlp_checkpoint(ckpt, result.net, config_hash(doc), result.total_steps)
    curve_rows = [
        {"steps": row["steps"], "mean": row["mean"], "std": row["std"]}
        for row in result.curve
    ]
    write_csv(out / "ppo_curve.csv", ["steps", "mean", "std"], curve_rows, config_hash(doc))
    last = result.curve[-1]
    print(f"trained {result.total_steps} steps; eval mean={last['mean']:.3f} "
          f"std={last['std']:.3f}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_collect(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .experiments import collect_dataset

    coll = doc.get("collect", {})
    episodes = args.episodes or int(coll.get("episodes", 120))
    seed = args.seed if args.seed is not None else int(coll.get("seed", 0))
    out = _out_dir(doc, args)
    path = out / "dataset.ndjson"
    trajs, _net = collect_dataset(doc, path, episodes, seed,
                                  stochastic=bool(coll.get("stochastic", True)))
    returns = [t.total_return for t in trajs]
    print(f"collected {len(trajs)} episodes to {path} "
          f"(return min {min(returns):.1f} / max {max(returns):.1f})")
    return EXIT_OK


def cmd_train_dt(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .core import load_trajectories
    from .dt import dt_train, save_dt_checkpoint
    from .report import write_csv

    trajs, _headers = load_trajectories(args.dataset)
    env = build_env(doc)
    obs_dim = len(env.reset(0).features)
    act_dim = env.action_layout.dim
    dt_cfg, _target = build_dt_config(doc)
    result = dt_train(trajs, obs_dim, act_dim, dt_cfg)
    out = _out_dir(doc, args)
    ckpt = out / "dt.ckpt"
    save_dt_checkpoint(ckpt, result.model, config_hash(doc), dt_cfg.epochs)
    rows = [{"step": i, "loss": v} for i, v in enumerate(result.loss_curve)]
    write_csv(out / "dt_loss.csv", ["step", "loss"], rows, config_hash(doc))
    print(f"trained {dt_cfg.epochs} epochs; final loss {result.loss_curve[-1]:.6f}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_pricing_grid(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .experiments import run_pricing_grid

    out = _out_dir(doc, args)
    summary = run_pricing_grid(doc, out, workers=_workers(doc, args))
    print(f"wrote {summary['rows']} rows to {out / 'pricing_grid.csv'}")
    for scenario, table in sorted(summary["cells"].items()):
        means = {k: round(v["mean"], 1) for k, v in table.items()}
        print(f"scenario {scenario}: {json.dumps(means, sort_keys=True)}")
    return EXIT_OK


def cmd_imrs(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .experiments import run_imrs_ablation

    out = _out_dir(doc, args)
    summary = run_imrs_ablation(doc, out, workers=_workers(doc, args))
    for key, stats in sorted(summary["summaries"].items()):
        print(f"{key}: mean={stats['mean']:.2f} std={stats['std']:.2f}")
    return EXIT_OK


def cmd_collab_dt(args) -> int:
    doc = _apply_overrides(load_config(args.config), args)
    from .experiments import MissingDataset, run_collab_dt

    out = _out_dir(doc, args)
    try:
        summary = run_collab_dt(doc, out, workers=_workers(doc, args),
                                dataset_path=args.dataset, collect=args.collect)
    except MissingDataset as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key, stats in sorted(summary["summaries"].items()):
        print(f"{key}: mean={stats['mean']:.2f} std={stats['std']:.2f}")
    print(f"target return {summary['target_return']:.2f}; "
          f"dt final loss {summary['dt_loss']:.5f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .experiments import run_validate

    ok, rows = run_validate(args.checkpoint)
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        print(f"{r['check']:<{width}}  {r['status']:<4}  {r['detail']}")
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_report(args) -> int:
    from .report import read_csv, svg_grouped_bars, svg_kde

    out = Path(args.out)
    regenerated = []
    grid_csv = out / "pricing_grid_summary.csv"
    if grid_csv.exists():
        _meta, rows = read_csv(grid_csv)
        scenarios = sorted({r["scenario"] for r in rows})
        series: dict[str, list[float]] = {}
        for policy in sorted({r["policy"] for r in rows}):
            series[policy] = [
                float(next(r["mean"] for r in rows
                           if r["scenario"] == s and r["policy"] == policy))
                for s in scenarios
            ]
        (out / "pricing_grid.svg").write_text(
            svg_grouped_bars("Mean episode profit by scenario",
                             [f"({s})" for s in scenarios], series))
        regenerated.append("pricing_grid.svg")
    kde_csv = out / "imrs_kde.csv"
    if kde_csv.exists():
        _meta, rows = read_csv(kde_csv)
        for mode in sorted({r["scenario"] for r in rows}):
            curves = {}
            for variant in sorted({r["variant"] for r in rows}):
                curves[variant] = [
                    (float(r["x"]), float(r["density"]))
                    for r in rows
                    if r["scenario"] == mode and r["variant"] == variant
                ]
            name = f"imrs_kde_{mode}.svg"
            (out / name).write_text(svg_kde(f"Episode return KDE ({mode})", curves))
            regenerated.append(name)
    if not regenerated:
        print(f"no report CSVs found under {out}", file=sys.stderr)
        return EXIT_CONFIG
    print("regenerated: " + ", ".join(regenerated))
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "tune": cmd_tune,
    "train-ppo": cmd_train_ppo,
    "collect": cmd_collect,
    "train-dt": cmd_train_dt,
    "pricing-grid": cmd_pricing_grid,
    "imrs-ablation": cmd_imrs,
    "collab-dt": cmd_collab_dt,
    "validate": cmd_validate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
