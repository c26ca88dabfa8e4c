"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

The trained-agent criteria (1-4) run the shipped experiment presets end
to end and take tens of minutes in total; the numerical criteria (5-7)
are fast. Tolerances are pinned here exactly as stated in the criteria.
"""

import importlib.resources as resources
import math

import numpy as np

from opsim.baselines import BaseStockPolicy, grid_tune
from opsim.config import build_env, build_ppo_config, load_config
from opsim.core import EnvAction, evaluate
from opsim.dp import dp_solve, tiny_spec_from_single_echelon
from opsim.envs import (
    CollabConfig,
    CollabEnv,
    PricingConfig,
    PricingEnv,
    RecsysConfig,
    RecsysEnv,
    SerialChainConfig,
    SerialChainEnv,
    SingleEchelonConfig,
    SingleEchelonEnv,
)
from opsim.envs.inventory import DemandSpec
from opsim.envs.pricing import CompetitorProcess
from opsim.experiments import run_imrs_ablation, run_pricing_grid, run_validate
from opsim.nn import NeuralPolicy
from opsim.ppo import train


def preset(name: str) -> dict:
    path = resources.files("opsim").joinpath(f"presets/{name}.toml")
    return load_config(str(path))


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"\n[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


# ---------------------------------------------------------------------------
# 1. Oracle optimality
# ---------------------------------------------------------------------------

class TestCriterion1OracleOptimality:
    def test_ppo_within_5pct_of_dp_and_tuned_base_stock(self):
        doc = preset("tiny_oracle")
        env = build_env(doc)
        cfg = env.config
        assert cfg.inv_cap <= 20 and cfg.T <= 20

        sol = dp_solve(tiny_spec_from_single_echelon(cfg))
        optimum = sol.optimal_value(cfg.I0)
        dp_greedy_S = sol.greedy_base_stock()

        ppo_cfg, total_steps = build_ppo_config(doc)
        result = train(lambda: build_env(doc), ppo_cfg, total_steps)
        net = result.net
        net.obs_norm.frozen = True

        oracle_cfg = doc["oracle"]
        stats = evaluate(
            build_env(doc), NeuralPolicy(net, deterministic=True),
            int(oracle_cfg["n_eval"]), int(oracle_cfg["eval_seed"]),
        )
        spec, _ = grid_tune(
            "base_stock", lambda: build_env(doc),
            lambda e, p: BaseStockPolicy(e, p["S"]),
            {"S": list(oracle_cfg["base_stock_grid"])},
            n_eval=200, seed=int(oracle_cfg["eval_seed"]),
        )

        gap = stats.mean / optimum
        ok_ppo = stats.mean >= 0.95 * optimum
        ok_bs = abs(spec.params["S"] - dp_greedy_S) <= 1
        report(
            "criterion 1 (oracle optimality)",
            ok_ppo and ok_bs,
            f"DP optimum {optimum:.2f}, PPO mean {stats.mean:.2f} "
            f"({100 * gap:.1f}% of optimum, need >= 95%); "
            f"tuned S={spec.params['S']} vs DP-greedy {dp_greedy_S} (within 1)",
        )
        assert ok_ppo and ok_bs


# ---------------------------------------------------------------------------
# 2. Pricing-grid dominance
# ---------------------------------------------------------------------------

class TestCriterion2PricingGrid:
    def test_ppo_at_least_best_heuristic_minus_one_se(self, tmp_path):
        doc = preset("pricing_grid")
        env_cfg = doc["env"]["pricing"]
        assert env_cfg["T"] <= 50 and env_cfg["q_max"] <= 30
        assert doc["pricing_grid"]["eval_episodes"] >= 20

        summary = run_pricing_grid(doc, tmp_path, workers=1)
        all_ok = True
        details = []
        for scenario, cells in sorted(summary["cells"].items()):
            ppo = cells["ppo"]
            best_name, best = max(
                ((k, v) for k, v in cells.items() if k != "ppo"),
                key=lambda kv: kv[1]["mean"],
            )
            pooled_se = math.sqrt(
                ppo["std"] ** 2 / ppo["n"] + best["std"] ** 2 / best["n"]
            )
            ok = ppo["mean"] >= best["mean"] - pooled_se
            all_ok &= ok
            details.append(
                f"({scenario}) ppo {ppo['mean']:.0f} vs {best_name} "
                f"{best['mean']:.0f} (-1SE bar {best['mean'] - pooled_se:.0f})"
            )
        report("criterion 2 (pricing-grid dominance)", all_ok, "; ".join(details))
        assert all_ok


# ---------------------------------------------------------------------------
# 3. IM-RS coordination
# ---------------------------------------------------------------------------

class TestCriterion3ImrsCoordination:
    def test_joint_dominates_and_is_concentrated(self, tmp_path):
        doc = preset("imrs")
        assert doc["imrs"]["eval_episodes"] >= 50

        summary = run_imrs_ablation(doc, tmp_path, workers=1)
        all_ok = True
        details = []
        for mode in doc["imrs"]["scenarios"]:
            joint = summary["summaries"][f"{mode}/joint"]
            naive = summary["summaries"][f"{mode}/naive"]
            others = [
                summary["summaries"][f"{mode}/{v}"]
                for v in ("im_only", "rs_only", "naive")
            ]
            ok_mean = all(joint["mean"] > o["mean"] for o in others)
            ok_std = joint["std"] <= naive["std"]
            all_ok &= ok_mean and ok_std
            details.append(
                f"{mode}: joint {joint['mean']:.0f}/{joint['std']:.0f} vs "
                + ", ".join(f"{v} {summary['summaries'][f'{mode}/{v}']['mean']:.0f}"
                            f"/{summary['summaries'][f'{mode}/{v}']['std']:.0f}"
                            for v in ("im_only", "rs_only", "naive"))
            )
        report("criterion 3 (IM-RS coordination)", all_ok, "; ".join(details))
        assert all_ok


# ---------------------------------------------------------------------------
# 4. Sequence-model parity
# ---------------------------------------------------------------------------

class TestCriterion4DtParity:
    def test_dt_within_90pct_of_ppo(self, tmp_path):
        from opsim.experiments import run_collab_dt

        doc = preset("collab")
        summary = run_collab_dt(doc, tmp_path, workers=1, collect=True)
        dt = summary["summaries"]["dt"]
        ppo = summary["summaries"]["ppo"]
        ok = ppo["mean"] > 0 and dt["mean"] >= 0.9 * ppo["mean"]
        report(
            "criterion 4 (sequence-model parity)",
            ok,
            f"dt {dt['mean']:.1f} vs ppo {ppo['mean']:.1f} "
            f"(ratio {dt['mean'] / ppo['mean']:.3f}, need >= 0.9); "
            f"heuristic {summary['summaries']['heuristic']['mean']:.1f}",
        )
        assert ok


# ---------------------------------------------------------------------------
# 5. Numerical integrity suite
# ---------------------------------------------------------------------------

class TestCriterion5NumericalIntegrity:
    def test_gradients_gae_normalizations_causality(self):
        ok, rows = run_validate()
        wanted = {
            "mlp_gradients", "dt_gradients", "gae_identity",
            "normalizations", "causal_mask",
        }
        relevant = [r for r in rows if r["check"] in wanted]
        all_ok = all(r["status"] == "pass" for r in relevant)
        report(
            "criterion 5 (numerical integrity)",
            all_ok,
            "; ".join(f"{r['check']}: {r['detail']}" for r in relevant),
        )
        assert all_ok


# ---------------------------------------------------------------------------
# 6. Dynamics fidelity: hand-computed transition vectors, bit-exact
# ---------------------------------------------------------------------------

def _fixed(d):
    return DemandSpec("uniform", lo=d, hi=d)


def _single(T=3, L=0, d=4, mode="lost_sales", I0=5, **kw):
    env = SingleEchelonEnv(SingleEchelonConfig(
        T=T, L=L, demand=_fixed(d), h=1.0, b=2.0, c=3.0, p=10.0,
        mode=mode, q_max=10, I0=I0, **kw))
    env.reset(0)
    return env


class TestCriterion6DynamicsFidelity:
    def test_twenty_plus_hand_computed_vectors(self):
        checks: list[tuple[str, bool]] = []

        # -- single echelon ------------------------------------------------
        env = _single()
        r = env.step(EnvAction(np.array([3.0])))
        checks.append(("inv base arithmetic", r.reward == 27.0))
        checks.append(("inv end stock", r.info["on_hand"] == 4.0))

        env = _single(d=10)
        r = env.step(EnvAction(np.array([3.0])))
        checks.append(("inv stockout sales", r.info["sales"] == 8.0))
        checks.append(("inv stockout lost", r.info["lost"] == 2.0))
        checks.append(("inv stockout reward", r.reward == 80 - 0 - 4 - 9))

        env = _single(d=10, mode="backlog")
        r1 = env.step(EnvAction(np.array([3.0])))
        checks.append(("inv backlog created", r1.info["backlog"] == 2.0))
        r2 = env.step(EnvAction(np.array([10.0])))
        checks.append(("inv backlog carried", r2.info["sales"] == 10.0))

        env = _single(d=0, I0=0, L=2, T=4)
        env.step(EnvAction(np.array([5.0])))
        r = env.step(EnvAction(np.array([0.0])))
        checks.append(("inv lead-time empty", r.info["on_hand"] == 0.0))
        r = env.step(EnvAction(np.array([0.0])))
        checks.append(("inv lead-time arrival", r.info["on_hand"] == 5.0))

        env = _single(d=0, I0=8, inv_cap=10)
        r = env.step(EnvAction(np.array([5.0])))
        checks.append(("inv cap overflow", r.info["overflow"] == 3.0))

        # -- serial chain ----------------------------------------------------
        env = SerialChainEnv(SerialChainConfig(
            M=2, T=3, L=(0, 0), h=(1.0, 0.5), c=(2.0, 1.0), b=2.0, p=8.0,
            demand=_fixed(0), q_max=20, I0=(4, 6)))
        env.reset(0)
        r = env.step(EnvAction(np.array([0.0, 0.0])))
        checks.append(("serial idle holding", r.reward == -(4 * 1.0 + 6 * 0.5)))

        env.reset(0)
        r = env.step(EnvAction(np.array([10.0, 0.0])))
        checks.append(("serial limited shipment", r.info["on_hand_1"] == 4 + 6.0))
        checks.append(("serial upstream drained", r.info["on_hand_2"] == 0.0))

        env = SerialChainEnv(SerialChainConfig(
            M=2, T=3, L=(0, 0), h=(1.0, 0.5), c=(2.0, 1.0), b=2.0, p=8.0,
            demand=_fixed(3), q_max=20, I0=(5, 100)))
        env.reset(0)
        r = env.step(EnvAction(np.array([3.0, 0.0])))
        checks.append((
            "serial echelon-1 profit",
            r.info["profit_1"] == 8.0 * 3 - 1.0 * 5 - 0 - 2.0 * 3,
        ))

        # -- pricing ---------------------------------------------------------
        pe = PricingEnv(PricingConfig(
            T=3, L=1, eta=1.0, beta=(-60.0, 0, 0, 0, 0, 0), h=1.0, b=2.0,
            c=3.0, k_fixed=0.0, p_min=1.0, p_max=12.0, q_max=10, mode="backlog",
            competitor=CompetitorProcess("constant", o_bar=5.0), zeta=0.5,
            r0=8.0, I0=5))
        pe.reset(0)
        r = pe.step(EnvAction(np.array([10.0, 5.0])))
        checks.append(("pricing zero-demand reward", r.reward == -5.0 - 15.0))
        checks.append(("pricing reference update", r.obs.features[-1] == 0.5 * 8 + 0.5 * 10))

        pe = PricingEnv(PricingConfig(
            T=3, L=0, eta=1.0, beta=(-60.0, 0, 0, 0, 0, 0), h=1.0, b=2.0,
            c=3.0, k_fixed=100.0, p_min=1.0, p_max=12.0, q_max=10, mode="lost",
            competitor=CompetitorProcess("constant", o_bar=5.0), zeta=0.5,
            r0=8.0, I0=0))
        pe.reset(0)
        r0 = pe.step(EnvAction(np.array([10.0, 0.0])))
        checks.append(("pricing no fixed cost at q=0", r0.info["fixed_cost"] == 0.0))
        r1 = pe.step(EnvAction(np.array([10.0, 2.0])))
        checks.append(("pricing fixed cost at q>0", r1.info["fixed_cost"] == 100.0))

        # -- recsys ------------------------------------------------------
        re_env = RecsysEnv(RecsysConfig(
            n_products=1, m_customers=1, r_base=((3.0,),), r_max=5.0,
            efficiency=0.8, capacity=(0,), L=(0,), p_out=(6.0,), p_in=(2.0,),
            h=(0.5,), b=(1.0,), q_max=(5,), T=3, I0=(2,)))
        re_env.reset(0)
        r = re_env.step(EnvAction(np.array([0.0, 1.0])))
        checks.append(("recsys idle holding", r.reward == -0.5 * 2))

        re_env = RecsysEnv(RecsysConfig(
            n_products=1, m_customers=1, r_base=((5.0,),), r_max=5.0,
            efficiency=0.8, capacity=(5,), L=(0,), p_out=(6.0,), p_in=(2.0,),
            h=(0.5,), b=(1.0,), q_max=(8,), T=3, I0=(2,)))
        re_env.reset(0)
        r = re_env.step(EnvAction(np.array([1.0, 1.0])))
        checks.append(("recsys stockout sales", r.info["sales_1"] == 3.0))
        checks.append(("recsys stockout lost", r.info["lost_1"] == 2.0))
        checks.append(("recsys profit vector",
                       r.reward == 6 * 3 - 2 * 1 - 0.5 * 0 - 1 * 2))

        from opsim.envs.recsys import rating_update

        checks.append(("rating ceiling",
                       rating_update(np.array([[3.0]]), np.array([[1.0]]), 1.0, 5.0)[0, 0] == 5.0))
        checks.append(("rating arithmetic",
                       rating_update(np.array([[3.0]]), np.array([[0.5]]), 0.8, 5.0)[0, 0] == 3.8))

        # -- collab ------------------------------------------------------
        ce = CollabEnv(CollabConfig(
            n_items=1, c_prod=(1.0, 0.6), c_order=0.5, p_min=2.0, p_max=6.0,
            base_rate=(0.0,), T=3, n0=(5,)))
        ce.reset(0)
        r = ce.step(EnvAction(np.array([1.0, 2.0, 4.0, 0.5])))
        checks.append(("collab cost accounting", r.reward == -(0.6 * 2 + 0.5 * 2)))
        checks.append(("collab order lands next period", r.obs.features[1] == 5 + 2.0))

        ce.reset(0)
        r = ce.step(EnvAction(np.array([0.0, 0.0, 4.0, 0.0])))
        checks.append(("collab no orders no costs", r.reward == r.info["revenue"]))

        failed = [name for name, ok in checks if not ok]
        report(
            "criterion 6 (dynamics fidelity)",
            not failed,
            f"{len(checks)} hand-computed vectors bit-exact"
            + (f"; failed: {failed}" if failed else ""),
        )
        assert len(checks) >= 20
        assert not failed


# ---------------------------------------------------------------------------
# 7. Reproducibility: byte-identical CSVs on rerun
# ---------------------------------------------------------------------------

class TestCriterion7Reproducibility:
    def test_rerun_byte_identical_csvs(self, tmp_path):
        from test_experiments import SMALL_PRICING

        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        run_pricing_grid(SMALL_PRICING, out1, workers=1)
        run_pricing_grid(SMALL_PRICING, out2, workers=1)
        names = ["pricing_grid.csv", "pricing_grid_summary.csv"]
        same = all((out1 / n).read_bytes() == (out2 / n).read_bytes() for n in names)
        report(
            "criterion 7 (reproducibility)",
            same,
            f"reran pricing grid with --workers 1: {names} byte-identical",
        )
        assert same
