"""Oracle validation suite behind `opsim validate`.

Each check is independent, fast, and side-effect free: exact dynamic
programming agreement with simulation, finite-difference gradient checks
for both network families, the GAE/Monte-Carlo identity, normalization
properties, causal-mask invariance, and hand-computed transition vectors
for all four environments.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .baselines import BaseStockPolicy, grid_tune
from .core import ActionLayout, EnvAction, SliceSpec, evaluate, kde
from .dp import DpPolicy, dp_solve, tiny_spec_from_single_echelon
from .dt import DtConfig, DtModel, TokenBatch
from .envs.collab import CollabConfig, CollabEnv
from .envs.inventory import DemandSpec, SingleEchelonConfig, SingleEchelonEnv
from .envs.pricing import CompetitorProcess, PricingConfig, PricingEnv
from .envs.recsys import RecsysConfig, RecsysEnv, purchase_probs
from .nn import MlpPolicyValue, load_checkpoint
from .ppo import gae


def _check_dynamics_vectors() -> tuple[bool, str]:
    failures = []

    env = SingleEchelonEnv(SingleEchelonConfig(
        T=3, L=0, demand=DemandSpec("uniform", lo=4, hi=4), h=1, b=2, c=3, p=10,
        mode="lost_sales", q_max=10, I0=5))
    env.reset(0)
    r = env.step(EnvAction(np.array([3.0])))
    if not (r.reward == 27.0 and r.info["on_hand"] == 4.0):
        failures.append("single-echelon base case")

    env = SingleEchelonEnv(SingleEchelonConfig(
        T=3, L=0, demand=DemandSpec("uniform", lo=10, hi=10), h=1, b=2, c=3, p=10,
        mode="backlog", q_max=10, I0=5))
    env.reset(0)
    r = env.step(EnvAction(np.array([3.0])))
    if not (r.info["sales"] == 8.0 and r.info["backlog"] == 2.0):
        failures.append("single-echelon backlog carry")

    pcfg = PricingConfig(T=3, L=1, eta=1.0, beta=(-60.0, 0, 0, 0, 0, 0), h=1.0,
                         b=2.0, c=3.0, p_min=1.0, p_max=12.0, q_max=10,
                         mode="backlog",
                         competitor=CompetitorProcess("constant", o_bar=5.0), I0=5)
    env = PricingEnv(pcfg)  # demand rate ~ 1e-26: zero demand almost surely
    env.reset(0)
    r = env.step(EnvAction(np.array([10.0, 5.0])))
    if not (r.reward == -5 * 1.0 - 3.0 * 5):
        failures.append("pricing zero-demand accounting")

    ccfg = CollabConfig(n_items=1, c_prod=(1.0, 0.6), c_order=0.5, p_min=2.0, p_max=6.0,
                        base_rate=(0.0,), T=3, n0=(5,))
    env = CollabEnv(ccfg)
    env.reset(0)
    r = env.step(EnvAction(np.array([1.0, 2.0, 4.0, 0.5])))
    if not (r.reward == -(0.6 * 2 + 0.5 * 2)):
        failures.append("collab cost accounting")

    rcfg = RecsysConfig(n_products=1, m_customers=1, r_base=((2.0,),), capacity=(0,),
                        L=(0,), p_out=(6.0,), p_in=(2.0,), h=(0.5,), b=(1.0,),
                        q_max=(5,), T=3, I0=(2,))
    env = RecsysEnv(rcfg)
    env.reset(0)
    r = env.step(EnvAction(np.array([0.0, 1.0])))
    if not (r.reward == -0.5 * 2):
        failures.append("recsys holding cost")

    return (not failures, "; ".join(failures) or "5 transition vectors exact")


def _check_dp_agreement() -> tuple[bool, str]:
    cfg = SingleEchelonConfig(T=8, L=0, demand=DemandSpec("poisson", lam=3.0),
                              h=1.0, b=3.0, c=2.0, p=7.0, mode="lost_sales",
                              q_max=8, I0=0, inv_cap=12)
    sol = dp_solve(tiny_spec_from_single_echelon(cfg))
    opt = sol.optimal_value(0)
    stats = evaluate(SingleEchelonEnv(cfg), DpPolicy(sol), 300, 4000)
    if abs(stats.mean - opt) > 4 * max(stats.ci95, 1e-9):
        return False, f"simulated DP policy {stats.mean:.2f} vs optimum {opt:.2f}"
    spec, tuned_stats = grid_tune(
        "base_stock", lambda: SingleEchelonEnv(cfg),
        lambda env, p: BaseStockPolicy(env, p["S"]),
        {"S": list(range(0, 11))}, n_eval=120, seed=5000)
    if tuned_stats.mean > opt + 4 * tuned_stats.ci95:
        return False, f"heuristic beat the optimum: {tuned_stats.mean:.2f} > {opt:.2f}"
    if abs(spec.params["S"] - sol.greedy_base_stock()) > 1:
        return False, f"tuned S={spec.params['S']} vs DP greedy {sol.greedy_base_stock()}"
    return True, f"optimum {opt:.2f}; tuned S={spec.params['S']} within one step of DP"


def _check_mlp_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    layout = ActionLayout([
        SliceSpec("order", 2, "box", 0, 10),
        SliceSpec("alpha_1", 3, "simplex"),
        SliceSpec("method", 1, "categorical", 0, 3),
    ])
    net = MlpPolicyValue(obs_dim=4, action_layout=layout, hidden=(8, 8), seed=2)
    worst = 0.0
    for _ in range(20):
        obs = rng.normal(size=(3, 4))
        stored = np.column_stack([
            rng.normal(size=(3, 5)), rng.integers(0, 3, size=(3, 1)).astype(float)])
        adv = rng.normal(size=3)

        def loss_at(params):
            flat = ad.param(params)
            raw, ls, v = net.forward(flat, obs)
            lp = net.log_prob(raw, ls, stored)
            ent = net.entropy(raw, ls)
            return flat, ad.mean(lp * ad.constant(adv)) + ad.mean(ent) * 0.01 + ad.mean(v * v)

        flat, loss = loss_at(net.params)
        (g,) = ad.grad_of(loss, [flat])
        for i in rng.choice(net.n_params, size=5, replace=False):
            eps = 1e-6
            p1, p2 = net.params.copy(), net.params.copy()
            p1[i] += eps
            p2[i] -= eps
            fd = (loss_at(p1)[1].value - loss_at(p2)[1].value) / (2 * eps)
            rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8)
            worst = max(worst, rel)
    return worst < 1e-5, f"max relative error {worst:.2e} over 100 coordinates"


def _check_dt_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(9)
    cfg = DtConfig(context=3, embed_dim=8, n_layers=1, n_heads=1, seed=4, max_timestep=8)
    model = DtModel(3, 2, cfg)
    model.params = rng.normal(0, 0.2, size=model.n_params)
    batch = TokenBatch(
        rtg=rng.normal(size=(2, 3)), obs=rng.normal(size=(2, 3, 3)),
        act=rng.normal(size=(2, 3, 2)), timesteps=rng.integers(0, 8, size=(2, 3)),
        mask=np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 1.0]]))
    flat = ad.param(model.params)
    loss = model.loss(flat, batch)
    (g,) = ad.grad_of(loss, [flat])
    worst = 0.0
    for i in rng.choice(model.n_params, size=25, replace=False):
        eps = 1e-6
        p1, p2 = model.params.copy(), model.params.copy()
        p1[i] += eps
        p2[i] -= eps
        fd = (model.loss(ad.constant(p1), batch).value - model.loss(ad.constant(p2), batch).value) / (2 * eps)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8))
    return worst < 1e-4, f"max relative error {worst:.2e} over 25 coordinates"


def _check_gae_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    for gamma in (1.0, 0.97):
        rewards = rng.normal(size=40)
        values = rng.normal(size=40)
        adv, _ = gae(rewards, values, gamma, 1.0)
        mc = np.array([
            sum(gamma ** (k - t) * rewards[k] for k in range(t, 40)) - values[t]
            for t in range(40)
        ])
        if not np.allclose(adv, mc, atol=1e-10):
            return False, f"GAE(lambda=1) != Monte-Carlo at gamma={gamma}"
    return True, "GAE(lambda=1) equals Monte-Carlo advantages"


def _check_normalizations() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    pts = kde(rng.normal(size=60), bandwidth=0.4)
    xs = np.array([p[0] for p in pts])
    dens = np.array([p[1] for p in pts])
    mass = float(np.trapezoid(dens, xs))
    if abs(mass - 1.0) > 1e-3 or dens.min() < 0:
        return False, f"kde mass {mass:.5f}"
    for _ in range(20):
        col = rng.normal(size=5) * 3
        if abs(purchase_probs(col).sum() - 1.0) > 1e-12:
            return False, "softmax column does not sum to 1"
    return True, f"kde mass {mass:.6f}; softmax columns sum to 1"


def _check_causality() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    cfg = DtConfig(context=4, embed_dim=8, n_layers=2, n_heads=2, seed=6, max_timestep=8)
    model = DtModel(2, 2, cfg)
    model.params = rng.normal(0, 0.2, size=model.n_params)
    base = TokenBatch(
        rtg=rng.normal(size=(1, 4)), obs=rng.normal(size=(1, 4, 2)),
        act=rng.normal(size=(1, 4, 2)), timesteps=np.arange(4)[None, :],
        mask=np.ones((1, 4)))
    ref = model.predict_np(base)
    for k in range(1, 4):
        mod = TokenBatch(
            rtg=base.rtg.copy(), obs=base.obs.copy(), act=base.act.copy(),
            timesteps=base.timesteps.copy(), mask=base.mask.copy())
        mod.rtg[0, k] += 5.0
        mod.obs[0, k] += 1.0
        mod.act[0, k] -= 2.0
        out = model.predict_np(mod)
        if not np.array_equal(ref[0, :k], out[0, :k]):
            return False, f"future perturbation at triple {k} leaked backward"
    return True, "future-token perturbations leave earlier predictions bit-identical"


def _check_checkpoint(path) -> tuple[bool, str]:
    try:
        header, params = load_checkpoint(path)
    except Exception as exc:
        return False, f"{path}: {exc}"
    return True, f"{path}: {header['kind']} with {params.size} parameters"


def all_checks(checkpoints: list = ()) -> list[tuple[str, bool, str]]:
    checks = [
        ("dynamics_vectors", _check_dynamics_vectors),
        ("dp_agreement", _check_dp_agreement),
        ("mlp_gradients", _check_mlp_gradients),
        ("dt_gradients", _check_dt_gradients),
        ("gae_identity", _check_gae_identity),
        ("normalizations", _check_normalizations),
        ("causal_mask", _check_causality),
    ]
    out = []
    for name, fn in checks:
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"exception: {exc}"
        out.append((name, passed, detail))
    for path in checkpoints:
        passed, detail = _check_checkpoint(path)
        out.append((f"checkpoint:{path}", passed, detail))
    return out
