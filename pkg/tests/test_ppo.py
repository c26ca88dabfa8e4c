"""GAE, clipped-surrogate update, and trainer behavior."""

import numpy as np
import pytest

from opsim import autodiff as ad
from opsim.core import (
    ActionLayout,
    EnvObservation,
    ManagementEnv,
    SliceSpec,
)
from opsim.nn import Adam, MlpPolicyValue
from opsim.ppo import (
    NonFiniteLoss,
    PpoConfig,
    RolloutBatch,
    categorical_order_layout,
    compute_batch_advantages,
    gae,
    normalize_advantages,
    ppo_loss,
    ppo_update,
    train,
)
from opsim.rng import RngStreams


class TestGae:
    def test_lambda1_gamma1_suffix_sums(self):
        rewards = np.array([1.0, 2.0, 3.0])
        adv, ret = gae(rewards, np.zeros(3), gamma=1.0, lam=1.0)
        assert list(adv) == [6.0, 5.0, 3.0]
        assert list(ret) == [6.0, 5.0, 3.0]

    def test_lambda0_is_td_error(self):
        rewards = np.array([1.0, 1.0])
        values = np.array([0.4, 0.7])
        adv, _ = gae(rewards, values, gamma=0.9, lam=0.0)
        assert adv[0] == pytest.approx(1.0 + 0.9 * 0.7 - 0.4)
        assert adv[1] == pytest.approx(1.0 + 0.0 - 0.7)

    def test_hand_recurrence(self):
        """rewards (1,1), values (0.5,0.5), gamma .9, lam .8: A0 = 1.31."""
        adv, _ = gae(np.array([1.0, 1.0]), np.array([0.5, 0.5]), 0.9, 0.8)
        assert adv[0] == pytest.approx(0.95 + 0.72 * 0.5)
        assert adv[1] == pytest.approx(0.5)

    def test_lambda1_equals_monte_carlo_every_batch(self):
        rng = np.random.default_rng(0)
        for gamma in (1.0, 0.95):
            for _ in range(20):
                n = int(rng.integers(2, 30))
                rewards = rng.normal(size=n)
                values = rng.normal(size=n)
                adv, _ = gae(rewards, values, gamma, 1.0)
                mc = np.array([
                    sum(gamma ** (k - t) * rewards[k] for k in range(t, n)) - values[t]
                    for t in range(n)
                ])
                assert np.allclose(adv, mc, atol=1e-9)

    def test_misaligned_rejected(self):
        with pytest.raises(ValueError):
            gae(np.zeros(3), np.zeros(2), 1.0, 1.0)


def _tiny_net(seed=0):
    layout = ActionLayout([SliceSpec("u", 1, "box", 0.0, 1.0)])
    return MlpPolicyValue(obs_dim=2, action_layout=layout, hidden=(4,), seed=seed)


def _tiny_batch(net, n=12, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, 2))
    actions = rng.normal(size=(n, 1))
    raw, ls, val = net.forward(ad.constant(net.params), obs)
    logp = net.log_prob(raw, ls, actions).value
    batch = RolloutBatch(
        obs=obs, actions=actions, log_probs=logp,
        rewards=rng.normal(size=n), values=val.value,
        episode_starts=[0, n // 2],
    )
    compute_batch_advantages(batch, 0.99, 0.95)
    return batch


class TestPpoUpdate:
    def test_ratio_one_at_old_params(self):
        net = _tiny_net()
        batch = _tiny_batch(net)
        loss, diag = ppo_loss(
            net, ad.constant(net.params), batch.obs, batch.actions,
            batch.log_probs, normalize_advantages(batch.advantages),
            batch.returns, PpoConfig(),
        )
        assert diag["approx_kl"] == pytest.approx(0.0, abs=1e-12)
        assert diag["clip_fraction"] == 0.0

    def test_surrogate_equals_policy_gradient_at_old_params(self):
        """At ratio 1 the clipped surrogate's gradient is the vanilla PG."""
        net = _tiny_net()
        batch = _tiny_batch(net)
        adv = normalize_advantages(batch.advantages)
        cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)

        flat = ad.param(net.params)
        loss, _ = ppo_loss(net, flat, batch.obs, batch.actions, batch.log_probs,
                           adv, batch.returns, cfg)
        (g_surr,) = ad.grad_of(loss, [flat])

        flat2 = ad.param(net.params)
        raw, ls, _ = net.forward(flat2, batch.obs)
        logp = net.log_prob(raw, ls, batch.actions)
        pg = ad.mean(logp * ad.constant(adv)) * -1.0
        (g_pg,) = ad.grad_of(pg, [flat2])
        assert np.allclose(g_surr, g_pg, atol=1e-12)

    def test_clip_bounds_ratio_term(self):
        """rho=1.5, eps=0.2, A>0: clipped branch contributes 1.2*A."""
        ratio = ad.constant(np.array([1.5]))
        adv = ad.constant(np.array([2.0]))
        clipped = ad.clip(ratio, 0.8, 1.2) * adv
        surr = ad.minimum(ratio * adv, clipped)
        assert surr.value[0] == pytest.approx(1.2 * 2.0)

    def test_zero_lr_is_noop(self):
        net = _tiny_net()
        batch = _tiny_batch(net)
        before = net.params.copy()
        ppo_update(net, batch, PpoConfig(lr=0.0), Adam(lr=0.0),
                   RngStreams(0).stream("s"))
        assert np.array_equal(net.params, before)

    def test_nonfinite_loss_restores_params(self):
        net = _tiny_net()
        batch = _tiny_batch(net)
        batch.returns[0] = np.inf
        before = net.params.copy()
        with pytest.raises(NonFiniteLoss):
            ppo_update(net, batch, PpoConfig(), Adam(lr=1e-3),
                       RngStreams(0).stream("s"))
        assert np.array_equal(net.params, before)

    def test_clip_fraction_in_unit_interval(self):
        net = _tiny_net()
        batch = _tiny_batch(net)
        adam = Adam(lr=1e-2)
        diag = ppo_update(net, batch, PpoConfig(lr=1e-2, epochs=3, minibatch_size=6),
                          adam, RngStreams(0).stream("s"))
        assert 0.0 <= diag["clip_fraction"] <= 1.0


class BanditEnv(ManagementEnv):
    """One state, two arms, rewards (1, 0)."""

    horizon = 1
    action_layout = ActionLayout([SliceSpec("arm", 1, "categorical", 0.0, 2.0)])

    def observation_names(self):
        return ["const"]

    def _do_reset(self):
        pass

    def _do_step(self, components):
        return (1.0 if int(components[0]) == 0 else 0.0), {}

    def _observe(self):
        return EnvObservation(features=np.zeros(1), t=self._t)


class TestTrain:
    def test_zero_lr_leaves_params(self):
        cfg = PpoConfig(seed=1, lr=0.0, epochs=2, episodes_per_batch=4,
                        eval_episodes=2, lr_decay=False)
        result = train(lambda: BanditEnv(), cfg, total_steps=16)
        fresh = train(lambda: BanditEnv(), PpoConfig(seed=1, lr=0.0, epochs=0,
                                                     episodes_per_batch=4,
                                                     eval_episodes=2), 4)
        # epochs=0 run never updates; both must equal the seed-1 init
        assert np.array_equal(result.net.params, fresh.net.params)

    def test_bandit_convergence(self):
        cfg = PpoConfig(seed=3, lr=3e-3, epochs=4, minibatch_size=32,
                        episodes_per_batch=32, gamma=1.0, entropy_coef=0.001,
                        normalize_rewards=False, eval_episodes=4)
        result = train(lambda: BanditEnv(), cfg, total_steps=32 * 40)
        net = result.net
        raw, _, _ = net.forward_np(net.obs_norm.normalize(
            net.input_vector(EnvObservation(np.zeros(1), 0)))[None, :])
        logits = raw[0]
        p0 = np.exp(logits[0]) / np.exp(logits).sum()
        assert p0 > 0.95

    def test_deterministic_given_seed(self):
        cfg = PpoConfig(seed=5, lr=1e-3, epochs=2, episodes_per_batch=4,
                        eval_episodes=2)
        r1 = train(lambda: BanditEnv(), cfg, total_steps=24)
        r2 = train(lambda: BanditEnv(), cfg, total_steps=24)
        assert np.array_equal(r1.net.params, r2.net.params)
        assert r1.curve == r2.curve

    def test_curve_length_matches_interval(self):
        cfg = PpoConfig(seed=2, lr=1e-3, epochs=1, episodes_per_batch=4,
                        eval_interval=4, eval_episodes=2)
        result = train(lambda: BanditEnv(), cfg, total_steps=16)
        assert len(result.curve) == 16 // 4
        assert result.curve[-1]["steps"] == 16


class TestCategoricalOrderLayout:
    def test_swaps_integer_order_slices(self):
        layout = ActionLayout([
            SliceSpec("price", 1, "box", 2.0, 8.0),
            SliceSpec("order", 1, "box", 0.0, 30.0),
        ])
        swapped = categorical_order_layout(layout)
        assert swapped.slices[0].kind == "box"
        assert swapped.slices[1].kind == "categorical"
        assert swapped.slices[1].hi == 31.0
        assert swapped.dim == layout.dim
