"""Policy/value network: heads, distributions, Adam, checkpoints."""

import numpy as np
import pytest

from opsim import autodiff as ad
from opsim.core import ActionLayout, EnvObservation, SliceSpec
from opsim.nn import (
    Adam,
    MlpPolicyValue,
    NeuralPolicy,
    RunningNorm,
    ShapeMismatch,
    clip_grad_norm,
    load_checkpoint,
    load_mlp_checkpoint,
    save_checkpoint,
    save_mlp_checkpoint,
)
from opsim.rng import RngStreams


@pytest.fixture
def mixed_layout():
    return ActionLayout([
        SliceSpec("order", 2, "box", 0.0, 10.0),
        SliceSpec("alpha_1", 3, "simplex"),
        SliceSpec("method", 1, "categorical", 0.0, 4.0),
    ])


@pytest.fixture
def net(mixed_layout):
    return MlpPolicyValue(obs_dim=5, action_layout=mixed_layout, hidden=(8, 8), seed=3)


class TestForward:
    def test_zero_params_zero_outputs(self, mixed_layout):
        net = MlpPolicyValue(obs_dim=5, action_layout=mixed_layout, hidden=(8,), seed=0)
        net.params = np.zeros_like(net.params)
        raw, log_std, value = net.forward_np(np.ones((2, 5)))
        assert np.all(raw == 0.0)
        assert np.all(value == 0.0)

    def test_output_shapes(self, net):
        raw, log_std, value = net.forward_np(np.zeros((4, 5)))
        assert raw.shape == (4, 2 + 3 + 4)  # 5 gaussian + 4 categorical logits
        assert log_std.shape == (5,)
        assert value.shape == (4,)

    def test_shape_mismatch_raises(self, net):
        with pytest.raises(ShapeMismatch):
            net.forward_np(np.zeros((2, 7)))

    def test_finite_difference_consistency(self, net):
        """Perturbing one weight moves outputs consistently with its gradient."""
        obs = np.ones((1, 5))

        def out0(params):
            raw, _, _ = net.forward(ad.constant(params), obs)
            return raw.value[0, 0]

        flat = ad.param(net.params)
        raw, _, _ = net.forward(flat, obs)
        (g,) = ad.grad_of(raw[0, slice(0, 1)] * 1.0, [flat])
        i = int(np.argmax(np.abs(g)))
        eps = 1e-6
        p1, p2 = net.params.copy(), net.params.copy()
        p1[i] += eps
        p2[i] -= eps
        fd = (out0(p1) - out0(p2)) / (2 * eps)
        assert fd == pytest.approx(g[i], rel=1e-6)


class TestDistributions:
    def test_sampled_action_dim(self, net):
        raw, log_std, _ = net.forward_np(np.zeros((1, 5)))
        stored = net.sample_stored(raw, log_std, RngStreams(0).stream("s"))
        assert stored.shape == (6,)
        assert stored[5] in {0.0, 1.0, 2.0, 3.0}

    def test_mode_uses_argmax_for_categorical(self, net):
        raw, _, _ = net.forward_np(np.zeros((1, 5)))
        raw = raw.copy()
        raw[0, 5 + 2] = 99.0  # boost logit of choice 2
        stored = net.mode_stored(raw)
        assert stored[5] == 2.0

    def test_log_prob_matches_manual_gaussian(self, mixed_layout):
        layout = ActionLayout([SliceSpec("u", 2, "box", 0.0, 1.0)])
        net = MlpPolicyValue(obs_dim=3, action_layout=layout, hidden=(4,), seed=1)
        obs = np.zeros((1, 3))
        raw_t, ls_t, _ = net.forward(ad.constant(net.params), obs)
        stored = np.array([[0.3, -0.2]])
        lp = net.log_prob(raw_t, ls_t, stored).value[0]
        mu = raw_t.value[0]
        sigma = np.exp(ls_t.value)
        manual = -0.5 * np.sum(((stored[0] - mu) / sigma) ** 2) - np.sum(
            np.log(sigma)
        ) - np.log(2 * np.pi)
        assert lp == pytest.approx(manual, rel=1e-12)

    def test_entropy_decreases_with_log_std(self, mixed_layout):
        layout = ActionLayout([SliceSpec("u", 2, "box", 0.0, 1.0)])
        ents = []
        for init in (0.0, -1.0):
            net = MlpPolicyValue(obs_dim=3, action_layout=layout, hidden=(4,),
                                 seed=1, init_log_std=init)
            raw, ls, _ = net.forward(ad.constant(net.params), np.zeros((1, 3)))
            ents.append(net.entropy(raw, ls).value[0])
        assert ents[1] < ents[0]


class TestAdam:
    def test_zero_lr_no_change(self):
        adam = Adam(lr=0.0)
        params = np.array([1.0, -2.0])
        out = adam.step(params, np.array([0.5, 0.5]))
        assert np.array_equal(out, params)

    def test_descends_quadratic(self):
        adam = Adam(lr=0.1)
        x = np.array([5.0])
        for _ in range(300):
            x = adam.step(x, 2 * x)
        assert abs(x[0]) < 0.1

    def test_grad_clip(self):
        g = np.array([3.0, 4.0])
        assert np.linalg.norm(clip_grad_norm(g, 1.0)) == pytest.approx(1.0)
        assert np.array_equal(clip_grad_norm(g, 10.0), g)


class TestRunningNorm:
    def test_matches_batch_stats(self):
        rng = np.random.default_rng(0)
        data = rng.normal(3.0, 2.0, size=(500, 4))
        norm = RunningNorm.for_dim(4)
        for chunk in np.split(data, 10):
            norm.update(chunk)
        assert np.allclose(norm.mean, data.mean(axis=0), atol=1e-6)
        assert np.allclose(norm.var, data.var(axis=0), atol=1e-4)

    def test_frozen_stops_updates(self):
        norm = RunningNorm.for_dim(2)
        norm.update(np.ones((5, 2)))
        norm.frozen = True
        before = norm.mean.copy()
        norm.update(np.full((5, 2), 100.0))
        assert np.array_equal(norm.mean, before)


class TestNeuralPolicy:
    def test_deterministic_repeatable(self, net):
        policy = NeuralPolicy(net, deterministic=True)
        obs = EnvObservation(features=np.ones(5), t=0)
        a1 = policy.act(obs).components
        a2 = policy.act(obs).components
        assert np.array_equal(a1, a2)

    def test_env_units_respect_bounds(self, net):
        policy = NeuralPolicy(net, rng=RngStreams(1).stream("a"), deterministic=False)
        obs = EnvObservation(features=np.ones(5), t=0)
        for _ in range(20):
            a = policy.act(obs).components
            assert 0.0 <= a[0] <= 10.0 and 0.0 <= a[1] <= 10.0
            assert abs(a[2:5].sum() - 1.0) < 1e-12
            assert a[5] in {0.0, 1.0, 2.0, 3.0}

    def test_time_feature_changes_input(self, mixed_layout):
        net = MlpPolicyValue(obs_dim=5, action_layout=mixed_layout, hidden=(8,),
                             seed=3, time_scale=10.0)
        assert net.obs_dim == 6
        v0 = net.input_vector(EnvObservation(features=np.ones(5), t=0))
        v5 = net.input_vector(EnvObservation(features=np.ones(5), t=5))
        assert v0[-1] == 0.0 and v5[-1] == 0.5


class TestCheckpoints:
    def test_roundtrip(self, tmp_path, net):
        net.obs_norm.update(np.random.default_rng(0).normal(size=(50, 5)))
        path = tmp_path / "mlp.ckpt"
        save_mlp_checkpoint(path, net, env_config_hash="deadbeef", step_count=123)
        back = load_mlp_checkpoint(path)
        assert np.array_equal(back.params, net.params)
        assert np.allclose(back.obs_norm.mean, net.obs_norm.mean)
        assert back.obs_norm.frozen
        header, params = load_checkpoint(path)
        assert header["env_config_hash"] == "deadbeef"
        assert header["step_count"] == 123

    def test_little_endian_float64_payload(self, tmp_path):
        path = tmp_path / "raw.ckpt"
        params = np.array([1.5, -2.25, 3.0])
        save_checkpoint(path, "mlp", params, {})
        blob = path.read_bytes().split(b"\n", 1)[1]
        assert np.array_equal(np.frombuffer(blob, dtype="<f8"), params)

    def test_corrupted_payload_detected(self, tmp_path, net):
        path = tmp_path / "bad.ckpt"
        save_mlp_checkpoint(path, net, "x", 0)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(path)

    def test_time_scale_roundtrip(self, tmp_path, mixed_layout):
        net = MlpPolicyValue(obs_dim=5, action_layout=mixed_layout, hidden=(8,),
                             seed=3, time_scale=20.0)
        path = tmp_path / "ts.ckpt"
        save_mlp_checkpoint(path, net, "h", 0)
        back = load_mlp_checkpoint(path)
        assert back.time_scale == 20.0
        assert back.env_obs_dim == 5
