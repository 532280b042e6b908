"""PPO machinery: action restriction, GAE, surrogate, log-probs, random agent."""

import math

import numpy as np
import pytest

from landloop.mlp import AdamState
from landloop.ppo import (
    CONSTANT_DESCENT_STICK,
    GaussianPolicy,
    PPOConfig,
    RolloutBuffer,
    ValueNet,
    clipped_surrogate,
    gae_advantages,
    gaussian_log_prob,
    ppo_update,
    random_agent_action,
    restrict_action,
)
from landloop.session import rng_stream


class TestRestrictAction:
    def test_two_axis_mapping(self):
        a = restrict_action(np.array([0.1, -0.2]), 2)
        assert (a.roll, a.pitch, a.yaw, a.throttle) == (0.1, -0.2, 0.0, CONSTANT_DESCENT_STICK)

    def test_three_axis_zeroes_yaw(self):
        a = restrict_action(np.array([0.4, 0.5, -0.9]), 3)
        assert a.yaw == 0.0
        assert (a.roll, a.pitch, a.throttle) == (0.4, 0.5, -0.9)

    def test_four_axis_identity(self):
        a = restrict_action(np.array([0.1, 0.2, 0.3, 0.4]), 4)
        assert (a.roll, a.pitch, a.yaw, a.throttle) == (0.1, 0.2, 0.3, 0.4)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            restrict_action(np.array([0.1, 0.2, 0.3]), 2)


class TestGae:
    def test_single_terminal_step(self):
        adv, ret = gae_advantages(np.array([1.0]), np.array([0.3]),
                                  np.array([True]), 0.99, 0.95)
        assert adv[0] == pytest.approx(0.7, abs=1e-12)
        assert ret[0] == pytest.approx(1.0, abs=1e-12)

    def test_gamma_zero_collapses_recursion(self):
        rewards = np.array([0.0, 0.5, 1.0])
        values = np.array([0.2, 0.1, 0.4])
        terminals = np.array([False, False, True])
        adv, _ = gae_advantages(rewards, values, terminals, 0.0, 0.95)
        assert np.allclose(adv, rewards - values, atol=1e-12)

    def test_three_step_hand_recursion(self):
        # r=(0,0,1), V=(0.2,0.3,0.1), gamma=0.99, lambda=0.95:
        # d2 = 1 - 0.1 = 0.9
        # d1 = 0.99*0.1 - 0.3 = -0.201
        # d0 = 0.99*0.3 - 0.2 = 0.097
        # A2 = 0.9; A1 = -0.201 + 0.9405*0.9 = 0.64545
        # A0 = 0.097 + 0.9405*0.64545 = 0.704045725
        adv, ret = gae_advantages(
            np.array([0.0, 0.0, 1.0]), np.array([0.2, 0.3, 0.1]),
            np.array([False, False, True]), 0.99, 0.95)
        assert adv == pytest.approx([0.704045725, 0.64545, 0.9], abs=1e-12)
        assert ret == pytest.approx([0.904045725, 0.94545, 1.0], abs=1e-12)

    def test_no_bootstrap_across_episode_boundary(self):
        # Two one-step episodes: each advantage is just r - V.
        adv, _ = gae_advantages(np.array([1.0, 0.0]), np.array([0.4, 0.6]),
                                np.array([True, True]), 0.99, 0.95)
        assert adv == pytest.approx([0.6, -0.6], abs=1e-12)

    def test_incomplete_episode_rejected(self):
        with pytest.raises(ValueError):
            gae_advantages(np.array([0.0, 0.0]), np.array([0.1, 0.1]),
                           np.array([False, False]), 0.99, 0.95)


class TestClippedSurrogate:
    def test_ratio_above_clip_uses_clipped_value(self):
        s = clipped_surrogate(np.array([1.5]), np.array([2.0]), 0.2)
        assert s[0] == pytest.approx(1.2 * 2.0)

    def test_ratio_one_clip_inactive(self):
        adv = np.array([1.0, -3.0, 0.5])
        s = clipped_surrogate(np.ones(3), adv, 0.2)
        assert np.allclose(s, adv)

    def test_negative_advantage_clips_low_side(self):
        s = clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)
        # min(0.5*-1, 0.8*-1) = -0.8
        assert s[0] == pytest.approx(-0.8)

    def test_infinite_epsilon_equals_vanilla_objective(self):
        rng = np.random.default_rng(0)
        ratio = rng.uniform(0.2, 3.0, 100)
        adv = rng.normal(0, 1, 100)
        s = clipped_surrogate(ratio, adv, 1e9)
        assert np.allclose(s, ratio * adv, atol=1e-12)


class TestGaussianLogProb:
    def test_matches_log_of_density_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            mean = rng.normal(0, 1, 4)
            log_std = rng.uniform(-2, 1, 4)
            z = rng.normal(0, 2, 4)
            std = np.exp(log_std)
            dens = np.prod(np.exp(-0.5 * ((z - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi)))
            assert gaussian_log_prob(z, mean, log_std) == pytest.approx(math.log(dens), abs=1e-10)

    def test_parameter_gradients_match_finite_differences(self):
        # d(logp)/d(mean) and d(logp)/d(log_std) against central differences.
        rng = np.random.default_rng(6)
        h = 1e-6
        for _ in range(20):
            mean = rng.normal(0, 1, 3)
            log_std = rng.uniform(-1.5, 0.5, 3)
            z = rng.normal(0, 1.5, 3)
            std = np.exp(log_std)
            grad_mean = (z - mean) / std**2
            grad_log_std = ((z - mean) / std) ** 2 - 1.0
            for k in range(3):
                em = np.zeros(3)
                em[k] = h
                fd_mean = (gaussian_log_prob(z, mean + em, log_std)
                           - gaussian_log_prob(z, mean - em, log_std)) / (2 * h)
                fd_ls = (gaussian_log_prob(z, mean, log_std + em)
                         - gaussian_log_prob(z, mean, log_std - em)) / (2 * h)
                assert fd_mean == pytest.approx(grad_mean[k], abs=1e-8)
                assert fd_ls == pytest.approx(grad_log_std[k], abs=1e-8)


class TestRandomAgent:
    def test_seeded_sequence_reproducible(self):
        a = [random_agent_action(np.random.default_rng(3)) for _ in range(5)]
        b = [random_agent_action(np.random.default_rng(3)) for _ in range(5)]
        assert a == b

    def test_mean_near_zero(self):
        rng = np.random.default_rng(1)
        draws = np.array([random_agent_action(rng).as_array() for _ in range(10_000)])
        assert np.all(np.abs(draws.mean(axis=0)) < 0.05)

    def test_all_draws_in_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            a = random_agent_action(rng)
            assert all(-1.0 <= v <= 1.0 for v in (a.roll, a.pitch, a.yaw, a.throttle))


def synthetic_buffer(policy, value_net, cfg, n_steps=96, favored=None, seed=0):
    """One-step episodes; when favored is set, that action alone earns reward."""
    rng = np.random.default_rng(seed)
    buf = RolloutBuffer()
    for t in range(n_steps):
        obs = rng.uniform(-1, 1, 15)
        z, logp, _ = policy.sample(obs, rng)
        take_favored = favored is not None and t % 2 == 0
        if take_favored:
            z = favored + 0.05 * rng.standard_normal(cfg.action_dims)
            logp = float(gaussian_log_prob(z, policy.mean(obs)[0], policy.log_std))
        v = float(value_net.value(obs[None, :])[0])
        buf.add(obs, z, logp, v, 1.0 if take_favored else 0.0, True)
    return buf


class TestPpoUpdate:
    def test_favored_action_log_prob_increases(self):
        cfg = PPOConfig(action_dims=2, seed=0)
        policy = GaussianPolicy(2, cfg, rng_stream(0, 1))
        value_net = ValueNet(rng_stream(0, 2))
        favored = np.array([0.8, -0.6])
        buf = synthetic_buffer(policy, value_net, cfg, favored=favored)
        obs = np.asarray(buf.observations)[::2]  # rows where favored was taken
        z = np.asarray(buf.pre_squash)[::2]
        before = gaussian_log_prob(z, policy.mean(obs), policy.log_std).mean()
        ppo_update(policy, value_net, buf, cfg,
                   AdamState.for_arrays(policy.param_arrays(), 3e-4),
                   AdamState.for_arrays(value_net.param_arrays(), 3e-4),
                   rng_stream(0, 3))
        after = gaussian_log_prob(z, policy.mean(obs), policy.log_std).mean()
        assert after > before

    def test_update_deterministic_under_seed(self):
        outs = []
        for _ in range(2):
            cfg = PPOConfig(action_dims=3, seed=4)
            policy = GaussianPolicy(3, cfg, rng_stream(4, 1))
            value_net = ValueNet(rng_stream(4, 2))
            buf = synthetic_buffer(policy, value_net, cfg, seed=9)
            ppo_update(policy, value_net, buf, cfg,
                       AdamState.for_arrays(policy.param_arrays(), 3e-4),
                       AdamState.for_arrays(value_net.param_arrays(), 3e-4),
                       rng_stream(4, 3))
            outs.append(policy.mean(np.zeros((1, 15)))[0].copy())
        assert np.array_equal(outs[0], outs[1])

    def test_sparse_reward_invariant_in_training_buffers(self):
        # Collected rollouts carry the success bit only at terminal steps.
        from landloop.ppo import train_ppo
        from landloop.sim import TaskConfig

        cfg = PPOConfig(action_dims=2, episode_budget=10, seed=0)
        _, result = train_ppo(cfg, TaskConfig(rng_seed=0))
        assert len(result.episode_successes) == 10
        assert set(result.episode_successes) <= {0, 1}

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            PPOConfig(action_dims=5)
