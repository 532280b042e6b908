"""PPO and random-agent baselines for the landing task.

On-policy actor-critic with the clipped surrogate objective and GAE, built
on the same hand-rolled MLP engine as the landing policy (identical hidden
sizes, the same 15-dim observation). The Gaussian policy keeps a
state-independent learnable log-std; samples are tanh-squashed into stick
range and mapped onto a restricted action set (2, 3, or all 4 axes). Log
probabilities are taken on the pre-squash sample, so the squash Jacobian
cancels exactly in the importance ratio. Reward is the bare success bit at
episode end - nothing else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraConfig, ObservationScales, PadTracker, assemble_observation
from .mlp import AdamState, PolicyParams, backward_from_output, forward_cached, init_mlp
from .session import STREAM_RESET, rng_stream
from .sim import ActionCommand, Simulator, TaskConfig

CONSTANT_DESCENT_STICK = -0.4
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
# Guard for per-update advantage normalization. Deliberately sizeable: with a
# sparse terminal reward many rollouts contain no reward at all, and dividing
# their residual value noise up to unit variance would drown the real signal.
ADV_NORM_EPS = 0.05

STREAM_PPO_POLICY = 11
STREAM_PPO_VALUE = 12
STREAM_PPO_SAMPLE = 13
STREAM_PPO_SHUFFLE = 14

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PPOConfig:
    action_dims: int = 4  # 2: roll/pitch, 3: +throttle, 4: +yaw
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_update: int = 10
    minibatch_size: int = 64
    rollout_episodes_per_update: int = 10
    learning_rate: float = 3e-4
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    episode_budget: int = 1000
    log_std_init: float = -0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.action_dims not in (2, 3, 4):
            raise ValueError("action_dims must be 2, 3 or 4")
        if self.episode_budget < 1:
            raise ValueError("episode_budget must be >= 1")


def restrict_action(partial: np.ndarray, action_dims: int) -> ActionCommand:
    """Map a restricted policy output onto the full stick command.

    2 axes: (roll, pitch), constant descent throttle, yaw 0.
    3 axes: (roll, pitch, throttle), yaw 0. 4 axes: identity.
    """
    partial = np.asarray(partial, dtype=np.float64)
    if partial.shape != (action_dims,):
        raise ValueError(f"expected {action_dims} action entries, got {partial.shape}")
    if action_dims == 2:
        return ActionCommand(float(partial[0]), float(partial[1]), 0.0, CONSTANT_DESCENT_STICK)
    if action_dims == 3:
        return ActionCommand(float(partial[0]), float(partial[1]), 0.0, float(partial[2]))
    return ActionCommand.from_array(partial)


def gaussian_log_prob(z: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Row-wise log density of z under N(mean, exp(log_std)^2), diagonal."""
    std = np.exp(log_std)
    t = (z - mean) / std
    return -0.5 * np.sum(t * t, axis=-1) - np.sum(log_std) - z.shape[-1] * HALF_LOG_2PI


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def gae_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    terminals: np.ndarray,
    discount: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step GAE advantages and returns over complete episodes.

    terminals[t] marks the last step of an episode; the buffer must end on
    one. Bootstraps V(s_{t+1}) within an episode, zero across boundaries.
    """
    if len(rewards) == 0:
        raise ValueError("empty rollout buffer")
    if not terminals[-1]:
        raise ValueError("rollout buffer ends mid-episode")
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if terminals[t]:
            delta = rewards[t] - values[t]
            running = delta
        else:
            delta = rewards[t] + discount * values[t + 1] - values[t]
            running = delta + discount * lam * running
        adv[t] = running
    return adv, adv + values


@dataclass
class RolloutBuffer:
    observations: list = field(default_factory=list)
    pre_squash: list = field(default_factory=list)  # z before tanh
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    terminals: list = field(default_factory=list)

    def add(self, obs, z, log_prob, value, reward, terminal) -> None:
        self.observations.append(obs)
        self.pre_squash.append(z)
        self.log_probs.append(log_prob)
        self.values.append(value)
        self.rewards.append(reward)
        self.terminals.append(terminal)

    def __len__(self) -> int:
        return len(self.rewards)

    def arrays(self):
        return (np.asarray(self.observations), np.asarray(self.pre_squash),
                np.asarray(self.log_probs), np.asarray(self.values),
                np.asarray(self.rewards, dtype=np.float64),
                np.asarray(self.terminals, dtype=bool))


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian with an MLP mean and learnable log-std."""

    def __init__(self, action_dims: int, cfg: PPOConfig, rng: np.random.Generator) -> None:
        sizes = (15, 130, 72, 40, action_dims)
        # Small final layer keeps early actions near hover, which matters
        # under a sparse terminal reward.
        self.mean_net = init_mlp(sizes, rng, output_activation="linear", final_scale=0.01)
        self.log_std = np.full(action_dims, cfg.log_std_init)
        self.action_dims = action_dims

    def mean(self, obs: np.ndarray) -> np.ndarray:
        y, _ = forward_cached(self.mean_net, obs)
        return y

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Draw (z, log_prob, squashed action) for one observation."""
        mu = self.mean(obs)[0]
        z = mu + np.exp(self.log_std) * rng.standard_normal(self.action_dims)
        logp = float(gaussian_log_prob(z, mu, self.log_std))
        return z, logp, np.tanh(z)

    def deterministic_action(self, obs: np.ndarray) -> np.ndarray:
        return np.tanh(self.mean(obs)[0])

    def param_arrays(self):
        return self.mean_net.weights + self.mean_net.biases + [self.log_std]


class ValueNet:
    def __init__(self, rng: np.random.Generator) -> None:
        # Small head: a fresh critic should predict ~0 everywhere, not noise.
        self.net = init_mlp((15, 130, 72, 40, 1), rng, output_activation="linear",
                            final_scale=0.01)

    def value(self, obs: np.ndarray) -> np.ndarray:
        y, _ = forward_cached(self.net, obs)
        return y[:, 0]

    def param_arrays(self):
        return self.net.weights + self.net.biases


@dataclass
class PPOUpdateStats:
    policy_loss: float
    value_loss: float
    mean_ratio: float
    aborted: bool = False


def ppo_update(
    policy: GaussianPolicy,
    value_net: ValueNet,
    buffer: RolloutBuffer,
    cfg: PPOConfig,
    policy_opt: AdamState,
    value_opt: AdamState,
    shuffle_rng: np.random.Generator,
) -> PPOUpdateStats:
    """Clipped-surrogate update over the buffer: epochs x shuffled minibatches."""
    obs, z, logp_old, values, rewards, terminals = buffer.arrays()
    adv, returns = gae_advantages(rewards, values, terminals, cfg.discount, cfg.gae_lambda)
    adv = (adv - adv.mean()) / (adv.std() + ADV_NORM_EPS)

    n = len(obs)
    last_policy_loss = 0.0
    last_value_loss = 0.0
    last_ratio = 1.0
    for _ in range(cfg.epochs_per_update):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            mb_obs, mb_z = obs[idx], z[idx]
            mb_adv, mb_ret, mb_logp_old = adv[idx], returns[idx], logp_old[idx]
            m = len(idx)

            mu, cache = forward_cached(policy.mean_net, mb_obs)
            std = np.exp(policy.log_std)
            diff = mb_z - mu
            logp = gaussian_log_prob(mb_z, mu, policy.log_std)
            ratio = np.exp(logp - mb_logp_old)
            surr1 = ratio * mb_adv
            surr2 = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * mb_adv
            policy_loss = -float(np.mean(np.minimum(surr1, surr2)))

            # Gradient flows through the ratio only where the unclipped branch wins.
            unclipped = (surr1 <= surr2).astype(np.float64)
            dloss_dlogp = -(unclipped * ratio * mb_adv) / m
            dmu = dloss_dlogp[:, None] * (diff / (std**2))
            dlog_std = np.sum(dloss_dlogp[:, None] * ((diff / std) ** 2 - 1.0), axis=0)
            if cfg.entropy_coef:
                dlog_std -= cfg.entropy_coef  # d(entropy)/dlog_std = 1 per dim
            grads_mean = backward_from_output(policy.mean_net, cache, dmu)

            v_pred, v_cache = forward_cached(value_net.net, mb_obs)
            v_err = v_pred[:, 0] - mb_ret
            value_loss = float(np.mean(v_err**2))
            dv = (cfg.value_coef * 2.0 * v_err / m)[:, None]
            grads_value = backward_from_output(value_net.net, v_cache, dv)

            finite = (
                math.isfinite(policy_loss) and math.isfinite(value_loss)
                and all(np.all(np.isfinite(g)) for g in
                        grads_mean.weights + grads_mean.biases + [dlog_std])
            )
            if not finite:
                return PPOUpdateStats(policy_loss, value_loss, float(np.mean(ratio)),
                                      aborted=True)

            policy_opt.step(policy.param_arrays(),
                            grads_mean.weights + grads_mean.biases + [dlog_std])
            np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX, out=policy.log_std)
            value_opt.step(value_net.param_arrays(), grads_value.weights + grads_value.biases)

            last_policy_loss, last_value_loss = policy_loss, value_loss
            last_ratio = float(np.mean(ratio))
    return PPOUpdateStats(last_policy_loss, last_value_loss, last_ratio)


def random_agent_action(rng: np.random.Generator) -> ActionCommand:
    """Uniform sticks on [-1, 1]^4."""
    return ActionCommand.from_array(rng.uniform(-1.0, 1.0, size=4))


@dataclass
class PPOResult:
    episode_successes: list[int]
    rolling_success: list[float]
    update_stats: list[PPOUpdateStats]
    aborted: bool = False

    @property
    def final_rolling_success(self) -> float:
        return self.rolling_success[-1] if self.rolling_success else 0.0


def train_ppo(
    cfg: PPOConfig,
    task: TaskConfig,
    cam: CameraConfig = CameraConfig(),
    rolling_window: int = 100,
    progress=None,
) -> tuple[GaussianPolicy, PPOResult]:
    """Train against the sparse success reward for cfg.episode_budget episodes."""
    policy = GaussianPolicy(cfg.action_dims, cfg, rng_stream(cfg.seed, STREAM_PPO_POLICY))
    value_net = ValueNet(rng_stream(cfg.seed, STREAM_PPO_VALUE))
    policy_opt = AdamState.for_arrays(policy.param_arrays(), learning_rate=cfg.learning_rate)
    value_opt = AdamState.for_arrays(value_net.param_arrays(), learning_rate=cfg.learning_rate)
    sample_rng = rng_stream(cfg.seed, STREAM_PPO_SAMPLE)
    shuffle_rng = rng_stream(cfg.seed, STREAM_PPO_SHUFFLE)
    sim = Simulator(cfg=task, rng=rng_stream(cfg.seed, STREAM_RESET))
    tracker = PadTracker(cam, task.pad_radius)
    scales = ObservationScales.from_configs(task, cam)

    result = PPOResult(episode_successes=[], rolling_success=[], update_stats=[])
    episodes_done = 0
    while episodes_done < cfg.episode_budget:
        buffer = RolloutBuffer()
        n_eps = min(cfg.rollout_episodes_per_update, cfg.episode_budget - episodes_done)
        for _ in range(n_eps):
            sim.reset()
            tracker.reset()
            status = sim.status()
            while status.running:
                obs = assemble_observation(sim.state, tracker.observe(sim.state), scales)
                z, logp, squashed = policy.sample(obs, sample_rng)
                value = float(value_net.value(obs[None, :])[0])
                action = restrict_action(squashed, cfg.action_dims)
                _, status = sim.step(action)
                done = not status.running
                reward = 1.0 if (done and status.landed_success) else 0.0
                buffer.add(obs, z, logp, value, reward, done)
            success = int(status.landed_success)
            result.episode_successes.append(success)
            episodes_done += 1
            window = result.episode_successes[-rolling_window:]
            result.rolling_success.append(sum(window) / len(window))
        stats = ppo_update(policy, value_net, buffer, cfg, policy_opt, value_opt, shuffle_rng)
        result.update_stats.append(stats)
        if progress is not None:
            progress(episodes_done, result.rolling_success[-1], stats)
        if stats.aborted:
            result.aborted = True
            break
    return policy, result
