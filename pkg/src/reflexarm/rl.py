"""Soft actor-critic for the waypoint-conditioned arm MDP.

Tanh-squashed Gaussian policy, twin critics with polyak-averaged targets,
and an entropy temperature auto-tuned toward -dim(action). The training
loop produces evaluation curves for three variants: the full method
(waypoints in the observation, shaped reward, teleport curriculum), the
same without the curriculum, and a plain baseline with neither waypoint
observations nor shaping. Evaluation always scores the sparse task reward
only, so the variants stay comparable.
"""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .nn import Parameter, Tape, Tensor, ops

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
VARIANTS = ("ours", "no_curriculum", "baseline_no_waypoints")

# seed-stream offsets: episode resets, per-step action noise, and the fixed
# evaluation scenes must never share a generator
_EPISODE_STRIDE = 100003
_ACT_STRIDE = 65537
_EVAL_SEED_BASE = 900000


@dataclass(frozen=True)
class TrainConfig:
    total_env_steps: int = 150000
    batch_size: int = 256
    lr: float = 3e-4
    warmup_steps: int = 1000
    eval_interval: int = 5000
    eval_episodes: int = 20
    buffer_capacity: int = 200000
    gamma: float = 0.99
    tau: float = 0.005
    hidden: int = 256
    variant: str = "ours"

    def __post_init__(self):
        if self.total_env_steps <= 0:
            raise ValueError("total_env_steps must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")
        if self.eval_interval <= 0 or self.eval_episodes <= 0:
            raise ValueError("eval settings must be positive")
        if self.total_env_steps % self.eval_interval != 0:
            raise ValueError("total_env_steps must be a multiple of eval_interval")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must hold at least one batch")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.hidden <= 0:
            raise ValueError("hidden must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


class ReplayBuffer:
    """Fixed-capacity FIFO transition store with uniform sampling."""

    def __init__(self, capacity, obs_dim, action_dim):
        if capacity <= 0 or obs_dim <= 0 or action_dim <= 0:
            raise ValueError("capacity and dims must be positive")
        self.capacity = capacity
        self._obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._action = np.zeros((capacity, action_dim), dtype=np.float32)
        self._reward = np.zeros(capacity, dtype=np.float32)
        self._next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self._done = np.zeros(capacity, dtype=np.float32)
        self._n = 0
        self._write = 0

    def __len__(self):
        return self._n

    def add(self, obs, action, reward, next_obs, done):
        i = self._write
        self._obs[i] = obs
        self._action[i] = action
        self._reward[i] = reward
        self._next_obs[i] = next_obs
        self._done[i] = done
        self._write = (i + 1) % self.capacity
        self._n = min(self._n + 1, self.capacity)

    def sample(self, batch_size, rng):
        if batch_size > self._n:
            raise ValueError(f"asked for {batch_size} of {self._n} stored transitions")
        idx = rng.integers(0, self._n, size=batch_size)
        return {
            "obs": self._obs[idx],
            "action": self._action[idx],
            "reward": self._reward[idx],
            "next_obs": self._next_obs[idx],
            "done": self._done[idx],
        }


class SacAgent(nn.Module):
    """Actor (obs -> mean, log-std), twin critics, and their targets.

    The temperature is stored as log(alpha) so alpha stays positive; target
    networks change through polyak averaging only.
    """

    def __init__(self, obs_dim, action_dim, max_action=1.0, hidden=256,
                 gamma=0.99, tau=0.005, lr=3e-4, target_entropy=None, seed=0):
        if obs_dim <= 0 or action_dim <= 0:
            raise ValueError("obs_dim and action_dim must be positive")
        if max_action <= 0:
            raise ValueError("max_action must be positive")
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.max_action = float(max_action)
        self.hidden = hidden
        self.gamma = gamma
        self.tau = tau
        self.target_entropy = (-float(action_dim) if target_entropy is None
                               else float(target_entropy))
        rng = np.random.default_rng(seed)
        self.actor = nn.MLP([obs_dim, hidden, hidden, 2 * action_dim], rng)
        self.q1 = nn.MLP([obs_dim + action_dim, hidden, hidden, 1], rng)
        self.q2 = nn.MLP([obs_dim + action_dim, hidden, hidden, 1], rng)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        self.log_alpha = Parameter(np.zeros((), dtype=np.float32))
        self._opt_actor = nn.Adam(self.actor.parameters(), lr)
        self._opt_q1 = nn.Adam(self.q1.parameters(), lr)
        self._opt_q2 = nn.Adam(self.q2.parameters(), lr)
        self._opt_alpha = nn.Adam([self.log_alpha], lr)
        self._rng = np.random.default_rng(seed * 48611 + 7)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha.data).item())

    def _policy(self, obs):
        out = self.actor(obs)
        mean = ops.slice_last(out, 0, self.action_dim)
        log_std = ops.clip(ops.slice_last(out, self.action_dim, 2 * self.action_dim),
                           LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def act(self, obs, deterministic=False, seed=0):
        obs = np.asarray(obs, dtype=np.float32)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"obs shape {obs.shape} != ({self.obs_dim},)")
        mean, log_std = self._policy(Tensor(obs[None]))
        if deterministic:
            squashed = np.tanh(mean.data[0])
        else:
            eps = np.random.default_rng(seed).standard_normal(self.action_dim)
            squashed = np.tanh(mean.data[0] + np.exp(log_std.data[0]) * eps)
        return (self.max_action * squashed).astype(np.float64)

    def _actor_objective(self, obs, noise):
        """mean(alpha*logpi - min Q) under a fixed reparameterization draw.

        Returned as (loss tensor, log-prob array); a Tape around the call
        yields the policy gradient, and the same call without one recomputes
        the loss for finite-difference checks.
        """
        mean, log_std = self._policy(Tensor(obs))
        squashed, logp = ops.tanh_gaussian_sample(mean, log_std, noise)
        q_in = ops.concat([Tensor(obs), ops.scale(squashed, self.max_action)], axis=-1)
        q_min = ops.reshape(ops.minimum(self.q1(q_in), self.q2(q_in)), (-1,))
        loss = ops.mean(ops.sub(ops.scale(logp, self.alpha), q_min))
        return loss, logp.data

    def _sync_targets(self):
        for src, dst in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for p, tp in zip(src.parameters(), dst.parameters()):
                tp.data *= 1.0 - self.tau
                tp.data += self.tau * p.data

    def update(self, batch):
        """One gradient step per network from a sampled batch, then polyak."""
        obs = np.asarray(batch["obs"], dtype=np.float32)
        action = np.asarray(batch["action"], dtype=np.float32)
        reward = np.asarray(batch["reward"], dtype=np.float32)
        next_obs = np.asarray(batch["next_obs"], dtype=np.float32)
        done = np.asarray(batch["done"], dtype=np.float32)
        n = obs.shape[0]
        if n < 2:
            raise ValueError("update needs a batch of at least 2 transitions")
        if action.shape != (n, self.action_dim) or next_obs.shape != obs.shape:
            raise ValueError("batch field shapes disagree")

        noise_next = self._rng.standard_normal((n, self.action_dim)).astype(np.float32)
        noise_pi = self._rng.standard_normal((n, self.action_dim)).astype(np.float32)
        alpha = self.alpha

        # Bellman target from the target critics and the current policy
        mean2, log_std2 = self._policy(Tensor(next_obs))
        squashed2, logp2 = ops.tanh_gaussian_sample(mean2, log_std2, noise_next)
        q_in2 = np.concatenate([next_obs, self.max_action * squashed2.data], axis=1)
        q_next = np.minimum(self.q1_target(Tensor(q_in2)).data[:, 0],
                            self.q2_target(Tensor(q_in2)).data[:, 0])
        y = reward + self.gamma * (1.0 - done) * (q_next - alpha * logp2.data)
        target = Tensor(y[:, None].astype(np.float32))

        q_in = Tensor(np.concatenate([obs, action], axis=1))
        critic_loss = 0.0
        for net, opt in ((self.q1, self._opt_q1), (self.q2, self._opt_q2)):
            tape = Tape(net.parameters())
            with tape:
                loss = ops.mse_loss(net(q_in), target)
            opt.step(tape.gradients(loss))
            critic_loss += float(loss.data)

        tape = Tape(self.actor.parameters())
        with tape:
            actor_loss, logp_pi = self._actor_objective(obs, noise_pi)
        self._opt_actor.step(tape.gradients(actor_loss))

        # temperature follows -alpha*(logpi + target), logpi held fixed
        gap = float(np.mean(logp_pi) + self.target_entropy)
        tape = Tape([self.log_alpha])
        with tape:
            alpha_loss = ops.scale(ops.exp(self.log_alpha), -gap)
        self._opt_alpha.step(tape.gradients(alpha_loss))

        self._sync_targets()
        return {
            "critic_loss": critic_loss,
            "actor_loss": float(actor_loss.data),
            "alpha_loss": float(alpha_loss.data.item()),
            "entropy": float(-np.mean(logp_pi)),
            "alpha": self.alpha,
        }


def save_sac(agent, path):
    """Parameters only; optimizer and noise-stream state are not kept."""
    nn.save_checkpoint(path, agent, extra={
        "kind": "sac",
        "obs_dim": agent.obs_dim,
        "action_dim": agent.action_dim,
        "max_action": agent.max_action,
        "hidden": agent.hidden,
        "gamma": agent.gamma,
        "tau": agent.tau,
        "target_entropy": agent.target_entropy,
    })


def load_sac(path):
    extra = nn.read_checkpoint_extra(path)
    if not extra or extra.get("kind") != "sac":
        raise nn.CheckpointError(f"{path} does not hold a SAC checkpoint")
    agent = SacAgent(extra["obs_dim"], extra["action_dim"],
                     max_action=extra["max_action"], hidden=extra["hidden"],
                     gamma=extra["gamma"], tau=extra["tau"],
                     target_entropy=extra["target_entropy"])
    nn.load_checkpoint(path, agent)
    return agent


def task_reward(coeffs, info):
    """Sparse task terms only (collision, goal, effort); no path shaping."""
    return (coeffs.collision * float(info["collided"])
            + coeffs.goal * float(info["reached_goal"])
            + coeffs.accel * float(info["accel_norm"]))


def evaluate_policy(agent, env, episodes, seed, include_waypoints=True):
    """Deterministic rollouts on fixed scenes, scored by task reward only."""
    returns, reached_flags, steps = [], [], []
    for i in range(episodes):
        state = env.reset(seed=seed + i)
        obs = env.observe(state, include_waypoints=include_waypoints)
        ep_return, reached, n_steps = 0.0, False, env.cfg.horizon
        while True:
            action = agent.act(obs, deterministic=True)
            result = env.step(state, action)
            ep_return += task_reward(env.coeffs, result.info)
            state = result.next_state
            obs = env.observe(state, include_waypoints=include_waypoints)
            if result.info["reached_goal"]:
                reached, n_steps = True, state.step_count
            if result.done:
                break
        returns.append(ep_return)
        reached_flags.append(reached)
        steps.append(n_steps)
    return {
        "return_mean": float(np.mean(returns)),
        "return_std": float(np.std(returns)),
        "goal_rate": float(np.mean(reached_flags)),
        "steps_to_goal": float(np.mean(steps)),
    }


def train_sac(env_factory, cfg=TrainConfig(), seed=0, verbose=False):
    """Interact, store, update; evaluate on a fixed scene set periodically.

    Returns (agent, curves) where curves holds one point per eval interval.
    The curriculum only runs for the "ours" variant; the no-waypoints
    baseline also drops waypoint observations and trains on the sparse task
    reward alone. Evaluation never teleports and always scores the sparse
    reward. Timeouts truncate episodes without ending the bootstrap, since
    the horizon is a training artifact rather than an absorbing state.
    """
    env = env_factory()
    eval_env = env_factory()
    if cfg.variant != "ours":
        env.curriculum = replace(env.curriculum, enabled=False)
    eval_env.curriculum = replace(eval_env.curriculum, enabled=False)
    include_wp = cfg.variant != "baseline_no_waypoints"
    shaped = cfg.variant != "baseline_no_waypoints"

    episode = 0
    state = env.reset(seed=seed * _EPISODE_STRIDE + episode)
    obs = env.observe(state, include_waypoints=include_wp)
    agent = SacAgent(obs.size, env.arm.n_joints, max_action=env.arm.max_velocity,
                     hidden=cfg.hidden, gamma=cfg.gamma, tau=cfg.tau, lr=cfg.lr,
                     seed=seed)
    buffer = ReplayBuffer(cfg.buffer_capacity, obs.size, env.arm.n_joints)
    warmup_rng = np.random.default_rng(seed * 2 + 1)
    sample_rng = np.random.default_rng(seed * 2 + 2)

    curves = []
    for step in range(cfg.total_env_steps):
        if step < cfg.warmup_steps:
            action = warmup_rng.uniform(-env.arm.max_velocity,
                                        env.arm.max_velocity, env.arm.n_joints)
        else:
            action = agent.act(obs, deterministic=False,
                               seed=seed * _ACT_STRIDE + step)
        result = env.step(state, action)
        reward = result.reward if shaped else task_reward(env.coeffs, result.info)
        next_obs = env.observe(result.next_state, include_waypoints=include_wp)
        truncated = result.done and result.info["timeout"]
        buffer.add(obs, action, reward, next_obs,
                   float(result.done and not truncated))
        state, obs = result.next_state, next_obs
        if result.done:
            episode += 1
            state = env.reset(seed=seed * _EPISODE_STRIDE + episode)
            obs = env.observe(state, include_waypoints=include_wp)
        if step >= cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            agent.update(buffer.sample(cfg.batch_size, sample_rng))
        if (step + 1) % cfg.eval_interval == 0:
            point = evaluate_policy(agent, eval_env, cfg.eval_episodes,
                                    seed=_EVAL_SEED_BASE + seed,
                                    include_waypoints=include_wp)
            point["step"] = step + 1
            curves.append(point)
            if verbose:
                print(f"[{cfg.variant}] step {point['step']}: "
                      f"return {point['return_mean']:+.3f} "
                      f"goal_rate {point['goal_rate']:.2f} "
                      f"steps {point['steps_to_goal']:.1f}")
    return agent, curves


CURVE_FIELDS = ("step", "return_mean", "return_std", "goal_rate", "steps_to_goal")


def write_curves_csv(curves, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for point in curves:
            writer.writerow({k: point[k] for k in CURVE_FIELDS})


def read_curves_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{k: (int(r[k]) if k == "step" else float(r[k])) for k in CURVE_FIELDS}
            for r in rows]
