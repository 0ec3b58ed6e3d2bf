"""Clipped-surrogate PPO with a diagonal Gaussian policy.

Observation: embedding of the agent's own camera frame, the effector
position, and Fourier features of the demo phase ``t / (F - 1)``. Episodes start at a uniformly
drawn demonstration state and end on early termination or at the horizon.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from scipy import stats

from .. import dataio
from ..config import RLConfig
from ..encoder import Encoder, embed_sequence
from .env import early_terminate, env_for_demo, reset_along_demonstration

log = logging.getLogger(__name__)


class PPODivergedError(RuntimeError):
    pass


def mann_kendall(series):
    """Mann-Kendall trend test as Kendall's tau of the series against time.

    Returns ``(tau, p_value)``; a constant series has no trend (tau 0, p 1).
    """
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 3 or np.all(x == x[0]):
        return 0.0, 1.0
    res = stats.kendalltau(np.arange(len(x)), x)
    return float(res.statistic), float(res.pvalue)


def phase_features(t, last: int, frequencies: int) -> np.ndarray:
    """``[p, sin(pi k p), cos(pi k p) for k = 1..frequencies]`` with ``p = min(t, last) / last``."""
    p = np.minimum(np.asarray(t, dtype=np.float64), last) / max(last, 1)
    k = np.arange(1, frequencies + 1)
    return np.concatenate([p[:, None], np.sin(np.pi * p[:, None] * k), np.cos(np.pi * p[:, None] * k)],
                          axis=1)


class GaussianPolicy(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int = 2, hidden: int = 64, init_log_std: float = -0.7):
        super().__init__()
        self.mean = nn.Sequential(nn.Linear(obs_dim, hidden), nn.Tanh(), nn.Linear(hidden, hidden),
                                  nn.Tanh(), nn.Linear(hidden, act_dim))
        self.value = nn.Sequential(nn.Linear(obs_dim, hidden), nn.Tanh(), nn.Linear(hidden, hidden),
                                   nn.Tanh(), nn.Linear(hidden, 1))
        self.log_std = nn.Parameter(torch.full((act_dim,), float(init_log_std)))
        with torch.no_grad():
            self.mean[-1].weight.mul_(0.01)
            self.mean[-1].bias.zero_()

    def dist(self, obs):
        return torch.distributions.Normal(self.mean(obs), self.log_std.exp())

    @torch.no_grad()
    def act(self, obs: np.ndarray, deterministic: bool = False, generator=None) -> np.ndarray:
        o = torch.as_tensor(obs, dtype=torch.float32)
        mu = self.mean(o)
        if deterministic:
            return mu.numpy()
        noise = torch.randn(mu.shape, generator=generator)
        return (mu + self.log_std.exp() * noise).numpy()


class RunningNorm:
    """Running mean / variance of observations (parallel-variance update)."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4

    def update(self, x):
        x = np.asarray(x, dtype=np.float64)
        m, v, n = x.mean(0), x.var(0), len(x)
        delta = m - self.mean
        tot = self.count + n
        self.mean = self.mean + delta * n / tot
        self.var = (self.var * self.count + v * n + delta ** 2 * self.count * n / tot) / tot
        self.count = tot

    def __call__(self, x):
        return ((np.asarray(x) - self.mean) / np.sqrt(self.var + 1e-8)).astype(np.float32)


@dataclass
class PPOResult:
    policy: GaussianPolicy
    normalizer: RunningNorm
    curve: list
    final_distance: float
    goal_reached: bool
    records: list = field(default_factory=list)


class _Rollout:
    """Vector of independent environments following one demonstration."""

    def __init__(self, demo, encoder, reward_fn, cfg: RLConfig, rng, max_speed):
        self.demo, self.encoder, self.reward_fn, self.cfg, self.rng = demo, encoder, reward_fn, cfg, rng
        self.envs = [env_for_demo(demo, max_speed=max_speed, slack=cfg.horizon_slack)
                     for _ in range(cfg.num_envs)]
        self.demo_states = [demo.scene_state(t) for t in range(demo.num_frames)]
        self.last = demo.num_frames - 1
        for env in self.envs:
            reset_along_demonstration(env, demo, rng)
        self.returns = np.zeros(len(self.envs))
        self.emb = self.embed(self.envs)

    def embed(self, envs):
        frames = np.stack([e.render(self.cfg.agent_view) for e in envs])
        return embed_sequence(self.encoder, dataio.normalize(frames))

    def observe(self, envs, emb):
        eff = np.stack([e.joint_angles for e in envs])
        phase = phase_features([e.t for e in envs], self.last, self.cfg.phase_frequencies)
        return np.concatenate([emb, eff, phase], axis=1)

    def step(self, actions):
        states, ts = [], []
        for env, a in zip(self.envs, actions):
            env.step(a)
            states.append(env.state)
            ts.append(env.t)
        ts = np.array(ts)
        emb = self.embed(self.envs)
        rewards = np.asarray(self.reward_fn(emb, states, ts), dtype=np.float64)
        dones = np.zeros(len(self.envs), dtype=bool)
        finished = []
        for i, env in enumerate(self.envs):
            if early_terminate(env.state, self.demo_states[min(env.t, self.last)],
                               self.cfg.terminate_distance):
                rewards[i] = 0.0
                dones[i] = True
            elif env.t >= env.horizon:
                dones[i] = True
        self.returns += rewards
        reset = np.flatnonzero(dones)
        for i in reset:
            finished.append(self.returns[i])
            self.returns[i] = 0.0
            reset_along_demonstration(self.envs[i], self.demo, self.rng)
        if len(reset):
            emb = emb.copy()
            emb[reset] = self.embed([self.envs[i] for i in reset])
        self.emb = emb
        return rewards, dones, finished


def evaluate_goal(policy: GaussianPolicy, normalizer: RunningNorm, demo: dataio.Demonstration,
                  encoder: Encoder, cfg: RLConfig, max_speed: float = 0.4):
    """Deterministic rollout from the demo's first state; returns the final
    effector distance to the demo's final effector position."""
    env = env_for_demo(demo, max_speed=max_speed, slack=cfg.horizon_slack)
    env.reset(demo.scene_state(0), 0)
    last = demo.num_frames - 1
    while env.t < env.horizon:
        emb = embed_sequence(encoder, dataio.normalize(env.render(cfg.agent_view)[None]))
        phase = phase_features([env.t], last, cfg.phase_frequencies)[0]
        obs = np.concatenate([emb[0], env.joint_angles, phase])
        env.step(policy.act(normalizer(obs[None]), deterministic=True)[0])
    target = demo.scene_state(last).eff
    return float(np.linalg.norm(env.state.eff - target))


def _gae(rewards, values, dones, last_value, gamma, lam):
    t_max, n = rewards.shape
    adv = np.zeros((t_max, n))
    gae = np.zeros(n)
    for t in reversed(range(t_max)):
        next_v = last_value if t == t_max - 1 else values[t + 1]
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * nonterm - values[t]
        gae = delta + gamma * lam * nonterm * gae
        adv[t] = gae
    return adv, adv + values


def ppo_train(demo: dataio.Demonstration, encoder: Encoder, reward_fn, cfg: RLConfig | None = None,
              seed: int = 0, max_speed: float = 0.4, out_dir=None) -> PPOResult:
    """Train a policy to imitate ``demo``; returns the policy and the per-iteration
    mean return of episodes that finished during that iteration's rollout."""
    cfg = cfg or RLConfig()
    if demo.states is None:
        raise dataio.DataError(f"{demo.demo_id}: demonstration has no state annotations")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    encoder.eval()
    roll = _Rollout(demo, encoder, reward_fn, cfg, rng, max_speed)
    obs_dim = encoder.embedding_dim + 2 + 1 + 2 * cfg.phase_frequencies
    policy = GaussianPolicy(obs_dim, 2, cfg.hidden, cfg.init_log_std)
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.learning_rate)
    norm = RunningNorm(obs_dim)
    curve, records = [], []
    log_path = Path(out_dir) / "learning_curve.jsonl" if out_dir else None
    if log_path:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("")
    t0 = time.perf_counter()
    n, T = cfg.num_envs, cfg.rollout_steps
    for it in range(cfg.iterations):
        raw_obs = np.zeros((T, n, obs_dim))
        acts = np.zeros((T, n, 2))
        rews = np.zeros((T, n))
        dones = np.zeros((T, n))
        finished = []
        for t in range(T):
            raw_obs[t] = roll.observe(roll.envs, roll.emb)
            acts[t] = policy.act(norm(raw_obs[t]), generator=gen)
            r, d, f = roll.step(acts[t])
            rews[t], dones[t] = r, d
            finished += f
        last_raw = roll.observe(roll.envs, roll.emb)
        norm.update(raw_obs.reshape(-1, obs_dim))
        obs = norm(raw_obs.reshape(-1, obs_dim)).reshape(T, n, obs_dim)
        with torch.no_grad():
            values = policy.value(torch.as_tensor(obs)).squeeze(-1).numpy()
            last_v = policy.value(torch.as_tensor(norm(last_raw))).squeeze(-1).numpy()
            old_logp = policy.dist(torch.as_tensor(obs)).log_prob(
                torch.as_tensor(acts, dtype=torch.float32)).sum(-1).numpy()
        adv, ret = _gae(rews * cfg.reward_scale, values, dones, last_v, cfg.gamma, cfg.gae_lambda)
        if not np.all(np.isfinite(adv)):
            raise PPODivergedError(
                f"non-finite advantages at iteration {it}: rewards finite={np.isfinite(rews).all()}, "
                f"values range=({np.nanmin(values):.3g}, {np.nanmax(values):.3g})")
        flat = lambda a: torch.as_tensor(a.reshape((T * n,) + a.shape[2:]), dtype=torch.float32)  # noqa: E731
        b_obs, b_act, b_logp, b_adv, b_ret = map(flat, (obs, acts, old_logp, adv, ret))
        b_adv = (b_adv - b_adv.mean()) / (b_adv.std() + 1e-8)
        for _ in range(cfg.epochs):
            perm = torch.randperm(T * n, generator=gen)
            for start in range(0, T * n, cfg.minibatch):
                idx = perm[start:start + cfg.minibatch]
                dist = policy.dist(b_obs[idx])
                logp = dist.log_prob(b_act[idx]).sum(-1)
                ratio = torch.exp(logp - b_logp[idx])
                surr = torch.min(ratio * b_adv[idx],
                                 ratio.clamp(1 - cfg.clip, 1 + cfg.clip) * b_adv[idx])
                v_loss = (policy.value(b_obs[idx]).squeeze(-1) - b_ret[idx]).pow(2).mean()
                loss = -surr.mean() + cfg.value_coef * v_loss - cfg.entropy_coef * dist.entropy().sum(-1).mean()
                opt.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
                opt.step()
        mean_ret = float(np.mean(finished)) if finished else (curve[-1] if curve else 0.0)
        curve.append(mean_ret)
        rec = {"iteration": it, "mean_return": mean_ret, "episodes": len(finished),
               "mean_reward": float(rews.mean()), "wall_time": round(time.perf_counter() - t0, 3)}
        records.append(rec)
        if log_path:
            with log_path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
    dist_final = evaluate_goal(policy, norm, demo, encoder, cfg, max_speed)
    return PPOResult(policy, norm, curve, dist_final, dist_final < cfg.goal_tolerance, records)
