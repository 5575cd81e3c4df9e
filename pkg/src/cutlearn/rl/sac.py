"""Soft actor-critic with twin critics, Polyak targets and PER weights."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from ..errors import EmptyBatch
from .networks import Actor, Critic, NetworkSpec
from .replay import Batch


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    auto_alpha: bool = True
    target_entropy: float | None = None  # defaults to -action_dim
    batch_size: int = 128
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    network: NetworkSpec = field(default_factory=NetworkSpec)
    per_alpha: float = 0.6
    per_beta: float = 0.4
    per_beta_final: float = 1.0
    per_eps: float = 1e-6
    buffer_size: int = 100_000
    total_steps: int = 30_000
    warmup_steps: int = 1_000
    updates_per_step: int = 1
    eval_every: int = 2_500
    eval_episodes: int = 10

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ValueError("batch and buffer sizes must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


class SacAgent:
    def __init__(self, config: SacConfig, seed: int = 0):
        torch.manual_seed(seed)
        self.config = config
        spec = config.network
        self.spec = spec
        self.actor = Actor(spec)
        self.critic1 = Critic(spec)
        self.critic2 = Critic(spec)
        self.target1 = copy.deepcopy(self.critic1).requires_grad_(False)
        self.target2 = copy.deepcopy(self.critic2).requires_grad_(False)
        self.log_alpha = torch.tensor(math.log(max(config.alpha, 1e-12)), requires_grad=True)
        # the fused CPU kernel is noticeably cheaper for these small networks
        adam = dict(foreach=False, fused=True)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=config.actor_lr, **adam)
        self.critic_opt = torch.optim.Adam(
            list(self.critic1.parameters()) + list(self.critic2.parameters()), lr=config.critic_lr, **adam
        )
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=config.alpha_lr, **adam)
        self.target_entropy = (
            -float(spec.action_dim) if config.target_entropy is None else config.target_entropy
        )
        self.generator = torch.Generator().manual_seed(seed)

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp()) if self.config.alpha > 0 else 0.0

    def split(self, flat):
        flat = torch.as_tensor(flat, dtype=torch.float32)
        if flat.dim() == 1:
            flat = flat.unsqueeze(0)
        n = self.spec.history * self.spec.wrench_dim
        hist = flat[:, :n].reshape(-1, self.spec.history, self.spec.wrench_dim)
        return hist, flat[:, n:]

    @torch.no_grad()
    def act(self, flat_obs, deterministic: bool = False) -> np.ndarray:
        hist, vec = self.split(flat_obs)
        if deterministic:
            a = self.actor.deterministic(hist, vec)
        else:
            a, _ = self.actor.sample(hist, vec, self.generator)
        return a[0].numpy().astype(float)

    def modules(self) -> dict:
        return {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "target1": self.target1,
            "target2": self.target2,
        }

    def optimizers(self) -> dict:
        return {"actor_opt": self.actor_opt, "critic_opt": self.critic_opt, "alpha_opt": self.alpha_opt}


def _polyak(target, online, tau):
    with torch.no_grad():
        for t, o in zip(target.parameters(), online.parameters()):
            t.mul_(1.0 - tau).add_(o, alpha=tau)


def td_target(agent: SacAgent, reward, next_obs, done, gamma: float) -> torch.Tensor:
    """``r + gamma (1 - done)(min Q_target - alpha log pi)`` at ``s'``."""
    reward = torch.as_tensor(reward, dtype=torch.float32)
    done = torch.as_tensor(done, dtype=torch.float32)
    if gamma == 0:
        return reward.clone()
    with torch.no_grad():
        hist, vec = agent.split(next_obs)
        a2, logp2 = agent.actor.sample(hist, vec, agent.generator)
        q_next = torch.min(agent.target1(hist, vec, a2), agent.target2(hist, vec, a2))
        alpha = agent.alpha
        return reward + gamma * (1.0 - done) * (q_next - alpha * logp2)


def sac_update(batch: Batch, agent: SacAgent, config: SacConfig | None = None) -> dict:
    config = agent.config if config is None else config
    if len(batch) == 0:
        raise EmptyBatch("SAC update needs a non-empty batch")
    hist, vec = agent.split(batch.obs)
    action = torch.as_tensor(batch.action, dtype=torch.float32)
    weight = torch.as_tensor(batch.weight, dtype=torch.float32)
    y = td_target(agent, batch.reward, batch.next_obs, batch.done, config.gamma)

    q1 = agent.critic1(hist, vec, action)
    q2 = agent.critic2(hist, vec, action)
    td1, td2 = q1 - y, q2 - y
    critic_loss = (weight * (td1.pow(2) + td2.pow(2))).mean()
    agent.critic_opt.zero_grad()
    critic_loss.backward()
    agent.critic_opt.step()

    for p in list(agent.critic1.parameters()) + list(agent.critic2.parameters()):
        p.requires_grad_(False)
    a_new, logp = agent.actor.sample(hist, vec, agent.generator)
    q_new = torch.min(agent.critic1(hist, vec, a_new), agent.critic2(hist, vec, a_new))
    alpha = agent.alpha
    actor_loss = (alpha * logp - q_new).mean()
    agent.actor_opt.zero_grad()
    actor_loss.backward()
    agent.actor_opt.step()
    for p in list(agent.critic1.parameters()) + list(agent.critic2.parameters()):
        p.requires_grad_(True)

    alpha_loss = torch.zeros(())
    if config.auto_alpha and config.alpha > 0:
        alpha_loss = -(agent.log_alpha * (logp.detach() + agent.target_entropy)).mean()
        agent.alpha_opt.zero_grad()
        alpha_loss.backward()
        agent.alpha_opt.step()

    _polyak(agent.target1, agent.critic1, config.tau)
    _polyak(agent.target2, agent.critic2, config.tau)

    td = 0.5 * (td1.detach().abs() + td2.detach().abs())
    return {
        "critic_loss": float(critic_loss.detach()),
        "actor_loss": float(actor_loss.detach()),
        "alpha_loss": float(alpha_loss.detach()),
        "alpha": agent.alpha,
        "entropy": float(-logp.detach().mean()),
        "target": y.detach().numpy(),
        "priorities": td.numpy().astype(float) + config.per_eps,
    }
