"""Off-policy training loop and deterministic evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from ..errors import NoEpisodes
from .checkpoint import Container, agent_to_container, container_to_agent
from .env import COLLISION, COMPLETED, TIMEOUT, EnvConfig, Item, SliceEnv
from .replay import PrioritizedReplay
from .sac import SacAgent, SacConfig, sac_update

# evaluation schedule: (item, slices, slice thickness in m)
SLICE_SCHEDULE = (
    ("cucumber", 15, 0.005),
    ("tomato", 5, 0.005),
    ("potato", 10, 0.003),
    ("carrot", 5, 0.005),
)

BOARD_BAND = 1.0e-3  # m above the board counted as board contact
CONTACT_FORCE = 0.05  # N, below this the knife is treated as free


@dataclass
class EpisodeMetrics:
    item: str
    success: bool
    terminal: str
    steps: int
    duration: float
    episode_return: float
    peak_force: float
    mean_food_force: float
    mean_board_force: float
    board_peak_force: float
    jerk_rms: float
    trace: object = None


@dataclass
class Metrics:
    episodes: list

    def __len__(self):
        return len(self.episodes)

    @property
    def success_rate(self) -> float:
        return float(np.mean([e.success for e in self.episodes]))

    @property
    def mean_return(self) -> float:
        return float(np.mean([e.episode_return for e in self.episodes]))

    def count(self, kind: str) -> int:
        return sum(e.terminal == kind for e in self.episodes)

    def items(self) -> list:
        return list(dict.fromkeys(e.item for e in self.episodes))

    def summary(self, item: str, attr: str) -> tuple[float, float, float]:
        """(median, first quartile, third quartile) of ``attr`` for ``item``."""
        vals = np.array([getattr(e, attr) for e in self.episodes if e.item == item], dtype=float)
        vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            return (math.nan, math.nan, math.nan)
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        return float(med), float(q1), float(q3)


def phase_labels(z: np.ndarray, force: np.ndarray, board_height: float = 0.0) -> np.ndarray:
    """Per-row label: 'board', 'food' or 'free'."""
    z = np.asarray(z, dtype=float)
    mag = np.hypot(force[:, 0], force[:, 1])
    labels = np.full(len(z), "free", dtype=object)
    labels[(mag > CONTACT_FORCE) & (z > board_height + BOARD_BAND)] = "food"
    labels[z <= board_height + BOARD_BAND] = "board"
    return labels


def _episode_metrics(env: SliceEnv, ret: float, steps: int, terminal: str, jerks: list) -> EpisodeMetrics:
    arr = env.trace.as_array()
    force = arr[:, 5:7]
    z = arr[:, 2]
    mag = np.hypot(force[:, 0], force[:, 1])
    labels = phase_labels(z, force)
    food = mag[labels == "food"]
    board = mag[labels == "board"]
    return EpisodeMetrics(
        item=env.item.name,
        success=terminal == COMPLETED,
        terminal=terminal,
        steps=steps,
        duration=steps * env.config.agent_period,
        episode_return=ret,
        peak_force=float(mag.max(initial=0.0)),
        mean_food_force=float(food.mean()) if len(food) else math.nan,
        mean_board_force=float(board.mean()) if len(board) else math.nan,
        # undefined, not zero, when the knife never reached the board
        board_peak_force=float(board.max()) if len(board) else math.nan,
        jerk_rms=float(np.sqrt(np.mean(np.square(jerks)))) if jerks else 0.0,
        trace=env.trace,
    )


def run_episode(policy: Callable, env: SliceEnv, rng, item: Item | None = None, noise=None) -> EpisodeMetrics:
    obs = env.reset(rng, item=item, noise=noise)
    cfg = env.config
    ret, steps, jerks = 0.0, 0, []
    while True:
        obs, r, done, info = env.step(policy(obs.flat(cfg)))
        ret += r
        steps += 1
        jerks.append(float(np.linalg.norm(obs.jerk)))
        if done:
            return _episode_metrics(env, ret, steps, info.terminal, jerks)


def evaluate(
    policy: Callable,
    env_config: EnvConfig,
    episodes: int | None = None,
    slice_schedule: Sequence | None = None,
    items: Sequence[Item] | None = None,
    seed: int = 0,
) -> Metrics:
    """Deterministic rollouts.

    Without a schedule, ``episodes`` items are drawn from the environment's
    registry.  With one, each ``(item, slices, thickness)`` entry runs
    ``slices`` episodes on the named item from ``items`` (default: the
    registry); slices of the same item differ by the randomization noise.
    """
    env = SliceEnv(env_config, record=True)
    rng = np.random.default_rng(seed)
    out = []
    if slice_schedule is None:
        if not episodes or episodes < 1:
            raise NoEpisodes("evaluation needs at least one episode")
        for _ in range(episodes):
            out.append(run_episode(policy, env, rng))
        return Metrics(out)
    registry = {it.name: it for it in (env_config.items if items is None else items)}
    for name, slices, _thickness in slice_schedule:
        if name not in registry:
            continue
        for _ in range(slices):
            out.append(run_episode(policy, env, rng, item=registry[name]))
    if not out:
        raise NoEpisodes("the slice schedule selected no episodes")
    return Metrics(out)


def deterministic_policy(agent: SacAgent) -> Callable:
    return lambda flat: agent.act(flat, deterministic=True)


@dataclass
class TrainResult:
    agent: SacAgent
    curve: list = field(default_factory=list)  # (step, mean_return, success_rate)
    episodes: list = field(default_factory=list)  # (end_step, return, terminal)
    best: Container | None = None
    final: Container | None = None
    step: int = 0


def _meta(seed, step, curve, extra):
    meta = {"seed": int(seed), "step": int(step), "curve": [list(map(float, row)) for row in curve]}
    meta.update(extra or {})
    return meta


def train(
    env_config: EnvConfig,
    sac_config: SacConfig,
    seed: int = 0,
    log: Callable | None = None,
    resume: Container | None = None,
    meta: dict | None = None,
    callback: Callable | None = None,
) -> TrainResult:
    """SAC with prioritized replay; one environment, one learner.

    Periodic deterministic evaluation appends ``(step, mean_return,
    success_rate)`` to the curve and keeps the best-scoring checkpoint.
    Resuming restores networks, optimizer moments and the curve, but starts
    with an empty replay buffer.
    """
    torch.manual_seed(seed)
    agent = SacAgent(sac_config, seed)
    start, curve = 0, []
    if resume is not None:
        container_to_agent(resume, agent)
        start = int(resume.meta.get("step", 0))
        curve = [tuple(row) for row in resume.meta.get("curve", [])]
    rng = np.random.default_rng([seed, start])
    agent.generator.manual_seed(int(rng.integers(2**62)))
    cfg = env_config
    obs_dim = cfg.history * 3 + cfg.vector_dim
    buffer = PrioritizedReplay(sac_config.buffer_size, obs_dim, cfg.action_dim, sac_config.per_alpha, sac_config.per_eps)
    env = SliceEnv(cfg)
    result = TrainResult(agent=agent, curve=curve, step=start)
    result.best = agent_to_container(agent, _meta(seed, start, curve, meta))
    best_score = -math.inf
    if sac_config.total_steps <= start:
        result.final = result.best
        return result

    obs = env.reset(rng)
    flat = obs.flat(cfg)
    ep_ret = 0.0
    warmup = start + sac_config.warmup_steps if resume is None else start
    for step in range(start, sac_config.total_steps):
        if step < warmup:
            action = rng.uniform(-1.0, 1.0, cfg.action_dim)
        else:
            action = agent.act(flat)
        obs, reward, done, info = env.step(action)
        nflat = obs.flat(cfg)
        # running out of time is not a property of the state
        terminal = done and info.terminal != TIMEOUT
        buffer.push(flat, action, reward, nflat, terminal)
        flat = nflat
        ep_ret += reward
        if done:
            result.episodes.append((step + 1, ep_ret, info.terminal))
            obs = env.reset(rng)
            flat = obs.flat(cfg)
            ep_ret = 0.0

        if step + 1 >= warmup and len(buffer) >= sac_config.batch_size:
            frac = (step + 1) / sac_config.total_steps
            beta = sac_config.per_beta + frac * (sac_config.per_beta_final - sac_config.per_beta)
            for _ in range(sac_config.updates_per_step):
                batch = buffer.sample(sac_config.batch_size, rng, beta)
                report = sac_update(batch, agent)
                buffer.update_priorities(batch.index, report["priorities"])

        if sac_config.eval_every and (step + 1) % sac_config.eval_every == 0:
            m = evaluate(
                deterministic_policy(agent), cfg, sac_config.eval_episodes, seed=seed * 1000 + step + 1
            )
            row = (step + 1, m.mean_return, m.success_rate)
            curve.append(row)
            if log is not None:
                log(
                    f"step {step + 1} eval return {m.mean_return:.2f} success {m.success_rate:.2f} "
                    f"collisions {m.count(COLLISION)} alpha {agent.alpha:.3g}"
                )
            score = (m.success_rate, m.mean_return)
            if score > (best_score if isinstance(best_score, tuple) else (-math.inf, -math.inf)):
                best_score = score
                result.best = agent_to_container(agent, _meta(seed, step + 1, curve, meta))
            if callback is not None:
                callback(step + 1, agent, m)
    result.step = sac_config.total_steps
    result.final = agent_to_container(agent, _meta(seed, result.step, curve, meta))
    return result
