"""Prioritized experience replay over a ring buffer.

Priorities live in a sum tree so sampling and updates are logarithmic.
Batches are stratified: the total priority mass is cut into ``batch_size``
equal segments and one point is drawn uniformly inside each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyBuffer, ShapeMismatch


class SumTree:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.leaves = size
        self.tree = np.zeros(2 * size)

    def total(self) -> float:
        return float(self.tree[1])

    def update(self, index, value):
        idx = np.atleast_1d(np.asarray(index, dtype=np.int64)) + self.leaves
        val = np.broadcast_to(np.asarray(value, dtype=float), idx.shape)
        # duplicates: the last write wins, as with sequential assignment
        self.tree[idx] = val
        idx = np.unique(idx // 2)
        while idx[0] >= 1:
            self.tree[idx] = self.tree[2 * idx] + self.tree[2 * idx + 1]
            if idx[0] == 1:
                break
            idx = np.unique(idx // 2)

    def get(self, index) -> np.ndarray:
        return self.tree[np.asarray(index, dtype=np.int64) + self.leaves]

    def find(self, mass) -> np.ndarray:
        """Leaf index whose prefix-sum interval contains each ``mass``."""
        mass = np.array(mass, dtype=float)
        node = np.ones(mass.shape, dtype=np.int64)
        while node[0] < self.leaves:
            left = 2 * node
            go_right = mass >= self.tree[left]
            # never step into an empty right subtree because of round-off
            go_right &= self.tree[left + 1] > 0
            mass = np.where(go_right, mass - self.tree[left], mass)
            node = np.where(go_right, left + 1, left)
        return node - self.leaves


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    index: np.ndarray
    weight: np.ndarray
    prob: np.ndarray

    def __len__(self):
        return len(self.reward)


class PrioritizedReplay:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int, alpha: float = 0.6, eps: float = 1e-6):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros((capacity, action_dim), dtype=np.float32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.priority = np.zeros(capacity)
        self.tree = SumTree(capacity)
        self.size = 0
        self.cursor = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, done, priority=None):
        obs = np.asarray(obs, dtype=np.float32)
        next_obs = np.asarray(next_obs, dtype=np.float32)
        action = np.asarray(action, dtype=np.float32)
        if obs.shape != self.obs.shape[1:] or next_obs.shape != obs.shape:
            raise ShapeMismatch(f"observation shape {obs.shape} != {self.obs.shape[1:]}")
        if action.shape != self.action.shape[1:]:
            raise ShapeMismatch(f"action shape {action.shape} != {self.action.shape[1:]}")
        p = self.max_priority if priority is None else float(priority)
        if not p > 0:
            raise ValueError("priorities must be positive")
        i = self.cursor
        self.obs[i], self.next_obs[i], self.action[i] = obs, next_obs, action
        self.reward[i], self.done[i] = reward, float(done)
        self._set(np.array([i]), np.array([p]))
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def _set(self, index, priority):
        self.priority[index] = priority
        self.tree.update(index, priority**self.alpha)
        self.max_priority = max(self.max_priority, float(np.max(priority)))

    def probabilities(self) -> np.ndarray:
        scaled = self.priority[: self.size] ** self.alpha
        return scaled / scaled.sum()

    def sample(self, batch_size: int, rng: np.random.Generator, beta: float = 0.4) -> Batch:
        if self.size == 0:
            raise EmptyBuffer("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        total = self.tree.total()
        edges = np.arange(batch_size) * (total / batch_size)
        mass = np.minimum(edges + rng.random(batch_size) * (total / batch_size), np.nextafter(total, 0))
        idx = np.minimum(self.tree.find(mass), self.size - 1)
        prob = self.tree.get(idx) / total
        weight = (self.size * prob) ** (-beta)
        weight = weight / weight.max()
        return Batch(
            obs=self.obs[idx],
            action=self.action[idx],
            reward=self.reward[idx],
            next_obs=self.next_obs[idx],
            done=self.done[idx],
            index=idx,
            weight=weight.astype(np.float32),
            prob=prob,
        )

    def update_priorities(self, index, priority):
        priority = np.asarray(priority, dtype=float)
        if np.any(~(priority > 0)):
            raise ValueError("priorities must be positive")
        self._set(np.asarray(index, dtype=np.int64), priority)


def per_push(buffer: PrioritizedReplay, transition) -> int:
    return buffer.push(*transition)


def per_sample(buffer: PrioritizedReplay, batch_size: int, rng: np.random.Generator, beta: float = 0.4) -> Batch:
    return buffer.sample(batch_size, rng, beta)
