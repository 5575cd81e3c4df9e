"""Kinematic planar serial-chain robot.

Joint positions track their command through a first-order lag with a
velocity clamp; there are no rigid-body dynamics.  Poses are (y, z) in the
cutting plane, measured from the chain base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch

DT_ROBOT = 1.0e-4


@dataclass(frozen=True)
class ChainSpec:
    link_lengths: tuple = (0.4, 0.4, 0.2)
    joint_limits: tuple = ((-math.pi, math.pi),) * 3
    joint_velocity_limit: float = math.pi
    command_lag: float = 0.002
    base: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "link_lengths", tuple(float(x) for x in self.link_lengths))
        object.__setattr__(
            self, "joint_limits", tuple((float(lo), float(hi)) for lo, hi in self.joint_limits)
        )
        object.__setattr__(self, "base", tuple(float(x) for x in self.base))
        if any(length <= 0 for length in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if len(self.joint_limits) != len(self.link_lengths):
            raise DimensionMismatch("one joint-limit interval per link is required")
        if any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint limit intervals must be non-empty")
        if not self.joint_velocity_limit > 0:
            raise ValueError("joint velocity limit must be positive")
        if not self.command_lag > 0:
            raise ValueError("command lag must be positive")

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.joint_limits])


@dataclass(frozen=True)
class RobotState:
    q: np.ndarray
    qd: np.ndarray = field(default=None)
    time: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        qd = np.zeros_like(q) if self.qd is None else np.array(self.qd, dtype=float)
        object.__setattr__(self, "qd", qd)


def _check(chain: ChainSpec, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.dof,):
        raise DimensionMismatch(f"expected {chain.dof} joint values, got shape {q.shape}")
    return q


def forward_kinematics(chain: ChainSpec, q) -> np.ndarray:
    q = _check(chain, q)
    phi = np.cumsum(q)
    lengths = np.asarray(chain.link_lengths)
    return np.array(
        [chain.base[0] + np.sum(lengths * np.cos(phi)), chain.base[1] + np.sum(lengths * np.sin(phi))]
    )


def jacobian(chain: ChainSpec, q) -> np.ndarray:
    """Planar position Jacobian; column j is d(pose)/dq_j."""
    q = _check(chain, q)
    phi = np.cumsum(q)
    lengths = np.asarray(chain.link_lengths)
    dy = -lengths * np.sin(phi)
    dz = lengths * np.cos(phi)
    # joint j moves every link from j outward
    return np.vstack([np.cumsum(dy[::-1])[::-1], np.cumsum(dz[::-1])[::-1]])


def step_robot(chain: ChainSpec, state: RobotState, q_command, dt: float) -> RobotState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    q_command = _check(chain, q_command)
    _check(chain, state.q)
    vmax = chain.joint_velocity_limit
    qd = np.clip((q_command - state.q) / chain.command_lag, -vmax, vmax)
    q = np.clip(state.q + qd * dt, chain.lower, chain.upper)
    # velocity actually realized after the joint-limit clamp
    qd = (q - state.q) / dt
    return RobotState(q=q, qd=qd, time=state.time + dt)


def knife_down_ik(chain: ChainSpec, pose, elbow_up: bool = True) -> np.ndarray:
    """Joint angles placing the tip of a 3-link chain at ``pose`` with the
    last link pointing straight down."""
    if chain.dof != 3:
        raise DimensionMismatch("knife_down_ik needs a 3-link chain")
    l1, l2, l3 = chain.link_lengths
    wy = pose[0] - chain.base[0]
    wz = pose[1] - chain.base[1] + l3
    r2 = wy * wy + wz * wz
    c2 = (r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if abs(c2) > 1:
        raise ValueError(f"pose {tuple(pose)} is out of reach")
    q2 = math.acos(c2)
    if elbow_up:
        q2 = -q2
    q1 = math.atan2(wz, wy) - math.atan2(l2 * math.sin(q2), l1 + l2 * math.cos(q2))
    q3 = -math.pi / 2 - q1 - q2
    q3 = (q3 + math.pi) % (2 * math.pi) - math.pi
    return np.array([q1, q2, q3])


def with_time(state: RobotState, time: float) -> RobotState:
    return replace(state, time=time)
