"""Slicing task as an episodic MDP over the co-simulation bridge.

One agent step spans ``agent_period`` seconds (several exchange windows).
The action moves the compliance set point ``x^d`` and sets the controller
gains; the observation carries the pose error, knife velocity and jerk, the
previous action and a history of the last ``n`` window-mean wrenches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .. import cutsim
from ..baseline import SpringContact, SpringModel
from ..bridge import BridgeConfig, CoSimulation, CutContact, EpisodeTrace, _ratio
from ..cutsim import PARAM_BOUNDS, PARAM_NAMES, FoodSpec, SimParams
from ..errors import ConfigError, DimensionMismatch, EpisodeFinished, NoCalibratedItems
from ..fdcc import CompliantTarget, ControllerGains, FdccState, GainBounds, validate_gains
from ..robosim import ChainSpec, RobotState, forward_kinematics, knife_down_ik

COMPLETED = "completed"
COLLISION = "collision"
WORKSPACE = "workspace"
TIMEOUT = "timeout"
TERMINAL_KINDS = (COMPLETED, COLLISION, WORKSPACE, TIMEOUT)

ACTION_NAMES = ("dx_y", "dx_z", "kc_y", "kc_z", "kp", "kd")
WRENCH_DIM = 3  # f_y, f_z, torque about the wrist


@dataclass(frozen=True)
class Item:
    """A calibrated food item in one of the two world models."""

    name: str
    food: FoodSpec
    model: object  # SimParams for cutsim, SpringModel for the baseline
    tag: str = "cutsim"

    def __post_init__(self):
        if self.tag == "cutsim" and not isinstance(self.model, SimParams):
            raise ConfigError(f"item {self.name!r}: cutsim items need SimParams")
        if self.tag == "baseline" and not isinstance(self.model, SpringModel):
            raise ConfigError(f"item {self.name!r}: baseline items need a SpringModel")
        if self.tag not in ("cutsim", "baseline"):
            raise ConfigError(f"unknown model tag {self.tag!r}")


@dataclass(frozen=True)
class EnvConfig:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.01
    complete_reward: float = 100.0
    collision_reward: float = -100.0
    step_reward: float = -1.0
    f_max: float = 40.0
    f_scale: float = 10.0
    jerk_cap: float = 1.0e4
    reward_mode: str = "monotone"
    target_tolerance: float = 1.0e-3
    workspace_y: tuple = (-0.03, 0.03)  # relative to the slice plane
    workspace_z: tuple = (-0.02, 0.08)
    start_clearance: float = 5.0e-3
    max_steps: int = 250
    agent_period: float = 0.02
    history: int = 12
    delta_y: tuple = (-5.0e-4, 5.0e-4)
    delta_z: tuple = (-1.6e-3, 4.0e-4)
    gain_bounds: GainBounds = GainBounds()
    noise: float = 0.05
    bridge: BridgeConfig = BridgeConfig()
    chain: ChainSpec = ChainSpec(base=(-0.55, 0.10))
    items: tuple = ()

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps (T) must be at least 1")
        if self.history < 1:
            raise ConfigError("force history length must be at least 1")
        if self.reward_mode not in ("monotone", "as_printed"):
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")
        for name in ("workspace_y", "workspace_z", "delta_y", "delta_z"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ConfigError(f"{name} range is empty")
        if not 0 <= self.noise < 1:
            raise ConfigError("noise fraction must lie in [0, 1)")
        self.windows_per_step  # validates divisibility

    @property
    def windows_per_step(self) -> int:
        return _ratio(self.agent_period, "agent_period", self.bridge.exchange_period, "exchange_period")

    @property
    def action_low(self) -> np.ndarray:
        b = self.gain_bounds
        return np.array(
            [self.delta_y[0], self.delta_z[0], b.kc[0], b.kc[0], b.kp[0], b.kd[0]], dtype=float
        )

    @property
    def action_high(self) -> np.ndarray:
        b = self.gain_bounds
        return np.array(
            [self.delta_y[1], self.delta_z[1], b.kc[1], b.kc[1], b.kp[1], b.kd[1]], dtype=float
        )

    @property
    def action_dim(self) -> int:
        return len(ACTION_NAMES)

    @property
    def vector_dim(self) -> int:
        return 6 + self.action_dim


def decode_action(action, config: EnvConfig) -> np.ndarray:
    a = np.asarray(action, dtype=float)
    if a.shape != (config.action_dim,):
        raise DimensionMismatch(f"action must have {config.action_dim} entries")
    lo, hi = config.action_low, config.action_high
    return lo + (np.clip(a, -1.0, 1.0) + 1.0) * 0.5 * (hi - lo)


def encode_action(values, config: EnvConfig) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    lo, hi = config.action_low, config.action_high
    width = np.where(hi > lo, hi - lo, 1.0)
    return np.where(hi > lo, 2.0 * (v - lo) / width - 1.0, 0.0)


@dataclass(frozen=True)
class Observation:
    pose_error: np.ndarray
    velocity: np.ndarray
    jerk: np.ndarray
    prev_action: np.ndarray
    history: np.ndarray  # n x 3, newest last

    def vector(self, config: EnvConfig) -> np.ndarray:
        """Scaled non-history features fed to the networks."""
        jerk = self.jerk / config.jerk_cap
        return np.concatenate(
            [self.pose_error / 0.05, self.velocity / 0.05, jerk * 10.0, self.prev_action]
        )

    def scaled_history(self, config: EnvConfig) -> np.ndarray:
        return self.history / config.f_scale

    def flat(self, config: EnvConfig) -> np.ndarray:
        return np.concatenate([self.scaled_history(config).ravel(), self.vector(config)])


def split_flat(flat: np.ndarray, config: EnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :meth:`Observation.flat` along the last axis."""
    n = config.history * WRENCH_DIM
    hist = flat[..., :n].reshape(flat.shape[:-1] + (config.history, WRENCH_DIM))
    return hist, flat[..., n:]


def compute_reward(
    x_cut: float, f_ext, jerk, terminal_kind, config: EnvConfig, mode=None, steps_left: int = 0
) -> float:
    """Height, force and jerk shaping plus the termination penalty.

    ``steps_left`` only matters for a workspace exit, see :func:`penalty`.
    """
    mode = config.reward_mode if mode is None else mode
    force = float(np.linalg.norm(np.asarray(f_ext, dtype=float)))
    jerk_norm = min(float(np.linalg.norm(np.asarray(jerk, dtype=float))), config.jerk_cap)
    if mode == "as_printed":
        # logistic form written with exp(-F) so large forces cannot overflow
        shaped = config.w1 * math.tanh(abs(x_cut)) - config.w2 * math.exp(-force) / (1 + math.exp(-force))
    elif mode == "monotone":
        shaped = -config.w1 * math.tanh(abs(x_cut)) - config.w2 * math.tanh(force / config.f_scale)
    else:
        raise ValueError(f"unknown reward mode {mode!r}")
    return shaped - config.w3 * jerk_norm + penalty(terminal_kind, config, steps_left)


def step_cost_bound(config: EnvConfig) -> float:
    """Largest per-step cost an ordinary monotone step can carry."""
    return config.w1 + config.w2 + abs(config.step_reward)


def penalty(terminal_kind, config: EnvConfig, steps_left: int = 0) -> float:
    if terminal_kind == COMPLETED:
        return config.complete_reward
    if terminal_kind == COLLISION:
        return config.collision_reward
    if terminal_kind == WORKSPACE:
        # leaving must never be cheaper than staying until the horizon,
        # otherwise a soft lateral gain becomes an exit
        return config.collision_reward - max(0, steps_left) * step_cost_bound(config)
    return config.step_reward


def perturb_params(params: SimParams, noise: float, rng: np.random.Generator) -> SimParams:
    if noise == 0:
        return params
    x = params.as_array() * (1.0 + rng.uniform(-noise, noise, len(PARAM_NAMES)))
    lo = np.array([PARAM_BOUNDS[n][0] for n in PARAM_NAMES])
    hi = np.array([PARAM_BOUNDS[n][1] for n in PARAM_NAMES])
    return SimParams.from_array(np.clip(x, lo, hi))


def perturb_spring(model: SpringModel, noise: float, rng: np.random.Generator) -> SpringModel:
    if noise == 0:
        return model
    k = model.stiffness * (1.0 + rng.uniform(-noise, noise))
    c = model.damping * (1.0 + rng.uniform(-noise, noise))
    return SpringModel.from_stiffness(
        k, c, model.h, model.max_compression, model.rest_height,
        board_stiffness=model.board_stiffness, board_damping=model.board_damping,
    )


def build_contact(item: Item, noise: float, rng: np.random.Generator):
    if item.tag == "cutsim":
        params = perturb_params(item.model, noise, rng)
        return CutContact(cutsim.build_scene(item.food, params)), params
    model = perturb_spring(item.model, noise, rng)
    return SpringContact(model), model


@dataclass
class StepInfo:
    terminal: str | None
    item: str
    peak_force: float
    severed: bool
    damage: float


@dataclass
class SliceEnv:
    """Stateful environment; ``reset`` starts a new episode."""

    config: EnvConfig
    record: bool = False
    item: Item | None = field(default=None, init=False)
    params: object = field(default=None, init=False)
    trace: EpisodeTrace | None = field(default=None, init=False)
    done: bool = field(default=True, init=False)

    def reset(self, rng: np.random.Generator, item: Item | None = None, noise: float | None = None) -> Observation:
        cfg = self.config
        if item is None:
            if not cfg.items:
                raise NoCalibratedItems("no calibrated items registered with the environment")
            item = cfg.items[int(rng.integers(len(cfg.items)))]
        noise = cfg.noise if noise is None else noise
        contact, self.params = build_contact(item, noise, rng)
        self.item = item
        anchor = item.food.anchor_y
        start = np.array([anchor, item.food.height + cfg.start_clearance])
        q0 = knife_down_ik(cfg.chain, start)
        robot = RobotState(q=q0)
        self.sim = CoSimulation(contact, cfg.chain, robot, FdccState(q_v=q0.copy()), cfg.bridge)
        self.x_d = forward_kinematics(cfg.chain, q0)
        self.target_pose = np.array([anchor, 0.0])
        self.ws_lo = np.array([anchor + cfg.workspace_y[0], cfg.workspace_z[0]])
        self.ws_hi = np.array([anchor + cfg.workspace_y[1], cfg.workspace_z[1]])
        self.history = np.zeros((cfg.history, WRENCH_DIM))
        self.pose = self.x_d.copy()
        self.velocity = np.zeros(2)
        self.accel = np.zeros(2)
        self.jerk = np.zeros(2)
        self.prev_action = np.zeros(cfg.action_dim)
        self.steps = 0
        self.done = False
        self.trace = EpisodeTrace() if self.record else None
        return self._observe()

    def _observe(self) -> Observation:
        pose = self.sim.message.pose
        return Observation(
            pose_error=pose - self.target_pose,
            velocity=self.velocity.copy(),
            jerk=self.jerk.copy(),
            prev_action=self.prev_action.copy(),
            history=self.history.copy(),
        )

    def step(self, action) -> tuple[Observation, float, bool, StepInfo]:
        if self.done:
            raise EpisodeFinished("episode is over; call reset()")
        cfg = self.config
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        values = decode_action(a, cfg)
        self.x_d = np.clip(self.x_d + values[:2], self.ws_lo, self.ws_hi)
        gains, _ = validate_gains(
            ControllerGains(kc=tuple(values[2:4]), kp=values[4], kd=values[5]), cfg.gain_bounds
        )
        target = CompliantTarget(self.x_d)
        lever = cfg.chain.link_lengths[-1]
        peak = 0.0
        for _ in range(cfg.windows_per_step):
            row = self.sim.step(target, gains)
            f = self.sim.contact_force
            peak = max(peak, float(np.hypot(f[0], f[1])))
            # wrench the knife exerts, torque about the wrist one link above the tip
            sensor = -f
            wrench = (sensor[0], sensor[1], lever * sensor[0])
            self.history = np.vstack([self.history[1:], wrench])
            if self.trace is not None:
                self.trace.append(row, self.sim.contact.damage_summary())
        self.steps += 1

        dt = cfg.agent_period
        pose = self.sim.message.pose
        # displacement over the agent step; the instantaneous boundary
        # velocity carries contact vibration that would swamp the jerk
        velocity = (pose - self.pose) / dt
        self.pose = pose.copy()
        accel = (velocity - self.velocity) / dt
        self.jerk = (accel - self.accel) / dt
        self.velocity, self.accel = velocity, accel
        self.prev_action = a

        severed = self.sim.contact.severed()
        terminal = None
        if peak > cfg.f_max:
            terminal = COLLISION
        elif pose[1] - self.target_pose[1] <= cfg.target_tolerance and severed:
            terminal = COMPLETED
        elif np.any(pose < self.ws_lo) or np.any(pose > self.ws_hi):
            terminal = WORKSPACE
        elif self.steps >= cfg.max_steps:
            terminal = TIMEOUT
        self.done = terminal is not None
        reward = compute_reward(
            pose[1] - self.target_pose[1], (0.0, peak), self.jerk, terminal, cfg,
            steps_left=cfg.max_steps - self.steps,
        )
        info = StepInfo(terminal, self.item.name, peak, severed, self.sim.contact.damage_summary())
        return self._observe(), reward, self.done, info


def env_reset(env: SliceEnv, rng: np.random.Generator) -> Observation:
    return env.reset(rng)


def env_step(env: SliceEnv, action) -> tuple[Observation, float, bool, StepInfo]:
    return env.step(action)


def with_items(config: EnvConfig, items: Sequence[Item]) -> EnvConfig:
    return replace(config, items=tuple(items))
