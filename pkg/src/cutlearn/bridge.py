"""Lockstep co-simulation of the cutting model and the robot.

Per exchange window k (length ``exchange_period``):

1. the robot runs ``n_robot`` substeps under compliance control, using the
   contact force published at the end of window k-1 (zero for k = 0);
2. the contact model runs ``n_cut`` substeps along the knife path
   extrapolated linearly from the pose and velocity published at the start
   of window k;
3. the robot publishes its knife pose and velocity at the end of the window
   and the contact model publishes its window-mean force.

Both halves only read messages from the previous boundary, so they can run
concurrently without changing results.  Boundary clocks are computed as
``window_index * exchange_period`` on both sides and are therefore equal.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from . import cutsim
from .cutsim import CutScene, WindowForces
from .errors import NonDivisibleTimestep, NonFiniteState
from .fdcc import CompliantTarget, ControllerGains, FdccState, fdcc_step, virtual_damping
from .robosim import ChainSpec, RobotState, forward_kinematics, jacobian, step_robot

TRACE_COLUMNS = (
    "t_s",
    "y_m",
    "z_m",
    "vy_mps",
    "vz_mps",
    "f_y_N",
    "f_z_N",
    "kc_y_Npm",
    "kc_z_Npm",
    "kp",
    "kd",
    "xd_y_m",
    "xd_z_m",
)


@dataclass(frozen=True)
class BridgeConfig:
    exchange_period: float = 2.0e-3
    dt_cut: float = cutsim.DT_CUT
    dt_robot: float = 1.0e-4
    publish: str = "mean"  # or "last"

    def __post_init__(self):
        if self.publish not in ("mean", "last"):
            raise ValueError(f"unknown force publication mode {self.publish!r}")


def _ratio(period, period_name, dt, dt_name) -> int:
    if not (period > 0 and dt > 0):
        raise NonDivisibleTimestep(period_name, period, dt_name, dt)
    n = int(round(period / dt))
    if n < 1 or not math.isclose(n * dt, period, rel_tol=1e-9, abs_tol=0.0):
        raise NonDivisibleTimestep(period_name, period, dt_name, dt)
    return n


def substep_counts(config: BridgeConfig) -> tuple[int, int]:
    n_cut = _ratio(config.exchange_period, "exchange_period", config.dt_cut, "dt_cut")
    n_robot = _ratio(config.exchange_period, "exchange_period", config.dt_robot, "dt_robot")
    return n_cut, n_robot


class ContactModel(Protocol):
    def advance(self, y, z, vy, vz, dt: float) -> WindowForces: ...

    def severed(self) -> bool: ...

    def damage_summary(self) -> float: ...


class CutContact:
    """Adapter giving a :class:`CutScene` the bridge's contact-model slot."""

    tag = "cutsim"

    def __init__(self, scene: CutScene):
        self.scene = scene

    def advance(self, y, z, vy, vz, dt):
        return cutsim.advance(self.scene, z, vy, vz, dt)

    def severed(self):
        return self.scene.severed()

    def damage_summary(self):
        return float(np.mean(self.scene.damage))

    @property
    def sim_time(self):
        return self.scene.sim_time

    def set_time(self, t):
        self.scene.sim_time = t


class RigidWall:
    """Linear penalty wall below ``height``; used to probe the controller."""

    tag = "wall"

    def __init__(self, height: float = 0.0, stiffness: float = 5.0e4):
        self.height = height
        self.stiffness = stiffness

    def advance(self, y, z, vy, vz, dt):
        z = np.asarray(z, dtype=float)
        f_z = self.stiffness * np.maximum(0.0, self.height - z)
        zero = np.zeros_like(f_z)
        return WindowForces(f_y=zero, f_z=f_z, spring=zero, board=f_z)

    def severed(self):
        return True

    def damage_summary(self):
        return 0.0


@dataclass(frozen=True)
class KnifeMessage:
    pose: np.ndarray
    velocity: np.ndarray


@dataclass
class EpisodeTrace:
    records: list = field(default_factory=list)
    damage: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, row, damage):
        self.records.append(tuple(float(v) for v in row))
        self.damage.append(float(damage))

    def extend(self, other: "EpisodeTrace"):
        self.records.extend(other.records)
        self.damage.extend(other.damage)

    def as_array(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, len(TRACE_COLUMNS)))
        return np.array(self.records)

    def column(self, name) -> np.ndarray:
        return self.as_array()[:, TRACE_COLUMNS.index(name)]


def knife_message(chain: ChainSpec, robot: RobotState) -> KnifeMessage:
    pose = forward_kinematics(chain, robot.q)
    return KnifeMessage(pose=pose, velocity=jacobian(chain, robot.q) @ robot.qd)


class CoSimulation:
    """Stateful lockstep loop; see the module docstring for the ordering."""

    def __init__(
        self,
        contact: ContactModel,
        chain: ChainSpec,
        robot: RobotState,
        controller: FdccState,
        config: BridgeConfig = BridgeConfig(),
        workers: int = 1,
        fast: bool = True,
    ):
        self.fast = fast
        self.contact = contact
        self.chain = chain
        self.robot = robot
        self.controller = controller
        self.config = config
        self.n_cut, self.n_robot = substep_counts(config)
        self.window = 0
        self.message = knife_message(chain, robot)
        self.contact_force = np.zeros(2)
        self.workers = workers
        self._pool = ThreadPoolExecutor(max_workers=1) if workers > 1 else None
        self._set_clocks()

    @property
    def time(self) -> float:
        return self.window * self.config.exchange_period

    @property
    def robot_time(self) -> float:
        return self.robot.time

    @property
    def cut_time(self) -> float:
        return getattr(self.contact, "sim_time", self.time)

    def sensor_force(self) -> np.ndarray:
        """Wrench the knife applies to its surroundings (controller input)."""
        return -self.contact_force

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _set_clocks(self):
        t = self.time
        self.robot = replace(self.robot, time=t)
        if hasattr(self.contact, "set_time"):
            self.contact.set_time(t)

    def _run_robot(self, target, gains):
        f_ext = self.sensor_force()
        dt = self.config.dt_robot
        if self.fast:
            return self._run_robot_compiled(target, gains, f_ext, dt)
        robot, ctrl = self.robot, self.controller
        for _ in range(self.n_robot):
            ctrl, q_cmd = fdcc_step(ctrl, self.chain, target, f_ext, gains, dt)
            robot = step_robot(self.chain, robot, q_cmd, dt)
        return robot, ctrl

    def _run_robot_compiled(self, target, gains, f_ext, dt):
        from ._fastloop import robot_window

        chain, robot, ctrl = self.chain, self.robot, self.controller
        kc = np.asarray(gains.kc, dtype=float)
        primed = ctrl.f_net_prev is not None
        fprev = ctrl.f_net_prev if primed else np.zeros(2)
        q, qd, qv, qdv, fprev = robot_window(
            robot.q, robot.qd, ctrl.q_v, ctrl.qd_v, np.asarray(fprev, dtype=float), primed,
            np.asarray(ctrl.inertia, dtype=float), np.asarray(chain.link_lengths),
            np.asarray(chain.base), chain.lower, chain.upper,
            float(chain.joint_velocity_limit), float(chain.command_lag),
            target.x_d, target.f_d, np.asarray(f_ext, dtype=float), kc,
            float(gains.kp), float(gains.kd), virtual_damping(kc), dt, self.n_robot,
        )
        if not (np.all(np.isfinite(qv)) and np.all(np.isfinite(qdv))):
            raise NonFiniteState("virtual model diverged")
        robot = RobotState(q=q, qd=qd, time=robot.time + self.n_robot * dt)
        ctrl = replace(ctrl, q_v=qv, qd_v=qdv, f_net_prev=fprev)
        return robot, ctrl

    def _run_cut(self, message: KnifeMessage):
        dt = self.config.dt_cut
        s = np.arange(self.n_cut) * dt
        y = message.pose[0] + message.velocity[0] * s
        z = message.pose[1] + message.velocity[1] * s
        forces = self.contact.advance(y, z, message.velocity[0], message.velocity[1], dt)
        if self.config.publish == "mean":
            return np.array([forces.f_y.mean(), forces.f_z.mean()])
        return np.array([forces.f_y[-1], forces.f_z[-1]])

    def step(self, target: CompliantTarget, gains: ControllerGains):
        """Advance one exchange window and return its trace row."""
        start = self.message
        t0 = self.time
        if self._pool is not None:
            future = self._pool.submit(self._run_cut, start)
            robot, ctrl = self._run_robot(target, gains)
            force = future.result()
        else:
            robot, ctrl = self._run_robot(target, gains)
            force = self._run_cut(start)
        if not np.all(np.isfinite(force)):
            raise NonFiniteState("contact force is not finite")
        self.robot, self.controller = robot, ctrl
        self.contact_force = force
        self.window += 1
        self._set_clocks()
        self.message = knife_message(self.chain, self.robot)
        row = (
            t0,
            start.pose[0],
            start.pose[1],
            start.velocity[0],
            start.velocity[1],
            force[0],
            force[1],
            gains.kc[0],
            gains.kc[1],
            gains.kp,
            gains.kd,
            target.x_d[0],
            target.x_d[1],
        )
        return row

    def run(self, windows: int, target, gains, trace: EpisodeTrace | None = None) -> EpisodeTrace:
        trace = EpisodeTrace() if trace is None else trace
        for _ in range(windows):
            row = self.step(target, gains)
            trace.append(row, self.contact.damage_summary())
        return trace


@dataclass
class CosimResult:
    robot: RobotState
    controller: FdccState
    contact: ContactModel
    time: float
    robot_time: float
    cut_time: float


def run_cosim(
    contact: ContactModel,
    chain: ChainSpec,
    robot: RobotState,
    controller_source: Callable,
    duration: float,
    config: BridgeConfig = BridgeConfig(),
    controller: FdccState | None = None,
    agent_period: float | None = None,
    workers: int = 1,
    fast: bool = True,
) -> tuple[CosimResult, EpisodeTrace]:
    """Run the coupled simulators for ``duration`` seconds.

    ``controller_source(t, sim)`` returns ``(target, gains)`` and is queried
    once per agent period, so targets and gains only change there.
    """
    period = config.exchange_period
    windows = _ratio(duration, "duration", period, "exchange_period") if duration > 0 else 0
    per_agent = 1 if agent_period is None else _ratio(agent_period, "agent_period", period, "exchange_period")
    if controller is None:
        controller = FdccState(q_v=robot.q.copy())
    sim = CoSimulation(contact, chain, robot, controller, config, workers, fast)
    trace = EpisodeTrace()
    try:
        done = 0
        while done < windows:
            target, gains = controller_source(sim.time, sim)
            k = min(per_agent, windows - done)
            sim.run(k, target, gains, trace)
            done += k
    finally:
        sim.close()
    result = CosimResult(
        robot=sim.robot,
        controller=sim.controller,
        contact=sim.contact,
        time=sim.time,
        robot_time=sim.robot_time,
        cut_time=sim.cut_time,
    )
    return result, trace


@dataclass(frozen=True)
class WindowedTrajectory:
    """Piecewise-linear knife path rebuilt from per-window messages."""

    starts: np.ndarray
    poses: np.ndarray
    velocities: np.ndarray

    @classmethod
    def from_trace(cls, trace: EpisodeTrace) -> "WindowedTrajectory":
        arr = trace.as_array()
        return cls(arr[:, 0], arr[:, 1:3], arr[:, 3:5])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.starts) - 1)
        s = t - self.starts[k]
        y = self.poses[k, 0] + self.velocities[k, 0] * s
        z = self.poses[k, 1] + self.velocities[k, 1] * s
        return y, z, self.velocities[k, 0], self.velocities[k, 1]
