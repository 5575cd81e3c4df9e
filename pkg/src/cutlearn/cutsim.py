"""Reduced-order differentiable cutting simulator.

The slice column of a food item is discretized into ``M`` cut springs anchored
at heights ``z_i = (i + 0.5) * height / M``.  A knife edge moving in the
(y, z) plane loads every spring it has passed, each spring weakens with
accumulated load until it carries nothing, the cutting board at ``z = 0``
pushes back through a smooth penalty law, and lateral motion produces a
smooth Coulomb friction force.

Every gate is a softplus so the force profile is differentiable in the six
calibration parameters.  Damage evolves as

    d_i <- 1 - (1 - d_i) * max(0, 1 - dt * k_s * p_i / (sigma * tau_d))

which is ``d_i <- min(1, d_i + dt * f_i / (sigma * tau_d))`` written in terms
of the intact fraction.  Because the knife path is an input, the intact
fraction over many substeps is a cumulative product, so whole exchange
windows are advanced with array operations.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import (
    EmptyOverlap,
    NonDivisibleTimestep,
    NonFiniteState,
    OutOfRangeGrid,
    ParamOutOfRange,
)

SOFTPLUS_BETA = 1.0e3  # 1/m
DAMAGE_TIME = 1.0e-2  # s, turns the softness force scale into a rate
DT_CUT = 1.0e-5
SEVERED = 0.99

PARAM_NAMES = (
    "cut_spring_stiffness",
    "cut_spring_softness",
    "contact_stiffness",
    "contact_damping",
    "contact_friction_stiffness",
    "contact_friction_coeff",
)

PARAM_BOUNDS = {
    "cut_spring_stiffness": (100.0, 8000.0),
    "cut_spring_softness": (10.0, 5000.0),
    "contact_stiffness": (200.0, 8000.0),
    "contact_damping": (0.1, 100.0),
    "contact_friction_stiffness": (0.001, 8000.0),
    "contact_friction_coeff": (0.45, 1.0),
}

# rows of the chunk size used when sweeping long traces
_CHUNK = 1 << 15


@dataclass(frozen=True)
class SimParams:
    cut_spring_stiffness: float
    cut_spring_softness: float
    contact_stiffness: float
    contact_damping: float
    contact_friction_stiffness: float
    contact_friction_coeff: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "SimParams":
        values = [float(v) for v in values]
        if len(values) != len(PARAM_NAMES):
            raise ValueError(f"expected {len(PARAM_NAMES)} values, got {len(values)}")
        return cls(*values)

    @classmethod
    def midpoint(cls) -> "SimParams":
        return cls(*[(lo + hi) / 2 for lo, hi in PARAM_BOUNDS.values()])

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "SimParams":
        for name in PARAM_NAMES:
            value = getattr(self, name)
            lo, hi = PARAM_BOUNDS[name]
            if not math.isfinite(value) or value < lo:
                raise ParamOutOfRange(name, value, lo, "lower")
            if value > hi:
                raise ParamOutOfRange(name, value, hi, "upper")
        return self

    def clipped(self) -> "SimParams":
        lo = np.array([b[0] for b in PARAM_BOUNDS.values()])
        hi = np.array([b[1] for b in PARAM_BOUNDS.values()])
        return SimParams.from_array(np.clip(self.as_array(), lo, hi))


@dataclass(frozen=True)
class FoodSpec:
    name: str
    height: float
    slice_column_width: float = 0.03
    spring_count: int = 16
    anchor_y: float = 0.0

    def spring_heights(self) -> np.ndarray:
        i = np.arange(self.spring_count)
        return (i + 0.5) * self.height / self.spring_count


@dataclass
class CutScene:
    food: FoodSpec
    params: SimParams
    damage: np.ndarray
    board_height: float = 0.0
    sim_time: float = 0.0

    def copy(self) -> "CutScene":
        return dataclasses.replace(self, damage=self.damage.copy())

    def severed(self, threshold: float = SEVERED) -> bool:
        return bool(np.all(self.damage >= threshold))


@dataclass(frozen=True)
class KnifeState:
    y: float
    z: float
    vy: float = 0.0
    vz: float = 0.0
    time: float = 0.0


@dataclass(frozen=True)
class ContactForce:
    f_y: float
    f_z: float
    spring: float
    friction: float
    board: float


@dataclass
class WindowForces:
    """Per-substep force components produced by :func:`advance`."""

    f_y: np.ndarray
    f_z: np.ndarray
    spring: np.ndarray
    board: np.ndarray


@dataclass
class ForceProfile:
    """Time-stamped contact force samples.

    ``force`` holds the planar wrench ``(f_y, f_z)`` per sample and ``z`` the
    knife height at the same instant.
    """

    t: np.ndarray
    force: np.ndarray
    z: np.ndarray = field(default=None)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        force = np.asarray(self.force, dtype=float)
        width = force.shape[-1] if force.ndim == 2 else 1
        self.force = force.reshape(len(self.t), width if len(self.t) == 0 else -1)
        if self.z is None:
            self.z = np.full(len(self.t), np.nan)
        self.z = np.asarray(self.z, dtype=float).reshape(-1)
        if len(self.z) != len(self.t):
            raise ValueError("z and t lengths differ")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("profile times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.force**2, axis=1))

    def peak(self) -> float:
        if len(self.t) == 0:
            return 0.0
        return float(self.magnitude().max())

    @classmethod
    def empty(cls, width: int = 2) -> "ForceProfile":
        return cls(np.zeros(0), np.zeros((0, width)), np.zeros(0))


class KnifeTrajectory(Protocol):
    def __call__(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(y, z, vy, vz)`` at the given times."""


@dataclass(frozen=True)
class LinearDescent:
    """Constant-velocity knife path that stops descending at ``z_floor``."""

    y0: float
    z0: float
    vy: float = 0.0
    vz: float = -0.02
    z_floor: float = -math.inf
    t0: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float) - self.t0
        y = self.y0 + self.vy * t
        z = self.z0 + self.vz * t
        vz = np.full_like(t, self.vz)
        if self.vz < 0 and math.isfinite(self.z_floor):
            stopped = z <= self.z_floor
            z = np.where(stopped, self.z_floor, z)
            vz = np.where(stopped, 0.0, vz)
        return y, z, np.full_like(t, self.vy), vz


def softplus(x, beta=SOFTPLUS_BETA):
    return np.logaddexp(0.0, beta * np.asarray(x, dtype=float)) / beta


def _sigmoid(x, beta=SOFTPLUS_BETA):
    # derivative of softplus_beta
    return 0.5 * (1.0 + np.tanh(0.5 * beta * np.asarray(x, dtype=float)))


def build_scene(food: FoodSpec, params: SimParams) -> CutScene:
    params.validate()
    if int(food.spring_count) < 1:
        raise ParamOutOfRange("spring_count", food.spring_count, 1, "lower")
    if not food.height > 0:
        raise ParamOutOfRange("height", food.height, 0.0, "lower")
    return CutScene(food=food, params=params, damage=np.zeros(int(food.spring_count)))


def _sweep(params, heights, board_height, intact0, z, vy, vz, dt, sens0=None):
    """Force law over a block of substeps.

    Returns the force components and the intact fraction after the block.
    With ``sens0`` (2 x M log-intact sensitivities w.r.t. spring stiffness and
    softness) it also returns the 6-column Jacobian of (f_y, f_z) per substep
    and the propagated sensitivities.
    """
    k_s, sigma, k_c, c_c, k_f, mu = params
    p = softplus(heights[None, :] - z[:, None])
    a = (dt * k_s / (sigma * DAMAGE_TIME)) * p
    g = np.maximum(0.0, 1.0 - a)
    growth = np.cumprod(g, axis=0)
    before = np.empty_like(growth)
    before[0] = 1.0
    before[1:] = growth[:-1]
    u = intact0[None, :] * before
    intact1 = intact0 * growth[-1]

    spring = k_s * np.sum(u * p, axis=1)
    rate = np.maximum(0.0, -vz) * _sigmoid(board_height - z)
    board = k_c * softplus(board_height - z) + c_c * rate
    f_z = spring + board
    slip = np.tanh(k_f * vy)
    f_y = -mu * f_z * slip
    forces = WindowForces(f_y=f_y, f_z=f_z, spring=spring, board=board)
    if sens0 is None:
        return forces, intact1

    live = g > 0
    safe_g = np.where(live, g, 1.0)
    dlog_ks = np.where(live, -(a / k_s) / safe_g, 0.0)
    dlog_sigma = np.where(live, (a / sigma) / safe_g, 0.0)
    cum_ks = np.cumsum(dlog_ks, axis=0)
    cum_sigma = np.cumsum(dlog_sigma, axis=0)
    s_ks = sens0[0][None, :] + np.vstack([np.zeros((1, len(heights))), cum_ks[:-1]])
    s_sigma = sens0[1][None, :] + np.vstack([np.zeros((1, len(heights))), cum_sigma[:-1]])
    up = u * p

    jac_z = np.zeros((len(z), 6))
    jac_z[:, 0] = np.sum(up * (1.0 + k_s * s_ks), axis=1)
    jac_z[:, 1] = k_s * np.sum(up * s_sigma, axis=1)
    jac_z[:, 2] = softplus(board_height - z)
    jac_z[:, 3] = rate
    jac_y = -mu * slip[:, None] * jac_z
    jac_y[:, 4] = -mu * f_z * (1.0 - slip**2) * vy
    jac_y[:, 5] = -f_z * slip
    sens1 = np.stack([sens0[0] + cum_ks[-1], sens0[1] + cum_sigma[-1]])
    # saturated springs carry neither force nor gradient
    sens1 = np.where(intact1[None, :] > 0, sens1, 0.0)
    return forces, intact1, jac_y, jac_z, sens1


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteState("cutting simulation produced a non-finite value")


def advance(scene: CutScene, z, vy, vz, dt: float, compiled: bool = True) -> WindowForces:
    """Advance ``scene`` over ``len(z)`` substeps of a prescribed knife path.

    Forces at substep ``n`` use the damage accumulated before that substep.
    The scene is updated in place.  ``compiled=False`` runs the array
    implementation that the gradient code shares.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    vy = np.broadcast_to(np.asarray(vy, dtype=float), z.shape)
    vz = np.broadcast_to(np.asarray(vz, dtype=float), z.shape)
    _check_finite(z, vy, vz)
    if len(z) == 0:
        zero = np.zeros(0)
        return WindowForces(zero, zero, zero, zero)
    if compiled:
        from ._fastloop import cut_window

        f_y, f_z, spring, board, intact = cut_window(
            scene.params.as_array(),
            scene.food.spring_heights(),
            float(scene.board_height),
            1.0 - scene.damage,
            z,
            np.ascontiguousarray(vy),
            np.ascontiguousarray(vz),
            float(dt),
            DAMAGE_TIME,
            SOFTPLUS_BETA,
        )
        forces = WindowForces(f_y=f_y, f_z=f_z, spring=spring, board=board)
    else:
        forces, intact = _sweep(
            scene.params.as_array(),
            scene.food.spring_heights(),
            scene.board_height,
            1.0 - scene.damage,
            z,
            vy,
            vz,
            dt,
        )
    _check_finite(forces.f_y, forces.f_z, intact)
    scene.damage = np.maximum(scene.damage, 1.0 - intact)
    scene.sim_time += len(z) * dt
    return forces


def step_cut(scene: CutScene, knife: KnifeState, dt: float) -> tuple[CutScene, ContactForce]:
    forces = advance(scene, [knife.z], knife.vy, knife.vz, dt)
    f = ContactForce(
        f_y=float(forces.f_y[0]),
        f_z=float(forces.f_z[0]),
        spring=float(forces.spring[0]),
        friction=float(forces.f_y[0]),
        board=float(forces.board[0]),
    )
    return scene, f


def step_count(duration: float, dt: float) -> int:
    if duration < 0:
        raise ValueError("duration must be non-negative")
    n = int(round(duration / dt))
    if not math.isclose(n * dt, duration, rel_tol=1e-9, abs_tol=1e-15):
        raise NonDivisibleTimestep("duration", duration, "dt", dt)
    return n


def simulate_trace(
    scene: CutScene,
    trajectory: Callable,
    dt: float = DT_CUT,
    duration: float = 0.0,
) -> ForceProfile:
    """Run ``scene`` along ``trajectory`` and record every substep.

    Samples are stamped with the time of the knife state that produced them,
    starting at ``scene.sim_time``.
    """
    n = step_count(duration, dt)
    if n == 0:
        return ForceProfile.empty()
    t_start = scene.sim_time
    times = t_start + np.arange(n) * dt
    out_f = np.empty((n, 2))
    out_z = np.empty(n)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        _, z, vy, vz = trajectory(times[lo:hi])
        forces = advance(scene, z, vy, vz, dt)
        out_f[lo:hi, 0] = forces.f_y
        out_f[lo:hi, 1] = forces.f_z
        out_z[lo:hi] = z
    scene.sim_time = t_start + n * dt
    return ForceProfile(times, out_f, out_z)


def resample_profile(profile: ForceProfile, grid) -> ForceProfile:
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if len(profile) == 0:
        raise OutOfRangeGrid("cannot resample an empty profile")
    lo, hi = profile.t[0], profile.t[-1]
    bad = (grid < lo) | (grid > hi)
    if np.any(bad):
        raise OutOfRangeGrid(
            f"grid point {grid[bad][0]!r} outside profile range [{lo!r}, {hi!r}]"
        )
    force = np.column_stack(
        [np.interp(grid, profile.t, profile.force[:, k]) for k in range(profile.force.shape[1])]
    )
    z = np.interp(grid, profile.t, profile.z)
    return ForceProfile(grid, force, z)


def _overlap(sim_t, ref_t):
    if len(sim_t) == 0 or len(ref_t) == 0:
        raise EmptyOverlap("empty profile")
    mask = (ref_t >= sim_t[0]) & (ref_t <= sim_t[-1])
    if not np.any(mask):
        raise EmptyOverlap(
            f"reference [{ref_t[0]}, {ref_t[-1]}] does not overlap simulation "
            f"[{sim_t[0]}, {sim_t[-1]}]"
        )
    return mask


def profile_loss(sim: ForceProfile, ref: ForceProfile) -> float:
    """Mean squared force-magnitude error on the reference grid."""
    mask = _overlap(sim.t, ref.t)
    grid = ref.t[mask]
    simulated = np.interp(grid, sim.t, sim.magnitude())
    residual = simulated - ref.magnitude()[mask]
    return float(np.mean(residual**2))


def default_duration(ref: ForceProfile, dt: float = DT_CUT) -> float:
    """Shortest whole number of substeps whose samples cover ``ref``."""
    return (math.ceil(ref.t[-1] / dt - 1e-9) + 1) * dt


def loss_and_gradient(
    food: FoodSpec,
    trajectory: Callable,
    ref: ForceProfile,
    params: SimParams,
    dt: float = DT_CUT,
    duration: float | None = None,
) -> tuple[float, np.ndarray]:
    """Profile loss and its exact gradient w.r.t. the six parameters.

    The scene starts undamaged at t = 0.  Forward sensitivities of the log
    intact fraction are carried through the cumulative damage product; a
    saturated spring contributes no gradient.
    """
    scene = build_scene(food, params)
    if duration is None:
        duration = default_duration(ref, dt)
    n = step_count(duration, dt)
    if n == 0:
        raise EmptyOverlap("zero-length simulation")
    theta = params.as_array()
    heights = food.spring_heights()
    times = np.arange(n) * dt
    f = np.empty((n, 2))
    jac = np.empty((n, 2, 6))
    intact = np.ones(len(heights))
    sens = np.zeros((2, len(heights)))
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        _, z, vy, vz = trajectory(times[lo:hi])
        forces, intact, jy, jz, sens = _sweep(
            theta, heights, scene.board_height, intact, z, vy, vz, dt, sens
        )
        f[lo:hi, 0] = forces.f_y
        f[lo:hi, 1] = forces.f_z
        jac[lo:hi, 0] = jy
        jac[lo:hi, 1] = jz
    _check_finite(f, jac)

    mask = _overlap(times, ref.t)
    grid = ref.t[mask]
    mag = np.sqrt(np.sum(f**2, axis=1))
    simulated = np.interp(grid, times, mag)
    residual = simulated - ref.magnitude()[mask]
    loss = float(np.mean(residual**2))

    # adjoint of linear interpolation onto the reference grid
    idx = np.clip(np.searchsorted(times, grid, side="right") - 1, 0, n - 1)
    nxt = np.minimum(idx + 1, n - 1)
    span = np.where(nxt > idx, times[nxt] - times[idx], 1.0)
    w = np.where(nxt > idx, (grid - times[idx]) / span, 0.0)
    coef = 2.0 * residual / len(grid)
    dmag = np.bincount(idx, coef * (1.0 - w), minlength=n) + np.bincount(
        nxt, coef * w, minlength=n
    )
    safe = np.where(mag > 0, mag, 1.0)
    unit = np.where(mag[:, None] > 0, f / safe[:, None], 0.0)
    dmag_dtheta = np.einsum("nk,nkp->np", unit, jac)
    grad = dmag @ dmag_dtheta
    return loss, grad


def loss_gradient(food, trajectory, ref, params, dt=DT_CUT, duration=None) -> np.ndarray:
    return loss_and_gradient(food, trajectory, ref, params, dt, duration)[1]


def force_lipschitz(
    params: SimParams, food: FoodSpec, speed: float, accel: float = 0.0, depth: float = 0.0
) -> float:
    """Upper bound on |d f_z / dt| for knife paths with |v| <= speed.

    ``depth`` bounds how far the knife goes below the board.  Spring and board
    penalties are k times a 1-Lipschitz softplus; weakening removes at most
    k_s * p * (k_s * p / (sigma * tau_d)) per spring per second; the gated
    board damping changes with the acceleration and with the gate slope.
    """
    k_s, sigma, k_c, c_c, _, _ = params.as_array()
    m = food.spring_count
    p_max = food.height + depth + math.log(2.0) / SOFTPLUS_BETA
    weakening = m * k_s**2 * p_max**2 / (sigma * DAMAGE_TIME)
    gate = SOFTPLUS_BETA / 4.0 * speed
    return (m * k_s + k_c) * speed + weakening + c_c * (accel + gate * speed)
