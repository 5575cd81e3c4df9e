"""Forward dynamics compliance control on a virtual copy of the chain.

The commanded Cartesian wrench drives the forward dynamics of a virtual
joint-space model, ``qdd = H^-1 J^T F_c``, and the integrated virtual joint
positions become the joint command.  J is only ever transposed.

Force convention: ``f_ext`` is the wrench the knife applies to its
surroundings, as a wrist force-torque sensor reports it.  At the force
tracking fixed point ``f_ext == f_desired``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, NonFiniteState
from .robosim import ChainSpec, forward_kinematics, jacobian

VIRTUAL_MASS = 4.0  # kg, sets the task-space damping 2*sqrt(K^c * m)
VIRTUAL_INERTIA = 1.0  # kg m^2 per joint


@dataclass(frozen=True)
class ControllerGains:
    kc: tuple = (500.0, 500.0)
    kp: float = 2.0
    kd: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kc", tuple(float(k) for k in self.kc))
        object.__setattr__(self, "kp", float(self.kp))
        object.__setattr__(self, "kd", float(self.kd))


@dataclass(frozen=True)
class GainBounds:
    kc: tuple = (200.0, 2000.0)
    kp: tuple = (2.0, 6.0)
    kd: tuple = (0.0, 0.002)

    def __post_init__(self):
        for name in ("kc", "kp", "kd"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty {name} bounds {lo}..{hi}")


@dataclass(frozen=True)
class CompliantTarget:
    x_d: tuple
    f_d: tuple = (0.0, 0.0)

    def __post_init__(self):
        x_d = np.asarray(self.x_d, dtype=float)
        f_d = np.asarray(self.f_d, dtype=float)
        if x_d.shape != (2,) or f_d.shape != (2,):
            raise DimensionMismatch("targets are planar (2 axes)")
        if not (np.all(np.isfinite(x_d)) and np.all(np.isfinite(f_d))):
            raise NonFiniteState("non-finite compliance target")
        object.__setattr__(self, "x_d", x_d)
        object.__setattr__(self, "f_d", f_d)


@dataclass(frozen=True)
class FdccState:
    q_v: np.ndarray
    qd_v: np.ndarray = field(default=None)
    f_net_prev: np.ndarray = field(default=None)
    inertia: np.ndarray = field(default=None)

    def __post_init__(self):
        q = np.array(self.q_v, dtype=float)
        object.__setattr__(self, "q_v", q)
        if self.qd_v is None:
            object.__setattr__(self, "qd_v", np.zeros_like(q))
        if self.inertia is None:
            object.__setattr__(self, "inertia", np.full(len(q), VIRTUAL_INERTIA))
        if np.any(np.asarray(self.inertia) <= 0):
            raise ValueError("virtual inertia must be positive")


def virtual_damping(kc, mass: float = VIRTUAL_MASS) -> np.ndarray:
    return 2.0 * np.sqrt(np.asarray(kc, dtype=float) * mass)


def net_force(x, xd_v, target: CompliantTarget, f_ext, kc, damping=None) -> np.ndarray:
    """``K^c (x^d - x) + (F^d - F_ext) - D_v xdot_v``."""
    x = np.asarray(x, dtype=float)
    xd_v = np.asarray(xd_v, dtype=float)
    f_ext = np.asarray(f_ext, dtype=float)
    kc = np.asarray(kc, dtype=float)
    for arr in (x, xd_v, f_ext, kc):
        if arr.shape != (2,):
            raise DimensionMismatch(f"expected a planar 2-vector, got shape {arr.shape}")
    if damping is None:
        damping = virtual_damping(kc)
    return kc * (target.x_d - x) + (target.f_d - f_ext) - damping * xd_v


def fdcc_step(
    state: FdccState,
    chain: ChainSpec,
    target: CompliantTarget,
    f_ext,
    gains: ControllerGains,
    dt: float,
) -> tuple[FdccState, np.ndarray]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if len(state.q_v) != chain.dof:
        raise DimensionMismatch("virtual model and chain disagree on joint count")
    jac = jacobian(chain, state.q_v)
    x = forward_kinematics(chain, state.q_v)
    f_net = net_force(x, jac @ state.qd_v, target, f_ext, gains.kc)
    prev = f_net if state.f_net_prev is None else state.f_net_prev
    f_c = gains.kp * f_net + gains.kd * (f_net - prev) / dt
    qdd = (jac.T @ f_c) / state.inertia
    qd = state.qd_v + qdd * dt
    q = state.q_v + qd * dt
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise NonFiniteState("virtual model diverged")
    new = replace(state, q_v=q, qd_v=qd, f_net_prev=f_net)
    return new, q.copy()


def validate_gains(gains: ControllerGains, bounds: GainBounds) -> tuple[ControllerGains, list]:
    """Clamp ``gains`` into ``bounds``; also return the names of clamped fields."""
    clamped = []
    lo, hi = bounds.kc
    kc = []
    for axis, k in zip("yz", gains.kc):
        k2 = min(max(k, lo), hi) if math.isfinite(k) else lo
        if k2 != k:
            clamped.append(f"kc_{axis}")
        kc.append(k2)
    out = {}
    for name in ("kp", "kd"):
        value = getattr(gains, name)
        lo, hi = getattr(bounds, name)
        v2 = min(max(value, lo), hi) if math.isfinite(value) else lo
        if v2 != value:
            clamped.append(name)
        out[name] = v2
    return ControllerGains(kc=tuple(kc), **out), clamped
