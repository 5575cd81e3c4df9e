"""Compression-spring stand-in for the cutting model.

The spring is described the way a rigid-body engine's constraint solver
would see it, by an error reduction parameter (ERP) and constraint force
mixing (CFM) at solver step ``h``.  The equivalent spring constants are

    k = erp / (cfm * h)        c = (1 - erp) / cfm

and the inverse is ``erp = h k / (h k + c)``, ``cfm = 1 / (h k + c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cutsim import (
    PARAM_BOUNDS,
    ContactForce,
    ForceProfile,
    KnifeState,
    WindowForces,
    _sigmoid,
    softplus,
)
from .errors import EmptyProfile, InvalidParam

MODEL_TAG = "baseline"
SOLVER_STEP = 1.0e-3  # s, a typical physics-engine step
BOARD_STIFFNESS = sum(PARAM_BOUNDS["contact_stiffness"]) / 2
BOARD_DAMPING = sum(PARAM_BOUNDS["contact_damping"]) / 2
DAMPING_RAMP = 5.0e-4  # m of compression over which spring damping engages


def stiffness_damping(erp: float, cfm: float, h: float) -> tuple[float, float]:
    if not (math.isfinite(cfm) and cfm > 0):
        raise InvalidParam(f"cfm must be positive, got {cfm}")
    if not (math.isfinite(h) and h > 0):
        raise InvalidParam(f"solver step must be positive, got {h}")
    if not (0 < erp <= 1):
        raise InvalidParam(f"erp must lie in (0, 1], got {erp}")
    return erp / (cfm * h), (1.0 - erp) / cfm


def erp_cfm(k: float, c: float, h: float) -> tuple[float, float]:
    if not (k > 0 and c >= 0 and h > 0):
        raise InvalidParam(f"need k > 0, c >= 0, h > 0 (got {k}, {c}, {h})")
    denom = h * k + c
    return h * k / denom, 1.0 / denom


@dataclass(frozen=True)
class SpringModel:
    erp: float
    cfm: float
    h: float
    max_compression: float
    rest_height: float
    board_stiffness: float = BOARD_STIFFNESS
    board_damping: float = BOARD_DAMPING

    def __post_init__(self):
        stiffness_damping(self.erp, self.cfm, self.h)
        if not self.max_compression > 0:
            raise InvalidParam("max_compression must be positive")
        if self.board_stiffness < 0 or self.board_damping < 0:
            raise InvalidParam("board constants must be non-negative")

    @property
    def stiffness(self) -> float:
        return stiffness_damping(self.erp, self.cfm, self.h)[0]

    @property
    def damping(self) -> float:
        return stiffness_damping(self.erp, self.cfm, self.h)[1]

    @classmethod
    def from_stiffness(cls, k, c, h, max_compression, rest_height, **board) -> "SpringModel":
        erp, cfm = erp_cfm(k, c, h)
        return cls(erp, cfm, h, max_compression, rest_height, **board)

    def as_dict(self) -> dict:
        return {
            "erp": self.erp,
            "cfm": self.cfm,
            "h": self.h,
            "max_compression": self.max_compression,
            "rest_height": self.rest_height,
            "board_stiffness": self.board_stiffness,
            "board_damping": self.board_damping,
        }


def spring_forces(model: SpringModel, z, vz, board_height: float = 0.0) -> WindowForces:
    z = np.asarray(z, dtype=float)
    vz = np.broadcast_to(np.asarray(vz, dtype=float), z.shape)
    k, c = model.stiffness, model.damping
    x_c = np.clip(model.rest_height - z, 0.0, model.max_compression)
    closing = np.maximum(0.0, -vz)
    spring = k * x_c + c * closing * np.clip(x_c / DAMPING_RAMP, 0.0, 1.0)
    board = model.board_stiffness * softplus(board_height - z) + (
        model.board_damping * closing * _sigmoid(board_height - z)
    )
    zero = np.zeros_like(z)
    return WindowForces(f_y=zero, f_z=spring + board, spring=spring, board=board)


def step_spring(model: SpringModel, knife: KnifeState, dt: float) -> ContactForce:
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = spring_forces(model, [knife.z], knife.vz)
    return ContactForce(
        f_y=0.0, f_z=float(f.f_z[0]), spring=float(f.spring[0]), friction=0.0, board=float(f.board[0])
    )


def calibrate_baseline(
    ref: ForceProfile, rest_height: float, max_compression: float, h: float = SOLVER_STEP
) -> SpringModel:
    """Spring whose full compression reproduces the reference peak force."""
    if len(ref) == 0:
        raise EmptyProfile("cannot calibrate the spring from an empty profile")
    k = ref.peak() / max_compression
    if not k > 0:
        raise EmptyProfile("reference profile carries no force")
    return SpringModel.from_stiffness(k, 0.0, h, max_compression, rest_height)


class SpringContact:
    """Bridge adapter; counts as severed once the spring bottoms out."""

    tag = MODEL_TAG

    def __init__(self, model: SpringModel, board_height: float = 0.0):
        self.model = model
        self.board_height = board_height
        self.deepest = 0.0
        self.sim_time = 0.0

    def advance(self, y, z, vy, vz, dt):
        z = np.asarray(z, dtype=float)
        forces = spring_forces(self.model, z, vz, self.board_height)
        x_c = np.clip(self.model.rest_height - z, 0.0, self.model.max_compression)
        self.deepest = max(self.deepest, float(x_c.max(initial=0.0)))
        self.sim_time += len(z) * dt
        return forces

    def severed(self):
        return self.deepest >= 0.99 * self.model.max_compression

    def damage_summary(self):
        return self.deepest / self.model.max_compression

    def set_time(self, t):
        self.sim_time = t
