"""Two-step identification of the cutting parameters from force profiles.

A univariate TPE search proposes a starting point, Adam then follows the
exact loss gradient.  Both work in the unit cube obtained by mapping each
parameter interval (log-scaled where the range spans decades) onto [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import cutsim
from .cutsim import (
    DT_CUT,
    PARAM_BOUNDS,
    PARAM_NAMES,
    ForceProfile,
    FoodSpec,
    SimParams,
    resample_profile,
)
from .errors import EmptyProfile, NonFiniteGradient

__all__ = [
    "ParamSpace",
    "Trial",
    "TpeConfig",
    "AdamConfig",
    "split_good_bad",
    "tpe_suggest",
    "random_suggest",
    "adam_refine",
    "calibrate",
    "reference_loss",
    "resample_profile",
]

LOG_SCALED = frozenset(
    {"cut_spring_stiffness", "cut_spring_softness", "contact_stiffness", "contact_friction_stiffness"}
)


@dataclass(frozen=True)
class ParamSpace:
    names: tuple = PARAM_NAMES
    lower: tuple = tuple(b[0] for b in PARAM_BOUNDS.values())
    upper: tuple = tuple(b[1] for b in PARAM_BOUNDS.values())
    log: tuple = tuple(n in LOG_SCALED for n in PARAM_NAMES)

    def __post_init__(self):
        n = len(self.names)
        if not (len(self.lower) == len(self.upper) == len(self.log) == n):
            raise ValueError("parameter space fields disagree in length")
        for name, lo, hi, lg in zip(self.names, self.lower, self.upper, self.log):
            if not lo < hi:
                raise ValueError(f"empty interval for {name}")
            if lg and lo <= 0:
                raise ValueError(f"log-scaled {name} needs a positive lower bound")

    @property
    def dim(self) -> int:
        return len(self.names)

    def _ends(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        lg = np.array(self.log, dtype=bool)
        return np.where(lg, np.log(lo), lo), np.where(lg, np.log(hi), hi), lg

    def to_unit(self, params: SimParams) -> np.ndarray:
        a, b, lg = self._ends()
        x = params.as_array()
        x = np.where(lg, np.log(np.maximum(x, 1e-300)), x)
        return (x - a) / (b - a)

    def from_unit(self, u) -> SimParams:
        a, b, lg = self._ends()
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        x = a + u * (b - a)
        x = np.where(lg, np.exp(x), x)
        # exp/log round trips can land an ulp outside the interval
        x = np.clip(x, self.lower, self.upper)
        return SimParams.from_array(x)

    def unit_jacobian(self, params: SimParams) -> np.ndarray:
        """d(raw parameter)/d(unit coordinate), per dimension."""
        a, b, lg = self._ends()
        return np.where(lg, params.as_array() * (b - a), b - a)


@dataclass(frozen=True)
class Trial:
    params: SimParams
    loss: float

    def __post_init__(self):
        if not (math.isfinite(self.loss) and self.loss >= 0):
            raise ValueError(f"trial loss must be finite and non-negative, got {self.loss}")


@dataclass(frozen=True)
class TpeConfig:
    n_startup: int = 20
    n_trials: int = 100
    gamma: float = 0.25
    n_candidates: int = 24
    bandwidth: str = "neighbor"
    prior_weight: float = 1.0

    def __post_init__(self):
        if not 0 < self.n_startup <= self.n_trials:
            raise ValueError("need 0 < n_startup <= n_trials")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be positive")
        if self.bandwidth != "neighbor":
            raise ValueError(f"unknown bandwidth rule {self.bandwidth!r}")


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    iterations: int = 200

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


# --- TPE -------------------------------------------------------------------


def split_good_bad(history: Sequence[Trial], gamma: float) -> tuple[list, list]:
    """Best ceil(gamma * n) trials and the rest; ties keep trial order."""
    order = sorted(range(len(history)), key=lambda i: (history[i].loss, i))
    n_good = min(len(history), max(1, math.ceil(gamma * len(history))))
    return [history[i] for i in order[:n_good]], [history[i] for i in order[n_good:]]


class _Parzen1d:
    """Mixture of Gaussians truncated to [0, 1], plus a broad prior component."""

    def __init__(self, points: np.ndarray, prior_weight: float):
        pts = np.asarray(points, dtype=float)
        mus = np.append(pts, 0.5)
        order = np.argsort(mus, kind="stable")
        sorted_mu = mus[order]
        # larger of the two neighbour gaps; the interval ends count as neighbours
        padded = np.concatenate([[0.0], sorted_mu, [1.0]])
        gaps = np.maximum(padded[1:-1] - padded[:-2], padded[2:] - padded[1:-1])
        n = len(mus)
        lo_bw = 1.0 / min(100.0, 1.0 + n)
        sig_sorted = np.clip(gaps, lo_bw, 1.0)
        sigmas = np.empty(n)
        sigmas[order] = sig_sorted
        sigmas[-1] = 1.0  # prior
        weights = np.ones(n)
        weights[-1] = prior_weight
        self.mu = mus
        self.sigma = sigmas
        self.weight = weights / weights.sum()
        self._lo = ndtr((0.0 - self.mu) / self.sigma)
        self._hi = ndtr((1.0 - self.mu) / self.sigma)
        self._mass = np.maximum(self._hi - self._lo, 1e-300)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = rng.choice(len(self.mu), size=size, p=self.weight)
        q = self._lo[k] + rng.random(size) * (self._hi[k] - self._lo[k])
        q = np.clip(q, 1e-16, 1 - 1e-16)
        return np.clip(self.mu[k] + self.sigma[k] * ndtri(q), 0.0, 1.0)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        z = (x[:, None] - self.mu[None, :]) / self.sigma[None, :]
        log_comp = (
            -0.5 * z * z
            - np.log(self.sigma * math.sqrt(2 * math.pi) * self._mass)[None, :]
            + np.log(self.weight)[None, :]
        )
        top = log_comp.max(axis=1, keepdims=True)
        return (top + np.log(np.exp(log_comp - top).sum(axis=1, keepdims=True)))[:, 0]


def random_suggest(space: ParamSpace, rng: np.random.Generator) -> SimParams:
    return space.from_unit(rng.random(space.dim))


def tpe_suggest(
    history: Sequence[Trial], space: ParamSpace, config: TpeConfig, rng: np.random.Generator
) -> SimParams:
    if len(history) < config.n_startup:
        return random_suggest(space, rng)
    good, bad = split_good_bad(history, config.gamma)
    ug = np.array([space.to_unit(t.params) for t in good])
    ub = np.array([space.to_unit(t.params) for t in bad]).reshape(-1, space.dim)
    cand = np.empty((config.n_candidates, space.dim))
    score = np.zeros(config.n_candidates)
    for d in range(space.dim):
        l_est = _Parzen1d(ug[:, d], config.prior_weight)
        g_est = _Parzen1d(ub[:, d], config.prior_weight)
        cand[:, d] = l_est.sample(rng, config.n_candidates)
        score += l_est.log_pdf(cand[:, d]) - g_est.log_pdf(cand[:, d])
    return space.from_unit(cand[int(np.argmax(score))])


# --- Adam ------------------------------------------------------------------


def adam_refine(
    params0: SimParams,
    grad_fn: Callable,
    space: ParamSpace = ParamSpace(),
    config: AdamConfig = AdamConfig(),
    record: list | None = None,
) -> SimParams:
    """Adam in unit-cube coordinates; returns the best iterate seen.

    ``grad_fn(params)`` returns ``(loss, gradient w.r.t. raw parameters)``.
    When ``record`` is a list, ``(unit_coords, loss)`` is appended for every
    evaluated iterate.
    """
    params0.validate()
    u = space.to_unit(params0)
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    best_params, best_loss = params0, math.inf
    params = params0
    for k in range(config.iterations + 1):
        loss, grad = grad_fn(params)
        grad = np.asarray(grad, dtype=float)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteGradient(f"non-finite loss or gradient at Adam iterate {k}")
        if record is not None:
            record.append((u.copy(), float(loss)))
        if loss < best_loss:
            best_params, best_loss = params, float(loss)
        if k == config.iterations:
            break
        g = grad * space.unit_jacobian(params)
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1 ** (k + 1))
        v_hat = v / (1 - config.beta2 ** (k + 1))
        u = np.clip(u - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon), 0.0, 1.0)
        params = space.from_unit(u)
    return best_params


# --- pipeline ----------------------------------------------------------------


def reference_loss(
    refs: Sequence[ForceProfile],
    food: FoodSpec,
    trajectory: Callable,
    params: SimParams,
    dt: float = DT_CUT,
    duration: float | None = None,
) -> float:
    total = 0.0
    for ref in refs:
        span = cutsim.default_duration(ref, dt) if duration is None else duration
        sim = cutsim.simulate_trace(cutsim.build_scene(food, params), trajectory, dt, span)
        total += cutsim.profile_loss(sim, ref)
    return total


def _loss_and_grad(refs, food, trajectory, dt, duration):
    def fn(params):
        loss, grad = 0.0, np.zeros(len(PARAM_NAMES))
        for ref in refs:
            ell, g = cutsim.loss_and_gradient(food, trajectory, ref, params, dt, duration)
            loss += ell
            grad += g
        return loss, grad

    return fn


def calibrate(
    ref_profiles: Sequence[ForceProfile],
    food: FoodSpec,
    knife_trajectory: Callable,
    space: ParamSpace = ParamSpace(),
    tpe_cfg: TpeConfig = TpeConfig(),
    adam_cfg: AdamConfig = AdamConfig(),
    seed: int = 0,
    dt: float = DT_CUT,
    duration: float | None = None,
    log: Callable | None = None,
) -> tuple[SimParams, list]:
    """TPE over ``tpe_cfg.n_trials`` simulations, then Adam from the best."""
    refs = list(ref_profiles)
    if not refs:
        raise EmptyProfile("calibration needs at least one reference profile")
    rng = np.random.default_rng(seed)
    history: list[Trial] = []
    for i in range(tpe_cfg.n_trials):
        params = tpe_suggest(history, space, tpe_cfg, rng)
        loss = reference_loss(refs, food, knife_trajectory, params, dt, duration)
        history.append(Trial(params, loss))
        if log is not None:
            log(f"trial {i:3d} loss {loss:.6g}")
    start = min(history, key=lambda t: t.loss).params
    if adam_cfg.iterations == 0:
        return start, history
    refined = adam_refine(start, _loss_and_grad(refs, food, knife_trajectory, dt, duration), space, adam_cfg)
    return refined, history
