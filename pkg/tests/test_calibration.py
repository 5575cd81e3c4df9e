import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutlearn.calibration import (
    LOG_SCALED,
    AdamConfig,
    ParamSpace,
    TpeConfig,
    Trial,
    adam_refine,
    calibrate,
    random_suggest,
    reference_loss,
    resample_profile,
    split_good_bad,
    tpe_suggest,
)
from cutlearn.cutsim import PARAM_BOUNDS, PARAM_NAMES, FoodSpec, ForceProfile, LinearDescent, SimParams
from cutlearn.errors import EmptyProfile, NonFiniteGradient, OutOfRangeGrid

SPACE = ParamSpace()
PARAM_RANGES = {
    "cut_spring_stiffness": (100.0, 8000.0),
    "cut_spring_softness": (10.0, 5000.0),
    "contact_stiffness": (200.0, 8000.0),
    "contact_damping": (0.1, 100.0),
    "contact_friction_stiffness": (0.001, 8000.0),
    "contact_friction_coeff": (0.45, 1.0),
}


def in_range(params: SimParams) -> bool:
    return all(PARAM_RANGES[n][0] <= getattr(params, n) <= PARAM_RANGES[n][1] for n in PARAM_NAMES)


def test_space_matches_published_ranges():
    assert dict(zip(SPACE.names, zip(SPACE.lower, SPACE.upper))) == PARAM_RANGES
    assert PARAM_BOUNDS == PARAM_RANGES
    assert set(n for n, lg in zip(SPACE.names, SPACE.log) if lg) == LOG_SCALED
    assert LOG_SCALED == {
        "cut_spring_stiffness", "cut_spring_softness", "contact_stiffness", "contact_friction_stiffness"
    }


def test_unit_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = rng.uniform(size=6)
        assert np.allclose(SPACE.to_unit(SPACE.from_unit(u)), u, atol=1e-12)


def test_unit_ends_are_range_ends():
    lo, hi = SPACE.from_unit(np.zeros(6)), SPACE.from_unit(np.ones(6))
    # exp(log(x)) may differ from x in the last bit, but never leaves the box
    assert np.allclose(lo.as_array(), [b[0] for b in PARAM_RANGES.values()], rtol=1e-14, atol=0)
    assert np.allclose(hi.as_array(), [b[1] for b in PARAM_RANGES.values()], rtol=1e-14, atol=0)
    assert in_range(lo) and in_range(hi)


def test_unit_jacobian_finite_differences():
    u = np.full(6, 0.37)
    p = SPACE.from_unit(u)
    h = 1e-7
    fd = np.array(
        [
            (SPACE.from_unit(u + h * e).as_array()[k] - SPACE.from_unit(u - h * e).as_array()[k]) / (2 * h)
            for k, e in enumerate(np.eye(6))
        ]
    )
    assert np.allclose(SPACE.unit_jacobian(p), fd, rtol=1e-6)


def test_trial_rejects_bad_loss():
    with pytest.raises(ValueError):
        Trial(SimParams.midpoint(), math.nan)
    with pytest.raises(ValueError):
        Trial(SimParams.midpoint(), -1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        TpeConfig(n_startup=0)
    with pytest.raises(ValueError):
        TpeConfig(n_startup=10, n_trials=5)
    with pytest.raises(ValueError):
        TpeConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(epsilon=0.0)


# --- TPE ---------------------------------------------------------------------------


def make_history(losses):
    rng = np.random.default_rng(1)
    return [Trial(random_suggest(SPACE, rng), float(x)) for x in losses]


def test_good_set_size():
    good, bad = split_good_bad(make_history(range(20, 0, -1)), 0.25)
    assert len(good) == 5 and len(bad) == 15
    assert sorted(t.loss for t in good) == [1, 2, 3, 4, 5]


def test_empty_history_is_uniform():
    rng = np.random.default_rng(2)
    units = np.array([SPACE.to_unit(tpe_suggest([], SPACE, TpeConfig(), rng)) for _ in range(4000)])
    assert np.all((units >= 0) & (units <= 1))
    # mean and variance of U(0, 1), 4000 draws: standard errors 0.0046 and 0.0013
    assert np.allclose(units.mean(axis=0), 0.5, atol=0.02)
    assert np.allclose(units.var(axis=0), 1 / 12, atol=0.006)


@settings(max_examples=40, deadline=None)
@given(
    losses=st.lists(st.floats(0, 1e6), min_size=1, max_size=40),
    seed=st.integers(0, 2**32 - 1),
)
def test_suggestions_in_range(losses, seed):
    rng = np.random.default_rng(seed)
    cfg = TpeConfig(n_startup=1, n_trials=100)
    assert in_range(tpe_suggest(make_history(losses), SPACE, cfg, rng))


def toy_loss(params, center):
    return float(np.sum((SPACE.to_unit(params) - center) ** 2))


def best_of(suggest, center, seed, budget=100):
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(budget):
        p = suggest(history, rng)
        history.append(Trial(p, toy_loss(p, center)))
    return history


def test_tpe_beats_random_search():
    center = np.array([0.2, 0.7, 0.4, 0.9, 0.3, 0.6])
    cfg = TpeConfig()
    tpe, rnd = [], []
    for seed in range(10):
        tpe.append(min(t.loss for t in best_of(lambda h, r: tpe_suggest(h, SPACE, cfg, r), center, seed)))
        rnd.append(min(t.loss for t in best_of(lambda h, r: random_suggest(SPACE, r), center, seed)))
    assert np.median(tpe) < np.median(rnd)


def test_tpe_seeded_determinism():
    center = np.full(6, 0.3)
    cfg = TpeConfig(n_startup=5, n_trials=30)
    a = best_of(lambda h, r: tpe_suggest(h, SPACE, cfg, r), center, 7, budget=30)
    b = best_of(lambda h, r: tpe_suggest(h, SPACE, cfg, r), center, 7, budget=30)
    assert [t.params for t in a] == [t.params for t in b]


# --- Adam ----------------------------------------------------------------------------


def test_adam_zero_gradient():
    p0 = SPACE.from_unit(np.full(6, 0.3))
    out = adam_refine(p0, lambda p: (1.0, np.zeros(6)), SPACE, AdamConfig(iterations=50))
    assert out == p0


def test_adam_first_step_size():
    p0 = SPACE.from_unit(np.full(6, 0.5))
    g_unit = np.array([3.0, -2.0, 0.5, -1e-3, 7.0, -4.0])
    record = []

    def grad_fn(p):
        # constant gradient in unit coordinates, given back in raw coordinates
        return 1.0, g_unit / SPACE.unit_jacobian(p)

    adam_refine(p0, grad_fn, SPACE, AdamConfig(learning_rate=0.05, iterations=1), record)
    step = record[1][0] - record[0][0]
    assert np.allclose(step, -0.05 * np.sign(g_unit), rtol=1e-4)


def test_adam_quadratic_bowl():
    center = np.full(6, 0.5)
    start = SPACE.from_unit(np.array([0.1, 0.9, 0.2, 0.8, 0.35, 0.65]))

    def grad_fn(p):
        u = SPACE.to_unit(p)
        return float(np.sum((u - center) ** 2)), 2 * (u - center) / SPACE.unit_jacobian(p)

    out = adam_refine(start, grad_fn, SPACE, AdamConfig(learning_rate=0.05, iterations=200))
    assert np.abs(SPACE.to_unit(out) - center).max() < 1e-3


def test_adam_returns_best_iterate():
    # a bowl whose gradient lies (points uphill): Adam walks away, best stays the start
    p0 = SPACE.from_unit(np.full(6, 0.5))

    def grad_fn(p):
        u = SPACE.to_unit(p)
        return float(np.sum((u - 0.5) ** 2)), -2 * (u - 0.5 + 1e-3) / SPACE.unit_jacobian(p)

    out = adam_refine(p0, grad_fn, SPACE, AdamConfig(iterations=20))
    assert out == p0


def test_adam_stays_in_range():
    record = []
    p0 = SPACE.from_unit(np.full(6, 0.95))
    adam_refine(
        p0, lambda p: (1.0, -np.ones(6) / SPACE.unit_jacobian(p)), SPACE,
        AdamConfig(learning_rate=0.5, iterations=20), record,
    )
    for u, _ in record:
        assert np.all((u >= 0) & (u <= 1))
        assert in_range(SPACE.from_unit(u))


def test_adam_non_finite_gradient():
    with pytest.raises(NonFiniteGradient):
        adam_refine(SimParams.midpoint(), lambda p: (1.0, np.full(6, np.nan)), SPACE)


# --- pipeline ----------------------------------------------------------------------

FOOD = FoodSpec("small", 0.01, spring_count=8)
PATH = LinearDescent(0.0, 0.011, vy=0.005, vz=-0.1, z_floor=0.0)
DURATION = 0.12


def reference(params):
    from cutlearn.cutsim import build_scene, simulate_trace

    full = simulate_trace(build_scene(FOOD, params), PATH, 1e-5, DURATION)
    return ForceProfile(full.t[::50], full.force[::50], full.z[::50])


def test_degenerate_budget_returns_the_trial():
    ref = reference(SimParams(3000, 100, 3000, 10, 200, 0.6))
    params, history = calibrate(
        [ref], FOOD, PATH, SPACE, TpeConfig(n_startup=1, n_trials=1), AdamConfig(iterations=0), seed=3, duration=DURATION
    )
    assert len(history) == 1
    assert params == history[0].params
    expected = random_suggest(SPACE, np.random.default_rng(3))
    assert params == expected


def test_calibration_improves_and_is_seeded():
    truth = SimParams(3000, 100, 3000, 10, 200, 0.6)
    ref = reference(truth)
    tpe = TpeConfig(n_startup=5, n_trials=15)
    adam = AdamConfig(iterations=15)
    a, hist_a = calibrate([ref], FOOD, PATH, SPACE, tpe, adam, seed=5, duration=DURATION)
    b, hist_b = calibrate([ref], FOOD, PATH, SPACE, tpe, adam, seed=5, duration=DURATION)
    assert a == b
    assert [t.params for t in hist_a] == [t.params for t in hist_b]
    assert [t.loss for t in hist_a] == [t.loss for t in hist_b]
    best_trial = min(t.loss for t in hist_a)
    # refinement never ends above its starting point
    assert reference_loss([ref], FOOD, PATH, a, duration=DURATION) <= best_trial
    best_so_far = np.minimum.accumulate([t.loss for t in hist_a])
    assert np.all(np.diff(best_so_far) <= 0)
    assert all(in_range(t.params) for t in hist_a) and in_range(a)


def test_multiple_references_sum():
    ref1 = reference(SimParams(3000, 100, 3000, 10, 200, 0.6))
    ref2 = reference(SimParams(5000, 300, 3000, 10, 200, 0.6))
    p = SimParams.midpoint()
    both = reference_loss([ref1, ref2], FOOD, PATH, p, duration=DURATION)
    assert both == pytest.approx(
        reference_loss([ref1], FOOD, PATH, p, duration=DURATION) + reference_loss([ref2], FOOD, PATH, p, duration=DURATION),
        rel=1e-12,
    )


def test_calibrate_needs_a_reference():
    with pytest.raises(EmptyProfile):
        calibrate([], FOOD, PATH, SPACE)


# --- resampling ----------------------------------------------------------------------


def linear_profile():
    t = np.linspace(0.0, 1.0, 11)
    return ForceProfile(t, np.column_stack([2 * t, 1 - t]), 0.5 * t)


def test_resample_midpoints_exact():
    prof = linear_profile()
    mid = (prof.t[1:] + prof.t[:-1]) / 2
    out = resample_profile(prof, mid)
    assert np.allclose(out.force, np.column_stack([2 * mid, 1 - mid]), atol=1e-15)
    assert np.allclose(out.z, 0.5 * mid, atol=1e-15)


def test_resample_own_grid_identical():
    prof = linear_profile()
    out = resample_profile(prof, prof.t)
    assert np.array_equal(out.force, prof.force) and np.array_equal(out.t, prof.t)


def test_resample_out_of_range():
    with pytest.raises(OutOfRangeGrid):
        resample_profile(linear_profile(), [0.5, 1.01])
