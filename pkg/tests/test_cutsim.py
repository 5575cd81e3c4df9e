import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutlearn import cutsim
from cutlearn.calibration import ParamSpace
from cutlearn.cutsim import (
    DAMAGE_TIME,
    PARAM_BOUNDS,
    PARAM_NAMES,
    SOFTPLUS_BETA,
    FoodSpec,
    ForceProfile,
    KnifeState,
    LinearDescent,
    SimParams,
    advance,
    build_scene,
    force_lipschitz,
    loss_and_gradient,
    loss_gradient,
    profile_loss,
    simulate_trace,
    softplus,
    step_cut,
)
from cutlearn.errors import EmptyOverlap, NonDivisibleTimestep, NonFiniteState, ParamOutOfRange

MID = SimParams.midpoint()


def reference_softplus(x, beta=SOFTPLUS_BETA):
    # scalar form, independent of the vectorized helper
    t = beta * x
    return (t + math.log1p(math.exp(-t))) / beta if t > 0 else math.log1p(math.exp(t)) / beta


def scalar_reference(params, heights, path, dt):
    """Per-substep loop written straight from the force law.

    path rows are (z, vy, vz); returns forces (n, 2) and the final damage.
    """
    k_s, sigma, k_c, c_c, k_f, mu = params.as_array()
    d = np.zeros(len(heights))
    out = []
    for z, vy, vz in path:
        spring = 0.0
        new_d = d.copy()
        for i, zi in enumerate(heights):
            p = reference_softplus(zi - z)
            f_i = k_s * (1.0 - d[i]) * p
            spring += f_i
            new_d[i] = min(1.0, d[i] + dt * f_i / (sigma * DAMAGE_TIME))
        gate = 1.0 / (1.0 + math.exp(-SOFTPLUS_BETA * (0.0 - z)))
        board = k_c * reference_softplus(-z) + c_c * max(0.0, -vz) * gate
        f_z = spring + board
        out.append((-mu * f_z * math.tanh(k_f * vy), f_z))
        d = new_d
    return np.array(out), d


# --- build_scene ---------------------------------------------------------------


def test_build_scene_midpoint():
    scene = build_scene(FoodSpec("x", 0.04, spring_count=16), MID)
    assert scene.damage.shape == (16,)
    assert np.all(scene.damage == 0.0)
    assert scene.sim_time == 0.0


def test_build_scene_rejects_soft_spring():
    bad = SimParams(**{**MID.as_dict(), "cut_spring_stiffness": 50.0})
    with pytest.raises(ParamOutOfRange) as exc:
        build_scene(FoodSpec("x", 0.04), bad)
    assert exc.value.field == "cut_spring_stiffness"
    assert exc.value.bound == 100.0
    assert exc.value.side == "lower"


def test_build_scene_rejects_empty_discretization():
    with pytest.raises(ParamOutOfRange):
        build_scene(FoodSpec("x", 0.04, spring_count=0), MID)


@pytest.mark.parametrize("name", PARAM_NAMES)
def test_upper_bounds_checked(name):
    hi = PARAM_BOUNDS[name][1]
    bad = SimParams(**{**MID.as_dict(), name: hi * 1.5})
    with pytest.raises(ParamOutOfRange) as exc:
        bad.validate()
    assert exc.value.side == "upper"


# --- force law -------------------------------------------------------------------


def test_no_contact_far_above_food():
    scene = build_scene(FoodSpec("x", 0.04), MID)
    _, f = step_cut(scene, KnifeState(0.0, 0.10), 1e-5)
    assert abs(f.f_y) < 1e-9 and abs(f.f_z) < 1e-9


def test_linear_spring_law():
    # single spring at 1.5 mm, knife 1 mm below it
    params = SimParams(1000.0, 5000.0, 200.0, 0.1, 0.001, 0.45)
    food = FoodSpec("one", 0.003, spring_count=1)
    scene = build_scene(food, params)
    knife = KnifeState(0.0, 0.0005)
    _, f = step_cut(scene, knife, 1e-5)
    # smooth law: k_s * softplus_beta(p)
    assert f.spring == pytest.approx(1000.0 * reference_softplus(0.001), rel=1e-12)
    # the softplus never overshoots max(p, 0) by more than ln2 / beta
    assert 0.0 <= f.spring - 1.0 <= 1000.0 * math.log(2.0) / SOFTPLUS_BETA
    # hard-contact limit
    assert 1000.0 * float(softplus(0.001, beta=1e9)) == pytest.approx(1.0, abs=1e-9)


def test_severed_spring_carries_nothing():
    params = SimParams(1000.0, 100.0, 200.0, 0.1, 0.001, 0.45)
    scene = build_scene(FoodSpec("one", 0.003, spring_count=1), params)
    scene.damage[:] = 1.0
    for z in (0.0025, 0.001, 0.0005):
        forces = advance(scene, [z], 0.0, 0.0, 1e-5)
        assert forces.spring[0] == 0.0


def test_contact_force_decomposition():
    scene = build_scene(FoodSpec("x", 0.02), MID)
    forces = advance(scene, np.linspace(0.019, -0.001, 400), 0.01, -0.05, 1e-5)
    assert np.allclose(forces.f_z, forces.spring + forces.board, rtol=0, atol=1e-12)
    assert np.all(forces.board >= 0.0)
    _, f = step_cut(scene, KnifeState(0.0, 0.001, vy=0.02, vz=-0.02), 1e-5)
    assert f.friction == f.f_y
    assert f.f_z == pytest.approx(f.spring + f.board, abs=1e-12)


def test_matches_scalar_reference():
    # coarse dt so the top springs hit the clamp at 1
    params = SimParams(8000.0, 10.0, 2500.0, 8.0, 150.0, 0.6)
    food = FoodSpec("x", 0.004, spring_count=4)
    n, dt = 40, 5e-3
    z = np.linspace(0.0035, -0.0005, n)
    vy = np.full(n, 0.01)
    vz = np.full(n, -0.4)
    want_f, want_d = scalar_reference(params, food.spring_heights(), zip(z, vy, vz), dt)
    for compiled in (True, False):
        scene = build_scene(food, params)
        forces = advance(scene, z, vy, vz, dt, compiled=compiled)
        assert np.allclose(forces.f_y, want_f[:, 0], rtol=1e-9, atol=1e-12)
        assert np.allclose(forces.f_z, want_f[:, 1], rtol=1e-9, atol=1e-12)
        assert np.allclose(scene.damage, want_d, rtol=1e-9, atol=1e-12)
    # the reference actually exercised weakening and full severing
    assert want_d.max() == 1.0 and 0 < want_d.min()


def test_compiled_and_array_paths_agree():
    rng = np.random.default_rng(4)
    space = ParamSpace()
    for _ in range(5):
        params = space.from_unit(rng.uniform(size=6))
        food = FoodSpec("x", 0.03)
        z = np.linspace(0.031, -0.002, 3000)
        a, b = build_scene(food, params), build_scene(food, params)
        fa = advance(a, z, 0.02, -0.1, 1e-5, compiled=True)
        fb = advance(b, z, 0.02, -0.1, 1e-5, compiled=False)
        assert np.allclose(fa.f_z, fb.f_z, rtol=1e-12, atol=1e-12)
        assert np.allclose(fa.f_y, fb.f_y, rtol=1e-12, atol=1e-12)
        assert np.allclose(a.damage, b.damage, rtol=1e-12, atol=1e-12)


def test_non_finite_knife_rejected():
    scene = build_scene(FoodSpec("x", 0.04), MID)
    with pytest.raises(NonFiniteState):
        advance(scene, [np.nan], 0.0, 0.0, 1e-5)


def test_step_cut_rejects_bad_dt():
    scene = build_scene(FoodSpec("x", 0.04), MID)
    with pytest.raises(ValueError):
        step_cut(scene, KnifeState(0.0, 0.01), 0.0)


knife_paths = st.lists(
    st.tuples(
        st.floats(-0.005, 0.05),  # z
        st.floats(-0.1, 0.1),  # vy
        st.floats(-0.5, 0.5),  # vz
    ),
    min_size=1,
    max_size=60,
)


@settings(max_examples=60, deadline=None)
@given(path=knife_paths, unit=st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_damage_monotone_and_bounded(path, unit):
    scene = build_scene(FoodSpec("x", 0.04, spring_count=8), ParamSpace().from_unit(unit))
    prev = scene.damage.copy()
    for z, vy, vz in path:
        advance(scene, [z] * 20, vy, vz, 1e-4)
        assert np.all(scene.damage >= prev)
        assert np.all((0.0 <= scene.damage) & (scene.damage <= 1.0))
        prev = scene.damage.copy()


@settings(max_examples=60, deadline=None)
@given(path=knife_paths, unit=st.lists(st.floats(0, 1), min_size=6, max_size=6))
def test_repulsion(path, unit):
    scene = build_scene(FoodSpec("x", 0.04, spring_count=8), ParamSpace().from_unit(unit))
    for z, vy, vz in path:
        forces = advance(scene, [z] * 5, vy, -abs(vz), 1e-4)
        assert np.all(forces.board >= 0.0)
        assert np.all(forces.f_z >= 0.0)


def test_continuity_bound():
    rng = np.random.default_rng(11)
    space = ParamSpace()
    speed, dt = 0.05, 1e-5
    food = FoodSpec("x", 0.03)
    for _ in range(10):
        params = space.from_unit(rng.uniform(size=6))
        scene = build_scene(food, params)
        # constant velocity all the way; ends 2 mm into the board
        traj = LinearDescent(0.0, 0.035, vz=-speed)
        prof = simulate_trace(scene, traj, dt, 0.74)
        step = np.abs(np.diff(prof.force[:, 1]))
        bound = force_lipschitz(params, food, speed, depth=0.002)
        assert step.max() <= bound * dt


def test_simulate_trace_duration_zero():
    prof = simulate_trace(build_scene(FoodSpec("x", 0.04), MID), LinearDescent(0, 0.05), 1e-5, 0.0)
    assert len(prof) == 0


def test_simulate_trace_sample_count_and_clock():
    scene = build_scene(FoodSpec("x", 0.04), MID)
    prof = simulate_trace(scene, LinearDescent(0, 0.05), 1e-5, 0.01)
    assert len(prof) == 1000
    assert prof.t[0] == 0.0 and prof.t[-1] == pytest.approx(0.00999, abs=1e-15)
    assert scene.sim_time == pytest.approx(0.01, abs=1e-15)


def test_simulate_trace_rejects_uneven_duration():
    scene = build_scene(FoodSpec("x", 0.04), MID)
    with pytest.raises(NonDivisibleTimestep):
        simulate_trace(scene, LinearDescent(0, 0.05), 3e-5, 0.01)


def test_descent_rises_in_food_and_spikes_at_board():
    food = FoodSpec("x", 0.04)
    scene = build_scene(food, MID)
    traj = LinearDescent(0.0, 0.06, vz=-0.02, z_floor=-0.001)
    prof = simulate_trace(scene, traj, 1e-5, 3.5)
    fz = prof.force[:, 1]
    # softplus tail: 16 springs * k_s * exp(-15) / beta is far below 1e-6 N
    above = prof.z > food.height + 0.015
    assert np.abs(fz[above]).max() < 1e-6
    entering = (prof.z < food.height) & (prof.z > food.height - 0.003)
    assert fz[entering][-1] > fz[entering][0]
    in_food = (prof.z > 0.002) & (prof.z < food.height - 0.002)
    board = prof.z <= 0.0
    assert fz[board].max() > fz[in_food].max()


def test_simulate_trace_deterministic():
    def run():
        scene = build_scene(FoodSpec("x", 0.04), MID)
        return simulate_trace(scene, LinearDescent(0.0, 0.045, vy=0.01), 1e-5, 0.5)

    a, b = run(), run()
    assert a.t.tobytes() == b.t.tobytes()
    assert a.force.tobytes() == b.force.tobytes()
    assert a.z.tobytes() == b.z.tobytes()


# --- loss ---------------------------------------------------------------------------


def ramp_profile(offset=0.0, t0=0.0):
    t = t0 + np.linspace(0.0, 1.0, 101)
    return ForceProfile(t, np.column_stack([np.zeros_like(t), 3.0 * t + offset]))


def test_profile_loss_identical():
    assert profile_loss(ramp_profile(), ramp_profile()) == 0.0


def test_profile_loss_constant_offset():
    assert profile_loss(ramp_profile(1.0), ramp_profile()) == pytest.approx(1.0, abs=1e-12)


def test_profile_loss_disjoint():
    with pytest.raises(EmptyOverlap):
        profile_loss(ramp_profile(), ramp_profile(t0=5.0))


def test_force_profile_rejects_repeated_time():
    with pytest.raises(ValueError):
        ForceProfile([0.0, 0.0], [[0, 0], [0, 1]])


# --- gradient -------------------------------------------------------------------------

GRAD_FOOD = FoodSpec("g", 0.016, spring_count=16)
GRAD_PATH = LinearDescent(0.0, 0.015, vy=0.05, vz=-1.0, z_floor=-0.002)
GRAD_DT = 1e-5
GRAD_STEPS = 2000


def grad_reference():
    truth = SimParams(3000.0, 400.0, 3000.0, 20.0, 50.0, 0.7)
    scene = build_scene(GRAD_FOOD, truth)
    return simulate_trace(scene, GRAD_PATH, GRAD_DT, GRAD_STEPS * GRAD_DT)


def unit_fd_gradient(params, ref, space, h=1e-4):
    u0 = space.to_unit(params)
    out = np.empty(6)
    for k in range(6):
        up, dn = u0.copy(), u0.copy()
        up[k] += h
        dn[k] -= h
        lp = profile_loss(
            simulate_trace(build_scene(GRAD_FOOD, space.from_unit(up)), GRAD_PATH, GRAD_DT, GRAD_STEPS * GRAD_DT), ref
        )
        ln = profile_loss(
            simulate_trace(build_scene(GRAD_FOOD, space.from_unit(dn)), GRAD_PATH, GRAD_DT, GRAD_STEPS * GRAD_DT), ref
        )
        out[k] = (lp - ln) / (2 * h)
    return out


def test_gradient_matches_central_differences_single_draw():
    space = ParamSpace()
    ref = grad_reference()
    # interior point so +-h stays inside the box
    params = space.from_unit(np.full(6, 0.4))
    _, g = loss_and_gradient(GRAD_FOOD, GRAD_PATH, ref, params, GRAD_DT, GRAD_STEPS * GRAD_DT)
    analytic = g * space.unit_jacobian(params)
    fd = unit_fd_gradient(params, ref, space)
    scale = np.abs(fd).max()
    assert np.all(np.abs(analytic - fd) <= 1e-3 * np.maximum(np.abs(fd), 1e-3 * scale))


def test_gradient_zero_without_contact():
    ref = ForceProfile(np.linspace(0, 0.0199, 50), np.ones((50, 2)))
    high = LinearDescent(0.0, 0.2, vz=0.0)
    g = loss_gradient(GRAD_FOOD, high, ref, MID, GRAD_DT, 0.02)
    # only the softplus tail (exp(-184) scale) survives
    assert np.abs(g).max() < 1e-60


def test_gradient_zero_at_exact_match():
    ref = grad_reference()
    truth = SimParams(3000.0, 400.0, 3000.0, 20.0, 50.0, 0.7)
    loss, g = loss_and_gradient(GRAD_FOOD, GRAD_PATH, ref, truth, GRAD_DT, GRAD_STEPS * GRAD_DT)
    # the reference comes from the compiled sweep, so only rounding remains
    assert loss < 1e-24
    off = SimParams(3300.0, 400.0, 3000.0, 20.0, 50.0, 0.7)
    _, g_off = loss_and_gradient(GRAD_FOOD, GRAD_PATH, ref, off, GRAD_DT, GRAD_STEPS * GRAD_DT)
    assert np.abs(g).max() < 1e-9 * np.abs(g_off).max()
