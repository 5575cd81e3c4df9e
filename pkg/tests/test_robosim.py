import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutlearn.errors import DimensionMismatch
from cutlearn.robosim import (
    ChainSpec,
    RobotState,
    forward_kinematics,
    jacobian,
    knife_down_ik,
    step_robot,
)

TWO_R = ChainSpec(link_lengths=(1.0, 1.0), joint_limits=((-math.pi, math.pi),) * 2)
ONE_R = ChainSpec(link_lengths=(1.0,), joint_limits=((-math.pi, math.pi),))


def test_fk_straight():
    assert np.allclose(forward_kinematics(TWO_R, [0.0, 0.0]), [2.0, 0.0], atol=1e-15)


def test_fk_vertical():
    assert np.allclose(forward_kinematics(TWO_R, [math.pi / 2, 0.0]), [0.0, 2.0], atol=1e-15)


def test_fk_wrong_dimension():
    with pytest.raises(DimensionMismatch):
        forward_kinematics(TWO_R, [0.0, 0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        jacobian(TWO_R, [0.0])


def test_jacobian_straight():
    assert np.allclose(jacobian(TWO_R, [0.0, 0.0]), [[0.0, 0.0], [2.0, 1.0]], atol=1e-15)


def test_jacobian_one_link():
    assert np.allclose(jacobian(ONE_R, [0.0]), [[0.0], [1.0]], atol=1e-15)


def fd_jacobian(chain, q, h=1e-6):
    cols = []
    for j in range(chain.dof):
        e = np.zeros(chain.dof)
        e[j] = h
        cols.append((forward_kinematics(chain, q + e) - forward_kinematics(chain, q - e)) / (2 * h))
    return np.column_stack(cols)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    chain = ChainSpec()
    for _ in range(100):
        q = rng.uniform(-math.pi, math.pi, 3)
        assert np.abs(jacobian(chain, q) - fd_jacobian(chain, q)).max() < 1e-8


def test_equilibrium_command():
    chain = ChainSpec()
    s = RobotState(q=[0.1, -0.2, 0.3], time=1.0)
    out = step_robot(chain, s, s.q, 1e-4)
    assert np.array_equal(out.q, s.q)
    assert np.array_equal(out.qd, np.zeros(3))
    assert out.time == pytest.approx(1.0001, abs=1e-15)


def test_large_step_saturates_velocity():
    chain = ChainSpec()
    s = RobotState(q=np.zeros(3))
    out = step_robot(chain, s, [2.0, -2.0, 0.0], 1e-4)
    assert np.allclose(np.abs(out.qd[:2]), chain.joint_velocity_limit, rtol=1e-12)
    assert out.qd[2] == 0.0


def test_command_beyond_limit_stops_at_limit():
    chain = ChainSpec(joint_limits=((-1.0, 1.0),) * 3)
    s = RobotState(q=[0.9, 0.0, 0.0])
    for _ in range(2000):
        s = step_robot(chain, s, [5.0, 0.0, 0.0], 1e-4)
        assert s.q[0] <= 1.0
    assert s.q[0] == 1.0


def test_first_order_lag():
    # small step, far from the velocity limit: error decays like (1 - dt/tau)^n
    chain = ChainSpec(command_lag=0.01)
    s = RobotState(q=np.zeros(3))
    target = np.array([1e-3, 0.0, 0.0])
    n = 100
    for _ in range(n):
        s = step_robot(chain, s, target, 1e-4)
    assert s.q[0] == pytest.approx(1e-3 * (1 - (1 - 1e-4 / 0.01) ** n), rel=1e-10)


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step_robot(ChainSpec(), RobotState(q=np.zeros(3)), np.zeros(3), 0.0)


def test_chain_validation():
    with pytest.raises(ValueError):
        ChainSpec(link_lengths=(0.4, 0.0, 0.2))
    with pytest.raises(ValueError):
        ChainSpec(joint_velocity_limit=0.0)
    with pytest.raises(DimensionMismatch):
        ChainSpec(link_lengths=(0.4, 0.4))


command_seqs = st.lists(
    st.lists(st.floats(-6.0, 6.0), min_size=3, max_size=3), min_size=1, max_size=40
)


@settings(max_examples=80, deadline=None)
@given(commands=command_seqs, dt=st.sampled_from([1e-4, 1e-3, 5e-3]))
def test_limits_never_violated(commands, dt):
    chain = ChainSpec(joint_limits=((-2.0, 2.0), (-1.5, 2.5), (-3.0, 0.5)))
    s = RobotState(q=np.zeros(3))
    for cmd in commands:
        s = step_robot(chain, s, cmd, dt)
        assert np.all(s.q >= chain.lower) and np.all(s.q <= chain.upper)
        assert np.all(np.abs(s.qd) <= chain.joint_velocity_limit * (1 + 1e-12))


def test_deterministic():
    rng = np.random.default_rng(3)
    cmds = rng.uniform(-2, 2, (500, 3))

    def run():
        s = RobotState(q=np.zeros(3))
        for c in cmds:
            s = step_robot(ChainSpec(), s, c, 1e-4)
        return s

    a, b = run(), run()
    assert a.q.tobytes() == b.q.tobytes() and a.qd.tobytes() == b.qd.tobytes()


def test_knife_down_ik():
    chain = ChainSpec(base=(-0.55, 0.10))
    for pose in [(0.0, 0.0), (0.02, 0.05), (-0.03, -0.02)]:
        q = knife_down_ik(chain, pose)
        assert np.allclose(forward_kinematics(chain, q), pose, atol=1e-12)
        # last link points straight down
        assert math.sin(q.sum()) == pytest.approx(-1.0, abs=1e-12)
