"""Compiled robot window: ``n`` substeps of compliance control + joint lag.

Mirrors :func:`cutlearn.fdcc.fdcc_step` followed by
:func:`cutlearn.robosim.step_robot`; tests hold the two paths together.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _kinematics(q, lengths, base):
    n = q.shape[0]
    phi = 0.0
    sy = np.empty(n)
    cz = np.empty(n)
    for i in range(n):
        phi += q[i]
        sy[i] = -lengths[i] * np.sin(phi)
        cz[i] = lengths[i] * np.cos(phi)
    jac = np.empty((2, n))
    acc_y = 0.0
    acc_z = 0.0
    for i in range(n - 1, -1, -1):
        acc_y += sy[i]
        acc_z += cz[i]
        jac[0, i] = acc_y
        jac[1, i] = acc_z
    # tip position from the first Jacobian column: y = sum l cos, z = sum l sin
    x = np.empty(2)
    x[0] = base[0] + jac[1, 0]
    x[1] = base[1] - jac[0, 0]
    return x, jac


@njit(cache=True)
def robot_window(
    q, qd, qv, qdv, fprev, primed, inertia, lengths, base, lower, upper,
    vmax, lag, xd, fd, fext, kc, kp, kd, damping, dt, steps,
):
    q = q.copy()
    qd = qd.copy()
    qv = qv.copy()
    qdv = qdv.copy()
    fprev = fprev.copy()
    n = q.shape[0]
    fnet = np.empty(2)
    for _ in range(steps):
        x, jac = _kinematics(qv, lengths, base)
        for a in range(2):
            xdot = 0.0
            for j in range(n):
                xdot += jac[a, j] * qdv[j]
            fnet[a] = kc[a] * (xd[a] - x[a]) + (fd[a] - fext[a]) - damping[a] * xdot
        if not primed:
            fprev[0] = fnet[0]
            fprev[1] = fnet[1]
            primed = True
        fc0 = kp * fnet[0] + kd * (fnet[0] - fprev[0]) / dt
        fc1 = kp * fnet[1] + kd * (fnet[1] - fprev[1]) / dt
        fprev[0] = fnet[0]
        fprev[1] = fnet[1]
        for j in range(n):
            qdd = (jac[0, j] * fc0 + jac[1, j] * fc1) / inertia[j]
            qdv[j] = qdv[j] + qdd * dt
            qv[j] = qv[j] + qdv[j] * dt
        for j in range(n):
            v = (qv[j] - q[j]) / lag
            if v > vmax:
                v = vmax
            elif v < -vmax:
                v = -vmax
            qn = q[j] + v * dt
            if qn < lower[j]:
                qn = lower[j]
            elif qn > upper[j]:
                qn = upper[j]
            qd[j] = (qn - q[j]) / dt
            q[j] = qn
    return q, qd, qv, qdv, fprev


@njit(cache=True)
def _softplus(x, beta):
    bx = beta * x
    if bx > 0:
        return (bx + np.log1p(np.exp(-bx))) / beta
    return np.log1p(np.exp(bx)) / beta


@njit(cache=True)
def cut_window(params, heights, board_height, intact, z, vy, vz, dt, damage_time, beta):
    """Forward pass of the cutting force law; see ``cutsim._sweep``."""
    k_s = params[0]
    sigma = params[1]
    k_c = params[2]
    c_c = params[3]
    k_f = params[4]
    mu = params[5]
    n = z.shape[0]
    m = heights.shape[0]
    u = intact.copy()
    f_y = np.empty(n)
    f_z = np.empty(n)
    spring = np.empty(n)
    board = np.empty(n)
    rate_scale = dt * k_s / (sigma * damage_time)
    for t in range(n):
        total = 0.0
        for i in range(m):
            p = _softplus(heights[i] - z[t], beta)
            total += u[i] * p
            g = 1.0 - rate_scale * p
            if g < 0.0:
                g = 0.0
            u[i] = u[i] * g
        s = k_s * total
        gap = board_height - z[t]
        gate = 0.5 * (1.0 + np.tanh(0.5 * beta * gap))
        down = -vz[t] if vz[t] < 0.0 else 0.0
        b = k_c * _softplus(gap, beta) + c_c * down * gate
        spring[t] = s
        board[t] = b
        f_z[t] = s + b
        f_y[t] = -mu * (s + b) * np.tanh(k_f * vy[t])
    return f_y, f_z, spring, board, u
