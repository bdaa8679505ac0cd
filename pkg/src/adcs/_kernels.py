"""Compiled numeric core for the VSCMG dynamics.

Configurations are passed as packed arrays (see ``SpacecraftConfig.packed``) so the
kernels stay free of Python objects.
"""

import math

import numpy as np
from numba import njit

_SMALL = 1e-6


@njit(cache=True)
def hat(v):
    K = np.zeros((3, 3))
    K[0, 1] = -v[2]
    K[0, 2] = v[1]
    K[1, 0] = v[2]
    K[1, 2] = -v[0]
    K[2, 0] = -v[1]
    K[2, 1] = v[0]
    return K


@njit(cache=True)
def expm(v):
    th2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    th = math.sqrt(th2)
    if th < _SMALL:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    K = hat(v)
    return np.eye(3) + a * K + b * (K @ K)


@njit(cache=True)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def assemble(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, gamma):
    """Locked inertia plus per-unit body-frame quantities.

    Returns ``(J, J_T, I_T, A, C, eta, r)`` where ``A``/``C`` are the gimbal
    and rotor inertias in the body frame, ``eta`` the rotor axes and ``r`` the
    rotor centre-of-mass positions.
    """
    n = gamma.shape[0]
    J = np.zeros((3 + 2 * n, 3 + 2 * n))
    J_T = Jb.copy()
    I_T = np.zeros((3, 3))
    A = np.empty((n, 3, 3))
    C = np.empty((n, 3, 3))
    eta = np.empty((n, 3))
    r = np.empty((n, 3))
    for k in range(n):
        Rg_rel = expm(gamma[k, 0] * gb[k])
        R_g = Rg_rel @ mount[k]
        R_r = R_g @ expm(gamma[k, 1] * e0[k])
        e = Rg_rel @ e0b[k]
        Ak = R_g @ Jg[k] @ R_g.T
        Ck = R_r @ Jr[k] @ R_r.T
        A[k] = Ak
        C[k] = Ck
        eta[k] = e
        r[k] = rho[k] + sigma[k] * e
        g = gb[k]
        rho_x = hat(rho[k])
        eta_x = hat(e)
        ms = mr[k] * sigma[k]
        J_c = Ak + Ck
        I_c = -ms * (rho_x @ eta_x + sigma[k] * (eta_x @ eta_x))
        J_T -= (mg[k] + mr[k]) * (rho_x @ rho_x)
        I_T += J_c + I_c - ms * (eta_x @ rho_x)
        col_a = (J_c + I_c) @ g
        col_t = Ck @ e
        i = 3 + 2 * k
        for j in range(3):
            J[j, i] = col_a[j]
            J[i, j] = col_a[j]
            J[j, i + 1] = col_t[j]
            J[i + 1, j] = col_t[j]
        # rotor translation adds m_r sigma^2 |g x eta|^2 to the gimbal-rate entry
        gxe = cross(g, e)
        J[i, i] = g @ J_c @ g + ms * sigma[k] * (gxe @ gxe)
        J[i, i + 1] = g @ col_t
        J[i + 1, i] = J[i, i + 1]
        J[i + 1, i + 1] = e @ col_t
    Lam = J_T + I_T
    for a in range(3):
        for b in range(3):
            J[a, b] = 0.5 * (Lam[a, b] + Lam[b, a])
    return J, J_T, I_T, A, C, eta, r


@njit(cache=True)
def dT_dgamma(mr, sigma, gb, A, C, eta, r, Omega, gd):
    n = gd.shape[0]
    out = np.zeros((n, 2))
    for k in range(n):
        ad = gd[k, 0]
        td = gd[k, 1]
        g = gb[k]
        e = eta[k]
        Ak = A[k]
        Ck = C[k]
        w_g = Omega + ad * g
        w_r = w_g + td * e
        g_x = hat(g)
        e_x = hat(e)
        gxe = cross(g, e)
        # d/dalpha of R X R^T is [hat(g), X]; d/dtheta of the rotor term is [hat(eta), C]
        dA = g_x @ Ak - Ak @ g_x
        dC_a = g_x @ Ck - Ck @ g_x
        dC_t = e_x @ Ck - Ck @ e_x
        v = cross(Omega, r[k]) + sigma[k] * ad * gxe
        dv = sigma[k] * (cross(Omega, gxe) + ad * cross(g, gxe))
        out[k, 0] = (
            0.5 * (w_g @ (dA @ w_g))
            + 0.5 * (w_r @ (dC_a @ w_r))
            + td * (w_r @ (Ck @ gxe))
            + mr[k] * (v @ dv)
        )
        out[k, 1] = 0.5 * (w_r @ (dC_t @ w_r))
    return out


@njit(cache=True)
def spd_solve(J, rhs):
    """Cholesky solve; returns ``(x, ok)`` with ``ok`` False if ``J`` is not PD."""
    n = J.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = J[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return np.zeros(n), False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x, True


@njit(cache=True)
def rhs(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, Pi, p, gamma, tau, M):
    """Stage derivative. Returns ``(Omega, Pi_dot, p_dot, gamma_dot, ok)``."""
    J, _, _, A, C, eta, r = assemble(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, gamma)
    n = gamma.shape[0]
    b = np.empty(3 + 2 * n)
    b[:3] = Pi
    b[3:] = p.ravel()
    chi, ok = spd_solve(J, b)
    Omega = chi[:3].copy()
    gd = chi[3:].copy().reshape((n, 2))
    Pi_dot = cross(Pi, Omega) + M
    p_dot = dT_dgamma(mr, sigma, gb, A, C, eta, r, Omega, gd) + tau
    return Omega, Pi_dot, p_dot, gd, ok


@njit(cache=True)
def step(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, R0, Pi0, p0, g0, tau, M, h):
    """One RK4 / commutator-free step with torques and external moment held constant."""
    W1, P1, Q1, G1, ok1 = rhs(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, Pi0, p0, g0, tau, M)
    W2, P2, Q2, G2, ok2 = rhs(
        Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount,
        Pi0 + 0.5 * h * P1, p0 + 0.5 * h * Q1, g0 + 0.5 * h * G1, tau, M,
    )
    W3, P3, Q3, G3, ok3 = rhs(
        Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount,
        Pi0 + 0.5 * h * P2, p0 + 0.5 * h * Q2, g0 + 0.5 * h * G2, tau, M,
    )
    W4, P4, Q4, G4, ok4 = rhs(
        Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount,
        Pi0 + h * P3, p0 + h * Q3, g0 + h * G3, tau, M,
    )
    R1 = (
        R0
        @ expm(h / 12.0 * (3.0 * W1 + 2.0 * W2 + 2.0 * W3 - W4))
        @ expm(h / 12.0 * (-W1 + 2.0 * W2 + 2.0 * W3 + 3.0 * W4))
    )
    Pi1 = Pi0 + h / 6.0 * (P1 + 2.0 * P2 + 2.0 * P3 + P4)
    p1 = p0 + h / 6.0 * (Q1 + 2.0 * Q2 + 2.0 * Q3 + Q4)
    g1 = g0 + h / 6.0 * (G1 + 2.0 * G2 + 2.0 * G3 + G4)
    return R1, Pi1, p1, g1, ok1 and ok2 and ok3 and ok4


@njit(cache=True)
def march(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, R, Pi, p, g, tau, M, h, n_steps, every):
    """Repeated :func:`step`; records the state every ``every`` steps (index 0 is the start).

    Returns ``(Rs, Pis, ps, gs, n_ok)``; ``n_ok < n_steps`` flags a singular inertia.
    """
    n_rec = n_steps // every + 1
    n = g.shape[0]
    Rs = np.empty((n_rec, 3, 3))
    Pis = np.empty((n_rec, 3))
    ps = np.empty((n_rec, n, 2))
    gs = np.empty((n_rec, n, 2))
    Rs[0] = R
    Pis[0] = Pi
    ps[0] = p
    gs[0] = g
    for i in range(1, n_steps + 1):
        R, Pi, p, g, ok = step(Jb, Jg, Jr, mg, mr, rho, sigma, gb, e0b, e0, mount, R, Pi, p, g, tau, M, h)
        if not ok:
            return Rs, Pis, ps, gs, i - 1
        err = 0.0
        RtR = R.T @ R
        for a in range(3):
            for b in range(3):
                d = RtR[a, b] - (1.0 if a == b else 0.0)
                err += d * d
        if err > 1e-24:
            # Newton iteration for the polar factor; one pass suffices this close to SO(3)
            R = 0.5 * (R + np.linalg.inv(R).T)
        if i % every == 0:
            j = i // every
            Rs[j] = R
            Pis[j] = Pi
            ps[j] = p
            gs[j] = g
    return Rs, Pis, ps, gs, n_steps
