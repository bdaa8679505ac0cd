import numpy as np
import pytest

from adcs.dynamics import SpacecraftConfig, SpacecraftState, VscmgParams
from adcs.so3 import exp_so3


def random_spd(rng, scale):
    A = rng.normal(size=(3, 3))
    return scale * (A @ A.T + 2.0 * np.eye(3))


def random_unit(rng, sigma, scale=1e-3, axisymmetric=False):
    g = rng.normal(size=3)
    g /= np.linalg.norm(g)
    e = np.cross(g, rng.normal(size=3))
    e /= np.linalg.norm(e)
    if axisymmetric:
        # rotor inertia symmetric about eta0: I_t (I - e e^T) + I_s e e^T
        J_r = scale * (2.0 * (np.eye(3) - np.outer(e, e)) + 3.0 * np.outer(e, e))
    else:
        J_r = random_spd(rng, scale)
    return VscmgParams(
        J_g=random_spd(rng, scale),
        J_r=J_r,
        m_g=rng.uniform(0.05, 0.5),
        m_r=rng.uniform(0.05, 0.5),
        rho_g=rng.normal(size=3) * 0.1,
        sigma=sigma,
        g_axis=g,
        eta0=e,
        mount=exp_so3(rng.normal(size=3)),
    )


def random_config(rng, n=None, sigma=None, axisymmetric=False):
    n = int(rng.integers(1, 5)) if n is None else n
    units = [
        random_unit(
            rng,
            rng.uniform(-0.02, 0.02) if sigma is None else sigma,
            axisymmetric=axisymmetric,
        )
        for _ in range(n)
    ]
    return SpacecraftConfig(random_spd(rng, 0.05), units)


def random_state(rng, cfg, omega_scale=0.5, rate_scale=5.0):
    n = cfg.n
    gd = rng.normal(size=(n, 2)) * [1.0, rate_scale]
    return SpacecraftState(
        exp_so3(rng.normal(size=3)),
        rng.normal(size=3) * omega_scale,
        rng.uniform(-np.pi, np.pi, size=(n, 2)),
        gd,
    )


def multibody_energy(cfg, state):
    """Kinetic energy summed body by body from positions and velocities."""
    Om = state.Omega
    T = 0.5 * Om @ cfg.J_b @ Om
    for u, (a, th), (ad, td) in zip(cfg.vscmgs, state.gamma, state.gamma_dot):
        g = u.mount @ u.g_axis
        R_g = exp_so3(a * g) @ u.mount
        R_r = R_g @ exp_so3(th * u.eta0)
        eta = R_g @ u.eta0
        w_g = Om + ad * g
        w_r = w_g + td * eta
        T += 0.5 * w_g @ (R_g @ u.J_g @ R_g.T) @ w_g
        T += 0.5 * w_r @ (R_r @ u.J_r @ R_r.T) @ w_r
        v_g = np.cross(Om, u.rho_g)
        T += 0.5 * u.m_g * v_g @ v_g
        r = u.rho_g + u.sigma * eta
        v_r = np.cross(Om, r) + u.sigma * ad * np.cross(g, eta)
        T += 0.5 * u.m_r * v_r @ v_r
    return T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
