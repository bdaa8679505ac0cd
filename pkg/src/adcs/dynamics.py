"""
Spacecraft with VSCMG actuators: inertia assembly, energy, momenta and propagation.

Generalized velocity layout for ``n`` units::

    chi = [Omega (3), alpha_dot_1, theta_dot_1, ..., alpha_dot_n, theta_dot_n]

Per unit, the gimbal frame is the unit (mounting) frame rotated by ``alpha``
about the gimbal axis, and the rotor frame is the gimbal frame rotated by
``theta`` about the rotor axis. The rotor centre of mass sits at
``rho_g + sigma * eta``.

Dynamics in momentum form::

    Pi_dot = Pi x Omega + M_ext
    p_dot  = dT/dgamma + tau
    R_dot  = R hat(Omega)
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as _k
from .errors import SingularInertia
from .so3 import as_rotation, project_to_so3

ExternalMoment = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def _spd(M, name):
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not np.allclose(M, M.T, atol=1e-12, rtol=0):
        raise ValueError(f"{name} must be a symmetric 3x3 matrix")
    if np.linalg.eigvalsh(M)[0] <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return M


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a unit 3-vector")
    return v


@dataclass(frozen=True)
class VscmgParams:
    """Geometry and mass properties of one VSCMG unit.

    ``J_g`` and ``J_r`` are expressed in the gimbal and rotor frames.
    ``g_axis`` and ``eta0`` are given in the unit frame; ``mount`` maps the
    unit frame into the base body frame (pyramid skew lives here).
    """

    J_g: np.ndarray
    J_r: np.ndarray
    m_g: float
    m_r: float
    rho_g: np.ndarray
    sigma: float
    g_axis: np.ndarray
    eta0: np.ndarray
    mount: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("J_g", _spd(self.J_g, "J_g"))
        set_("J_r", _spd(self.J_r, "J_r"))
        set_("g_axis", _unit(self.g_axis, "g_axis"))
        set_("eta0", _unit(self.eta0, "eta0"))
        set_("mount", as_rotation(self.mount))
        set_("rho_g", np.asarray(self.rho_g, dtype=float).reshape(3))
        if self.m_g < 0 or self.m_r < 0:
            raise ValueError("masses must be non-negative")
        if self.sigma == 0.0 and abs(self.g_axis @ self.eta0) > 1e-12:
            raise ValueError("eta0 must be orthogonal to g_axis when sigma == 0")

    @property
    def g_body(self):
        return self.mount @ self.g_axis

    @property
    def eta0_body(self):
        return self.mount @ self.eta0


@dataclass(frozen=True)
class SpacecraftConfig:
    J_b: np.ndarray
    vscmgs: Sequence[VscmgParams]

    def __post_init__(self):
        object.__setattr__(self, "J_b", _spd(self.J_b, "J_b"))
        object.__setattr__(self, "vscmgs", tuple(self.vscmgs))
        if len(self.vscmgs) < 1:
            raise ValueError("at least one VSCMG unit is required")
        us = self.vscmgs
        packed = (
            self.J_b,
            np.array([u.J_g for u in us]),
            np.array([u.J_r for u in us]),
            np.array([float(u.m_g) for u in us]),
            np.array([float(u.m_r) for u in us]),
            np.array([u.rho_g for u in us]),
            np.array([float(u.sigma) for u in us]),
            np.array([u.g_body for u in us]),
            np.array([u.eta0_body for u in us]),
            np.array([u.eta0 for u in us]),
            np.array([u.mount for u in us]),
        )
        object.__setattr__(self, "packed", packed)

    @property
    def n(self):
        return len(self.vscmgs)


@dataclass(frozen=True)
class SpacecraftState:
    """Full configuration and velocity.

    ``gamma`` and ``gamma_dot`` have shape ``(n, 2)`` with columns
    ``(alpha, theta)`` and ``(alpha_dot, theta_dot)``.
    """

    R: np.ndarray
    Omega: np.ndarray
    gamma: np.ndarray
    gamma_dot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "R", as_rotation(self.R))
        object.__setattr__(self, "Omega", np.asarray(self.Omega, dtype=float).reshape(3))
        g = np.asarray(self.gamma, dtype=float).reshape(-1, 2)
        gd = np.asarray(self.gamma_dot, dtype=float).reshape(-1, 2)
        if g.shape != gd.shape:
            raise ValueError("gamma and gamma_dot must have the same shape")
        object.__setattr__(self, "gamma", np.ascontiguousarray(g))
        object.__setattr__(self, "gamma_dot", np.ascontiguousarray(gd))

    @property
    def chi(self):
        return np.concatenate([self.Omega, self.gamma_dot.ravel()])


@dataclass
class AssembledInertia:
    """Locked inertia ``J`` of size ``3 + 2n`` and its blocks.

    ``A``, ``C`` are per-unit gimbal and rotor inertias in the body frame,
    ``eta`` the current rotor axes and ``r_rotor`` the rotor centre-of-mass
    positions; all are stacked along the first axis.
    """

    J: np.ndarray
    J_T: np.ndarray
    I_T: np.ndarray
    A: np.ndarray
    C: np.ndarray
    eta: np.ndarray
    r_rotor: np.ndarray

    @property
    def Lambda(self):
        return self.J[:3, :3]

    @property
    def B(self):
        return self.J[:3, 3:]

    @property
    def J_gr(self):
        n = (self.J.shape[0] - 3) // 2
        return [self.J[3 + 2 * k : 5 + 2 * k, 3 + 2 * k : 5 + 2 * k] for k in range(n)]

    def solve(self, rhs):
        x, ok = _k.spd_solve(self.J, np.asarray(rhs, dtype=float))
        if not ok:
            raise SingularInertia("locked inertia is not positive definite")
        return x


def _gamma(cfg, gamma):
    gamma = np.ascontiguousarray(gamma, dtype=float).reshape(-1, 2)
    if gamma.shape[0] != cfg.n:
        raise ValueError(f"expected {cfg.n} gimbal/rotor pairs, got {gamma.shape[0]}")
    return gamma


def assemble_inertia(cfg: SpacecraftConfig, gamma, check=True) -> AssembledInertia:
    out = AssembledInertia(*_k.assemble(*cfg.packed, _gamma(cfg, gamma)))
    if np.abs(out.J - out.J.T).max() > 1e-12 * max(1.0, np.abs(out.J).max()):
        raise AssertionError("assembled inertia lost symmetry")
    if check and not _k.spd_solve(out.J, np.zeros(out.J.shape[0]))[1]:
        raise SingularInertia("locked inertia is not positive definite")
    return out


def kinetic_energy(cfg: SpacecraftConfig, state: SpacecraftState) -> float:
    chi = state.chi
    J = assemble_inertia(cfg, state.gamma, check=False).J
    return 0.5 * float(chi @ J @ chi)


def momenta(cfg: SpacecraftConfig, state: SpacecraftState):
    """Return ``(Pi, p)`` with ``p`` shaped ``(n, 2)``."""
    m = assemble_inertia(cfg, state.gamma, check=False).J @ state.chi
    return m[:3], m[3:].reshape(-1, 2)


def velocities_from_momenta(cfg: SpacecraftConfig, R, gamma, Pi, p):
    """Invert the momentum map. ``R`` does not enter the locked inertia."""
    inertia = assemble_inertia(cfg, gamma, check=False)
    rhs = np.concatenate([np.asarray(Pi, dtype=float), np.asarray(p, dtype=float).ravel()])
    chi = inertia.solve(rhs)
    return chi[:3], chi[3:].reshape(-1, 2)


def dT_dgamma(cfg: SpacecraftConfig, state: SpacecraftState):
    """Partial derivative of kinetic energy w.r.t. ``(alpha, theta)`` at fixed velocities."""
    inertia = assemble_inertia(cfg, state.gamma, check=False)
    _, _, _, _, mr, _, sigma, gb, *_ = cfg.packed
    return _k.dT_dgamma(
        mr, sigma, gb, inertia.A, inertia.C, inertia.eta, inertia.r_rotor,
        state.Omega, np.ascontiguousarray(state.gamma_dot),
    )


def _stage(cfg, tau, M_ext, t, R, Pi, p, gamma):
    n = cfg.n
    fixed_tau = tau if not callable(tau) else np.zeros((n, 2))
    Omega, Pi_dot, p_dot, gd, ok = _k.rhs(*cfg.packed, Pi, p, gamma, fixed_tau, np.zeros(3))
    if not ok:
        raise SingularInertia(f"locked inertia is not positive definite at t={t:.6f}")
    if callable(tau):
        p_dot = p_dot + np.asarray(tau(t, R, Omega, gamma, gd), dtype=float).reshape(n, 2)
    if M_ext is not None:
        Pi_dot = Pi_dot + np.asarray(M_ext(t, R, Omega), dtype=float)
    return Omega, Pi_dot, p_dot, gd


def propagate(
    cfg: SpacecraftConfig,
    state: SpacecraftState,
    tau=None,
    M_ext: Optional[ExternalMoment] = None,
    h: float = 1e-3,
) -> SpacecraftState:
    """Advance one step of length ``h``.

    Momenta and gimbal/rotor angles are marched with classical RK4. The
    attitude uses the matching fourth-order commutator-free exponential
    update, so ``R`` stays on SO(3) and ``R @ Pi`` is consistent to fourth order.

    ``tau`` is an ``(n, 2)`` array of gimbal/rotor torques held over the step,
    or a callable ``tau(t, R, Omega, gamma, gamma_dot)``. ``M_ext(t, R, Omega)``
    is an external moment in the body frame.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if tau is None:
        tau = np.zeros((cfg.n, 2))
    elif not callable(tau):
        tau = np.ascontiguousarray(tau, dtype=float).reshape(cfg.n, 2)
    t0, R0, g0 = state.t, state.R, state.gamma
    Pi0, p0 = momenta(cfg, state)
    p0 = np.ascontiguousarray(p0)

    def f(t, R, Pi, p, gamma):
        return _stage(cfg, tau, M_ext, t, R, Pi, p, gamma)

    W1, P1, Q1, G1 = f(t0, R0, Pi0, p0, g0)
    R2 = R0 @ _k.expm(0.5 * h * W1)
    W2, P2, Q2, G2 = f(t0 + 0.5 * h, R2, Pi0 + 0.5 * h * P1, p0 + 0.5 * h * Q1, g0 + 0.5 * h * G1)
    R3 = R0 @ _k.expm(0.5 * h * W2)
    W3, P3, Q3, G3 = f(t0 + 0.5 * h, R3, Pi0 + 0.5 * h * P2, p0 + 0.5 * h * Q2, g0 + 0.5 * h * G2)
    R4 = R2 @ _k.expm(h * (W3 - 0.5 * W1))
    W4, P4, Q4, G4 = f(t0 + h, R4, Pi0 + h * P3, p0 + h * Q3, g0 + h * G3)

    R1 = (
        R0
        @ _k.expm(h / 12.0 * (3 * W1 + 2 * W2 + 2 * W3 - W4))
        @ _k.expm(h / 12.0 * (-W1 + 2 * W2 + 2 * W3 + 3 * W4))
    )
    if np.linalg.norm(R1.T @ R1 - np.eye(3)) > 1e-12:
        R1 = project_to_so3(R1)
    Pi1 = Pi0 + h / 6.0 * (P1 + 2 * P2 + 2 * P3 + P4)
    p1 = p0 + h / 6.0 * (Q1 + 2 * Q2 + 2 * Q3 + Q4)
    g1 = g0 + h / 6.0 * (G1 + 2 * G2 + 2 * G3 + G4)
    Omega1, gd1 = velocities_from_momenta(cfg, R1, g1, Pi1, p1)
    return SpacecraftState(R1, Omega1, g1, gd1, t0 + h)


def inertial_momentum(cfg: SpacecraftConfig, state: SpacecraftState):
    Pi, _ = momenta(cfg, state)
    return state.R @ Pi


def simulate(cfg, state, h, n_steps, tau=None, M_ext=None, every=1):
    """Propagate ``n_steps`` steps and return the states recorded every ``every`` steps.

    The initial state is always the first entry. Constant ``tau`` with no
    external moment runs entirely in the compiled kernel.
    """
    if callable(tau) or M_ext is not None:
        out = [state]
        for i in range(1, n_steps + 1):
            state = propagate(cfg, state, tau, M_ext, h)
            if i % every == 0:
                out.append(state)
        return out
    if h <= 0:
        raise ValueError("step must be positive")
    tau = np.zeros((cfg.n, 2)) if tau is None else np.ascontiguousarray(tau, dtype=float).reshape(cfg.n, 2)
    Pi, p = momenta(cfg, state)
    Rs, Pis, ps, gs, n_ok = _k.march(
        *cfg.packed, state.R, Pi, np.ascontiguousarray(p), state.gamma, tau, np.zeros(3),
        float(h), int(n_steps), int(every),
    )
    if n_ok < n_steps:
        raise SingularInertia(f"locked inertia is not positive definite at t={state.t + (n_ok + 1) * h:.6f}")
    out = []
    for j in range(Rs.shape[0]):
        Omega, gd = velocities_from_momenta(cfg, Rs[j], gs[j], Pis[j], ps[j])
        out.append(SpacecraftState(Rs[j], Omega, gs[j], gd, state.t + j * every * h))
    return out


def with_time(state: SpacecraftState, t: float) -> SpacecraftState:
    return replace(state, t=t)
