"""
Internal-momentum torque mapping and rate allocation for a VSCMG array.

The total momentum splits as ``Pi = Lambda Omega + u`` with internal momentum
``u = B gamma_dot``; the torque it exerts on the base body is
``tau_cp = u x Omega - u_dot``.

The allocator here is a plain damped least-squares steering law used to
close the loop in demos. It is not a de-tumbling or pointing law.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import SpacecraftConfig, SpacecraftState, assemble_inertia

DEFAULT_DAMPING = 1e-4
RANK_TOL = 1e-6


@dataclass(frozen=True)
class RateCommand:
    """Per-unit ``(alpha_dot, theta_dot)`` commands, shape ``(n, 2)``.

    ``rank_deficient`` is set when the allocation matrix lost rank; the
    command is still a bounded best effort.
    """

    rates: np.ndarray
    limits: np.ndarray
    rank_deficient: bool = False
    singular_values: np.ndarray = None


def internal_momentum(cfg: SpacecraftConfig, state: SpacecraftState):
    B = assemble_inertia(cfg, state.gamma, check=False).B
    return B @ state.gamma_dot.ravel()


def control_torque(u, Omega, u_dot):
    return np.cross(u, Omega) - np.asarray(u_dot, dtype=float)


def internal_momentum_rate(u_now, u_prev, h):
    """Backward difference at the simulation step."""
    return (np.asarray(u_now) - np.asarray(u_prev)) / h


def predicted_internal_momentum(cfg, gamma, rates, h):
    """Internal momentum after holding ``rates`` for one step ``h``."""
    rates = np.asarray(rates, dtype=float).reshape(cfg.n, 2)
    B = assemble_inertia(cfg, gamma + h * rates, check=False).B
    return B @ rates.ravel()


def allocation_matrix(cfg, state, h, eps=1e-7):
    """Jacobian of the one-step internal momentum w.r.t. the rate command.

    Contains both the direct ``B`` term and the gyroscopic term from moving
    the gimbals while the rotors spin.
    """
    nu0 = state.gamma_dot.ravel()
    A = np.empty((3, nu0.size))
    for j in range(nu0.size):
        d = np.zeros_like(nu0)
        d[j] = eps
        A[:, j] = (
            predicted_internal_momentum(cfg, state.gamma, nu0 + d, h)
            - predicted_internal_momentum(cfg, state.gamma, nu0 - d, h)
        ) / (2 * eps)
    return A


def achieved_torque(cfg, state, rates, h):
    """Torque on the base body if ``rates`` are held for one step."""
    u = internal_momentum(cfg, state)
    u_next = predicted_internal_momentum(cfg, state.gamma, rates, h)
    return control_torque(u, state.Omega, internal_momentum_rate(u_next, u, h))


def allocate_rates(
    cfg: SpacecraftConfig,
    state: SpacecraftState,
    tau_desired,
    h: float,
    limits=np.inf,
    damping: float = DEFAULT_DAMPING,
    refine: int = 3,
) -> RateCommand:
    """Rate command whose one-step internal momentum change yields ``tau_desired``.

    Solves for the smallest rate change with a singularity-robust inverse
    ``A^T (A A^T + lam I)^-1`` where ``lam = damping * sigma_max(A)^2``, with a
    few Gauss-Newton refinements on the nonlinear one-step prediction, then
    clamps to ``limits`` (rad/s, scalar or ``(n, 2)``).
    """
    tau_desired = np.asarray(tau_desired, dtype=float)
    limits = np.broadcast_to(np.asarray(limits, dtype=float), (cfg.n, 2))
    current = state.gamma_dot
    A = allocation_matrix(cfg, state, h)
    sv = np.linalg.svd(A, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    deficient = sv.size < 3 or smax == 0.0 or sv[min(2, sv.size - 1)] < RANK_TOL * smax
    u = internal_momentum(cfg, state)
    u_target = u + h * (np.cross(u, state.Omega) - tau_desired)
    lam = damping * smax**2 if smax > 0 else damping
    pinv = A.T @ np.linalg.inv(A @ A.T + lam * np.eye(3))
    nu = current.ravel().copy()
    for _ in range(refine + 1):
        miss = u_target - predicted_internal_momentum(cfg, state.gamma, nu, h)
        nu = nu + pinv @ miss
    rates = np.clip(nu.reshape(cfg.n, 2), -limits, limits)
    return RateCommand(rates, limits, bool(deficient), sv)


def rate_servo(command: RateCommand, gain):
    """Gimbal/rotor torque law ``tau = gain * (command - gamma_dot)`` for ``propagate``."""
    target = command.rates
    gain = np.asarray(gain, dtype=float)

    def tau(t, R, Omega, gamma, gamma_dot):
        return gain * (target - gamma_dot)

    return tau
