"""
Second-order discrete variational attitude and angular-velocity filter.

The filter state is ``(R_hat, omega)`` where ``omega`` is the angular velocity
error variable and ``Omega_hat = Omega_m - omega`` the estimated body rate.
Each step takes two consecutive measurement frames::

    omega_half = (m I + h/2 D)^-1 [exp(-h/2 hat(Omega_hat_i)) m omega_i + h/2 Phi' S_L(R_hat_i)]
    R_hat_next = R_hat_i exp(h hat(Omega_m_half - omega_half))
    m omega_next = exp(-h/2 hat(Omega_m_next - omega_next))
                   [(m I - h/2 D) omega_half + h/2 Phi' S_L(R_hat_next)]

The rate update is implicit in ``omega_next`` and is solved by Newton-Raphson.
No noise statistics are assumed anywhere.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import DegenerateDirections, NewtonNoConvergence, StepError
from .so3 import exp_so3, hat, principal_angle, project_to_so3, right_jacobian, vex

# Inertial reference directions in ENU: accelerometer reads "up", magnetometer the local field.
ENU_UP = np.array([0.0, 0.0, 1.0])
ENU_MAG = np.array([0.0772, 0.6117, -0.7873])

BENCH_W = np.array([[3.19, 1.51, 0.0], [1.51, 3.19, 0.0], [0.0, 0.0, 2.0]])
BENCH_D = np.diag([12.0, 13.0, 14.0])
BENCH_M_GAIN = 0.5
BENCH_Q0_ROTVEC = 2.2 * np.array([0.63, 0.62, -0.48])
BENCH_OMEGA0 = np.array([0.001, 0.002, -0.003])

MIN_SEPARATION = 1e-3  # rad


def identity(x):
    return x


def unit_slope(x):
    return 1.0


def direction_triad(d1, d2):
    """``[d1 d2 d1xd2]`` with unit columns.

    The cross product is normalised, so a body-frame triad built from the
    rotated directions equals ``R^T`` times the inertial one exactly.
    """
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    d1 = d1 / np.linalg.norm(d1)
    d2 = d2 / np.linalg.norm(d2)
    c = np.cross(d1, d2)
    s = np.linalg.norm(c)
    angle = math.atan2(s, float(d1 @ d2))
    if angle < MIN_SEPARATION or angle > math.pi - MIN_SEPARATION:
        raise DegenerateDirections("directions are within 1e-3 rad of parallel")
    return np.column_stack([d1, d2, c / s])


@dataclass(frozen=True)
class FilterParams:
    E: np.ndarray
    W: np.ndarray
    m_gain: float = BENCH_M_GAIN
    D: np.ndarray = field(default_factory=lambda: BENCH_D.copy())
    h: float = 0.01
    phi: Callable[[float], float] = identity
    dphi: Callable[[float], float] = unit_slope
    nr_tol: float = 1e-12
    nr_max_iter: int = 25
    fd_jacobian: bool = False

    def __post_init__(self):
        E = np.asarray(self.E, dtype=float)
        W = np.asarray(self.W, dtype=float)
        D = np.asarray(self.D, dtype=float)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "D", D)
        for msg in self.problems():
            raise ValueError(msg)

    def problems(self):
        """Human-readable list of invariant violations (empty when valid)."""
        out = []
        E, W, D = self.E, self.W, self.D
        if E.shape != (3, 3):
            out.append("E must be 3x3")
        else:
            c = np.cross(E[:, 0], E[:, 1])
            n = np.linalg.norm(c)
            if n == 0.0 or np.abs(E[:, 2] - c / n).max() > 1e-12:
                out.append("E third column must be the unit cross product of the first two")
        if W.shape != (3, 3) or np.abs(W - W.T).max() > 1e-12:
            out.append("W must be symmetric")
        elif np.linalg.eigvalsh(W)[0] <= 0:
            out.append("W must be positive definite")
        if D.shape != (3, 3) or np.linalg.eigvalsh(0.5 * (D + D.T))[0] <= 0:
            out.append("D must be positive definite")
        if not self.m_gain > 0:
            out.append("m_gain must be positive")
        if not self.h > 0:
            out.append("h must be positive")
        if not self.nr_tol > 0 or self.nr_max_iter < 1:
            out.append("Newton-Raphson tolerance and iteration cap must be positive")
        return out

    @classmethod
    def benchmark(cls, h=0.01, **kw):
        """Benchmark gains for the tumble scenario."""
        return cls(E=direction_triad(ENU_UP, ENU_MAG), W=BENCH_W.copy(), h=h, **kw)


@dataclass(frozen=True)
class MeasurementFrame:
    """One resampled measurement set. ``fresh`` flags (accel, mag, gyro)."""

    t: float
    u1m: np.ndarray
    u2m: np.ndarray
    Omega_m: np.ndarray
    fresh: tuple = (True, True, True)


@dataclass(frozen=True)
class FilterState:
    R_hat: np.ndarray
    omega: np.ndarray
    Omega_hat: np.ndarray
    t: float = 0.0

    @classmethod
    def initial(cls, R_hat, omega, frame: MeasurementFrame):
        omega = np.asarray(omega, dtype=float)
        return cls(np.asarray(R_hat, dtype=float), omega, frame.Omega_m - omega, frame.t)


@dataclass
class StepInfo:
    nr_iterations: int
    nr_residual: float
    wahba_cost: float


def build_Um(frame: MeasurementFrame):
    """Body-frame triad ``[u1 u2 u1xu2]`` from a frame; raw vectors are normalised."""
    return direction_triad(frame.u1m, frame.u2m)


def wahba_cost(R_hat, Um, E, W):
    """``1/2 <E - R_hat Um, (E - R_hat Um) W>``."""
    X = E - R_hat @ Um
    return 0.5 * float(np.sum(X * (X @ W)))


def s_l(R_hat, L):
    """``vex(L^T R_hat - R_hat^T L)``.

    Along ``R_hat exp(eps hat(v))`` the Wahba cost changes at rate
    ``s_l(R_hat, E W Um^T) @ v``.
    """
    return vex(L.T @ R_hat - R_hat.T @ L)


_SPLIT = 134217729.0  # 2**27 + 1, Dekker splitting constant


def _two_prod(a, b):
    """``a*b = p + e`` exactly."""
    p = a * b
    c = _SPLIT * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLIT * b
    bh = c - (c - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _two_sum(a, b):
    """``a+b = s + e`` exactly."""
    s = a + b
    z = s - a
    return s, (a - (s - z)) + (b - z)


def prefilter_step(xbar_k, xm_k, xm_k1, h):
    """Tustin first-order low-pass: ``(2+h) xbar' = (2-h) xbar + h (xm + xm')``.

    Evaluated as ``a xbar + b (xm + xm')`` with ``a = (2-h)/(2+h)`` and
    ``b = (1-a)/2`` so ``a + 2b = 1`` exactly, using error-free products and
    sums so the result is rounded once. Consequences: a constant input is an
    exact fixed point, and with zero input the state is scaled by exactly ``a``.
    """
    a = (2.0 - h) / (2.0 + h)
    b = 0.5 * (1.0 - a)
    xbar_k = np.asarray(xbar_k, dtype=float)
    w = np.asarray(xm_k, dtype=float) + np.asarray(xm_k1, dtype=float)
    p1, e1 = _two_prod(a, xbar_k)
    p2, e2 = _two_prod(b, w)
    s, e3 = _two_sum(p1, p2)
    return s + ((e1 + e2) + e3)


def _potential_force(R_hat, Um, params):
    L = params.E @ params.W @ Um.T
    U0 = wahba_cost(R_hat, Um, params.E, params.W)
    return params.dphi(U0) * s_l(R_hat, L), U0


def _implicit_residual(w, c, Omega_m, m, h):
    return m * w - exp_so3(-0.5 * h * (Omega_m - w)) @ c


def _implicit_jacobian(w, c, Omega_m, m, h):
    phi = -0.5 * h * (Omega_m - w)
    return m * np.eye(3) + 0.5 * h * exp_so3(phi) @ hat(c) @ right_jacobian(phi)


def _fd_jacobian(w, c, Omega_m, m, h, eps=1e-7):
    J = np.empty((3, 3))
    for j in range(3):
        d = np.zeros(3)
        d[j] = eps
        J[:, j] = (
            _implicit_residual(w + d, c, Omega_m, m, h) - _implicit_residual(w - d, c, Omega_m, m, h)
        ) / (2 * eps)
    return J


def solve_implicit(c, Omega_m, m, h, w0, tol=1e-12, max_iter=25, fd_jacobian=False):
    """Solve ``m w = exp(-h/2 hat(Omega_m - w)) c`` for ``w``.

    Returns ``(w, iterations, residual_norm)``.
    """
    jac = _fd_jacobian if fd_jacobian else _implicit_jacobian
    w = np.array(w0, dtype=float)
    trace = []
    for it in range(max_iter + 1):
        r = _implicit_residual(w, c, Omega_m, m, h)
        rn = float(np.linalg.norm(r))
        trace.append(rn)
        if rn < tol:
            return w, it, rn
        if it == max_iter:
            break
        w = w - np.linalg.solve(jac(w, c, Omega_m, m, h), r)
    raise NewtonNoConvergence(
        f"residual {trace[-1]:.3e} above {tol:.1e} after {max_iter} iterations", trace
    )


def _step(fs, frame_i, frame_i1, params, h, Um_i=None, Um_i1=None):
    if h is None:
        h = frame_i1.t - frame_i.t
    m = params.m_gain
    D = params.D
    I3 = np.eye(3)
    Um_i = build_Um(frame_i) if Um_i is None else Um_i
    Um_i1 = build_Um(frame_i1) if Um_i1 is None else Um_i1

    Omega_hat_i = frame_i.Omega_m - fs.omega
    force_i, _ = _potential_force(fs.R_hat, Um_i, params)
    rhs = exp_so3(-0.5 * h * Omega_hat_i) @ (m * fs.omega) + 0.5 * h * force_i
    omega_half = np.linalg.solve(m * I3 + 0.5 * h * D, rhs)

    Omega_m_half = 0.5 * (frame_i.Omega_m + frame_i1.Omega_m)
    R_next = fs.R_hat @ exp_so3(h * (Omega_m_half - omega_half))
    if np.linalg.norm(R_next.T @ R_next - I3) > 1e-12:
        R_next = project_to_so3(R_next)

    force_i1, U0_next = _potential_force(R_next, Um_i1, params)
    c = (m * I3 - 0.5 * h * D) @ omega_half + 0.5 * h * force_i1
    w, iters, res = solve_implicit(
        c, frame_i1.Omega_m, m, h, omega_half, params.nr_tol, params.nr_max_iter, params.fd_jacobian
    )
    new = FilterState(R_next, w, frame_i1.Omega_m - w, frame_i1.t)
    return new, StepInfo(iters, res, U0_next)


def filter_step(fs: FilterState, frame_i: MeasurementFrame, frame_i1: MeasurementFrame, params: FilterParams, h=None):
    """Advance the filter from ``frame_i`` to ``frame_i1``.

    ``h`` defaults to the timestamp difference. A negative step (time-reversed
    frames) exactly undoes the corresponding forward step.
    """
    return _step(fs, frame_i, frame_i1, params, h)[0]


@dataclass
class Diagnostics:
    t: float
    angle_error: float
    omega_error: np.ndarray
    wahba_cost: float
    nr_iterations: int
    gap: bool = False
    nr_residual: float = 0.0


class Prefilter:
    """Channel-wise low-pass over frames, seeded with the first frame."""

    def __init__(self):
        self._prev = None
        self._xbar = None

    def __call__(self, frame: MeasurementFrame) -> MeasurementFrame:
        if self._prev is None:
            self._prev = frame
            self._xbar = [np.asarray(frame.u1m, float), np.asarray(frame.u2m, float), np.asarray(frame.Omega_m, float)]
            return frame
        prev = self._prev
        h = frame.t - prev.t
        xb = self._xbar
        self._xbar = [
            prefilter_step(xb[0], prev.u1m, frame.u1m, h),
            prefilter_step(xb[1], prev.u2m, frame.u2m, h),
            prefilter_step(xb[2], prev.Omega_m, frame.Omega_m, h),
        ]
        self._prev = frame
        return MeasurementFrame(frame.t, *self._xbar, frame.fresh)


def prefilter_frames(frames: Sequence[MeasurementFrame]) -> List[MeasurementFrame]:
    pf = Prefilter()
    return [pf(f) for f in frames]


def _errors(fs, truth):
    if truth is None:
        return math.nan, np.full(3, math.nan)
    R, Omega = truth
    return principal_angle(R @ fs.R_hat.T), np.asarray(Omega) - fs.Omega_hat


class OnlineFilter:
    """Frame-by-frame driver: optional pre-filter, gap handling, diagnostics.

    The first pushed frame only initialises; the filter state is then
    ``initial`` restamped at that frame, with ``Omega_hat`` taken from it.
    Frames with near-parallel directions are skipped: the state is held and
    the diagnostic row is flagged as a gap.
    """

    def __init__(self, params: FilterParams, R_hat0, omega0, prefilter=True):
        self.params = params
        self._R0 = np.asarray(R_hat0, dtype=float)
        self._w0 = np.asarray(omega0, dtype=float)
        self._prefilter = Prefilter() if prefilter else None
        self.state: Optional[FilterState] = None
        self._last = None
        self._Um_last = None

    def push(self, frame: MeasurementFrame, truth=None):
        """Consume one raw frame; ``truth`` is ``(R, Omega)`` or None.

        Returns ``(FilterState, Diagnostics)``.
        """
        params = self.params
        if self._prefilter is not None:
            frame = self._prefilter(frame)
        if self.state is None:
            try:
                Um = build_Um(frame)
            except DegenerateDirections as exc:
                raise StepError(frame.t, exc) from exc
            self.state = FilterState.initial(self._R0, self._w0, frame)
            self._last, self._Um_last = frame, Um
            ang, werr = _errors(self.state, truth)
            cost = wahba_cost(self.state.R_hat, Um, params.E, params.W)
            return self.state, Diagnostics(frame.t, ang, werr, cost, 0)
        if not frame.t > self.state.t:
            raise StepError(frame.t, "timestamps must increase")
        fs = self.state
        try:
            Um = build_Um(frame)
        except DegenerateDirections:
            self.state = FilterState(fs.R_hat, fs.omega, fs.Omega_hat, frame.t)
            ang, werr = _errors(self.state, truth)
            return self.state, Diagnostics(frame.t, ang, werr, math.nan, 0, gap=True)
        try:
            fs, info = _step(fs, self._last, frame, params, None, self._Um_last, Um)
        except (NewtonNoConvergence, ValueError, ArithmeticError) as exc:
            raise StepError(frame.t, exc) from exc
        self.state, self._last, self._Um_last = fs, frame, Um
        ang, werr = _errors(fs, truth)
        return fs, Diagnostics(fs.t, ang, werr, info.wahba_cost, info.nr_iterations, nr_residual=info.nr_residual)


def run_filter(
    frames: Sequence[MeasurementFrame],
    params: FilterParams,
    initial: FilterState,
    prefilter: bool = True,
    truth: Optional[Sequence] = None,
):
    """Filter a frame sequence.

    ``initial`` supplies ``R_hat`` and ``omega`` at the first frame. ``truth``,
    when given, is a sequence of ``(R, Omega)`` aligned with ``frames`` and
    feeds the error diagnostics; attitude error is the principal angle of
    ``R R_hat^T`` and rate error is ``Omega - Omega_hat``.

    Returns a list of ``(FilterState, Diagnostics)``, one per frame.
    """
    of = OnlineFilter(params, initial.R_hat, initial.omega, prefilter)
    return [of.push(f, None if truth is None else truth[i]) for i, f in enumerate(frames)]
