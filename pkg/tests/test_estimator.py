import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adcs.errors import DegenerateDirections, NewtonNoConvergence, StepError
from adcs.estimator import (
    ENU_MAG,
    ENU_UP,
    BENCH_OMEGA0,
    BENCH_Q0_ROTVEC,
    FilterParams,
    FilterState,
    MeasurementFrame,
    OnlineFilter,
    _fd_jacobian,
    _implicit_jacobian,
    build_Um,
    direction_triad,
    filter_step,
    prefilter_frames,
    prefilter_step,
    run_filter,
    s_l,
    solve_implicit,
    wahba_cost,
)
from adcs.so3 import exp_so3, hat, principal_angle

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)

W1 = np.array([0.3, -0.5, 0.4])
W2 = np.array([0.2, 0.3, -0.1])


def tumble(t, scale=1.0):
    """Closed-form two-axis tumble: R = exp(t w1) exp(t w2)."""
    a, b = scale * W1, scale * W2
    R = exp_so3(t * a) @ exp_so3(t * b)
    return R, exp_so3(-t * b) @ a + b


def clean_frames(params, ts, scale=1.0):
    out, truth = [], []
    for t in ts:
        R, Om = tumble(t, scale)
        out.append(MeasurementFrame(float(t), R.T @ params.E[:, 0], R.T @ params.E[:, 1], Om))
        truth.append((R, Om))
    return out, truth


@pytest.fixture(scope="module")
def params():
    return FilterParams.benchmark()


def test_direction_triad_third_column(params):
    np.testing.assert_allclose(params.E[:, 2], [-0.9921, 0.1252, 0.0], atol=1e-4)
    np.testing.assert_allclose(np.linalg.norm(params.E, axis=0), 1.0, atol=1e-15)


@given(vec3)
def test_direction_triad_is_equivariant(rv):
    R = exp_so3(rv)
    E = direction_triad(ENU_UP, ENU_MAG)
    np.testing.assert_allclose(direction_triad(R.T @ ENU_UP, R.T @ ENU_MAG), R.T @ E, atol=1e-12)


@pytest.mark.parametrize("d2", [[0.0, 0.0, 2.0], [0.0, 0.0, -1.0], [1e-4, 0.0, 1.0]])
def test_direction_triad_rejects_parallel(d2):
    with pytest.raises(DegenerateDirections):
        direction_triad([0.0, 0.0, 1.0], d2)


@pytest.mark.parametrize(
    "kw, fragment",
    [
        (dict(W=np.array([[1.0, 0.1, 0], [0.0, 1, 0], [0, 0, 1]])), "symmetric"),
        (dict(W=-np.eye(3)), "positive definite"),
        (dict(D=np.zeros((3, 3))), "D must"),
        (dict(m_gain=0.0), "m_gain"),
        (dict(h=-0.01), "h must"),
        (dict(E=np.eye(3)[:, [0, 1, 1]]), "cross product"),
    ],
)
def test_filter_params_rejects(params, kw, fragment):
    base = dict(E=params.E, W=params.W)
    base.update(kw)
    with pytest.raises(ValueError, match=fragment):
        FilterParams(**base)


def test_wahba_cost_entrywise(rng):
    E = direction_triad(rng.normal(size=3), rng.normal(size=3))
    Um = direction_triad(rng.normal(size=3), rng.normal(size=3))
    R = exp_so3(rng.normal(size=3))
    A = rng.normal(size=(3, 3))
    W = A @ A.T + np.eye(3)
    X = E - R @ Um
    ref = 0.5 * sum(X[i, j] * X[i, k] * W[k, j] for i in range(3) for j in range(3) for k in range(3))
    assert math.isclose(wahba_cost(R, Um, E, W), ref, rel_tol=1e-13)


def test_wahba_cost_zero_at_truth(params):
    R = exp_so3([0.3, -1.0, 2.0])
    Um = R.T @ params.E
    assert abs(wahba_cost(R, Um, params.E, params.W)) < 1e-28


@settings(max_examples=50)
@given(vec3, vec3, vec3)
def test_s_l_is_directional_derivative(rv, uv, v):
    E = direction_triad(ENU_UP, ENU_MAG)
    W = np.array([[3.19, 1.51, 0.0], [1.51, 3.19, 0.0], [0.0, 0.0, 2.0]])
    R = exp_so3(rv)
    Um = exp_so3(uv).T @ E
    L = E @ W @ Um.T
    eps = 1e-6
    fd = (
        wahba_cost(R @ exp_so3(eps * v), Um, E, W) - wahba_cost(R @ exp_so3(-eps * v), Um, E, W)
    ) / (2 * eps)
    assert abs(fd - s_l(R, L) @ v) < 1e-6 * (1 + np.linalg.norm(v))


@pytest.mark.parametrize("h", [0.001, 0.005, 0.01, 0.02, 0.1, 0.5])
def test_prefilter_dc_gain_and_decay_exact(rng, h):
    x = rng.normal(size=1000) * 10.0 ** rng.uniform(-6, 6, size=1000)
    np.testing.assert_array_equal(prefilter_step(x, x, x, h), x)
    zero = np.zeros_like(x)
    np.testing.assert_array_equal(prefilter_step(x, zero, zero, h), (2 - h) / (2 + h) * x)


@settings(max_examples=200)
@given(vec3, vec3, vec3, st.floats(1e-4, 0.5))
def test_prefilter_matches_recurrence(xb, u0, u1, h):
    ref = ((2 - h) * xb + h * (u0 + u1)) / (2 + h)
    np.testing.assert_allclose(prefilter_step(xb, u0, u1, h), ref, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("freq", [0.05, 0.5, 3.0])
def test_prefilter_frequency_response(freq):
    # steady-state sinusoid amplitude against H(z) = h (1 + z^-1) / ((2+h) - (2-h) z^-1)
    h = 0.01
    w = 2 * math.pi * freq
    n = int(40.0 / h)
    t = np.arange(n) * h
    u = np.sin(w * t)
    y = np.zeros(n)
    for k in range(n - 1):
        y[k + 1] = prefilter_step(y[k], u[k], u[k + 1], h)
    z = np.exp(-1j * w * h)
    H = h * (1 + z) / ((2 + h) - (2 - h) * z)
    tail = slice(n - int(10.0 / h), n)
    expected = np.abs(H) * np.sin(w * t[tail] + np.angle(H))
    np.testing.assert_allclose(y[tail], expected, atol=1e-6)


def test_prefilter_frames_first_frame_passthrough(params):
    frames, _ = clean_frames(params, np.arange(5) * 0.01)
    out = prefilter_frames(frames)
    assert out[0] is frames[0]
    assert len(out) == 5


@pytest.mark.parametrize("h", [0.001, 0.01, 0.1])
def test_newton_matches_fixed_point(rng, h):
    m = 0.5
    c = rng.normal(size=3)
    Om = rng.normal(size=3)
    w, iters, res = solve_implicit(c, Om, m, h, np.zeros(3))
    assert res < 1e-12
    # damped Picard iteration converges for small h
    x = np.zeros(3)
    for _ in range(500):
        x = 0.5 * x + 0.5 * exp_so3(-0.5 * h * (Om - x)) @ c / m
    np.testing.assert_allclose(w, x, atol=1e-10)


def test_analytic_jacobian_matches_fd(rng):
    for _ in range(20):
        w, c, Om = rng.normal(size=(3, 3))
        h = rng.uniform(0.001, 0.5)
        np.testing.assert_allclose(
            _implicit_jacobian(w, c, Om, 0.5, h), _fd_jacobian(w, c, Om, 0.5, h), atol=1e-8
        )


def test_newton_no_convergence_carries_trace():
    with pytest.raises(NewtonNoConvergence) as info:
        solve_implicit(np.ones(3), np.ones(3), 0.5, 0.1, np.full(3, 100.0), tol=1e-300, max_iter=2)
    assert len(info.value.trace) == 3


def test_fd_jacobian_option_gives_same_solution(params):
    frames, truth = clean_frames(params, np.arange(30) * 0.01)
    init = FilterState.initial(exp_so3(BENCH_Q0_ROTVEC).T @ truth[0][0], BENCH_OMEGA0, frames[0])
    a = run_filter(frames, params, init, prefilter=False)[-1][0]
    fd = FilterParams.benchmark(fd_jacobian=True)
    b = run_filter(frames, fd, init, prefilter=False)[-1][0]
    np.testing.assert_allclose(a.R_hat, b.R_hat, atol=1e-12)
    np.testing.assert_allclose(a.omega, b.omega, atol=1e-12)


def test_equilibrium_is_fixed_point(params):
    R = exp_so3([0.4, -0.2, 1.1])
    Om = np.array([0.1, -0.2, 0.05])
    f0 = MeasurementFrame(0.0, R.T @ params.E[:, 0], R.T @ params.E[:, 1], Om)
    R1 = R @ exp_so3(0.01 * Om)
    f1 = MeasurementFrame(0.01, R1.T @ params.E[:, 0], R1.T @ params.E[:, 1], Om)
    s0 = FilterState.initial(R, np.zeros(3), f0)
    s1 = filter_step(s0, f0, f1, params)
    np.testing.assert_allclose(s1.R_hat, R1, atol=1e-14)
    np.testing.assert_allclose(s1.omega, 0.0, atol=1e-14)


def test_step_is_time_symmetric(params):
    R, Om = tumble(0.3)
    R2, Om2 = tumble(0.31)
    f0 = MeasurementFrame(0.3, R.T @ params.E[:, 0] + [0.01, 0, 0], R.T @ params.E[:, 1], Om)
    f1 = MeasurementFrame(0.31, R2.T @ params.E[:, 0], R2.T @ params.E[:, 1] + [0, 0.02, 0], Om2 + 0.1)
    s0 = FilterState.initial(exp_so3([0.5, 0.2, -1.0]), [0.1, -0.2, 0.3], f0)
    s1 = filter_step(s0, f0, f1, params)
    back = filter_step(s1, f1, f0, params)
    np.testing.assert_allclose(back.R_hat, s0.R_hat, atol=1e-13)
    np.testing.assert_allclose(back.omega, s0.omega, atol=1e-13)


def test_step_keeps_rotation(params, rng):
    frames, truth = clean_frames(params, np.arange(50) * 0.01)
    init = FilterState.initial(exp_so3(rng.normal(size=3)), rng.normal(size=3), frames[0])
    for fs, _ in run_filter(frames, params, init, prefilter=False):
        np.testing.assert_allclose(fs.R_hat.T @ fs.R_hat, np.eye(3), atol=1e-13)
        assert np.linalg.det(fs.R_hat) > 0


def test_second_order_convergence(params):
    def run(h, T=1.0):
        frames, truth = clean_frames(params, np.arange(int(round(T / h)) + 1) * h)
        init = FilterState.initial(exp_so3(BENCH_Q0_ROTVEC).T @ truth[0][0], BENCH_OMEGA0, frames[0])
        return run_filter(frames, params, init, prefilter=False)[-1][0]

    ref = run(0.04 / 64)
    errs = []
    for h in (0.04, 0.02, 0.01, 0.005):
        s = run(h)
        errs.append(principal_angle(s.R_hat @ ref.R_hat.T) + np.linalg.norm(s.omega - ref.omega))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((slopes > 1.7) & (slopes < 2.3)), slopes


def test_wahba_cost_decreases(params):
    frames, truth = clean_frames(params, np.arange(1001) * 0.01, scale=0.1)
    init = FilterState.initial(exp_so3(BENCH_Q0_ROTVEC).T @ truth[0][0], np.zeros(3), frames[0])
    out = run_filter(frames, params, init, prefilter=False)
    costs = [d.wahba_cost for _, d in out]
    assert costs[5] < costs[0]
    assert costs[-1] < 0.1 * costs[0]


def test_online_filter_matches_batch(params):
    frames, truth = clean_frames(params, np.arange(40) * 0.01)
    init = FilterState.initial(exp_so3([1.0, 0.0, 0.5]), [0.01, 0.0, 0.0], frames[0])
    batch = run_filter(frames, params, init, prefilter=True, truth=truth)
    of = OnlineFilter(params, init.R_hat, init.omega, prefilter=True)
    for f, tr, (fs, d) in zip(frames, truth, batch):
        fs2, d2 = of.push(f, tr)
        np.testing.assert_array_equal(fs2.R_hat, fs.R_hat)
        assert d2.angle_error == d.angle_error


def test_degenerate_frame_is_gap(params):
    frames, truth = clean_frames(params, np.arange(6) * 0.01)
    f = frames[3]
    frames[3] = MeasurementFrame(f.t, f.u1m, 2.0 * f.u1m, f.Omega_m)
    init = FilterState.initial(truth[0][0], np.zeros(3), frames[0])
    out = run_filter(frames, params, init, prefilter=False)
    assert [d.gap for _, d in out] == [False, False, False, True, False, False]
    np.testing.assert_array_equal(out[3][0].R_hat, out[2][0].R_hat)
    assert out[3][0].t == frames[3].t


def test_degenerate_first_frame_raises(params):
    f = MeasurementFrame(0.0, ENU_UP, ENU_UP, np.zeros(3))
    with pytest.raises(StepError):
        run_filter([f], params, FilterState.initial(np.eye(3), np.zeros(3), f))


def test_non_increasing_time_raises(params):
    frames, _ = clean_frames(params, [0.0, 0.01, 0.01])
    init = FilterState.initial(np.eye(3), np.zeros(3), frames[0])
    with pytest.raises(StepError):
        run_filter(frames, params, init, prefilter=False)


def test_build_um_normalises(params):
    f = MeasurementFrame(0.0, 3.0 * params.E[:, 0], 0.5 * params.E[:, 1], np.zeros(3))
    np.testing.assert_allclose(build_Um(f), params.E, atol=1e-15)


def test_s_l_special_cases():
    # L = R_hat gives zero; L = I gives vex(R_hat - R_hat^T)
    R = exp_so3([0.1, 0.2, 0.3])
    np.testing.assert_allclose(s_l(R, R), 0.0, atol=1e-15)
    np.testing.assert_allclose(hat(s_l(R, np.eye(3))), np.eye(3) @ R - R.T, atol=1e-15)
