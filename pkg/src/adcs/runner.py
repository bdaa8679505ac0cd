"""
Scenario execution and CSV output.

Every output file starts with ``# schema=adcs.<name>/1 version=<package version>``
followed by a header row. Floats are written with ``repr`` so files are
byte-identical for a fixed seed and round-trip exactly.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .control import allocate_rates, rate_servo
from .dynamics import SpacecraftState, propagate, simulate
from .estimator import MeasurementFrame, OnlineFilter
from .scenario import Scenario
from .sensors import HoldBuffer, SensorSampler, ingest_log, normalize_directions, resample_hold, synthesize, write_log
from .so3 import as_rotation

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRUTH_TIME_EPS = 1e-9


@dataclass
class RunResult:
    truth: List[SpacecraftState]
    samples: list
    estimates: list  # (FilterState, Diagnostics)


def schema_line(name):
    return f"schema=adcs.{name}/{SCHEMA_VERSION} version={__version__}"


def _f(x):
    return repr(float(x))


def _write(path, name, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {schema_line(name)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def truth_header(n):
    cols = ["t"] + [f"R{i}{j}" for i in range(3) for j in range(3)] + ["Omega_x", "Omega_y", "Omega_z"]
    for k in range(n):
        cols += [f"alpha{k}", f"theta{k}", f"alpha_dot{k}", f"theta_dot{k}"]
    return cols


def write_truth(path, truth: List[SpacecraftState]):
    n = truth[0].gamma.shape[0] if truth else 0
    rows = []
    for s in truth:
        r = [_f(s.t)] + [_f(x) for x in s.R.ravel()] + [_f(x) for x in s.Omega]
        for k in range(n):
            r += [_f(s.gamma[k, 0]), _f(s.gamma[k, 1]), _f(s.gamma_dot[k, 0]), _f(s.gamma_dot[k, 1])]
        rows.append(r)
    _write(path, "truth", truth_header(n), rows)


def read_truth(path):
    """``(t, R, Omega)`` rows from a truth file."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    for r in rows[1:]:
        v = [float(x) for x in r]
        out.append((v[0], as_rotation(np.array(v[1:10]).reshape(3, 3)), np.array(v[10:13])))
    return out


ESTIMATE_HEADER = ["t"] + [f"R_hat{i}{j}" for i in range(3) for j in range(3)] + ["Omega_hat_x", "Omega_hat_y", "Omega_hat_z"]
ERRORS_HEADER = ["t", "angle_rad", "omega_err_x", "omega_err_y", "omega_err_z", "wahba_cost", "nr_iterations"]


def estimate_rows(estimates):
    return [[_f(fs.t)] + [_f(x) for x in fs.R_hat.ravel()] + [_f(x) for x in fs.Omega_hat] for fs, _ in estimates]


def error_rows(estimates):
    return [
        [_f(d.t), _f(d.angle_error)] + [_f(x) for x in d.omega_error] + [_f(d.wahba_cost), str(d.nr_iterations)]
        for _, d in estimates
    ]


def write_estimates(out_dir, estimates):
    _write(Path(out_dir) / "estimate.csv", "estimate", ESTIMATE_HEADER, estimate_rows(estimates))
    _write(Path(out_dir) / "errors.csv", "errors", ERRORS_HEADER, error_rows(estimates))


def truth_at(truth, times):
    """Latest truth ``(R, Omega)`` at or before each time (same rule the sensors use)."""
    ts = np.array([x[0] for x in truth])
    out = []
    for t in times:
        j = int(np.searchsorted(ts, t + TRUTH_TIME_EPS, side="right")) - 1
        out.append(None if j < 0 else (truth[j][1], truth[j][2]))
    return out


def simulate_truth(sc: Scenario) -> List[SpacecraftState]:
    return simulate(sc.spacecraft, sc.initial_state, sc.step_s, sc.n_steps)


def estimate(sc: Scenario, samples, truth=None):
    """Normalise, resample, filter. ``truth`` is ``(t, R, Omega)`` rows or None."""
    frames = resample_hold(normalize_directions(samples))
    if not frames:
        raise ValueError("sensor stream never has all three sensors reporting")
    tr = truth_at(truth, [f.t for f in frames]) if truth else None
    if tr is not None and any(x is None for x in tr):
        tr = [x if x is not None else (np.full((3, 3), np.nan), np.full(3, np.nan)) for x in tr]
    of = OnlineFilter(sc.filter, sc.R_hat0, sc.initial_omega_radps, sc.prefilter)
    return [of.push(f, None if tr is None else tr[i]) for i, f in enumerate(frames)]


def pipeline(sc: Scenario) -> RunResult:
    """Truth simulation, sensing and estimation in one process, no files."""
    truth = simulate_truth(sc)
    samples = synthesize(truth, sc.sensors)
    rows = [(s.t, s.R, s.Omega) for s in truth]
    return RunResult(truth, samples, estimate(sc, samples, rows))


def run_simulate(sc: Scenario, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = simulate_truth(sc)
    samples = synthesize(truth, sc.sensors)
    write_truth(out / "truth.csv", truth)
    write_log(out / "sensors.csv", samples, comment=schema_line("sensors"))
    return RunResult(truth, samples, [])


def run_replay(sc: Scenario, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = read_truth(sc.truth_log) if sc.truth_log else None
    # with a truth file the clocks must stay aligned, so no rebasing
    res = ingest_log(sc.sensor_log, normalize=False, rebase_time=truth is None)
    if res.errors:
        log.warning("%d malformed rows skipped in %s", len(res.errors), sc.sensor_log)
    estimates = estimate(sc, res.samples, truth)
    write_estimates(out, estimates)
    return RunResult([], res.samples, estimates)


def closed_loop(sc: Scenario) -> RunResult:
    """Dynamics, sensing, filter and allocator stepped together.

    Each control step samples the sensors on the current truth, updates the
    filter with the held frame, commands a rate-damping torque
    ``-k Omega_hat`` through the allocator and integrates one step under the
    gimbal/rotor rate servo. Gimbal and rotor states are read directly.
    """
    cfg, h, ctl = sc.spacecraft, sc.step_s, sc.control
    limits = np.tile([ctl.gimbal_rate_limit_radps, ctl.rotor_rate_limit_radps], (cfg.n, 1))
    gain = np.tile(ctl.servo_gain_nms, (cfg.n, 1))
    sampler = SensorSampler(sc.sensors, sc.initial_state.t)
    buf = HoldBuffer()
    of = OnlineFilter(sc.filter, sc.R_hat0, sc.initial_omega_radps, sc.prefilter)
    state = sc.initial_state
    truth, samples, estimates = [state], [], []
    for j in range(sc.n_steps + 1):
        final = j == sc.n_steps
        new = sampler.emit(state.R, state.Omega, state.t + h, final=final)
        samples.extend(new)
        buf.push(new)
        frame = buf.frame(state.t)
        Omega_hat = None
        if frame is not None:
            fs, d = of.push(normalize_frame(frame), (state.R, state.Omega))
            estimates.append((fs, d))
            Omega_hat = fs.Omega_hat
        if final:
            break
        tau_d = np.zeros(3) if Omega_hat is None else -ctl.detumble_gain_nms * Omega_hat
        cmd = allocate_rates(cfg, state, tau_d, h, limits=limits, damping=ctl.damping)
        state = propagate(cfg, state, rate_servo(cmd, gain), h=h)
        truth.append(state)
    return RunResult(truth, samples, estimates)


def normalize_frame(frame):
    return MeasurementFrame(
        frame.t,
        frame.u1m / np.linalg.norm(frame.u1m),
        frame.u2m / np.linalg.norm(frame.u2m),
        frame.Omega_m,
        frame.fresh,
    )


def run_closed_loop(sc: Scenario, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = closed_loop(sc)
    write_truth(out / "truth.csv", res.truth)
    write_log(out / "sensors.csv", res.samples, comment=schema_line("sensors"))
    write_estimates(out, res.estimates)
    return res


RUNNERS = {"simulate": run_simulate, "estimate-replay": run_replay, "closed-loop": run_closed_loop}


def run(sc: Scenario, out_dir: Optional[Path] = None):
    out_dir = out_dir or sc.output_dir or Path("adcs_out")
    return RUNNERS[sc.mode](sc, out_dir)
