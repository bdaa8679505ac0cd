"""
IMU measurement synthesis, last-value-hold resampling and sensor log I/O.

Log format (UTF-8)::

    # optional comment lines
    t,sensor,x,y,z
    0.0,accel,0.01,-0.02,0.99
    ...

``sensor`` is one of ``accel``, ``mag``, ``gyro``. Accelerometer and
magnetometer rows are direction components, gyro rows are rad/s.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import NonMonotoneTime, ParseError
from .estimator import ENU_MAG, ENU_UP, MeasurementFrame, direction_triad

log = logging.getLogger(__name__)

SENSORS = ("accel", "mag", "gyro")
LOG_HEADER = ["t", "sensor", "x", "y", "z"]
# clocks built from different rates disagree in the last bits
TIME_EPS = 1e-9


@dataclass(frozen=True)
class RawSample:
    t: float
    sensor: str
    v: np.ndarray


@dataclass(frozen=True)
class SensorSpec:
    rate_hz: float
    noise_std: float = 0.0
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    phase_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=float).reshape(3))
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if np.any(np.asarray(self.noise_std) < 0):
            raise ValueError("noise_std must be non-negative")
        if not self.phase_s >= 0:
            raise ValueError("phase_s must be non-negative")


@dataclass(frozen=True)
class SensorSuiteConfig:
    """Accelerometer, magnetometer and gyro models plus reference directions.

    Defaults are test-fixture values, not properties of any real device.
    """

    accel: SensorSpec = field(default_factory=lambda: SensorSpec(100.0, 0.01))
    mag: SensorSpec = field(default_factory=lambda: SensorSpec(100.0, 0.01))
    gyro: SensorSpec = field(default_factory=lambda: SensorSpec(100.0, 0.005))
    e1: np.ndarray = field(default_factory=lambda: ENU_UP.copy())
    e2: np.ndarray = field(default_factory=lambda: ENU_MAG.copy())
    seed: int = 0

    @property
    def E(self):
        return direction_triad(self.e1, self.e2)

    def sensor(self, name) -> SensorSpec:
        return getattr(self, name)


def _truth_arrays(truth):
    ts, Rs, Ws = [], [], []
    for item in truth:
        if isinstance(item, tuple):
            t, R, W = item
        else:
            t, R, W = item.t, item.R, item.Omega
        ts.append(float(t))
        Rs.append(np.asarray(R, dtype=float))
        Ws.append(np.asarray(W, dtype=float))
    return np.array(ts), Rs, Ws


def sensor_clock(ss: SensorSpec, t0, t1):
    """Sample times ``t0 + phase + k / rate`` that fall inside ``[t0, t1]``."""
    n = int(math.floor((t1 - t0 - ss.phase_s) * ss.rate_hz + TIME_EPS)) + 1
    return t0 + ss.phase_s + np.arange(max(n, 0)) / ss.rate_hz


class SensorSampler:
    """Incremental sampler: each call covers one truth interval.

    ``emit(R, Omega, until)`` produces every sample due in ``[last, until)``
    from the truth ``(R, Omega)`` held over that interval; ``final=True``
    makes the bound inclusive. Each sensor draws from its own seeded stream.
    """

    def __init__(self, cfg: SensorSuiteConfig, t0: float = 0.0):
        self.cfg = cfg
        self.t0 = float(t0)
        E = cfg.E
        self._refs = {"accel": E[:, 0], "mag": E[:, 1]}
        streams = np.random.SeedSequence(cfg.seed).spawn(len(SENSORS))
        self._rngs = [np.random.default_rng(ss) for ss in streams]
        self._k = [0] * len(SENSORS)

    def _time(self, ss, k):
        return self.t0 + ss.phase_s + k / ss.rate_hz

    def emit(self, R, Omega, until, final=False) -> List[RawSample]:
        out = []
        for order, name in enumerate(SENSORS):
            ss = self.cfg.sensor(name)
            rng = self._rngs[order]
            clean = np.asarray(Omega, dtype=float) if name == "gyro" else np.asarray(R).T @ self._refs[name]
            while True:
                tk = self._time(ss, self._k[order])
                if (tk > until + TIME_EPS) if final else (tk >= until - TIME_EPS):
                    break
                v = clean + ss.bias + ss.noise_std * rng.standard_normal(3)
                out.append((tk, order, RawSample(float(tk), name, v)))
                self._k[order] += 1
        out.sort(key=lambda x: (x[0], x[1]))
        return [x[2] for x in out]


def synthesize(truth, cfg: SensorSuiteConfig) -> List[RawSample]:
    """Sample the truth trajectory with each sensor's clock, noise and bias.

    ``truth`` is a sequence of ``SpacecraftState`` or ``(t, R, Omega)``; each
    sensor reads the latest truth sample at or before its own sample time.
    Accelerometer and magnetometer outputs are left unnormalised.
    """
    ts, Rs, Ws = _truth_arrays(truth)
    if len(ts) == 0:
        return []
    sampler = SensorSampler(cfg, ts[0])
    out = []
    for j in range(len(ts) - 1):
        out.extend(sampler.emit(Rs[j], Ws[j], ts[j + 1]))
    out.extend(sampler.emit(Rs[-1], Ws[-1], ts[-1], final=True))
    return out


def normalize_directions(samples: Sequence[RawSample]) -> List[RawSample]:
    """Scale accelerometer and magnetometer samples to unit length."""
    out = []
    for s in samples:
        if s.sensor == "gyro":
            out.append(s)
        else:
            out.append(RawSample(s.t, s.sensor, s.v / np.linalg.norm(s.v)))
    return out


def _split(samples):
    per = {name: ([], []) for name in SENSORS}
    for s in samples:
        per[s.sensor][0].append(s.t)
        per[s.sensor][1].append(np.asarray(s.v, dtype=float))
    return {k: (np.array(t), v) for k, (t, v) in per.items()}


def fastest_sensor(samples: Sequence[RawSample]) -> str:
    """Sensor with the smallest median sample interval; ties keep accel, mag, gyro order."""
    per = _split(samples)
    best, best_dt = None, math.inf
    for name in SENSORS:
        t = per[name][0]
        if len(t) < 2:
            continue
        dt = float(np.median(np.diff(t)))
        if dt < best_dt - TIME_EPS:
            best, best_dt = name, dt
    if best is None:
        best = max(SENSORS, key=lambda k: len(per[k][0]))
    return best


class HoldBuffer:
    """Last-value hold over a sample stream.

    ``push`` queues samples; ``frame(t)`` consumes everything at or before
    ``t`` and returns the held frame, or None until all sensors have reported.
    ``fresh`` marks sensors with a new sample since the previous emitted frame.
    """

    def __init__(self):
        self._queue = []
        self._latest = {}
        self._new = set()

    def push(self, samples):
        self._queue.extend(samples)

    def frame(self, t) -> Optional[MeasurementFrame]:
        keep = []
        for s in self._queue:
            if s.t <= t + TIME_EPS:
                self._latest[s.sensor] = s
                self._new.add(s.sensor)
            else:
                keep.append(s)
        self._queue = keep
        if len(self._latest) < len(SENSORS):
            return None
        fresh = tuple(k in self._new for k in SENSORS)
        self._new = set()
        v = {k: np.asarray(self._latest[k].v, dtype=float) for k in SENSORS}
        return MeasurementFrame(float(t), v["accel"], v["mag"], v["gyro"], fresh)


def resample_hold(samples: Sequence[RawSample], clock: Optional[str] = None) -> List[MeasurementFrame]:
    """Put every sensor on the fastest sensor's clock by holding the last value.

    Frames start once all three sensors have reported.
    """
    if not samples:
        return []
    samples = sorted(samples, key=lambda s: s.t)
    clock = clock or fastest_sensor(samples)
    buf = HoldBuffer()
    frames = []
    i, n = 0, len(samples)
    for tick in [s.t for s in samples if s.sensor == clock]:
        j = i
        while j < n and samples[j].t <= tick + TIME_EPS:
            j += 1
        buf.push(samples[i:j])
        i = j
        f = buf.frame(tick)
        if f is not None:
            frames.append(f)
    return frames


@dataclass
class IngestResult:
    samples: List[RawSample]
    errors: List[ParseError]


def _parse_row(row, lineno):
    if len(row) != 5:
        raise ParseError(lineno, len(row) + 1 if len(row) < 5 else 6, f"expected 5 fields, got {len(row)}")
    try:
        t = float(row[0])
    except ValueError:
        raise ParseError(lineno, 1, f"bad time {row[0]!r}") from None
    sensor = row[1].strip()
    if sensor not in SENSORS:
        raise ParseError(lineno, 2, f"unknown sensor {sensor!r}")
    v = np.empty(3)
    for i in range(3):
        try:
            v[i] = float(row[2 + i])
        except ValueError:
            raise ParseError(lineno, 3 + i, f"bad value {row[2 + i]!r}") from None
    if not (math.isfinite(t) and np.all(np.isfinite(v))):
        raise ParseError(lineno, 1, "non-finite value")
    if sensor != "gyro" and not np.linalg.norm(v) > 0:
        raise ParseError(lineno, 3, "zero direction vector")
    return RawSample(t, sensor, v)


def ingest_log(path, strict=False, normalize=True, rebase_time=True) -> IngestResult:
    """Read a sensor log.

    Malformed rows raise ``ParseError`` when ``strict``; otherwise they are
    skipped, logged and returned in ``errors``. With ``rebase_time`` times
    are shifted so the first sample is at 0. A time that does not increase within one sensor raises
    ``NonMonotoneTime`` regardless of ``strict``.
    """
    samples, errors = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        header_seen = False
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].lstrip().startswith("#")):
                continue
            if not header_seen:
                if [c.strip() for c in row] != LOG_HEADER:
                    raise ParseError(lineno, 1, f"expected header {','.join(LOG_HEADER)}")
                header_seen = True
                continue
            try:
                samples.append((lineno, _parse_row(row, lineno)))
            except ParseError as exc:
                if strict:
                    raise
                log.warning("%s: skipping %s", path, exc)
                errors.append(exc)
    if not header_seen:
        raise ParseError(1, 1, "missing header")
    last = {}
    for lineno, s in samples:
        if s.sensor in last and not s.t > last[s.sensor]:
            raise NonMonotoneTime(f"line {lineno}: {s.sensor} time {s.t} does not increase")
        last[s.sensor] = s.t
    out = [s for _, s in samples]
    if out and rebase_time:
        t0 = min(s.t for s in out)
        if t0 != 0.0:
            out = [RawSample(s.t - t0, s.sensor, s.v) for s in out]
    if normalize:
        out = normalize_directions(out)
    return IngestResult(out, errors)


def write_log(path, samples: Sequence[RawSample], comment: Optional[str] = None):
    """Write samples in the log format; floats use ``repr`` so reading back is exact."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for s in samples:
            w.writerow([repr(float(s.t)), s.sensor] + [repr(float(x)) for x in s.v])
