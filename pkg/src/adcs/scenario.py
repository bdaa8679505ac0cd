"""
Scenario files: YAML with explicit units in key names.

``validate`` walks a parsed document and reports every problem with its
field path; ``build`` turns a clean document into library objects. Unknown
keys are findings too, so a unit-less ``step`` is caught instead of ignored.
"""

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional

import numpy as np
import yaml

from .dynamics import SpacecraftConfig, SpacecraftState, VscmgParams
from .estimator import ENU_MAG, ENU_UP, BENCH_D, BENCH_M_GAIN, BENCH_W, FilterParams, direction_triad
from .errors import DegenerateDirections
from .sensors import SensorSpec, SensorSuiteConfig
from .so3 import exp_so3

MODES = ("simulate", "estimate-replay", "closed-loop")


@dataclass(frozen=True)
class Finding:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


@dataclass
class ControlSettings:
    detumble_gain_nms: float = 1e-3
    servo_gain_nms: tuple = (1e-3, 1e-3)
    gimbal_rate_limit_radps: float = 1.0
    rotor_rate_limit_radps: float = 1000.0
    damping: float = 1e-4


@dataclass
class Scenario:
    mode: str
    seed: int
    duration_s: float
    step_s: float
    spacecraft: SpacecraftConfig
    initial_state: SpacecraftState
    sensors: SensorSuiteConfig
    filter: FilterParams
    prefilter: bool
    initial_error_rotvec_rad: np.ndarray
    initial_omega_radps: np.ndarray
    control: ControlSettings = field(default_factory=ControlSettings)
    sensor_log: Optional[Path] = None
    truth_log: Optional[Path] = None
    output_dir: Optional[Path] = None

    @property
    def n_steps(self):
        return int(round(self.duration_s / self.step_s))

    @property
    def R_hat0(self):
        """Initial estimate ``Q0^T R0`` so that ``R0 R_hat0^T = Q0``."""
        return exp_so3(self.initial_error_rotvec_rad).T @ self.initial_state.R


# key -> (kind, required, default); kinds: num, int, bool, str, vec3, mat3, list, map, path
_UNIT = {
    "gimbal_inertia_kgm2": ("mat3", True, None),
    "rotor_inertia_kgm2": ("mat3", True, None),
    "gimbal_mass_kg": ("num", True, None),
    "rotor_mass_kg": ("num", True, None),
    "position_m": ("vec3", True, None),
    "rotor_offset_m": ("num", False, 0.0),
    "gimbal_axis": ("vec3", True, None),
    "rotor_axis": ("vec3", True, None),
    "mount_rotvec_rad": ("vec3", False, [0.0, 0.0, 0.0]),
}
_SPACECRAFT = {
    "inertia_kgm2": ("mat3", True, None),
    "vscmgs": ("list", False, []),
}
_INITIAL = {
    "attitude_rotvec_rad": ("vec3", False, [0.0, 0.0, 0.0]),
    "body_rate_radps": ("vec3", True, None),
    "gimbal_angle_rad": ("nvec", False, None),
    "rotor_angle_rad": ("nvec", False, None),
    "gimbal_rate_radps": ("nvec", False, None),
    "rotor_rate_radps": ("nvec", False, None),
}
_DIRECTION_SENSOR = {
    "rate_hz": ("num", False, 100.0),
    "noise_std_unitless": ("num", False, 0.01),
    "bias_unitless": ("vec3", False, [0.0, 0.0, 0.0]),
    "phase_s": ("num", False, 0.0),
}
_GYRO = {
    "rate_hz": ("num", False, 100.0),
    "noise_std_radps": ("num", False, 0.005),
    "bias_radps": ("vec3", False, [0.0, 0.0, 0.0]),
    "phase_s": ("num", False, 0.0),
}
_SENSORS = {
    "reference_up": ("vec3", False, list(ENU_UP)),
    "reference_mag": ("vec3", False, list(ENU_MAG)),
    "accel": ("map", False, {}),
    "mag": ("map", False, {}),
    "gyro": ("map", False, {}),
}
_FILTER = {
    "W": ("mat3", False, BENCH_W.tolist()),
    "D": ("mat3", False, BENCH_D.tolist()),
    "m_gain": ("num", False, BENCH_M_GAIN),
    "prefilter": ("bool", False, True),
    "nr_tol": ("num", False, 1e-12),
    "nr_max_iter": ("int", False, 25),
    "initial_error_rotvec_rad": ("vec3", False, [0.0, 0.0, 0.0]),
    "initial_omega_radps": ("vec3", False, [0.0, 0.0, 0.0]),
}
_CONTROL = {
    "detumble_gain_nms": ("num", False, 1e-3),
    "servo_gain_nms": ("list", False, [1e-3, 1e-3]),
    "gimbal_rate_limit_radps": ("num", False, 1.0),
    "rotor_rate_limit_radps": ("num", False, 1000.0),
    "damping": ("num", False, 1e-4),
}
_REPLAY = {
    "sensor_log": ("path", True, None),
    "truth_log": ("path", False, None),
}
_TOP = {
    "mode": ("str", False, "simulate"),
    "seed": ("int", False, 0),
    "duration_s": ("num", True, None),
    "step_s": ("num", True, None),
    "output_dir": ("str", False, None),
    "spacecraft": ("map", True, None),
    "initial_state": ("map", True, None),
    "sensors": ("map", False, {}),
    "filter": ("map", False, {}),
    "control": ("map", False, {}),
    "replay": ("map", False, None),
}


class _Checker:
    def __init__(self, base_dir):
        self.base_dir = Path(base_dir)
        self.findings: List[Finding] = []

    def add(self, path, msg):
        self.findings.append(Finding(path, msg))

    def section(self, doc, schema, path):
        """Type-check ``doc`` against ``schema``; returns a dict with defaults filled."""
        out = {}
        if not isinstance(doc, dict):
            self.add(path or "<root>", "expected a mapping")
            return None
        for key in doc:
            if key not in schema:
                self.add(_join(path, key), "unknown key (check spelling and unit suffix)")
        for key, (kind, required, default) in schema.items():
            p = _join(path, key)
            if key not in doc or doc[key] is None:
                if required:
                    self.add(p, "required")
                    out[key] = None
                else:
                    out[key] = copy.deepcopy(default)
                continue
            out[key] = self.value(doc[key], kind, p)
        return out

    def value(self, v, kind, path):
        try:
            if kind == "num":
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise TypeError
                if not math.isfinite(v):
                    raise ValueError
                return float(v)
            if kind == "int":
                if isinstance(v, bool) or not isinstance(v, int):
                    raise TypeError
                return v
            if kind == "bool":
                if not isinstance(v, bool):
                    raise TypeError
                return v
            if kind in ("str", "path"):
                if not isinstance(v, str):
                    raise TypeError
                return v
            if kind == "vec3":
                a = np.asarray(v, dtype=float)
                if a.shape != (3,) or not np.all(np.isfinite(a)):
                    raise ValueError
                return a
            if kind == "mat3":
                a = np.asarray(v, dtype=float)
                if a.shape != (3, 3) or not np.all(np.isfinite(a)):
                    raise ValueError
                return a
            if kind == "nvec":
                a = np.asarray(v, dtype=float)
                if a.ndim != 1 or not np.all(np.isfinite(a)):
                    raise ValueError
                return a
            if kind == "list":
                if not isinstance(v, list):
                    raise TypeError
                return v
            if kind == "map":
                if not isinstance(v, dict):
                    raise TypeError
                return v
        except (TypeError, ValueError):
            pass
        self.add(path, f"expected {_KIND_NAMES[kind]}")
        return None

    def positive(self, v, path, strict=True):
        if v is not None and not (v > 0 if strict else v >= 0):
            self.add(path, "must be positive" if strict else "must be non-negative")

    def spd(self, M, path):
        if M is None:
            return
        if np.abs(M - M.T).max() > 1e-12 * max(1.0, np.abs(M).max()):
            self.add(path, "must be symmetric")
        elif np.linalg.eigvalsh(M)[0] <= 0:
            self.add(path, "must be positive definite")

    def unit(self, v, path):
        if v is not None and not np.linalg.norm(v) > 0:
            self.add(path, "must be non-zero")


_KIND_NAMES = {
    "num": "a finite number",
    "int": "an integer",
    "bool": "true or false",
    "str": "a string",
    "path": "a file path string",
    "vec3": "a list of 3 finite numbers",
    "mat3": "a 3x3 list of finite numbers",
    "nvec": "a list of finite numbers, one per VSCMG",
    "list": "a list",
    "map": "a mapping",
}


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def load(path):
    """Parse a scenario file into a plain document."""
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh) or {}


def _check(doc, base_dir, mode=None):
    """Returns ``(findings, normalised document or None)``."""
    c = _Checker(base_dir)
    top = c.section(doc, _TOP, "")
    if top is None:
        return c.findings, None
    mode = mode or top["mode"]
    if mode not in MODES:
        c.add("mode", f"must be one of {', '.join(MODES)}")
    c.positive(top["duration_s"], "duration_s")
    c.positive(top["step_s"], "step_s")
    if top["seed"] is not None and top["seed"] < 0:
        c.add("seed", "must be non-negative")

    sc = c.section(top["spacecraft"], _SPACECRAFT, "spacecraft") if top["spacecraft"] is not None else None
    units = []
    if sc:
        c.spd(sc["inertia_kgm2"], "spacecraft.inertia_kgm2")
        for i, u in enumerate(sc["vscmgs"] or []):
            p = f"spacecraft.vscmgs.{i}"
            uu = c.section(u, _UNIT, p)
            if uu is None:
                continue
            c.spd(uu["gimbal_inertia_kgm2"], p + ".gimbal_inertia_kgm2")
            c.spd(uu["rotor_inertia_kgm2"], p + ".rotor_inertia_kgm2")
            c.positive(uu["gimbal_mass_kg"], p + ".gimbal_mass_kg")
            c.positive(uu["rotor_mass_kg"], p + ".rotor_mass_kg")
            c.unit(uu["gimbal_axis"], p + ".gimbal_axis")
            c.unit(uu["rotor_axis"], p + ".rotor_axis")
            g, e = uu["gimbal_axis"], uu["rotor_axis"]
            if g is not None and e is not None and np.linalg.norm(g) > 0 and np.linalg.norm(e) > 0:
                if abs(g @ e) > 1e-9 * np.linalg.norm(g) * np.linalg.norm(e):
                    c.add(p + ".rotor_axis", "must be perpendicular to gimbal_axis")
            units.append(uu)
        sc["vscmgs"] = units

    n = len(units)
    ini = c.section(top["initial_state"], _INITIAL, "initial_state") if top["initial_state"] is not None else None
    if ini:
        for key in ("gimbal_angle_rad", "rotor_angle_rad", "gimbal_rate_radps", "rotor_rate_radps"):
            if ini[key] is None:
                ini[key] = np.zeros(n)
            elif ini[key].shape != (n,):
                c.add(f"initial_state.{key}", f"expected {n} entries, one per VSCMG")

    sens = c.section(top["sensors"], _SENSORS, "sensors")
    if sens:
        for name in ("accel", "mag", "gyro"):
            schema = _GYRO if name == "gyro" else _DIRECTION_SENSOR
            s = c.section(sens[name], schema, f"sensors.{name}")
            if s:
                c.positive(s["rate_hz"], f"sensors.{name}.rate_hz")
                std_key = "noise_std_radps" if name == "gyro" else "noise_std_unitless"
                c.positive(s[std_key], f"sensors.{name}.{std_key}", strict=False)
                c.positive(s["phase_s"], f"sensors.{name}.phase_s", strict=False)
            sens[name] = s
        if sens["reference_up"] is not None and sens["reference_mag"] is not None:
            try:
                direction_triad(sens["reference_up"], sens["reference_mag"])
            except (DegenerateDirections, FloatingPointError, ZeroDivisionError):
                c.add("sensors.reference_mag", "must not be parallel to reference_up")

    filt = c.section(top["filter"], _FILTER, "filter")
    if filt:
        c.spd(filt["W"], "filter.W")
        if filt["D"] is not None and np.linalg.eigvalsh(0.5 * (filt["D"] + filt["D"].T))[0] <= 0:
            c.add("filter.D", "must be positive definite")
        c.positive(filt["m_gain"], "filter.m_gain")
        c.positive(filt["nr_tol"], "filter.nr_tol")
        c.positive(filt["nr_max_iter"], "filter.nr_max_iter")

    ctl = c.section(top["control"], _CONTROL, "control")
    if ctl:
        for key in ("detumble_gain_nms", "gimbal_rate_limit_radps", "rotor_rate_limit_radps", "damping"):
            c.positive(ctl[key], f"control.{key}", strict=key == "damping")
        sg = ctl["servo_gain_nms"]
        if sg is not None:
            a = np.asarray(sg, dtype=float) if all(isinstance(x, (int, float)) for x in sg) else None
            if a is None or a.shape != (2,) or not np.all(a > 0):
                c.add("control.servo_gain_nms", "expected [gimbal, rotor] positive gains")
        if mode == "closed-loop" and n == 0:
            c.add("spacecraft.vscmgs", "closed-loop needs at least one VSCMG")

    rep = None
    if mode == "estimate-replay":
        if top["replay"] is None:
            c.add("replay", "required in estimate-replay mode")
        else:
            rep = c.section(top["replay"], _REPLAY, "replay")
            if rep:
                for key in ("sensor_log", "truth_log"):
                    if rep[key] is not None:
                        p = c.base_dir / rep[key]
                        if not p.is_file():
                            c.add(f"replay.{key}", f"file not found: {p}")
                        rep[key] = p
    elif top["replay"] is not None:
        rep = c.section(top["replay"], _REPLAY, "replay")

    norm = dict(top, mode=mode, spacecraft=sc, initial_state=ini, sensors=sens, filter=filt, control=ctl, replay=rep)
    return c.findings, norm


def validate(doc_or_path, base_dir=None, mode=None) -> List[Finding]:
    """Every problem in a scenario, without running it. Empty means valid."""
    if isinstance(doc_or_path, (str, Path)):
        base_dir = Path(doc_or_path).parent if base_dir is None else base_dir
        try:
            doc = load(doc_or_path)
        except (OSError, yaml.YAMLError) as exc:
            return [Finding("<file>", str(exc))]
    else:
        doc = doc_or_path
    findings, _ = _check(doc, base_dir or ".", mode)
    return findings


class ScenarioError(ValueError):
    def __init__(self, findings):
        self.findings = list(findings)
        super().__init__("; ".join(str(f) for f in self.findings))


def build(doc, base_dir=".", mode=None, seed=None) -> Scenario:
    """Validated document to library objects; raises ``ScenarioError``."""
    findings, d = _check(doc, base_dir, mode)
    if findings:
        raise ScenarioError(findings)
    sc, ini, sens, filt, ctl, rep = (d[k] for k in ("spacecraft", "initial_state", "sensors", "filter", "control", "replay"))
    units = [
        VscmgParams(
            J_g=u["gimbal_inertia_kgm2"],
            J_r=u["rotor_inertia_kgm2"],
            m_g=u["gimbal_mass_kg"],
            m_r=u["rotor_mass_kg"],
            rho_g=u["position_m"],
            sigma=u["rotor_offset_m"],
            g_axis=u["gimbal_axis"],
            eta0=u["rotor_axis"],
            mount=exp_so3(u["mount_rotvec_rad"]),
        )
        for u in sc["vscmgs"]
    ]
    cfg = SpacecraftConfig(sc["inertia_kgm2"], units)
    state = SpacecraftState(
        exp_so3(ini["attitude_rotvec_rad"]),
        ini["body_rate_radps"],
        np.column_stack([ini["gimbal_angle_rad"], ini["rotor_angle_rad"]]),
        np.column_stack([ini["gimbal_rate_radps"], ini["rotor_rate_radps"]]),
    )
    seed = d["seed"] if seed is None else int(seed)

    def sensor(s, std, bias):
        return SensorSpec(s["rate_hz"], s[std], s[bias], s["phase_s"])

    suite = SensorSuiteConfig(
        accel=sensor(sens["accel"], "noise_std_unitless", "bias_unitless"),
        mag=sensor(sens["mag"], "noise_std_unitless", "bias_unitless"),
        gyro=sensor(sens["gyro"], "noise_std_radps", "bias_radps"),
        e1=sens["reference_up"],
        e2=sens["reference_mag"],
        seed=seed,
    )
    params = FilterParams(
        E=suite.E,
        W=filt["W"],
        m_gain=filt["m_gain"],
        D=filt["D"],
        h=d["step_s"],
        nr_tol=filt["nr_tol"],
        nr_max_iter=filt["nr_max_iter"],
    )
    control = ControlSettings(
        ctl["detumble_gain_nms"],
        tuple(float(x) for x in ctl["servo_gain_nms"]),
        ctl["gimbal_rate_limit_radps"],
        ctl["rotor_rate_limit_radps"],
        ctl["damping"],
    )
    return Scenario(
        mode=d["mode"],
        seed=seed,
        duration_s=d["duration_s"],
        step_s=d["step_s"],
        spacecraft=cfg,
        initial_state=state,
        sensors=suite,
        filter=params,
        prefilter=filt["prefilter"],
        initial_error_rotvec_rad=filt["initial_error_rotvec_rad"],
        initial_omega_radps=filt["initial_omega_radps"],
        control=control,
        sensor_log=rep["sensor_log"] if rep else None,
        truth_log=rep["truth_log"] if rep else None,
        output_dir=Path(base_dir) / d["output_dir"] if d["output_dir"] else None,
    )


def set_path(doc, dotted: str, value: Any):
    """Set ``a.b.0.c`` in a nested document, creating mappings as needed."""
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        if isinstance(node, list):
            node = node[int(k)]
        else:
            node = node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def packaged(name="tumble_benchmark"):
    """Path of a scenario shipped with the package."""
    return Path(__file__).with_name("scenarios") / f"{name}.yaml"
