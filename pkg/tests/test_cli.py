import copy

import numpy as np
import pytest
import yaml

from adcs import runner
from adcs.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main, parse_sweep
from adcs.scenario import build, load, packaged, set_path, validate

OUTPUTS = ("truth.csv", "sensors.csv", "estimate.csv", "errors.csv")


@pytest.fixture(scope="module")
def bench_doc():
    return load(packaged())


def write_scenario(tmp_path, doc, name="scenario.yaml", **overrides):
    doc = copy.deepcopy(doc)
    for k, v in overrides.items():
        set_path(doc, k, v)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def short(doc, duration=1.0):
    d = copy.deepcopy(doc)
    d["duration_s"] = duration
    return d


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return np.array([[float(x) for x in l.split(",")] for l in lines[1:]])


def test_packaged_scenario_is_valid(bench_doc):
    assert validate(packaged()) == []
    assert main(["validate", str(packaged())]) == EXIT_OK


def test_zero_duration_is_validation_error(tmp_path, bench_doc, capsys):
    path = write_scenario(tmp_path, bench_doc, duration_s=0.0)
    findings = validate(path)
    assert [f.path for f in findings] == ["duration_s"]
    assert main(["simulate", str(path), "--out-dir", str(tmp_path / "out")]) == EXIT_INVALID
    assert "duration_s" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_asymmetric_w_is_one_finding(tmp_path, bench_doc):
    path = write_scenario(tmp_path, bench_doc, **{"filter.W": [[3.19, 1.51, 0.0], [1.0, 3.19, 0.0], [0.0, 0.0, 2.0]]})
    findings = validate(path)
    assert len(findings) == 1
    assert findings[0].path == "filter.W"
    assert main(["validate", str(path)]) == EXIT_INVALID


def test_two_injected_faults_give_two_findings(tmp_path, bench_doc):
    path = write_scenario(tmp_path, bench_doc, step_s=-0.01, **{"sensors.gyro.rate_hz": 0.0})
    assert sorted(f.path for f in validate(path)) == ["sensors.gyro.rate_hz", "step_s"]


@pytest.mark.parametrize(
    "edit, paths",
    [
        (lambda d: d.update(step=d.pop("step_s")), ["step", "step_s"]),
        (lambda d: d["spacecraft"].update(inertia_kgm2=[[1, 0, 0], [0, -1, 0], [0, 0, 1]]), ["spacecraft.inertia_kgm2"]),
        (lambda d: d["initial_state"].update(rotor_rate_radps=[1.0, 2.0]), ["initial_state.rotor_rate_radps"]),
        (lambda d: d["spacecraft"]["vscmgs"][2].update(rotor_axis=[0, 0, 1]), ["spacecraft.vscmgs.2.rotor_axis"]),
        (lambda d: d["sensors"].update(reference_mag=[0, 0, 2]), ["sensors.reference_mag"]),
        (lambda d: d["filter"].update(m_gain="half"), ["filter.m_gain"]),
    ],
)
def test_findings_name_the_field(bench_doc, edit, paths):
    d = copy.deepcopy(bench_doc)
    edit(d)
    assert sorted(f.path for f in validate(d)) == paths


def test_replay_requires_existing_log(tmp_path, bench_doc):
    path = write_scenario(tmp_path, bench_doc, **{"replay.sensor_log": "missing.csv"})
    findings = validate(path, mode="estimate-replay")
    assert [f.path for f in findings] == ["replay.sensor_log"]
    assert main(["estimate-replay", str(path)]) == EXIT_INVALID


@pytest.mark.parametrize("mode, files", [("simulate", OUTPUTS[:2]), ("closed-loop", OUTPUTS)])
def test_same_seed_is_byte_identical(tmp_path, bench_doc, mode, files):
    path = write_scenario(tmp_path, short(bench_doc, 0.5))
    for run in ("a", "b"):
        assert main([mode, str(path), "--seed", "9", "--out-dir", str(tmp_path / run)]) == EXIT_OK
    for name in files:
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b
        assert a.startswith(b"# schema=adcs.")


def test_seed_changes_sensor_stream(tmp_path, bench_doc):
    path = write_scenario(tmp_path, short(bench_doc, 0.2))
    for seed in ("1", "2"):
        assert main(["simulate", str(path), "--seed", seed, "--out-dir", str(tmp_path / seed)]) == EXIT_OK
    assert (tmp_path / "1" / "truth.csv").read_bytes() == (tmp_path / "2" / "truth.csv").read_bytes()
    assert (tmp_path / "1" / "sensors.csv").read_bytes() != (tmp_path / "2" / "sensors.csv").read_bytes()


def test_simulate_then_replay_matches_in_process(tmp_path, bench_doc):
    doc = short(bench_doc, 3.0)
    sim = write_scenario(tmp_path, doc, "sim.yaml")
    assert main(["simulate", str(sim), "--out-dir", str(tmp_path / "sim")]) == EXIT_OK
    replay = write_scenario(
        tmp_path, doc, "replay.yaml", **{"replay.sensor_log": "sim/sensors.csv", "replay.truth_log": "sim/truth.csv"}
    )
    assert main(["estimate-replay", str(replay), "--out-dir", str(tmp_path / "rep")]) == EXIT_OK
    est = read_csv(tmp_path / "rep" / "estimate.csv")
    err = read_csv(tmp_path / "rep" / "errors.csv")
    ref = runner.pipeline(build(doc, tmp_path))
    ref_est = np.array([[fs.t, *fs.R_hat.ravel(), *fs.Omega_hat] for fs, _ in ref.estimates])
    ref_err = np.array([[d.t, d.angle_error, *d.omega_error, d.wahba_cost, d.nr_iterations] for _, d in ref.estimates])
    assert est.shape == ref_est.shape == (301, 13)
    np.testing.assert_allclose(est, ref_est, rtol=0, atol=1e-12)
    np.testing.assert_allclose(err, ref_err, rtol=0, atol=1e-12)


def test_replay_without_truth_writes_nan_errors(tmp_path, bench_doc):
    doc = short(bench_doc, 0.3)
    sim = write_scenario(tmp_path, doc, "sim.yaml")
    assert main(["simulate", str(sim), "--out-dir", str(tmp_path / "sim")]) == EXIT_OK
    replay = write_scenario(tmp_path, doc, "replay.yaml", **{"replay.sensor_log": "sim/sensors.csv"})
    assert main(["estimate-replay", str(replay), "--out-dir", str(tmp_path / "rep")]) == EXIT_OK
    err = read_csv(tmp_path / "rep" / "errors.csv")
    assert np.all(np.isnan(err[:, 1]))
    assert np.all(np.isfinite(err[1:, 5]))


def test_runtime_error_exit_code(tmp_path, bench_doc):
    (tmp_path / "gyro_only.csv").write_text("t,sensor,x,y,z\n0.0,gyro,0,0,0\n0.01,gyro,0,0,0\n")
    path = write_scenario(tmp_path, bench_doc, **{"replay.sensor_log": "gyro_only.csv"})
    assert main(["estimate-replay", str(path), "--out-dir", str(tmp_path / "out")]) == EXIT_RUNTIME


def test_bad_command_line_is_invalid():
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == EXIT_INVALID


@pytest.mark.parametrize(
    "arg, key, values",
    [
        ("filter.m_gain=0.25:0.75:3", "filter.m_gain", [0.25, 0.5, 0.75]),
        ("seed=1,2,5", "seed", [1, 2, 5]),
        ("spacecraft.vscmgs.0.rotor_mass_kg=0.1", "spacecraft.vscmgs.0.rotor_mass_kg", [0.1]),
    ],
)
def test_parse_sweep(arg, key, values):
    assert parse_sweep(arg) == (key, values)


@pytest.mark.parametrize("arg", ["nokey", "=1,2", "a=1:2", "a=1:2:0"])
def test_parse_sweep_rejects(arg):
    with pytest.raises(ValueError):
        parse_sweep(arg)


def test_sweep_writes_one_directory_per_value(tmp_path, bench_doc):
    path = write_scenario(tmp_path, short(bench_doc, 0.2))
    code = main(["simulate", str(path), "--out-dir", str(tmp_path / "sw"), "--sweep", "filter.m_gain=0.4,0.6", "--workers", "2"])
    assert code == EXIT_OK
    dirs = sorted(p.name for p in (tmp_path / "sw").iterdir())
    assert dirs == ["filter.m_gain=0.4", "filter.m_gain=0.6"]
    assert all((tmp_path / "sw" / d / "truth.csv").is_file() for d in dirs)


def test_sweep_with_invalid_value_reports_failure(tmp_path, bench_doc):
    path = write_scenario(tmp_path, short(bench_doc, 0.2))
    code = main(["simulate", str(path), "--out-dir", str(tmp_path / "sw"), "--sweep", "step_s=0.01,-1"])
    assert code == EXIT_INVALID
