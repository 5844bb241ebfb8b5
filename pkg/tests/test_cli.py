import json
import subprocess
import sys

import numpy as np
import pytest

from succbound.cli import main
from succbound.config import RunConfig, config_hash, load_config
from succbound.io import MANIFEST_NAME, format_value, sha256_file

CUBIC = {
    "model": {"inline": {"name": "cubic", "A": [["const(-1)"]],
                         "f": [{"component": 0, "coeff": "const(1)", "exponents": [3]}]}},
    "approximation": {"x0": [0.5], "horizon": 5.0, "m": 2},
    "region": {"methods": ["z2-A-m2", "reference"], "n_directions": 2, "horizon": 30.0,
               "r_lo": 0.1, "r_hi": 2.0, "tol": 1e-3, "chunk_size": 1},
    "sweep": {"t0s": [0.0, 1.0]},
}


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def _read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])


def test_config_round_trip(tmp_path):
    cfg = RunConfig.model_validate(CUBIC)
    p = tmp_path / "c.json"
    p.write_text(cfg.model_dump_json())
    again = load_config(p)
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert config_hash(RunConfig()) != config_hash(cfg)


@pytest.mark.parametrize("bad", [
    {"unknown": 1},
    {"schema_version": 2},
    {"approximation": {"m": 0}},
    {"approximation": {"scheme": "C"}},
    {"model": {"preset": "nope"}},
    {"model": {"preset": "duffing-6a", "overrides": {"gamma": 1.0}}},
    {"approximation": {"x0": [0.1, 0.2, 0.3]}},
    {"region": {"methods": ["z7-A-m1"]}},
    {"model": {"inline": {"A": [["const(-1)"]]}}},
    {"deterministic": False},
])
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ValueError):
        RunConfig.model_validate(bad)


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(float("nan")) == "nan"
    assert format_value(float("-inf")) == "-inf"
    assert format_value(np.int64(3)) == "3"
    assert format_value(True) == "1"


def test_exit_codes(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 3
    assert main(["simulate", "--config", _write(tmp_path, {"unknown": 1})]) == 1
    assert main(["simulate", "--preset", "nope", "--out", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--m", "many"])
    assert e.value.code == 1


def test_all_directions_failing_is_a_numeric_error(tmp_path):
    data = json.loads(json.dumps(CUBIC))
    data["region"].update(r_lo=1.5, r_hi=2.0, methods=["reference"])
    data["output_dir"] = str(tmp_path / "o")
    assert main(["region", "--config", _write(tmp_path, data)]) == 2
    assert (tmp_path / "o" / "region_reference.csv").exists()


def test_simulate_zero_data(tmp_path):
    out = tmp_path / "o"
    code = main(["simulate", "--preset", "vanderpol-8.1", "--f0", "0", "--out", str(out), "--config",
                 _write(tmp_path, {"approximation": {"x0": [0.0, 0.0], "horizon": 2.0}})])
    assert code == 0
    header, rows = _read_csv(out / "trajectory.csv")
    assert header == ["t", "norm_x_direct", "norm_Ym", "lower", "upper", "Z2"]
    assert not np.any(rows[:, 1:])
    assert rows[-1, 0] == 2.0


def test_bounds_outputs(tmp_path):
    out = tmp_path / "o"
    data = dict(CUBIC, output_dir=str(out))
    assert main(["bounds", "--config", _write(tmp_path, data)]) == 0
    header, rows = _read_csv(out / "bounds.csv")
    assert header == ["t", "Z1", "Z2", "Z3", "lower", "upper", "norm_Ym", "norm_x_direct"]
    Z1, Z2, lower, upper, nx = rows[:, 1], rows[:, 2], rows[:, 4], rows[:, 5], rows[:, 7]
    assert np.all(Z1 >= 0) and np.all(Z2 >= 0)
    assert np.all(lower <= nx + 1e-8) and np.all(nx <= upper + 1e-8)
    assert _read_csv(out / "linear_trace.csv")[0] == ["t", "norm_w", "p", "c"]
    assert _read_csv(out / "stack.csv")[0][:3] == ["t", "norm_y1", "norm_y2"]


def test_region_is_byte_identical_across_runs_and_workers(tmp_path):
    outs = []
    for k, workers in enumerate(["1", "2"]):
        out = tmp_path / f"o{k}"
        data = dict(CUBIC, output_dir=str(out))
        assert main(["region", "--workers", workers, "--config", _write(tmp_path, data, f"c{k}.json")]) == 0
        outs.append(out)
    for name in ("region_z2-A-m2.csv", "region_reference.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    header = (outs[0] / "region_reference.csv").read_text().splitlines()[0]
    assert header == "direction_angle,threshold_radius,method,t0,flags"

    lines = (outs[0] / MANIFEST_NAME).read_text().splitlines()
    assert len(lines) == 1
    man = json.loads(lines[0])
    assert man["command"] == "region"
    assert man["config_hash"] == config_hash(load_config(tmp_path / "c0.json"))
    for name, digest in man["files"].items():
        assert sha256_file(outs[0] / name) == digest


def test_sweep_outputs(tmp_path):
    out = tmp_path / "o"
    data = dict(CUBIC, output_dir=str(out))
    data["region"] = dict(CUBIC["region"], methods=["reference"])
    assert main(["sweep-t0", "--config", _write(tmp_path, data)]) == 0
    header, rows = _read_csv(out / "ratios_reference.csv")
    assert header == ["direction_angle", "r_t0_0", "r_t0_1", "ratio_t0_1"]
    assert np.allclose(rows[:, -1], 1.0, atol=1e-3)
    assert (out / "region_reference_t0_1.csv").exists()


def test_cli_overrides_retarget_methods(tmp_path):
    from succbound.cli import build_parser, resolve_config
    args = build_parser().parse_args(["region", "--m", "4", "--scheme", "B", "--t0", "1.5",
                                      "--config", _write(tmp_path, CUBIC)])
    cfg = resolve_config(args)
    assert cfg.region.methods == ("z2-B-m4", "reference")
    assert cfg.approximation.m == 4 and cfg.region.t0 == 1.5


@pytest.mark.slow
def test_selfcheck_passes_and_detects_loose_tolerance():
    run = lambda *a: subprocess.run([sys.executable, "-m", "succbound", "selfcheck", *a],
                                    capture_output=True, text=True)
    good = run()
    assert good.returncode == 0, good.stdout
    assert "6/6 checks passed" in good.stdout
    bad = run("--rel-tol", "1")
    assert bad.returncode == 2
    assert "FAIL telescoping" in bad.stdout
