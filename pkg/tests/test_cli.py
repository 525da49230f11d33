import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ballwalk import cli, config
from ballwalk.cli import to_json


BASE_1D = {
    "schema_version": 1,
    "potential": {"dimension": 1, "form": "builtin",
                  "name": "double_well_tilted", "params": [0.3]},
    "box": [[-2.0, 2.0]],
    "dx": 0.01,
    "h": 0.15,
    "count": 5,
    "landscape": {"dx": 0.002},
    "output": {"directory": "out", "formats": ["json", "csv"]},
}


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run_cli(args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "ballwalk.cli", *args],
                          capture_output=True, text=True, env=env)


# --- config parsing -------------------------------------------------------------


def test_config_roundtrip(tmp_path):
    cfg = config.load(write_cfg(tmp_path, BASE_1D))
    assert cfg.spec.name == "double_well_tilted"
    assert cfg.h == 0.15
    assert cfg.box.dimension == 1


def test_config_rejects_bad_schema(tmp_path):
    doc = dict(BASE_1D)
    doc["schema_version"] = 99
    with pytest.raises(config.ConfigError):
        config.load(write_cfg(tmp_path, doc))


def test_config_rejects_increasing_h_list(tmp_path):
    doc = dict(BASE_1D)
    doc.pop("h")
    doc["h_list"] = [0.1, 0.15]
    with pytest.raises(config.ConfigError):
        config.load(write_cfg(tmp_path, doc))


def test_config_rejects_small_h(tmp_path):
    doc = dict(BASE_1D)
    doc["h"] = 0.05   # < 8 dx
    with pytest.raises(config.ConfigError):
        config.load(write_cfg(tmp_path, doc))


def test_config_polynomial(tmp_path):
    doc = dict(BASE_1D)
    doc["potential"] = {"form": "polynomial",
                        "monomials": [{"exponents": [2], "coefficient": 1.0}]}
    cfg = config.load(write_cfg(tmp_path, doc))
    assert cfg.spec.form == "polynomial"


def test_json_serializer_17_digits():
    assert to_json(0.1) == "0.10000000000000001"
    assert float(to_json(1.0 / 3.0)) == 1.0 / 3.0
    assert to_json(float("inf")) == '"inf"'
    assert to_json({"a": [1, 2.5]}) == '{\n  "a": [1, 2.5]\n}'


# --- subcommands ------------------------------------------------------------------


def test_malformed_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    r = run_cli(["landscape", str(bad)])
    assert r.returncode == 2
    assert "config error" in r.stderr


def test_landscape_command(tmp_path):
    cfgp = write_cfg(tmp_path, BASE_1D)
    out = tmp_path / "out"
    r = run_cli(["landscape", cfgp, "--output-dir", str(out)])
    assert r.returncode == 0
    doc = json.loads((out / "landscape.json").read_text())
    assert list(doc.keys())[:5] == ["critical_points", "pairs", "n0", "n1",
                                    "warnings"]
    assert doc["n0"] == 2
    assert doc["n1"] == 1
    assert doc["pairs"][0]["S"] == "inf"
    assert doc["hypotheses"]["morse_ok"] is True


def test_landscape_single_well(tmp_path):
    doc = dict(BASE_1D)
    doc["potential"] = {"dimension": 1, "form": "builtin",
                        "name": "single_well"}
    cfgp = write_cfg(tmp_path, doc)
    out = tmp_path / "out"
    r = run_cli(["landscape", cfgp, "--output-dir", str(out)])
    assert r.returncode == 0
    rep = json.loads((out / "landscape.json").read_text())
    assert rep["n0"] == 1 and rep["n1"] == 0


def test_spectrum_command(tmp_path):
    cfgp = write_cfg(tmp_path, BASE_1D)
    out = tmp_path / "out"
    r = run_cli(["spectrum", cfgp, "--output-dir", str(out)])
    assert r.returncode == 0, r.stderr
    doc = json.loads((out / "spectrum.json").read_text())
    assert doc["kind"] == "WALK_P"
    assert doc["n_small"] == 2
    assert doc["eigenvalues"][0] <= 1e-12
    assert doc["solver"] == "DENSE"


def test_predict_command(tmp_path):
    cfgp = write_cfg(tmp_path, BASE_1D)
    out = tmp_path / "out"
    r = run_cli(["predict", cfgp, "--output-dir", str(out)])
    assert r.returncode == 0
    doc = json.loads((out / "predict.json").read_text())
    k1 = doc["predictions"][0]
    assert k1["flag"] == "simple eigenvalue"
    assert k1["gaps"][0]["walk"] == 0
    k2 = doc["predictions"][1]
    assert k2["gaps"][0]["walk"] > 0


def test_simulate_command(tmp_path):
    doc = dict(BASE_1D)
    doc["dx"] = 0.002
    doc["h"] = 0.25
    doc["walk"] = {"h": 0.25, "n_steps": 60, "n_chains": 500, "seed": 7,
                   "start": {"well": 2}, "record_every": 10}
    cfgp = write_cfg(tmp_path, doc)
    out = tmp_path / "out"
    r = run_cli(["simulate", cfgp, "--output-dir", str(out)])
    assert r.returncode == 0, r.stderr
    csv = (out / "simulate.csv").read_text().splitlines()
    assert csv[0] == "step,well_1_fraction,well_2_fraction"
    assert len(csv) >= 8
    doc = json.loads((out / "simulate.json").read_text())
    assert 0 < doc["acceptance_rate"] <= 1


def test_sweep_command_and_determinism(tmp_path):
    doc = dict(BASE_1D)
    doc["dx"] = 0.005
    doc.pop("h")
    doc["h_list"] = [0.3, 0.25, 0.2, 0.15]
    doc["landscape"] = {"dx": 0.002}
    cfgp = write_cfg(tmp_path, doc)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    r1 = run_cli(["sweep", cfgp, "--output-dir", str(out1)],
                 env_extra={"OPENBLAS_NUM_THREADS": "1",
                            "OMP_NUM_THREADS": "1"})
    assert r1.returncode == 0, r1.stderr
    r2 = run_cli(["sweep", cfgp, "--output-dir", str(out2)],
                 env_extra={"OPENBLAS_NUM_THREADS": "4",
                            "OMP_NUM_THREADS": "4"})
    assert r2.returncode == 0, r2.stderr
    # byte-identical data outputs at different thread settings
    assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()
    assert (out1 / "sweep.json").read_bytes() == (out2 / "sweep.json").read_bytes()
    header = (out1 / "sweep.csv").read_text().splitlines()[0]
    assert header == ("h,dx,k,measured_gap,predicted_gap,ratio,"
                      "witten_gap,witten_ratio")


def test_simulate_determinism_across_threads(tmp_path):
    doc = dict(BASE_1D)
    doc["dx"] = 0.002
    doc["walk"] = {"h": 0.25, "n_steps": 40, "n_chains": 400, "seed": 21,
                   "start": {"well": 2}, "record_every": 10}
    cfgp = write_cfg(tmp_path, doc)
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    r1 = run_cli(["simulate", cfgp, "--output-dir", str(out1)],
                 env_extra={"OMP_NUM_THREADS": "1"})
    r2 = run_cli(["simulate", cfgp, "--output-dir", str(out2)],
                 env_extra={"OMP_NUM_THREADS": "4"})
    assert r1.returncode == 0 and r2.returncode == 0
    assert (out1 / "simulate.csv").read_bytes() == (out2 / "simulate.csv").read_bytes()
    assert (out1 / "simulate.json").read_bytes() == (out2 / "simulate.json").read_bytes()


def test_outputs_confined_to_output_dir(tmp_path):
    cfgp = write_cfg(tmp_path, BASE_1D)
    out = tmp_path / "only_here"
    before = set(os.listdir(tmp_path))
    r = run_cli(["landscape", cfgp, "--output-dir", str(out)])
    assert r.returncode == 0
    after = set(os.listdir(tmp_path))
    assert after - before == {"only_here"}


def test_metadata_separate(tmp_path):
    cfgp = write_cfg(tmp_path, BASE_1D)
    out = tmp_path / "out"
    run_cli(["landscape", cfgp, "--output-dir", str(out)])
    meta = json.loads((out / "landscape_metadata.json").read_text())
    assert "created_unix" in meta
    data = (out / "landscape.json").read_text()
    assert "created" not in data


def test_selfcheck():
    r = run_cli(["selfcheck"])
    assert r.returncode == 0, r.stdout + r.stderr
    assert "PASS" in r.stdout
    assert "FAIL " not in r.stdout


def test_hypothesis_violation_exit_code(tmp_path):
    # symmetric triple well: the two finite barrier values coincide
    doc = dict(BASE_1D)
    doc["potential"] = {
        "form": "polynomial", "dimension": 1,
        "monomials": [{"exponents": [6], "coefficient": 1.0},
                      {"exponents": [4], "coefficient": -2.0},
                      {"exponents": [2], "coefficient": 1.0}]}
    doc["box"] = [[-1.3, 1.3]]
    doc["dx"] = 0.005
    doc["landscape"] = {"dx": 0.001}
    cfgp = write_cfg(tmp_path, doc)
    out = tmp_path / "out"
    r = run_cli(["landscape", cfgp, "--output-dir", str(out)])
    assert r.returncode == 4
    rep = json.loads((out / "landscape.json").read_text())
    assert rep["n0"] == 3
    assert rep["hypotheses"]["generic_ok"] is False


def test_formats_key_respected(tmp_path):
    doc = dict(BASE_1D)
    doc["dx"] = 0.005
    doc.pop("h")
    doc["h_list"] = [0.2]
    doc["output"] = {"directory": "out", "formats": ["csv"]}
    cfgp = write_cfg(tmp_path, doc)
    out = tmp_path / "out"
    r = run_cli(["sweep", cfgp, "--output-dir", str(out)])
    # a one-point sweep cannot fit a rate: numerical failure is acceptable
    if r.returncode == 0:
        assert (out / "sweep.csv").exists()
        assert not (out / "sweep.json").exists()


def test_cell_cap_respected(tmp_path):
    doc = dict(BASE_1D)
    doc["cell_cap"] = 100
    cfgp = write_cfg(tmp_path, doc)
    r = run_cli(["spectrum", cfgp, "--output-dir", str(tmp_path / "o")])
    assert r.returncode == 3
    assert "TooManyCells" in r.stderr
