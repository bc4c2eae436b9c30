import hashlib
import json
import os

import pytest

from gfbm.cli import IoError, RunConfig, emit_report, run_command
from gfbm.smallball import SMALLBALL_HEADER, SmallBallEstimate


def _run(capsys, *argv):
    code = run_command(list(argv))
    out, err = capsys.readouterr()
    return code, out.strip(), err


def test_cov_brownian(capsys):
    code, out, _ = _run(capsys, "cov", "--alpha", "0", "--gamma", "0", "--fbm-limit", "--s", "0.3", "--t", "0.7")
    assert code == 0 and out == "0.300000000"


def test_cov_range_error(capsys):
    code, _, err = _run(capsys, "cov", "--alpha", "0.2", "--gamma", "0.6", "--s", "1", "--t", "1")
    assert code == 2 and "gamma" in err


def test_bad_arguments(capsys):
    assert _run(capsys)[0] == 2
    assert _run(capsys, "bogus")[0] == 2
    assert _run(capsys, "cov", "--defaults")[0] == 2
    assert _run(capsys, "simulate", "--defaults", "--n", "abc")[0] == 2


def test_runtime_failure_exit_1(capsys, tmp_path):
    code, _, err = _run(capsys, "classify", "--model", "kappa=1,beta=0.5", "--lambda-grid", "2:4:16",
                        "--out", str(tmp_path))
    assert code == 1 and "NoFlip" in err


def test_classify(capsys, tmp_path):
    code, out, _ = _run(capsys, "classify", "--model", "kappa=1,beta=0.5", "--family", "f-lambda",
                        "--lambda-grid", "0.25:4:16", "--out", str(tmp_path))
    assert code == 0
    thr = float(out.split("lambda = ")[1].split()[0])
    assert abs(thr - 1.0) <= 16 ** (1 / 15) - 1
    doc = json.load(open(tmp_path / "classify.json"))
    assert doc["schema"] == "lowerclass-v1"


def _manifest_ok(d):
    man = json.load(open(os.path.join(d, "manifest.json")))
    for f in man["files"]:
        data = open(os.path.join(d, f["name"]), "rb").read()
        assert hashlib.sha256(data).hexdigest() == f["sha256"]
    return man


def test_simulate_deterministic_across_workers(capsys, tmp_path):
    args = ["simulate", "--defaults", "--n", "16", "--paths", "1500", "--seed", "5"]
    assert _run(capsys, *args, "--workers", "1", "--out", str(tmp_path / "a"))[0] == 0
    assert _run(capsys, *args, "--workers", "4", "--out", str(tmp_path / "b"))[0] == 0
    a = open(tmp_path / "a" / "ensemble.csv", "rb").read()
    b = open(tmp_path / "b" / "ensemble.csv", "rb").read()
    assert a == b
    man = _manifest_ok(tmp_path / "a")
    assert man["seeds"] == [5] and man["config"]["subcommand"] == "simulate"


def test_config_roundtrip_reproduces(capsys, tmp_path):
    args = ["smallball", "--defaults", "--theta", "0.8,1.2", "--paths", "500", "--n", "32",
            "--no-refine", "--out", str(tmp_path / "a")]
    assert _run(capsys, *args)[0] == 0
    man = _manifest_ok(tmp_path / "a")
    cfg = RunConfig(**man["config"])
    assert RunConfig.from_json(cfg.to_json()) == cfg
    cfg.output_dir = str(tmp_path / "b")
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert _run(capsys, "--config", str(path))[0] == 0
    assert (open(tmp_path / "a" / "smallball.csv", "rb").read()
            == open(tmp_path / "b" / "smallball.csv", "rb").read())
    # explicit flags override the config
    assert _run(capsys, "--config", str(path), "--paths", "600", "--out", str(tmp_path / "c"))[0] == 0
    assert json.load(open(tmp_path / "c" / "manifest.json"))["config"]["options"]["paths"] == 600


def test_smallball_outputs(capsys, tmp_path):
    code, out, _ = _run(capsys, "smallball", "--alpha", "0", "--gamma", "0", "--fbm-limit",
                        "--theta", "0.6,0.8,1.0,1.2", "--paths", "1000", "--n", "64",
                        "--max-doublings", "1", "--out", str(tmp_path))
    assert code == 0 and "phi(1)" in out
    lines = open(tmp_path / "smallball.csv").read().splitlines()
    assert lines[0] == SMALLBALL_HEADER and len(lines) == 5
    svg = open(tmp_path / "smallball.svg").read()
    assert svg.startswith("<svg") and "config_digest" in svg
    _manifest_ok(tmp_path)


def test_lil_outputs(capsys, tmp_path):
    code, _, _ = _run(capsys, "lil", "--defaults", "--paths", "5", "--k-range", "4:6",
                      "--seeds", "1,2", "--out", str(tmp_path))
    assert code == 0
    rows = open(tmp_path / "lil_minima.csv").read().splitlines()
    assert rows[0] == "seed,k,checkpoint,median_running_min" and len(rows) == 1 + 2 * 3
    svg = open(tmp_path / "lil_minima.svg").read()
    assert "seed 1" in svg and "seed 2" in svg
    names = {f["name"] for f in _manifest_ok(tmp_path)["files"]}
    assert {"lil_minima.csv", "lil_minima.svg", "lil.json"} <= names


def test_sequences_and_lamperti(capsys, tmp_path):
    assert _run(capsys, "sequences", "--defaults", "--N", "50", "--out", str(tmp_path))[0] == 0
    assert (tmp_path / "sequence.csv").exists()
    code, out, _ = _run(capsys, "sequences", "--alpha", "0", "--gamma", "0", "--fbm-limit",
                        "--family", "covering", "--eps", "0.1", "--out", str(tmp_path))
    assert code == 0 and out.startswith("L_eps = 100")
    code, out, _ = _run(capsys, "cov", "--defaults", "--lamperti", "--out", str(tmp_path))
    assert code == 0 and "lamperti slope" in out
    assert (tmp_path / "lamperti.svg").exists()


def test_emit_report_empty(tmp_path):
    with pytest.raises(IoError, match="nothing to emit"):
        emit_report([], "csv", str(tmp_path))


def test_emit_report_csv(tmp_path):
    e = SmallBallEstimate(1.0, 1.0, 10, 4, 0.4, 0.1, 0.7, 8, "uniform", 0)
    files = emit_report([e], "csv", str(tmp_path))
    assert open(files[0]).read().splitlines()[1].startswith("1,1,10,4,0.40000000000000002")
