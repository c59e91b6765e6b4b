import json
import subprocess
import sys
from pathlib import Path

import pytest

from opecv.cli import main

DATA = Path(__file__).resolve().parents[1] / "data"
ECOLI = str(DATA / "ecoli.csv")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_convert(tmp_path, capsys):
    code, out, _ = run(capsys, "convert", ECOLI, "--out", str(tmp_path / "e.json"))
    assert code == 0
    info = json.loads(out)
    assert (info["n"], info["d"], info["m"]) == (336, 7, 8)
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["n"] == 336 and len(doc["labels"]) == 336


def test_convert_rejects_bad_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,a\nx,b\n")
    code, _, err = run(capsys, "convert", str(bad), "--out", str(tmp_path / "o.json"))
    assert code != 0 and "non-numeric" in err


def test_evaluate(tmp_path, capsys):
    args = ("evaluate", "--dataset", ECOLI, "--estimator", "TruncatedIPS:3", "--b0", "1",
            "--b1", "10", "--seed", "4", "--dump-logged", str(tmp_path / "log.json"))
    code, out, _ = run(capsys, *args)
    assert code == 0
    res = json.loads(out)
    assert res["estimator"] == {"kind": "TruncatedIPS", "hyper": 3.0}
    assert res["variance_of_mean"] >= 0 and res["n"] == 168
    assert json.loads((tmp_path / "log.json").read_text())["n"] == 168
    assert run(capsys, *args)[1] == out


def test_evaluate_bad_spec(capsys):
    code, _, err = run(capsys, "evaluate", "--dataset", ECOLI, "--estimator", "IPS:2")
    assert code != 0 and "error" in err


@pytest.mark.parametrize("validator", ["ips", "dr"])
def test_select(capsys, validator):
    code, out, _ = run(capsys, "select", "--dataset", ECOLI, "--bundle", "ips-dm-dr",
                       "--validator", validator, "--K", "10", "--seed", "0")
    assert code == 0
    res = json.loads(out)
    assert res["K"] == 10 and res["validator"]["kind"] == validator.upper()
    assert len(res["per_candidate"]) == 3
    assert all(len(c["losses"]) == 10 for c in res["per_candidate"])


def test_select_everything_and_slope(capsys):
    code, out, _ = run(capsys, "select", "--dataset", str(DATA / "vehicle.csv"), "--bundle",
                       "everything", "--K", "3")
    assert code == 0 and len(json.loads(out)["per_candidate"]) == 189
    code, out, _ = run(capsys, "select", "--dataset", ECOLI, "--method", "slope")
    assert code == 0 and json.loads(out)["slope"]["intervals"]


def test_bench_and_regret(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"datasets": [ECOLI], "runs": 2, "K": 3,
                               "bootstrap_resamples": 100, "methods": ["ocv-ips", "fixed"]}))
    code, out, _ = run(capsys, "bench", "--config", str(cfg), "--out", str(tmp_path / "b"))
    assert code == 0 and (tmp_path / "b" / "results.csv").exists()
    code, out, _ = run(capsys, "regret", "--config", str(cfg), "--sizes", "40,120",
                       "--out", str(tmp_path / "r"))
    assert code == 0
    for name in ("regret.csv", "regret_summary.csv", "plotdata/regret_by_size.csv"):
        assert (tmp_path / "r" / name).exists()


def test_missing_config(tmp_path, capsys):
    code, _, err = run(capsys, "bench", "--config", str(tmp_path / "nope.json"))
    assert code != 0 and "not found" in err


def test_bad_sizes(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"datasets": [ECOLI]}))
    code, _, err = run(capsys, "regret", "--config", str(cfg), "--sizes", "a,b")
    assert code != 0


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "opecv.cli", "select", "--dataset", ECOLI,
                           "--K", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["K"] == 2
