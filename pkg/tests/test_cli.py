import json
import subprocess
import sys

import pytest

from ssk_edge.cli import main


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_free_energy_residue_example(capsys):
    code, out, _ = run(["free-energy", "--alpha", "1", "--n", "2", "--spectrum", "1,-1",
                        "--beta", "1", "--method", "residue"], capsys)
    assert code == 0
    d = json.loads(out)
    # log sinh 2 = 1.2883673726...
    assert d["diagnostics"]["log_i_over_c"] == pytest.approx(1.2883673726141682, rel=1e-12)


@pytest.mark.parametrize("method", ["vertical", "keyhole", "steepest"])
def test_free_energy_contours_from_sampled_spectrum(capsys, method):
    code, out, _ = run(["free-energy", "--n", "50", "--b", "-1", "--seed", "3", "--method", method],
                       capsys)
    assert code == 0 and json.loads(out)["f"] > 0


def test_sample_is_byte_identical(capsys):
    _, a, _ = run(["sample", "--alpha", "2", "--n", "4", "--seed", "7"], capsys)
    _, b, _ = run(["sample", "--alpha", "2", "--n", "4", "--seed", "7"], capsys)
    assert a == b and len(json.loads(a)["values"]) == 4


@pytest.mark.parametrize("kind", ["tridiag", "dense"])
def test_sample_kinds(capsys, kind):
    code, out, _ = run(["sample", "--alpha", "1", "--n", "3", "--kind", kind], capsys)
    assert code == 0 and out.strip()


def test_missing_config_exits_1(capsys, tmp_path):
    code, _, err = run(["experiment", "--config", str(tmp_path / "missing.json")], capsys)
    assert code == 1 and "missing.json" in err


@pytest.mark.parametrize("args", [
    ["sample", "--n", "-3"],
    ["sample", "--n", "5", "--j", "2"],
    ["free-energy", "--b", "1", "--spectrum", "1,x"],
    ["nonsense"],
    ["tw-table", "--n", "100", "--samples", "10"],
])
def test_input_errors_exit_1(capsys, args):
    assert run(args, capsys)[0] == 1


def test_tw_table_small(capsys, tmp_path):
    p = tmp_path / "tw.csv"
    code, _, _ = run(["tw-table", "--n", "500", "--samples", "50", "--allow-small", "--out", str(p)],
                     capsys)
    assert code == 0
    assert p.read_text().count("\n") > 50


def _config(tmp_path, **kw):
    d = {"suite": "clt2", "ensemble": {"alpha": 2, "n": 60}, "m_replicas": 6, "master_seed": 1,
         "output": {"records": str(tmp_path / "r.jsonl")}}
    d.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def test_experiment_and_report(capsys, tmp_path):
    cfg = _config(tmp_path, thresholds={"ks": 1.0, "mutual_ks": 1.0})
    code, out, _ = run(["experiment", "--config", str(cfg)], capsys)
    assert code == 0 and out.startswith("suite,b,n,m,ks")
    code, rep, _ = run(["report", str(tmp_path / "r.jsonl")], capsys)
    assert code == 0 and rep == out
    code, js, _ = run(["report", str(tmp_path / "r.jsonl"), "--format", "json"], capsys)
    assert json.loads(js)["passed"] is True


def test_experiment_failure_exits_2(capsys, tmp_path):
    cfg = _config(tmp_path, thresholds={"ks": 1e-9})
    assert run(["experiment", "--config", str(cfg)], capsys)[0] == 2


def test_verify_json(capsys):
    code, out, _ = run(["verify"], capsys)
    d = json.loads(out)
    assert code == 0 and d["passed"] and all(c["passed"] for c in d["checks"])


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "ssk_edge.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "ssk-edge" in res.stdout
