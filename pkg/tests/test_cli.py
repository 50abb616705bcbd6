import json
import subprocess
import sys

import pytest

from eqodds.cli import main
from eqodds.simulate import appendix_joint, joint_to_json


def _kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line)


@pytest.fixture
def expr_files(tmp_path):
    joint = tmp_path / "expr.json"
    joint.write_text(joint_to_json(appendix_joint("expR")))
    clf = tmp_path / "f.json"
    clf.write_text(json.dumps({"f": [[0, 1], [0, 1]]}))
    return joint, clf


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "eqodds.cli", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for name in ("simulate", "train", "predict", "citest", "check", "search", "postprocess",
                 "regions", "experiment"):
        assert name in out


def test_simulate_train_predict_citest(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert main(["simulate", "--n", "200", "--a-law", "uniform", "--seed", "3",
                 "--out", str(data)]) == 0
    assert _kv(capsys.readouterr().out)["rows"] == "200"
    model = tmp_path / "m.bin"
    assert main(["train", "--data", str(data), "--stochastic", "1", "--noise-dim", "2",
                 "--epochs", "2", "--lambda", "1", "--out", str(model)]) == 0
    assert (tmp_path / "m.bin.json").exists()
    capsys.readouterr()
    pred = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--data", str(data), "--out", str(pred)]) == 0
    assert float(_kv(capsys.readouterr().out)["mse"]) >= 0
    assert main(["citest", "--data", str(pred), "--perms", "19"]) == 0
    kv = _kv(capsys.readouterr().out)
    assert 0 < float(kv["p_value"]) <= 1 and kv["reject_at_0.05"] in ("True", "False")


def test_simulate_is_seeded(capsys):
    main(["simulate", "--kind", "discrete", "--n", "20", "--seed", "5"])
    first = capsys.readouterr().out
    main(["simulate", "--kind", "discrete", "--n", "20", "--seed", "5"])
    assert capsys.readouterr().out == first


def test_check_and_search(expr_files, capsys):
    joint, clf = expr_files
    assert main(["check", "--joint", str(joint), "--clf", str(clf)]) == 0
    kv = _kv(capsys.readouterr().out)
    assert kv["holds"] == "False" and kv["violation"] == "2/5"
    assert main(["search", "--joint", str(joint)]) == 0
    kv = _kv(capsys.readouterr().out)
    assert kv["fair_tables"] == "2" and kv["nontrivial"] == "0"


def test_postprocess(expr_files, capsys):
    joint, clf = expr_files
    assert main(["postprocess", "--joint", str(joint), "--clf", str(clf)]) == 0
    kv = _kv(capsys.readouterr().out)
    assert 0 <= float(kv["fpr"]) <= 1 and float(kv["loss"]) >= 0


def test_regions_writes_svg(expr_files, tmp_path, capsys):
    joint, clf = expr_files
    out = tmp_path / "r.svg"
    assert main(["regions", "--joint", str(joint), "--clf", str(clf), "--grid", "21",
                 "--pseudo", "--out", str(out)]) == 0
    assert out.read_text().startswith("<svg")
    assert "hausdorff_pseudo_post" in _kv(capsys.readouterr().out)


def test_experiment_uses_env_output(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("EQODDS_OUT", str(tmp_path))
    assert main(["experiment", "thm6-equiv", "--seeds", "0", "--set", "grid=21"]) == 0
    assert _kv(capsys.readouterr().out)["status"] == "complete"
    assert (tmp_path / "thm6-equiv" / "MANIFEST").exists()


def test_unknown_pipeline_is_usage_error(capsys):
    assert main(["experiment", "table9", "--out", "unused"]) == 2
    err = capsys.readouterr().err
    assert "table9" in err and "thm6-equiv" in err


def test_bad_override_and_missing_file(tmp_path, capsys):
    assert main(["experiment", "table1", "--set", "nope", "--out", str(tmp_path)]) == 1
    assert main(["check", "--joint", str(tmp_path / "none.json"),
                 "--clf", str(tmp_path / "none.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_failed_subrun_exit_code(tmp_path, monkeypatch, capsys):
    from eqodds import report

    def broken(params, seed):
        raise RuntimeError("boom")

    monkeypatch.setitem(report._RUNNERS, "table1", (broken, report._RUNNERS["table1"][1]))
    assert main(["experiment", "table1", "--out", str(tmp_path)]) == 1
    assert (tmp_path / "table1" / "MANIFEST").read_text().count("failure:") == 1
    assert "boom" in capsys.readouterr().err
