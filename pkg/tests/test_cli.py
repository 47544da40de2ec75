import json
import os

import numpy as np
import pytest

from vbpp.cli import main, parse_domain
from vbpp.pointdata import load_events


def run(tmp, *argv):
    cwd = os.getcwd()
    os.chdir(tmp)
    try:
        return main(list(argv))
    finally:
        os.chdir(cwd)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A simulate -> fit chain reused by the downstream command tests."""
    tmp = tmp_path_factory.mktemp("cli")
    code = run(tmp, "simulate", "--domain", "0:3", "--gamma", "16",
               "--alpha", "0.5", "--grid-res", "256", "--seed", "1",
               "--out-dir", "sim")
    assert code == 0
    code = run(tmp, "fit", "--data", "sim/events.csv", "--domain", "0:3",
               "--inducing", "5", "--max-iters", "60", "--out-dir", "fit")
    assert code == 0
    return tmp


def test_parse_domain():
    d = parse_domain("0:1,2:5")
    assert d.lo.tolist() == [0.0, 2.0]
    assert d.hi.tolist() == [1.0, 5.0]
    import argparse
    with pytest.raises(argparse.ArgumentTypeError):
        parse_domain("0:1:2")
    with pytest.raises(argparse.ArgumentTypeError):
        parse_domain("a:b")


def test_simulate_outputs(workspace):
    sim = workspace / "sim"
    ev = load_events(sim / "events.csv", parse_domain("0:3"))
    assert ev.n > 0
    manifest = json.loads((sim / "simulate_manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["config"]["gamma"] == 16.0
    truth_rows = (sim / "truth.csv").read_text().strip().split("\n")
    assert truth_rows[0] == "x0,lambda"
    assert len(truth_rows) == 257


def test_fit_outputs(workspace):
    fit_dir = workspace / "fit"
    from vbpp.core import load_model
    model = load_model(fit_dir / "model.json")
    assert model.num_inducing == 5
    trace = (fit_dir / "trace.csv").read_text().strip().split("\n")
    assert trace[0] == "iteration,objective"
    assert len(trace) >= 3
    manifest = json.loads((fit_dir / "fit_manifest.json").read_text())
    assert manifest["config"]["inducing"] == 5


def test_predict_outputs(workspace):
    code = run(workspace, "predict", "--model", "fit/model.json",
               "--grid-res", "32", "--out-dir", "pred")
    assert code == 0
    rows = (workspace / "pred" / "intensity.csv").read_text().strip().split("\n")
    assert rows[0] == "x0,mean,lower,upper"
    assert len(rows) == 33
    vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    assert (vals[:, 2] <= vals[:, 1]).all()
    assert (vals[:, 1] <= vals[:, 3]).all()


def test_evaluate_with_split_and_baseline(workspace):
    code = run(workspace, "evaluate", "--model", "fit/model.json",
               "--data", "sim/events.csv", "--split", "0.5",
               "--samples", "300", "--grid-res", "128", "--baseline",
               "--out-dir", "eval")
    assert code == 0
    doc = json.loads((workspace / "eval" / "report.json").read_text())
    assert doc["l_p"] <= doc["m_p_hat"] + 4 * doc["m_p_stderr"] + 0.5
    assert np.isfinite(doc["ks_log_predictive"])
    assert doc["n_test"] > 0
    assert (workspace / "eval" / "intensity.csv").exists()
    assert (workspace / "eval" / "evaluate_manifest.json").exists()


def test_baseline_command(workspace):
    code = run(workspace, "baseline", "--data", "sim/events.csv",
               "--domain", "0:3", "--out-dir", "ks")
    assert code == 0
    doc = json.loads((workspace / "ks" / "ks_model.json").read_text())
    assert all(s > 0 for s in doc["sigma"])


def test_usage_errors_exit_2(workspace, capsys):
    assert run(workspace, "fit", "--data", "sim/events.csv") == 2  # no --domain
    assert run(workspace, "nonsense") == 2
    assert run(workspace, "simulate", "--domain", "0:1", "--link", "sigmoid",
               "--out-dir", "s2") == 2
    assert run(workspace, "evaluate", "--model", "fit/model.json",
               "--out-dir", "e2") == 2


def test_runtime_errors_exit_1(workspace):
    assert run(workspace, "fit", "--data", "no_such_file.csv",
               "--domain", "0:1", "--out-dir", "f2") == 1


def test_help_exits_zero(workspace):
    assert run(workspace, "--help") == 0


def test_rerun_byte_identical(workspace):
    for out in ("rep1", "rep2"):
        code = run(workspace, "fit", "--data", "sim/events.csv",
                   "--domain", "0:3", "--inducing", "4", "--max-iters", "40",
                   "--out-dir", out)
        assert code == 0
    a, b = workspace / "rep1", workspace / "rep2"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
