import csv
import json
import time

import pytest

from cpapprox import cli, matcore
from cpapprox.io import state_to_dict
from cpapprox.presets import random_state


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.run([*argv, "--out", str(out)])
    report = json.loads((out / "report.json").read_text())
    assert report["exit_code"] == code
    return code, report, out


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_approximate_demo(tmp_path):
    code, report, out = _run(tmp_path, "approximate", "--eps", "0.4", "--eps", "0.2", "--eps", "0.1")
    assert code == 0 and report["passed"]
    rows = _csv(out / "approximate.csv")
    assert [float(r["eps"]) for r in rows] == [0.4, 0.2, 0.1]
    defects = [float(r["probe_defect"]) for r in rows]
    assert all(a >= b for a, b in zip(defects, defects[1:]))
    for r in rows:
        assert float(r["matrix_probe_defect"]) <= 7 / 8 * float(r["eps"])
        assert int(r["rank"]) <= int(r["rank_bound"])


def test_approximate_from_state_file(tmp_path, rng):
    path = tmp_path / "phi.json"
    path.write_text(json.dumps(state_to_dict(random_state(rng, 3, 32))))
    code, report, _ = _run(tmp_path, "approximate", "--state", str(path), "--eps", "0.2")
    assert code == 0


def test_approximate_rejects_unfaithful_state(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"state": {"generator": "rudin", "level": 6, "smooth_level": 3}}))
    code, report, _ = _run(tmp_path, "approximate", "--config", str(cfg))
    assert code == 2
    assert report["checks"][-1]["witness"]["error"] == "NotGridFaithful"


@pytest.mark.parametrize(
    "argv",
    [
        ["counterexample", "--level", "5", "--smooth-level", "5"],
        ["counterexample", "--level", "5", "--smooth-level", "0"],
        ["approximate", "--tol", "ucp"],
        ["approximate", "--tol", "bogus=1"],
        ["approximate", "--eps", "0"],
    ],
)
def test_precondition_exit_code(tmp_path, argv):
    code, report, _ = _run(tmp_path, *argv)
    assert code == 2 and not report["passed"]


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    code, _, _ = _run(tmp_path, "selftest", "--config", str(cfg))
    assert code == 2


def test_counterexample_small(tmp_path):
    code, report, out = _run(tmp_path, "counterexample", "--level", "7", "--smooth-level", "3", "--eps", "0.2")
    assert code == 0
    rows = _csv(out / "tradeoff.csv")
    assert len(rows) == len(cli.DEFAULTS["counterexample"]["lambdas"])
    assert [r["pass"] for r in rows] == ["true", "false", "false", "false"]
    names = {c["name"] for c in report["checks"]}
    assert {"identity_rejected", "identity_defect_e12"} <= names


def test_selftest_is_deterministic_and_fast(tmp_path):
    t0 = time.perf_counter()
    code1, r1, _ = _run(tmp_path, "selftest", "--seed", "3", name="a")
    assert time.perf_counter() - t0 < 60
    code2, r2, _ = _run(tmp_path, "selftest", "--seed", "3", name="b")
    assert code1 == code2 == 0
    assert r1["report_hash"] == r2["report_hash"]


def test_selftest_catches_broken_routine(tmp_path, monkeypatch):
    real = matcore.psd_sqrt
    monkeypatch.setattr(matcore, "psd_sqrt", lambda a, *k, **kw: -real(a, *k, **kw))
    code, report, _ = _run(tmp_path, "selftest")
    assert code == 1
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert "matcore.psd_sqrt" in failed
