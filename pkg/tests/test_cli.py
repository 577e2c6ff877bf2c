import json

import pytest

from ortholoc.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--views", "3", "--out", str(d), "--seed", "4"]) == 0
    return d


def test_synth_writes_samples(data):
    assert sorted(p.name for p in data.iterdir()) == ["s0000", "s0001", "s0002"]


def test_synth_from_spec(tmp_path, town):
    town.save(tmp_path / "scene.json")
    assert main(["synth", "--spec", str(tmp_path / "scene.json"), "--views", "1", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "s0000" / "camera.json").exists()


def test_localize_json(data, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["localize", "--sample", str(data / "s0000"), "--adhop", "--out", str(out)]) == 0
    r = json.loads(out.read_text())
    assert r["success"] and r["mode"] == "localize"
    assert set(r["metrics"]) >= {"te_m", "re_deg", "recall_1m1d"}


def test_calibrate_stdout(data, capsys):
    assert main(["calibrate", "--sample", str(data / "s0001"), "--matcher", "gt", "--seed", "1"]) == 0
    r = json.loads(capsys.readouterr().out)
    assert r["final"]["intrinsics"]["fx"] == pytest.approx(200.0, rel=0.02)


def test_localize_failure_exit_code(data, capsys):
    assert main(["localize", "--sample", str(data / "s0000"), "--matcher", "random"]) in (0, 1)


def test_bench_and_determinism(data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"matcher": "gt", "matcher_params": {"tau": 0.95}, "min_conf": 0.0}))
    for o in ("a", "b"):
        assert main(["bench", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / o), "--seed", "5"]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["recall_1m1d_pct"] == 100.0


@pytest.mark.parametrize("kind,extra", [
    ("gtconf", ["--values", "0.0", "0.95"]),
    ("covis", ["--values", "1.0", "0.5"]),
    ("resolution", ["--values", "1.0", "0.5", "--target", "both"]),
    ("domain", ["--values", "0.0", "0.5", "--shift", "both"]),
])
def test_ablate(data, tmp_path, capsys, kind, extra):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"matcher": "gt", "matcher_params": {"tau": 0.95}, "min_conf": 0.0}))
    assert main(["ablate", kind, "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "ab"), *extra]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 2


def test_errors_exit_2(tmp_path, capsys):
    assert main(["bench", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert "EmptyDataset" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["localize", "--sample", str(tmp_path), "--config", str(bad)]) == 2
