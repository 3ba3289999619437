import json

import pytest

from mcnav.cli import main


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes")
    assert main(["gen", "--count", "3", "--seed", "5", "--resolution", "0.1", "--lookalikes", "2",
                 "--out", str(d)]) == 0
    return d


def test_gen_writes_scenes(scenes):
    assert sorted(p.name for p in scenes.glob("*.json")) == ["gen0005.json", "gen0006.json", "gen0007.json"]


def test_run_writes_trace_and_snapshot_then_render(tmp_path, scenes, capsys):
    rc = main(["run", str(scenes / "gen0005.json"), "--trace", str(tmp_path / "t.jsonl"),
               "--snapshot", str(tmp_path / "snap"), "--miss-prob", "0.5", "--flaky-prob", "0.3"])
    assert rc == 0
    res = json.loads(capsys.readouterr().out)
    assert res["termination"] in ("stopped_at_goal", "stopped_wrong", "step_cap", "exploration_exhausted")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == res["steps"]
    for ext in ("svg", "pgm"):
        out = tmp_path / f"r.{ext}"
        assert main(["render", str(tmp_path / "t.jsonl"), "--map", str(tmp_path / "snap.pgm"),
                     "--cogmap", str(tmp_path / "snap.cogmap.json"), "-o", str(out)]) == 0
        assert out.stat().st_size > 0


def test_batch_twice_is_byte_identical(tmp_path, scenes):
    for k in (1, 2):
        assert main(["batch", str(scenes), "--out", str(tmp_path / f"r{k}.json"),
                     "--trace-dir", str(tmp_path / f"t{k}"), "--miss-prob", "0.5", "--workers", str(k)]) == 0
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    for p in (tmp_path / "t1").iterdir():
        assert p.read_bytes() == (tmp_path / "t2" / p.name).read_bytes()


def test_config_file_and_override(tmp_path, scenes, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('task = "ON"\nmax_steps = 7\n[oracle]\nmiss_prob = 0.2\n')
    assert main(["run", str(scenes / "gen0006.json"), "--config", str(cfg)]) == 0
    assert json.loads(capsys.readouterr().out)["steps"] <= 7
    assert main(["run", str(scenes / "gen0006.json"), "--config", str(cfg), "--max-steps", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["steps"] <= 3
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"task": "IIN", "max_steps": 4}))
    assert main(["run", str(scenes / "gen0006.json"), "--config", str(js)]) == 0


def test_ablate_prints_table(tmp_path, capsys):
    out = tmp_path / "abl.json"
    assert main(["ablate", "--generate", "2", "--resolution", "0.1", "--variants", "a f", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["variant", "features", "sr", "spl", "n"]
    assert [json.loads(out.read_text())["rows"][k]["variant"] for k in (0, 1)] == ["a", "f"]
    assert main(["ablate", "--generate", "1", "--resolution", "0.1", "--thresholds"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 5


@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["run"],
    ["batch"],
    ["batch", "x.json", "--generate", "2"],
    ["gen", "--out", "x", "--count", "0"],
    ["run", "x.json", "--max-steps", "many"],
])
def test_usage_errors_exit_1(argv, capsys):
    with_exit = None
    try:
        with_exit = main(argv)
    except SystemExit as exc:
        with_exit = exc.code
    assert with_exit == 1


def test_invalid_inputs_exit_2(tmp_path, scenes):
    scene = str(scenes / "gen0005.json")
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    assert main(["run", scene, "--features", "gr"]) == 2
    assert main(["run", scene, "--tau-rev", "1.5"]) == 2
    assert main(["run", scene, "--miss-prob", "2"]) == 2
    conf = tmp_path / "c.toml"
    conf.write_text("warp = 9\n")
    assert main(["run", scene, "--config", str(conf)]) == 2
    assert main(["ablate", scene, "--variants", "a zz"]) == 2


def test_unreachable_oracle_exits_3(scenes):
    assert main(["run", str(scenes / "gen0005.json"), "--oracle-address", "127.0.0.1:1"]) == 3
