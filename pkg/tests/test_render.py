import json

import numpy as np
import pytest

from mcnav.harness import EpisodeConfig, read_trace, run_episode, write_snapshots, write_trace
from mcnav.reasoning import OracleConfig
from mcnav.render import load_grid_snapshot, parse_pgm, render, trace_events
from mcnav.world import GeneratorConfig, generate_scene


@pytest.fixture(scope="module")
def episode(tmp_path_factory):
    """An episode with memory events, written to disk."""
    d = tmp_path_factory.mktemp("ep")
    scene = generate_scene(5, GeneratorConfig(n_rooms=2, resolution=0.1, n_lookalikes=2))
    out = run_episode(scene, EpisodeConfig(oracle=OracleConfig(miss_prob=0.5, flaky_prob=0.3)))
    write_trace(out.trace, d / "t.jsonl")
    write_snapshots(out, d / "snap")
    return d


def inputs(d):
    trace = read_trace(d / "t.jsonl")
    grid = load_grid_snapshot(d / "snap.pgm")
    cogmap = json.loads((d / "snap.cogmap.json").read_text())
    return trace, grid, cogmap


def test_pgm_round_trip(episode):
    grid = load_grid_snapshot(episode / "snap.pgm")
    assert grid.image.shape == (grid.size, grid.size)
    assert set(np.unique(grid.image)) <= {0, 128, 255}
    with pytest.raises(ValueError):
        parse_pgm(b"P2\n1 1\n255\n0")


def test_empty_trace_gives_map_only_image(tmp_path, episode):
    _, grid, _ = inputs(episode)
    out = render([], grid, None, tmp_path / "m.pgm")
    img = parse_pgm(out.read_bytes())
    s = img.shape[0] // grid.size
    frontier_free = np.kron(grid.image, np.ones((s, s), np.uint8))
    # only frontier markers may differ from the occupancy picture
    assert set(np.unique(img[img != frontier_free])) <= {220}
    svg = render([], grid, None, tmp_path / "m.svg").read_text()
    assert "<polyline" not in svg and 'class="event ' not in svg


def test_events_and_nodes_are_drawn(tmp_path, episode):
    trace, grid, cogmap = inputs(episode)
    events = trace_events(trace)
    assert any(e["kind"] == "reexploration" for e in events)
    svg = render(trace, grid, cogmap, tmp_path / "e.svg").read_text()
    assert svg.count('class="event ') == len(events)
    assert svg.count('class="node"') + svg.count('class="blacklisted"') == len(cogmap["nodes"])
    n_black = sum(n["blacklist"] != "none" for n in cogmap["nodes"])
    assert svg.count('class="blacklisted"') == n_black
    assert "<polyline" in svg


def test_revalidation_marker_at_its_position(tmp_path, episode):
    _, grid, _ = inputs(episode)
    trace = [{"step": 0, "pose": [1.0, 1.0, 0], "decisions": [], "blacklist_events": []},
             {"step": 1, "pose": [1.5, 1.0, 0], "blacklist_events": [],
              "decisions": [{"reason": "revalidation", "goal": [3.0, 3.0], "node": 4}]}]
    svg = render(trace, grid, None, tmp_path / "r.svg").read_text()
    cx, cy = grid.pixel(1.5, 1.0)
    assert f'class="event revalidation" cx="{cx:.2f}" cy="{cy:.2f}"' in svg


def test_render_is_deterministic(tmp_path, episode):
    trace, grid, cogmap = inputs(episode)
    for ext in ("pgm", "svg"):
        a = render(trace, grid, cogmap, tmp_path / f"a.{ext}").read_bytes()
        b = render(trace, grid, cogmap, tmp_path / f"b.{ext}").read_bytes()
        assert a == b


def test_render_rejects_unknown_format(tmp_path, episode):
    trace, grid, cogmap = inputs(episode)
    with pytest.raises(ValueError):
        render(trace, grid, cogmap, tmp_path / "x.png")
    with pytest.raises(OSError):
        render(trace, grid, cogmap, tmp_path / "missing" / "x.svg")
