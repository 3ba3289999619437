"""Run one generated scene with a noisy oracle and draw the result.

    python demos/single_episode.py [--seed 5] [--out demo_out]

Writes the step trace, the map snapshots and an SVG picture of the
episode into ``--out``.
"""
import argparse
from pathlib import Path

from mcnav.harness import EpisodeConfig, run_episode, write_snapshots, write_trace
from mcnav.reasoning import OracleConfig
from mcnav.render import load_grid_snapshot, render
from mcnav.world import GeneratorConfig, generate_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("demo_out"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    scene = generate_scene(args.seed, GeneratorConfig(n_rooms=2, resolution=0.1, n_lookalikes=2))
    cfg = EpisodeConfig(oracle=OracleConfig(miss_prob=0.5, flaky_prob=0.3))
    out = run_episode(scene, cfg, f"gen{args.seed:04d}")
    write_trace(out.trace, args.out / "trace.jsonl")
    write_snapshots(out, args.out / "snap")
    picture = render(out.trace, load_grid_snapshot(args.out / "snap.pgm"), out.cogmap.snapshot(),
                     args.out / "episode.svg")
    r = out.result
    print(f"{r.termination}: {r.steps} steps, path {r.path_length:.2f} m, shortest {r.optimal_length:.2f} m")
    print(f"decisions {r.decisions}")
    print(f"picture {picture}")


if __name__ == "__main__":
    main()
