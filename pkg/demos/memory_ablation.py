"""Compare the base explorer with the memory components on a small suite.

    python demos/memory_ablation.py [--scenes 30] [--workers 1]

Prints SR and SPL for rows a, c, d and f of the submodule table under a
scripted oracle that misses the goal at first sight half of the time.
"""
import argparse
import time

from mcnav.controller import ABLATION_VARIANTS
from mcnav.harness import EpisodeConfig, format_table, run_ablation
from mcnav.reasoning import OracleConfig
from mcnav.world import GeneratorConfig, generate_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenes", type=int, default=30)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    gen = GeneratorConfig(n_rooms=2, resolution=0.1, n_lookalikes=2)
    suite = [(f"gen{s:04d}", generate_scene(s, gen)) for s in range(args.scenes)]
    cfg = EpisodeConfig(oracle=OracleConfig(miss_prob=0.5, flaky_prob=0.3))
    t0 = time.perf_counter()
    rows = run_ablation(suite, {k: ABLATION_VARIANTS[k] for k in "acdf"}, cfg, args.workers)
    print(format_table(rows, ["variant", "features", "sr", "spl", "n"]))
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
