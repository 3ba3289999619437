"""Command-line interface: ``mcnav run|batch|ablate|render|gen``.

Episode flags mirror :class:`EpisodeConfig`. ``--config`` loads a TOML or
JSON file whose keys are EpisodeConfig field names (the oracle may be a
nested table); flags given on the command line win over the file.

Exit codes: 0 success, 1 usage error, 2 invalid scene or config,
3 the remote oracle became unavailable.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .controller import ABLATION_VARIANTS, Features
from .harness import (
    EpisodeConfig, THRESHOLD_GRID, dumps_results, format_table, results_document, run_ablation,
    run_batch, run_episode, threshold_sweep, write_snapshots, write_trace,
)
from .reasoning import OracleConfig, OracleUnavailable
from .render import load_grid_snapshot, render
from .world import GenerationFailed, GeneratorConfig, SceneError, generate_scene, load_scene, save_scene

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_ORACLE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvalidInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag name -> (EpisodeConfig field, type, help)
EPISODE_FLAGS = {
    "task": ("task", str, "ON, IIN or TN"),
    "max-steps": ("max_steps", int, "step cap (task default if unset)"),
    "success-radius": ("success_radius", float, "success distance in metres"),
    "perception-range": ("perception_range", float, "depth range in metres"),
    "tau-rev": ("tau_rev", float, "re-validation threshold"),
    "tau-ree": ("tau_ree", float, "re-exploration threshold"),
    "tau-t": ("tau_t", float, "verification threshold"),
    "r": ("r", float, "re-exploration scan radius in metres"),
    "map-size": ("map_size", int, "map side length in cells"),
    "map-resolution": ("map_resolution", float, "map cell size in metres"),
    "fov": ("fov", float, "field of view in degrees"),
    "n-rays": ("n_rays", int, "depth rays per frame"),
    "inflate": ("inflate", float, "obstacle inflation in metres"),
    "frontier-refresh": ("frontier_refresh", int, "steps between frontier refreshes"),
    "success-metric": ("success_metric", str, "geodesic or euclidean"),
    "features": ("features", str, "memory components, e.g. 'all', 'base' or 'cmap,gr,bl'"),
    "oracle-address": ("oracle_address", str, "remote oracle, host:port or stdio:<command>"),
    "seed": ("seed", int, "episode seed"),
}
ORACLE_FLAGS = {
    "oracle-seed": ("seed", int, "scripted oracle seed"),
    "miss-prob": ("miss_prob", float, "first-sight miss probability"),
    "flaky-prob": ("flaky_prob", float, "verification flakiness"),
    "score-noise": ("score_noise", float, "attribute score noise half-width"),
}
GEN_FLAGS = {
    "rooms": ("n_rooms", int, "rooms per scene"),
    "resolution": ("resolution", float, "bitmap cell size in metres"),
    "door-width": ("door_width", float, "door width in metres"),
    "goal-category": ("goal_category", str, "fix the goal category"),
    "context": ("n_context", int, "context objects near the goal"),
    "lookalikes": ("n_lookalikes", int, "same-category look-alikes"),
    "clutter": ("n_clutter", int, "unrelated objects"),
}


def _dest(flag: str) -> str:
    return "opt_" + flag.replace("-", "_")


def _add_flags(ap, flags, title):
    g = ap.add_argument_group(title)
    for flag, (_, typ, hlp) in flags.items():
        g.add_argument(f"--{flag}", dest=_dest(flag), type=typ, default=None, help=hlp)


def _episode_args(ap):
    ap.add_argument("--config", type=Path, help="TOML or JSON file of episode settings")
    _add_flags(ap, EPISODE_FLAGS, "episode")
    _add_flags(ap, ORACLE_FLAGS, "scripted oracle")


def _suite_args(ap):
    ap.add_argument("scenes", nargs="*", type=Path, help="scene files or directories of *.json scenes")
    ap.add_argument("--generate", type=int, metavar="N", help="use N generated scenes instead of files")
    ap.add_argument("--gen-seed", type=int, default=0, help="seed of the first generated scene")
    _add_flags(ap, GEN_FLAGS, "scene generation")
    ap.add_argument("--workers", type=int, default=1, help="parallel worker processes")


def load_config_file(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidInput(f"cannot read config: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InvalidInput(f"config {path}: {exc}") from exc


def build_config(args) -> EpisodeConfig:
    doc = load_config_file(args.config) if args.config is not None else {}
    if not isinstance(doc, dict):
        raise InvalidInput("config file must hold a table of settings")
    for flag, (name, _, _) in EPISODE_FLAGS.items():
        v = getattr(args, _dest(flag))
        if v is not None:
            doc[name] = v
    oracle = doc.get("oracle", {})
    if isinstance(oracle, OracleConfig):
        oracle = dataclasses.asdict(oracle)
    oracle = dict(oracle)
    for flag, (name, _, _) in ORACLE_FLAGS.items():
        v = getattr(args, _dest(flag))
        if v is not None:
            oracle[name] = v
    if oracle:
        doc["oracle"] = oracle
    if isinstance(doc.get("task"), str):
        doc["task"] = doc["task"].upper()
    try:
        return EpisodeConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"invalid config: {exc}") from exc


def generator_config(args) -> GeneratorConfig:
    kw = {}
    for flag, (name, _, _) in GEN_FLAGS.items():
        v = getattr(args, _dest(flag))
        if v is not None:
            kw[name] = v
    try:
        return GeneratorConfig(**kw)
    except ValueError as exc:
        raise InvalidInput(f"invalid generator settings: {exc}") from exc


def _read_scene(path: Path):
    try:
        return load_scene(path)
    except OSError as exc:
        raise InvalidInput(f"cannot read scene: {exc}") from exc
    except SceneError as exc:
        raise InvalidInput(f"invalid scene {path}: {exc}") from exc


def load_suite(args) -> list:
    """``(name, scene)`` pairs from files or from the generator."""
    if args.generate is not None:
        if args.scenes:
            raise UsageError("give scene files or --generate, not both")
        if args.generate <= 0:
            raise UsageError("--generate needs a positive count")
        gcfg = generator_config(args)
        out = []
        for s in range(args.gen_seed, args.gen_seed + args.generate):
            try:
                out.append((f"gen{s:04d}", generate_scene(s, gcfg)))
            except GenerationFailed as exc:
                raise InvalidInput(str(exc)) from exc
        return out
    if not args.scenes:
        raise UsageError("no scenes given; pass scene files, directories or --generate N")
    paths = []
    for p in args.scenes:
        paths += sorted(p.glob("*.json")) if p.is_dir() else [p]
    if not paths:
        raise InvalidInput("no scene files found")
    return [(p.stem, _read_scene(p)) for p in paths]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ------------------------------------------------------------------ commands

def cmd_run(args) -> int:
    cfg = build_config(args)
    scene = _read_scene(args.scene)
    out = run_episode(scene, cfg, args.scene.stem)
    if args.trace:
        args.trace.parent.mkdir(parents=True, exist_ok=True)
        write_trace(out.trace, args.trace)
    if args.snapshot:
        args.snapshot.parent.mkdir(parents=True, exist_ok=True)
        write_snapshots(out, args.snapshot)
    print(json.dumps(out.result.to_dict(), sort_keys=True, indent=1))
    return EXIT_OK


def cmd_batch(args) -> int:
    cfg = build_config(args)
    suite = load_suite(args)
    results = run_batch(suite, cfg, args.workers, args.trace_dir)
    doc = results_document(args.suite_name, cfg.features.label(), results)
    if args.out:
        _write(args.out, dumps_results(doc))
    print(f"episodes {len(results)}  SR {doc['sr']:.3f}  SPL {doc['spl']:.3f}")
    return EXIT_OK


def _variants(text: str) -> dict:
    """Table row letters (a-f) or feature lists, separated by spaces or ';'."""
    out = {}
    for tok in text.replace(";", " ").split():
        try:
            out[tok] = ABLATION_VARIANTS[tok] if tok in ABLATION_VARIANTS else Features.parse(tok)
        except ValueError as exc:
            raise InvalidInput(f"bad feature mask {tok!r}: {exc}") from exc
    if not out:
        raise UsageError("no variants given")
    return out


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    suite = load_suite(args)
    if args.thresholds:
        rows = threshold_sweep(suite, cfg, THRESHOLD_GRID, args.workers)
        columns = ["tau_rev", "tau_ree", "sr", "spl", "n"]
    else:
        rows = run_ablation(suite, _variants(args.variants), cfg, args.workers)
        columns = ["variant", "features", "sr", "spl", "n"]
    if args.out:
        _write(args.out, json.dumps({"rows": rows, "n_scenes": len(suite)}, sort_keys=True, indent=1) + "\n")
    print(format_table(rows, columns))
    return EXIT_OK


def cmd_render(args) -> int:
    from .harness import read_trace
    try:
        trace = read_trace(args.trace)
        grid = load_grid_snapshot(args.map, args.sidecar)
        cogmap = json.loads(Path(args.cogmap).read_text()) if args.cogmap else None
    except OSError as exc:
        raise InvalidInput(str(exc)) from exc
    except (ValueError, KeyError) as exc:
        raise InvalidInput(f"malformed input: {exc}") from exc
    if args.out.suffix.lower() not in (".pgm", ".svg"):
        raise UsageError("output must end in .pgm or .svg")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    render(trace, grid, cogmap, args.out)
    print(args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.count <= 0:
        raise UsageError("--count must be positive")
    gcfg = generator_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    for s in range(args.seed, args.seed + args.count):
        try:
            scene = generate_scene(s, gcfg)
        except GenerationFailed as exc:
            raise InvalidInput(str(exc)) from exc
        save_scene(scene, args.out / f"gen{s:04d}.json")
    print(f"wrote {args.count} scenes to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mcnav", description="Memory-aware goal navigation simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one episode")
    p.add_argument("scene", type=Path)
    p.add_argument("--trace", type=Path, help="write the step trace (JSON lines)")
    p.add_argument("--snapshot", type=Path, metavar="PREFIX",
                   help="write PREFIX.pgm, PREFIX.map.json and PREFIX.cogmap.json")
    _episode_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a scene suite and report SR and SPL")
    _suite_args(p)
    p.add_argument("--out", type=Path, help="results JSON file")
    p.add_argument("--trace-dir", type=Path, help="directory for per-episode traces")
    p.add_argument("--suite-name", default="suite")
    _episode_args(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("ablate", help="compare feature masks or sweep thresholds")
    _suite_args(p)
    p.add_argument("--variants", default="a b c d e f",
                   help="space- or ';'-separated table rows (a-f) or feature lists")
    p.add_argument("--thresholds", action="store_true", help="sweep the tau_rev/tau_ree grid instead")
    p.add_argument("--out", type=Path, help="table as JSON")
    _episode_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="draw a trace over a map snapshot")
    p.add_argument("trace", type=Path)
    p.add_argument("--map", type=Path, required=True, help="occupancy PGM written by run --snapshot")
    p.add_argument("--sidecar", type=Path, help="map sidecar JSON (default: <map>.map.json)")
    p.add_argument("--cogmap", type=Path, help="cognitive map JSON")
    p.add_argument("-o", "--out", type=Path, required=True, help="output .pgm or .svg")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen", help="write procedurally generated scenes")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_flags(p, GEN_FLAGS, "scene generation")
    p.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mcnav: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInput as exc:
        print(f"mcnav: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SceneError as exc:
        print(f"mcnav: invalid scene: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OracleUnavailable as exc:
        print(f"mcnav: oracle unavailable: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except OSError as exc:
        print(f"mcnav: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
