"""Episode execution, metrics, batch and ablation runs, trace files.

One episode is a pure function of ``(scene, EpisodeConfig)``: the harness
owns the world, the maps, the controller and the oracle, and records every
step in a line-delimited JSON trace.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path


from . import vocab
from .cogmap import CognitiveMap, ObservationRecord
from .controller import ControllerConfig, Controller, Features, FrameDetection
from .fmm import travel_time_from_mask
from .geometry import dbscan_filter, voxel_downsample
from .mapping import (
    DEFAULT_INFLATE, SemanticOccupancyGrid, channel_table_for, integrate_observation,
    snapshot_sidecar, pgm_bytes,
)
from .reasoning import Oracle, OracleConfig, RemoteOracle, ScriptedOracle, Task
from .world import (
    AGENT_RADIUS, Action, Scene, body_gap, detect_objects, dumps_scene, goal_distance_field,
    goal_bodies, goal_region, initial_state, loads_scene, sense, step,
)

TRACE_FORMAT = "mcnav-trace/1"
RESULTS_FORMAT = "mcnav-results/1"

TASK_DEFAULTS = {
    Task.ON: {"max_steps": 500, "success_radius": 0.2, "perception_range": 5.0},
    Task.IIN: {"max_steps": 1000, "success_radius": 1.0, "perception_range": 30.0},
    Task.TN: {"max_steps": 1000, "success_radius": 1.0, "perception_range": 30.0},
}

TERMINATIONS = ("stopped_at_goal", "stopped_wrong", "step_cap", "exploration_exhausted")

# the threshold grid of the sensitivity study
THRESHOLD_GRID = ((0.5, 0.3), (0.6, 0.4), (0.7, 0.5), (0.8, 0.6))


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything that determines an episode besides the scene.

    ``None`` for ``max_steps``, ``success_radius`` or ``perception_range``
    selects the task default; ``None`` for ``map_resolution`` uses the
    scene's resolution and ``None`` for ``map_size`` sizes the map so the
    whole scene fits whatever the start position.
    """

    task: Task = Task.IIN
    max_steps: int | None = None
    success_radius: float | None = None
    perception_range: float | None = None
    tau_rev: float = 0.7
    tau_ree: float = 0.5
    tau_t: float = 0.7
    r: float = 2.0
    map_size: int | None = None
    map_resolution: float | None = None
    fov: float = 90.0
    n_rays: int = 120
    inflate: float = DEFAULT_INFLATE
    frontier_refresh: int = 20
    success_metric: str = "geodesic"
    features: Features = field(default_factory=Features)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    oracle_address: str | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        for name in ("tau_rev", "tau_ree", "tau_t"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.max_steps is not None and self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.success_metric not in ("geodesic", "euclidean"):
            raise ValueError("success_metric must be 'geodesic' or 'euclidean'")

    def resolved(self) -> EpisodeConfig:
        d = TASK_DEFAULTS[self.task]
        return dataclasses.replace(
            self,
            max_steps=self.max_steps if self.max_steps is not None else d["max_steps"],
            success_radius=self.success_radius if self.success_radius is not None else d["success_radius"],
            perception_range=self.perception_range if self.perception_range is not None else d["perception_range"],
        )

    def controller_config(self) -> ControllerConfig:
        c = self.resolved()
        return ControllerConfig(tau_rev=c.tau_rev, tau_ree=c.tau_ree, tau_t=c.tau_t, r=c.r,
                                success_radius=c.success_radius, inflate=c.inflate,
                                frontier_refresh=c.frontier_refresh, features=c.features)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = self.task.value
        d["features"] = self.features.label()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> EpisodeConfig:
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if isinstance(doc.get("features"), str):
            doc["features"] = Features.parse(doc["features"])
        elif isinstance(doc.get("features"), dict):
            doc["features"] = Features(**doc["features"])
        if isinstance(doc.get("oracle"), dict):
            doc["oracle"] = OracleConfig(**doc["oracle"])
        return cls(**doc)


@dataclass
class EpisodeResult:
    scene: str
    success: bool
    steps: int
    path_length: float
    optimal_length: float
    termination: str
    decisions: dict
    final_distance: float

    def __post_init__(self):
        if self.success and self.termination != "stopped_at_goal":
            raise ValueError("a successful episode must end by stopping at the goal")
        if self.optimal_length <= 0:
            raise ValueError("optimal length must be positive")

    def to_dict(self) -> dict:
        return {
            "scene": self.scene,
            "success": self.success,
            "steps": self.steps,
            "path_length": round(self.path_length, 6),
            "optimal_length": round(self.optimal_length, 6),
            "spl": round(spl_term(self), 9),
            "termination": self.termination,
            "decisions": dict(sorted(self.decisions.items())),
            "final_distance": round(self.final_distance, 6) if math.isfinite(self.final_distance) else None,
        }


@dataclass
class EpisodeOutput:
    result: EpisodeResult
    trace: list
    grid: SemanticOccupancyGrid
    cogmap: CognitiveMap | None


# ------------------------------------------------------------------ metrics

def spl_term(r: EpisodeResult) -> float:
    if not r.success:
        return 0.0
    return r.optimal_length / max(r.path_length, r.optimal_length)


def compute_spl(results) -> float:
    results = list(results)
    if not results:
        raise ValueError("no episodes")
    return sum(spl_term(r) for r in results) / len(results)


def compute_sr(results) -> float:
    results = list(results)
    if not results:
        raise ValueError("no episodes")
    return sum(1 for r in results if r.success) / len(results)


# ------------------------------------------------------------------ episodes

def goal_payload(scene: Scene, task: Task):
    """Goal input for the oracle: a category name for object goals, the
    goal object's appearance bundle for image and text goals."""
    g = scene.goal
    if Task(task) is Task.ON:
        return g.category
    return {"category": g.category, "intrinsic": sorted(g.intrinsic), "extrinsic": sorted(g.extrinsic)}


def scene_digest(scene: Scene) -> int:
    """Stable 63-bit fingerprint of a scene's serialized form."""
    h = hashlib.blake2b(dumps_scene(scene).encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") >> 1


def make_oracle(scene: Scene, cfg: EpisodeConfig) -> Oracle:
    """The scripted oracle's draws are keyed by the scene as well as the
    configured seeds, so which look-alikes confuse it differs per scene."""
    if cfg.oracle_address:
        return RemoteOracle.connect(cfg.oracle_address)
    seed = (scene_digest(scene) ^ (cfg.oracle.seed * 1_000_003 + cfg.seed)) & (2 ** 63 - 1)
    return ScriptedOracle(dataclasses.replace(cfg.oracle, seed=seed, goal_object_id=scene.goal_object_id))


def optimal_length(scene: Scene, success_radius: float, bodies=None) -> float:
    passable = scene.passable(AGENT_RADIUS)
    region = goal_region(scene, success_radius, bodies=bodies) & passable
    T = travel_time_from_mask(passable, region, scene.resolution)
    d = float(T[scene.cell_of(*scene.start_pose[:2])])
    return max(d, scene.resolution)


def _map_for(scene: Scene, cfg: EpisodeConfig, channels) -> SemanticOccupancyGrid:
    res = cfg.map_resolution or scene.resolution
    size = cfg.map_size
    if size is None:
        size = 2 * int(math.ceil(max(scene.width, scene.height) / res)) + 4
    return SemanticOccupancyGrid(size, res, center=scene.start_pose[:2], channels=channels)


def _r6(v) -> float:
    return round(float(v), 6)


def run_episode(scene: Scene, config: EpisodeConfig, name: str = "scene") -> EpisodeOutput:
    """Run one episode to a stop, the step cap, or exhaustion."""
    cfg = config.resolved()
    oracle = make_oracle(scene, cfg)
    goal = oracle.extract_goal(cfg.task, goal_payload(scene, cfg.task))
    categories = {goal.category, *goal.context, *vocab.BASE_CATEGORIES}
    grid = _map_for(scene, cfg, channel_table_for(goal.category, list(goal.context)))
    cmap = CognitiveMap(categories) if cfg.features.cmap else None
    ctrl = Controller(goal, oracle, cfg.controller_config(), grid, cmap, cfg.seed)
    # an object goal is reached at any instance of its category
    bodies = goal_bodies(scene, cfg.task is Task.ON)
    field_ = goal_distance_field(scene, bodies=bodies) if cfg.success_metric == "geodesic" else None

    state = initial_state(scene)
    collided = False
    trace: list[dict] = []
    pending_calls = oracle.drain_calls()
    decisions: dict[str, int] = {}
    termination = "step_cap"
    final_distance = math.inf
    for t in range(cfg.max_steps):
        obs = sense(scene, state, cfg.fov, cfg.n_rays, cfg.perception_range)
        dets = [d for d in detect_objects(scene, obs) if d.category in categories]
        integrate_observation(grid, obs, [(d.object_id, d.category) for d in dets])
        clouds = [dbscan_filter(voxel_downsample(d.points)) for d in dets]
        records = [ObservationRecord(t, (_r6(state.x), _r6(state.y), state.theta), d.object_id,
                                     d.confidence, d.area_ratio, d.visible_attrs) for d in dets]
        assigned, strong = [None] * len(dets), []
        if cmap is not None:
            fres = cmap.fuse(list(zip([d.category for d in dets], clouds, records)))
            assigned, strong = fres.assigned, fres.strong_evidence
        frame = []
        for d, cl, rec, nid in zip(dets, clouds, records, assigned):
            xy = cl[:, :2]
            frame.append(FrameDetection(d.category, (float(xy[:, 0].mean()), float(xy[:, 1].mean())),
                                        xy, rec, nid))
        action, info = ctrl.act(t, state, frame, collided, strong)
        for dec in info.decisions:
            decisions[dec.reason.value] = decisions.get(dec.reason.value, 0) + 1
        calls = pending_calls + oracle.drain_calls()
        pending_calls = []
        trace.append({
            "step": t,
            "pose": [_r6(state.x), _r6(state.y), state.theta],
            "action": action.value if action is not None else None,
            "mode": info.mode.value,
            "decision_reason": info.reason.value if info.reason is not None else None,
            "goal_xy": [_r6(v) for v in info.goal_xy] if info.goal_xy is not None else None,
            "decisions": [{"reason": d.reason.value, "goal": list(d.chosen_goal), "node": d.node_ref}
                          for d in info.decisions],
            "oracle_calls": calls,
            "blacklist_events": info.events,
            "collided": collided,
        })
        if action is None:
            termination = "exploration_exhausted"
            break
        if action is Action.STOP:
            final_distance = _goal_distance(scene, state, field_, bodies)
            ok = final_distance <= cfg.success_radius
            termination = "stopped_at_goal" if ok else "stopped_wrong"
            state = dataclasses.replace(state, step_count=state.step_count + 1)
            break
        state, collided = step(scene, state, action)
    if termination in ("step_cap", "exploration_exhausted"):
        final_distance = _goal_distance(scene, state, field_, bodies)
    result = EpisodeResult(name, termination == "stopped_at_goal", state.step_count, state.path_length,
                           optimal_length(scene, cfg.success_radius, bodies), termination, decisions,
                           final_distance)
    return EpisodeOutput(result, trace, grid, cmap)


def _goal_distance(scene: Scene, state, field_, bodies) -> float:
    gap = body_gap(scene, state.x, state.y, bodies=bodies)
    if field_ is None:
        return gap
    v = float(field_[scene.cell_of(state.x, state.y)])
    return max(gap, v) if math.isfinite(v) else gap


# ------------------------------------------------------------------ files

def dumps_trace(trace) -> str:
    return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in trace)


def write_trace(trace, path) -> None:
    Path(path).write_text(dumps_trace(trace))


def read_trace(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out


def results_document(suite: str, variant: str, results) -> dict:
    results = list(results)
    return {
        "format": RESULTS_FORMAT,
        "suite": suite,
        "variant": variant,
        "sr": round(compute_sr(results), 9),
        "spl": round(compute_spl(results), 9),
        "episodes": [r.to_dict() for r in results],
    }


def dumps_results(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_snapshots(out: EpisodeOutput, prefix) -> None:
    """Write ``<prefix>.pgm``, ``<prefix>.map.json`` and ``<prefix>.cogmap.json``."""
    prefix = str(prefix)
    Path(prefix + ".pgm").write_bytes(pgm_bytes(out.grid))
    Path(prefix + ".map.json").write_text(json.dumps(snapshot_sidecar(out.grid), sort_keys=True, indent=1))
    if out.cogmap is not None:
        Path(prefix + ".cogmap.json").write_text(out.cogmap.to_json())


def replay_mismatch(scene: Scene, config: EpisodeConfig, trace, name: str = "scene") -> int | None:
    """Re-run an episode and compare it with a recorded trace.

    Returns the first step whose record differs (actions, decisions,
    oracle calls or blacklist events), or ``None`` when the replay
    reproduces the trace exactly, including its length.
    """
    # both sides go through the trace encoding so float rounding matches
    fresh = [json.loads(line) for line in dumps_trace(run_episode(scene, config, name).trace).splitlines()]
    recorded = [json.loads(line) for line in dumps_trace(trace).splitlines()]
    for k, (a, b) in enumerate(zip(fresh, recorded)):
        if a != b:
            return k
    if len(fresh) != len(recorded):
        return min(len(fresh), len(recorded))
    return None


# ------------------------------------------------------------------ batches

def _run_one(job):
    name, scene_text, cfg_doc = job
    out = run_episode(loads_scene(scene_text), EpisodeConfig.from_dict(cfg_doc), name)
    return out.result, dumps_trace(out.trace)


def _config_doc(cfg: EpisodeConfig) -> dict:
    d = cfg.to_dict()
    d["oracle"] = dataclasses.asdict(cfg.oracle)
    return d


def run_batch(scenes, config: EpisodeConfig, workers: int = 1, trace_dir=None) -> list[EpisodeResult]:
    """Run every ``(name, scene)`` pair; results come back in input order.

    Episodes share nothing, so any ``workers`` count gives identical results.
    """
    jobs = [(name, dumps_scene(sc), _config_doc(config)) for name, sc in scenes]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    if trace_dir is not None:
        os.makedirs(trace_dir, exist_ok=True)
        for (name, _, _), (_, text) in zip(jobs, outs):
            Path(trace_dir, f"{name}.jsonl").write_text(text)
    return [r for r, _ in outs]


def run_ablation(scenes, variants: dict, config: EpisodeConfig, workers: int = 1) -> list[dict]:
    """SR and SPL of each named feature mask over the same scene suite."""
    scenes = list(scenes)
    rows = []
    for label, feats in variants.items():
        if isinstance(feats, str):
            feats = Features.parse(feats)
        res = run_batch(scenes, dataclasses.replace(config, features=feats), workers)
        rows.append({"variant": label, "features": feats.label(), "sr": round(compute_sr(res), 9),
                     "spl": round(compute_spl(res), 9), "n": len(res),
                     "terminations": {k: sum(r.termination == k for r in res) for k in TERMINATIONS}})
    return rows


def threshold_sweep(scenes, config: EpisodeConfig, grid=THRESHOLD_GRID, workers: int = 1) -> list[dict]:
    """SR and SPL for each ``(tau_rev, tau_ree)`` pair."""
    scenes = list(scenes)
    rows = []
    for tau_rev, tau_ree in grid:
        res = run_batch(scenes, dataclasses.replace(config, tau_rev=tau_rev, tau_ree=tau_ree), workers)
        rows.append({"tau_rev": tau_rev, "tau_ree": tau_ree, "sr": round(compute_sr(res), 9),
                     "spl": round(compute_spl(res), 9), "n": len(res)})
    return rows


def format_table(rows: list[dict], columns: list[str]) -> str:
    """Plain-text table with one header line."""
    cells = [[str(c) for c in columns]]
    for row in rows:
        cells.append([f"{row[c]:.3f}" if isinstance(row[c], float) else str(row[c]) for c in columns])
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells)
