"""Goal selection for one episode: frontier exploration plus the memory-aware
strategies (goal re-validation, missed-goal re-exploration), temporary goals,
the double check and blacklist bookkeeping.

The controller is fed one frame at a time by the harness, after the
occupancy grid and the cognitive map have absorbed that frame, and answers
with the next action.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .cogmap import CognitiveMap, Event, ObservationRecord
from .mapping import (
    ARRIVED, DEFAULT_INFLATE, STUCK, InvalidSource, SemanticOccupancyGrid, extract_frontiers,
    fmm_field, fmm_field_to_points, next_action,
)
from .reasoning import (
    Evidence, GoalSpec, Oracle, OracleUnavailable, Task, revalidation_confidence, spatial_score,
)
from .world import AGENT_RADIUS, TURN_DEG, Action, AgentState

SCAN_STEPS = 360 // TURN_DEG
FRONTIER_REFRESH = 20
# no-progress watchdog: this many steps spent within PROGRESS_RADIUS metres
PROGRESS_WINDOW = 30
PROGRESS_RADIUS = 0.6
# detections this close (m) to a temporary goal's position are views of it
TRACK_RADIUS = 0.5
APPROACH_SLACK = 0.05
# slack (m) added around a planning window so cached fields survive map growth
CACHE_PAD = 1.0
# path-following fields are solved this far (m) past the agent, and reused
# while the agent stays HORIZON_SLACK inside that horizon
HORIZON_MARGIN = 1.0
HORIZON_SLACK = 0.5


class Mode(str, enum.Enum):
    EXPLORE = "explore"
    GOTO_FRONTIER = "goto_frontier"
    GOTO_TEMP_GOAL = "goto_temp_goal"
    REVALIDATE = "revalidate"
    REEXPLORE = "reexplore"
    SCANNING = "scanning"
    DONE = "done"


class Reason(str, enum.Enum):
    REVALIDATION = "revalidation"
    REEXPLORATION = "reexploration"
    FRONTIER = "frontier"
    TEMP_DETECTION = "temp_detection"
    SCAN = "scan"


@dataclass(frozen=True)
class Features:
    """Which memory components are switched on."""

    cmap: bool = True
    gr: bool = True
    mgr: bool = True
    bl: bool = True
    dc: bool = True

    def __post_init__(self):
        if (self.gr or self.mgr) and not self.cmap:
            raise ValueError("goal re-validation and re-exploration need the cognitive map")

    @classmethod
    def parse(cls, text: str) -> Features:
        """Comma-separated names of enabled components; ``none`` or ``base``
        for none, ``all`` or ``full`` for all."""
        text = text.strip().lower()
        if text in ("", "none", "base"):
            return cls(False, False, False, False, False)
        if text in ("all", "full"):
            return cls()
        names = {t.strip() for t in text.split(",") if t.strip()}
        unknown = names - {"cmap", "gr", "mgr", "bl", "dc"}
        if unknown:
            raise ValueError(f"unknown feature names: {sorted(unknown)}")
        return cls(**{k: k in names for k in ("cmap", "gr", "mgr", "bl", "dc")})

    def label(self) -> str:
        on = [k for k in ("cmap", "gr", "mgr", "bl", "dc") if getattr(self, k)]
        return ",".join(on) if on else "base"


# rows of the submodule ablation table
ABLATION_VARIANTS = {
    "a": Features(False, False, False, False, False),
    "b": Features(True, True, False, True, False),
    "c": Features(True, True, True, True, False),
    "d": Features(True, True, True, False, False),
    "e": Features(True, False, False, False, True),
    "f": Features(True, True, True, True, True),
}


@dataclass(frozen=True)
class ControllerConfig:
    tau_rev: float = 0.7
    tau_ree: float = 0.5
    tau_t: float = 0.7
    r: float = 2.0
    success_radius: float = 1.0
    inflate: float = DEFAULT_INFLATE
    frontier_refresh: int = FRONTIER_REFRESH
    frontier_min_cells: int = 4
    temp_goal_gap: float | None = None
    memory_gap: float = 0.8
    frontier_reach: float = 0.5
    max_approach_steps: int = 150
    window_margin: float = 1.0
    features: Features = field(default_factory=Features)

    def __post_init__(self):
        for name in ("tau_rev", "tau_ree", "tau_t"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def approach_gap(self) -> float:
        if self.temp_goal_gap is not None:
            return self.temp_goal_gap
        # stop a little inside the success radius: the gap is measured to
        # sensed surface points, which sit up to a cell off the true body
        return min(0.8, self.success_radius - APPROACH_SLACK)


@dataclass
class TempGoal:
    center: tuple[float, float]
    points_xy: np.ndarray
    node_id: int | None
    since: int
    last_record: ObservationRecord | None = None


@dataclass
class ControllerState:
    mode: Mode = Mode.EXPLORE
    long_term_goal: tuple[float, float] | None = None
    temp_goal: TempGoal | None = None
    steps_since_frontier_refresh: int = 0
    scan_remaining: int = 0
    rng_seed: int = 0
    target_node: int | None = None
    reason: Reason | None = None


@dataclass(frozen=True)
class Decision:
    chosen_goal: tuple[float, float]
    reason: Reason
    node_ref: int | None = None


@dataclass(frozen=True)
class FrameDetection:
    """One detection of the current frame as the controller sees it."""

    category: str
    center: tuple[float, float]
    points_xy: np.ndarray
    record: ObservationRecord
    node_id: int | None = None


@dataclass
class StepInfo:
    mode: Mode
    reason: Reason | None
    goal_xy: tuple[float, float] | None
    events: list
    decisions: list
    terminal: str | None = None


@dataclass
class RevalidationResult:
    choice: tuple | None
    rejected: list[int]
    scores: dict


def scan_sequence() -> list[Action]:
    """The in-place full turn performed on arrival at a memory target."""
    return [Action.TURN_LEFT] * SCAN_STEPS


def _euclid(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def select_revalidation_target(cmap: CognitiveMap, goal: GoalSpec, r: float, tau_rev: float,
                               oracle: Oracle, distance=None, eligible=None,
                               use_blacklist: bool = True) -> RevalidationResult:
    """Score remembered goal-category nodes and pick the most convincing.

    ``distance(node)`` breaks ties (nearest first, then lowest id); by
    default nodes tie only on id. ``eligible`` restricts the candidates to
    a set of node ids. Every scored node that does not clear ``tau_rev`` is
    listed in ``rejected``; nodes the oracle could not score are skipped.
    """
    distance = distance or (lambda n: 0.0)
    best, rejected, scores = None, [], {}
    for node in cmap.query_by_category(goal.category, include_blacklisted=not use_blacklist):
        if eligible is not None and node.node_id not in eligible:
            continue
        s_spa = spatial_score(cmap.neighbors(node, r), set(goal.context))
        try:
            v = oracle.score_candidate(node.records, goal)
        except OracleUnavailable:
            scores[node.node_id] = 0.0
            continue
        ell = revalidation_confidence(v.s_int, v.s_ext, s_spa)
        scores[node.node_id] = ell
        if ell <= tau_rev:
            rejected.append(node.node_id)
            continue
        key = (-ell, distance(node), node.node_id)
        if best is None or key < best[0]:
            best = (key, node, ell)
    return RevalidationResult(None if best is None else (best[1], best[2]), sorted(rejected), scores)


def select_reexploration_target(cmap: CognitiveMap, goal: GoalSpec, tau_ree: float, frontier_pos,
                                oracle: Oracle, consumed: set, distance=None):
    """Pick a context node whose surroundings likely hide the goal.

    Returns ``(position, reason, node_id)``. When no node clears
    ``tau_ree`` the frontier position comes back with reason ``frontier``
    (``None`` when exploration is complete). The chosen node is added to
    ``consumed`` and never offered again.
    """
    distance = distance or (lambda n: 0.0)
    context = set(goal.context)
    best = None
    try:
        for node in sorted(cmap.confirmed, key=lambda n: n.node_id):
            if node.category not in context or node.node_id in consumed:
                continue
            ell = oracle.infer_nearby_likelihood(node.records, goal, node.category)
            if ell <= tau_ree:
                continue
            key = (-ell, distance(node), node.node_id)
            if best is None or key < best[0]:
                best = (key, node)
    except OracleUnavailable:
        return frontier_pos, Reason.FRONTIER, None
    if best is None:
        return frontier_pos, Reason.FRONTIER, None
    node = best[1]
    consumed.add(node.node_id)
    return node.center, Reason.REEXPLORATION, node.node_id


def double_check(task, cmap: CognitiveMap | None, region, evidence: Evidence | None,
                 goal: GoalSpec, oracle: Oracle, tau_t: float, in_view: bool = False) -> bool:
    """Final confirmation before stopping at a temporary goal.

    Object goals consult the cognitive map for a confirmed node of the goal
    category inside ``region``; a goal-category candidate in view inside the
    region (``in_view``) also counts. Instance and text goals ask the oracle
    about the latest close view. Any oracle failure counts as unconfirmed.
    """
    if Task(task) is Task.ON and cmap is not None:
        return in_view or cmap.region_query(region, goal.category)
    if evidence is None:
        return False
    try:
        return oracle.verify_instance(evidence, goal, tau_t)
    except OracleUnavailable:
        return False


class Controller:
    """Per-episode goal selection and local policy."""

    def __init__(self, goal: GoalSpec, oracle: Oracle, config: ControllerConfig,
                 grid: SemanticOccupancyGrid, cmap: CognitiveMap | None = None, seed: int = 0):
        self.goal = goal
        self.oracle = oracle
        self.cfg = config
        self.feat = config.features
        self.grid = grid
        self.cmap = cmap if self.feat.cmap else None
        self.state = ControllerState(rng_seed=seed)
        self.match_failed: set[int] = set()
        self.consumed: set[int] = set()
        self.rejected_positions: list[tuple[float, float]] = []
        self.bad_targets: list[tuple[float, float]] = []
        self._near_turns = 0
        self._field_cache: dict = {}
        self.unreachable: set[int] = set()
        self._recent: deque = deque(maxlen=PROGRESS_WINDOW)
        self._recent_goal = None
        self.last_revalidation = -10 ** 9
        self.t = 0
        self._events: list = []
        self._decisions: list = []
        self._scan_best: dict = {}
        self._scan_kind: Mode | None = None
        self._scan_target: int | None = None

    # ------------------------------------------------------------ helpers

    def _emit(self, node_id: int, event: Event) -> None:
        """Apply a blacklist event when the blacklist is enabled."""
        if self.cmap is None or not self.feat.bl:
            return
        self.cmap.blacklist_event(node_id, event)
        self._events.append({"node": node_id, "event": Event(event).value})

    def _blocked(self, node_id: int | None) -> bool:
        if node_id is None or self.cmap is None or not self.feat.bl:
            return False
        return self.cmap.node(node_id).blacklist.active

    def _decide(self, goal_xy, reason: Reason, node: int | None = None) -> Decision:
        d = Decision(tuple(round(float(v), 6) for v in goal_xy), reason, node)
        self._decisions.append(d)
        self.state.reason = reason
        return d

    def _window(self, state: AgentState, extra=()):
        g = self.grid
        margin = int(math.ceil(self.cfg.window_margin / g.resolution))
        bbox = g.known_bbox(margin)
        pts = [(state.x, state.y), *extra]
        rc = np.array([g.cell_of(x, y) for x, y in pts])
        r0, c0 = rc.min(axis=0) - margin
        r1, c1 = rc.max(axis=0) + margin + 1
        if bbox is not None:
            r0, r1 = min(r0, bbox[0]), max(r1, bbox[1])
            c0, c1 = min(c0, bbox[2]), max(c1, bbox[3])
        return (int(max(r0, 0)), int(min(r1, g.size)), int(max(c0, 0)), int(min(c1, g.size)))

    def _near_any(self, xy, points, tol: float = 0.5) -> bool:
        return any(_euclid(xy, p) <= tol for p in points)

    def _gap(self, state: AgentState, pts: np.ndarray) -> float:
        d = np.hypot(pts[:, 0] - state.x, pts[:, 1] - state.y)
        return float(d.min()) - AGENT_RADIUS

    def _node_points(self, node_id: int) -> np.ndarray:
        return self.cmap.node(node_id).cloud[:, :2]

    def _cached_field(self, key, window, compute, agent=None, pad: float = CACHE_PAD):
        """Reuse a field while no new obstacle has been mapped and its window
        still covers ``window``; unknown cells plan as free, so a field over
        a larger window stays valid."""
        hit = self._field_cache.get(key)
        if hit is not None:
            version, (r0, r1, c0, c1), fld = hit
            if version == self.grid.occ_version and r0 <= window[0] and window[1] <= r1 \
                    and c0 <= window[2] and window[3] <= c1 and self._within_horizon(fld, agent):
                return fld
        pad = int(math.ceil(pad / self.grid.resolution))
        n = self.grid.size
        wide = (max(window[0] - pad, 0), min(window[1] + pad, n), max(window[2] - pad, 0), min(window[3] + pad, n))
        try:
            fld = compute(wide)
        except InvalidSource:
            fld = None
        if len(self._field_cache) > 64:
            self._field_cache.clear()
        self._field_cache[key] = (self.grid.occ_version, wide, fld)
        return fld

    @staticmethod
    def _within_horizon(fld, agent) -> bool:
        if fld is None or agent is None or not math.isfinite(fld.horizon):
            return True
        v = fld.at(*agent)
        return v <= fld.horizon - HORIZON_SLACK

    def _step_to_points(self, state: AgentState, pts: np.ndarray, gap: float):
        """Action toward the ring at ``gap`` around ``pts``; STUCK if none."""
        res = self.grid.resolution
        radius = AGENT_RADIUS + gap - res
        window = self._window(state, [tuple(p) for p in pts[:: max(1, len(pts) // 8)]])

        def compute(win):
            for extra in (0.0, 2 * res, 4 * res):
                try:
                    return fmm_field_to_points(self.grid, pts, radius + extra, self.cfg.inflate, win,
                                               stop_at=(state.x, state.y), margin=HORIZON_MARGIN)
                except InvalidSource:
                    pass
            return None

        key = ("ring", round(float(pts[:, 0].mean()), 3), round(float(pts[:, 1].mean()), 3), len(pts), gap)
        fld = self._cached_field(key, window, compute, (state.x, state.y))
        if fld is None:
            return STUCK
        act = next_action(fld, state, fld.source, 0.0)
        return STUCK if act == ARRIVED else act

    def _step_to_point(self, state: AgentState, xy, reach: float):
        window = self._window(state, [xy])
        fld = self._cached_field(("point", tuple(xy)), window,
                                 lambda win: fmm_field(self.grid, xy, self.cfg.inflate, window=win,
                                                       stop_at=(state.x, state.y), margin=HORIZON_MARGIN),
                                 (state.x, state.y))
        if fld is None:
            return STUCK
        return next_action(fld, state, xy, reach)

    def _agent_field(self, state: AgentState):
        window = self._window(state)
        return self._cached_field(("agent", state.x, state.y), window,
                                  lambda win: fmm_field(self.grid, (state.x, state.y), self.cfg.inflate,
                                                        snap=0.5, window=win), pad=0.0)

    def _geo(self, agent_field):
        def dist(node):
            d = agent_field.at(*node.center) if agent_field is not None else math.inf
            return d if math.isfinite(d) else 1e6 + _euclid(node.center, (0.0, 0.0))
        return dist

    def mark_bump(self, state: AgentState) -> None:
        """Record an unseen obstacle just ahead after a failed forward move."""
        rad = math.radians(state.theta)
        ux, uy = math.cos(rad), math.sin(rad)
        d = AGENT_RADIUS + 0.5 * self.grid.resolution
        pts = [(state.x + d * ux - s * uy, state.y + d * uy + s * ux) for s in (-0.08, 0.0, 0.08)]
        self.grid.mark_occupied(pts)

    # ------------------------------------------------------------ frontier choice

    def _pick_frontier(self, state: AgentState, agent_field):
        if agent_field is None:
            return None
        fronts = extract_frontiers(self.grid, min_cells=self.cfg.frontier_min_cells)
        best = None
        r0, c0 = agent_field.offset
        vals = agent_field.values
        for f in fronts:
            if self._near_any(f.centroid, self.bad_targets, 0.3):
                continue
            rc = np.array(f.cells) - np.array([r0, c0])
            ok = (rc[:, 0] >= 0) & (rc[:, 0] < vals.shape[0]) & (rc[:, 1] >= 0) & (rc[:, 1] < vals.shape[1])
            rc = rc[ok]
            if len(rc) == 0:
                continue
            v = vals[rc[:, 0], rc[:, 1]]
            k = int(np.argmin(v))
            if not math.isfinite(v[k]):
                continue
            anchor = self.grid.cell_center(int(rc[k, 0] + r0), int(rc[k, 1] + c0))
            if self._near_any(anchor, self.bad_targets, 0.3):
                continue
            # a frontier already within reach cannot be approached further
            key = (float(v[k]) <= self.cfg.frontier_reach, float(v[k]), f.centroid)
            if best is None or key < best[0]:
                best = (key, anchor)
        return None if best is None else best[1]

    # ------------------------------------------------------------ decisions

    def decide(self, state: AgentState, trigger: str) -> Decision | None:
        """Choose the next long-term goal.

        ``trigger`` names the decision point: ``refresh`` (periodic frontier
        refresh or no goal yet), ``frontier`` (frontier reached or
        abandoned), ``temp_fail`` (temporary goal rejected), ``arrival``
        (memory target scanned) or ``exhausted``. Re-validation runs at
        refresh at most once per window and at every other trigger except
        ``frontier``; re-exploration runs only after a failure, an arrival
        or exhaustion. Returns ``None`` when nothing is left to explore.
        """
        S = self.state
        cfg = self.cfg
        memory_trigger = trigger in ("temp_fail", "arrival", "exhausted")
        agent_field = self._agent_field(state)
        dist = self._geo(agent_field)
        if self.cmap is not None and self.feat.gr and self.match_failed:
            window_ok = self.t - self.last_revalidation >= cfg.frontier_refresh
            if memory_trigger or (trigger == "refresh" and window_ok):
                self.last_revalidation = self.t
                res = select_revalidation_target(self.cmap, self.goal, cfg.r, cfg.tau_rev, self.oracle,
                                                 dist, self.match_failed - self.unreachable, self.feat.bl)
                for nid in res.rejected:
                    self._emit(nid, Event.REVALIDATION_FAILED)
                if res.choice is not None:
                    node, _ = res.choice
                    self._emit(node.node_id, Event.REVALIDATION_PASSED)
                    S.mode, S.target_node, S.long_term_goal = Mode.REVALIDATE, node.node_id, node.center
                    return self._decide(node.center, Reason.REVALIDATION, node.node_id)
        frontier = self._pick_frontier(state, agent_field)
        if self.cmap is not None and self.feat.mgr and memory_trigger:
            pos, reason, nid = select_reexploration_target(self.cmap, self.goal, cfg.tau_ree, frontier,
                                                           self.oracle, self.consumed | self.unreachable, dist)
            if reason is Reason.REEXPLORATION:
                self.consumed.add(nid)
                S.mode, S.target_node, S.long_term_goal = Mode.REEXPLORE, nid, pos
                return self._decide(pos, Reason.REEXPLORATION, nid)
        if frontier is None:
            if trigger != "exhausted" and self.cmap is not None and (self.feat.gr or self.feat.mgr):
                return self.decide(state, "exhausted")
            S.mode, S.long_term_goal = Mode.DONE, None
            return None
        S.mode, S.long_term_goal, S.target_node = Mode.GOTO_FRONTIER, frontier, None
        S.steps_since_frontier_refresh = 0
        return self._decide(frontier, Reason.FRONTIER)

    # ------------------------------------------------------------ per-step

    def _set_temp_goal(self, fd: FrameDetection | None, node_id: int | None, center, pts) -> None:
        S = self.state
        S.temp_goal = TempGoal(tuple(center), np.asarray(pts, float), node_id, self.t,
                               fd.record if fd is not None else None)
        S.mode, S.long_term_goal = Mode.GOTO_TEMP_GOAL, tuple(center)
        self._decide(center, Reason.TEMP_DETECTION, node_id)

    def _verify(self, evidence: Evidence) -> bool:
        try:
            return self.oracle.verify_instance(evidence, self.goal, self.cfg.tau_t)
        except OracleUnavailable:
            return False

    def _fresh_detection(self, state: AgentState, frame) -> bool:
        cands = []
        # fragments of an already rejected object are not asked about again
        failed_at = [self.cmap.node(n).center for n in sorted(self.match_failed)] if self.cmap else []
        for fd in frame:
            if fd.category != self.goal.category:
                continue
            if fd.node_id is not None and (fd.node_id in self.match_failed or self._blocked(fd.node_id)):
                continue
            if self._near_any(fd.center, self.rejected_positions) or self._near_any(fd.center, self.bad_targets) \
                    or self._near_any(fd.center, failed_at):
                continue
            cands.append((_euclid(fd.center, (state.x, state.y)), -1 if fd.node_id is None else fd.node_id, fd))
        cands.sort(key=lambda c: c[:2])
        for _, _, fd in cands:
            if self._verify(Evidence.from_record(fd.category, fd.record, "first_sight")):
                if fd.node_id is not None:
                    self._set_temp_goal(fd, fd.node_id, self.cmap.node(fd.node_id).center,
                                        self._node_points(fd.node_id))
                else:
                    self._set_temp_goal(fd, None, fd.center, fd.points_xy)
                return True
            if fd.node_id is not None and self.cmap is not None:
                self.match_failed.add(fd.node_id)
        return False

    def _track(self, tg: TempGoal, frame) -> bool:
        """Fold this frame's views of the temporary goal into its geometry.

        Tracking uses only frame detections near the goal, never the
        cognitive map, so it behaves the same with and without memory.
        Returns whether the goal is in view.
        """
        seen = [fd for fd in frame if fd.category == self.goal.category
                and _euclid(fd.center, tg.center) <= TRACK_RADIUS]
        if not seen:
            return False
        pts = np.vstack([tg.points_xy, *[fd.points_xy for fd in seen]])
        tg.points_xy = np.unique(np.round(pts, 2), axis=0)
        best = max(seen, key=lambda fd: fd.record.quality)
        tg.last_record = best.record
        return True

    def _turn_toward(self, state: AgentState, xy) -> Action:
        want = math.degrees(math.atan2(xy[1] - state.y, xy[0] - state.x))
        diff = (want - state.theta + 180.0) % 360.0 - 180.0
        return Action.TURN_LEFT if diff >= 0 else Action.TURN_RIGHT

    def _temp_failed(self, tg: TempGoal, arrival_failure: bool) -> None:
        if tg.node_id is not None:
            if arrival_failure:
                self._emit(tg.node_id, Event.ARRIVAL_VERIFICATION_FAILED)
            self.match_failed.add(tg.node_id)
        else:
            self.rejected_positions.append(tg.center)
        if not arrival_failure:
            self.bad_targets.append(tg.center)
        self.state.temp_goal = None

    def _pursue_temp_goal(self, state: AgentState, frame):
        """Action toward the temporary goal, or ``None`` after it failed."""
        tg = self.state.temp_goal
        in_view = self._track(tg, frame)
        if self._gap(state, tg.points_xy) <= self.cfg.approach_gap:
            if not self.feat.dc:
                return Action.STOP
            if self.goal.task is Task.ON and self.cmap is not None:
                ok = double_check(Task.ON, self.cmap, (tg.center[0] - 0.5, tg.center[1] - 0.5,
                                                      tg.center[0] + 0.5, tg.center[1] + 0.5),
                                  None, self.goal, self.oracle, self.cfg.tau_t, in_view)
            else:
                # the latest close view of the goal, current frame first
                ev = None
                if tg.last_record is not None:
                    ev = Evidence.from_record(self.goal.category, tg.last_record, "arrival")
                ok = double_check(self.goal.task, self.cmap, None, ev, self.goal, self.oracle, self.cfg.tau_t)
            if ok:
                return Action.STOP
            self._temp_failed(tg, arrival_failure=True)
            return None
        if self.t - tg.since > self.cfg.max_approach_steps:
            self._temp_failed(tg, arrival_failure=False)
            return None
        act = self._step_to_points(state, tg.points_xy, self.cfg.approach_gap)
        if act == STUCK:
            self._temp_failed(tg, arrival_failure=False)
            return None
        return act

    def _collect_scan(self, frame) -> None:
        for fd in frame:
            if fd.category != self.goal.category or fd.node_id is None:
                continue
            prev = self._scan_best.get(fd.node_id)
            if prev is None or fd.record.quality > prev.quality:
                self._scan_best[fd.node_id] = fd.record

    def _finish_scan(self, state: AgentState) -> bool:
        """Re-match goal candidates seen during the scan; True if one matched."""
        target = self._scan_target
        if self._scan_kind is Mode.REEXPLORE:
            # the neighbourhood has now been looked at from here
            for n in self.cmap.confirmed:
                if _euclid(n.center, (state.x, state.y)) <= self.cfg.r:
                    self.consumed.add(n.node_id)
        if self._scan_kind is Mode.REVALIDATE and target is not None:
            # a re-validation scan re-checks its own target only
            if target not in self._scan_best:
                self._scan_best[target] = self.cmap.node(target).records[0]
            order = [target]
        else:
            order = sorted(self._scan_best, key=lambda n: (_euclid(self.cmap.node(n).center,
                                                                   (state.x, state.y)), n))
        matched = None
        for nid in order:
            if self._blocked(nid):
                continue
            ev = Evidence.from_record(self.goal.category, self._scan_best[nid], "scan")
            if self._verify(ev):
                matched = nid
                break
            self.match_failed.add(nid)
        if self._scan_kind is Mode.REVALIDATE and target is not None and matched != target:
            self._emit(target, Event.ARRIVAL_VERIFICATION_FAILED)
        self._scan_best = {}
        if matched is None:
            return False
        self.match_failed.discard(matched)
        node = self.cmap.node(matched)
        self._set_temp_goal(None, matched, node.center, node.cloud[:, :2])
        return True

    def _start_scan(self) -> Action:
        S = self.state
        self._scan_kind, self._scan_target = S.mode, S.target_node
        self._scan_best = {}
        S.mode, S.scan_remaining = Mode.SCANNING, SCAN_STEPS - 1
        self._decide(S.long_term_goal, Reason.SCAN, S.target_node)
        return Action.TURN_LEFT

    def act(self, t: int, state: AgentState, frame=(), collided: bool = False,
            strong_evidence=()) -> tuple[Action | None, StepInfo]:
        """Next action given the current frame; ``None`` with a terminal
        marker when exploration is exhausted."""
        self.t = t
        self._events, self._decisions = [], []
        S = self.state
        if collided:
            self.mark_bump(state)
        for nid in strong_evidence:
            if self.cmap is not None and self.cmap.node(nid).blacklist.level.value == "temporary":
                self._emit(nid, Event.STRONG_NEW_EVIDENCE)
        action = self._act(state, frame)
        if action is not None and self._no_progress(state):
            action = self._give_up_target(state)
        info = StepInfo(S.mode, S.reason, S.long_term_goal, self._events, self._decisions,
                        "exhausted" if action is None else None)
        return action, info

    def _no_progress(self, state: AgentState) -> bool:
        S = self.state
        if S.mode is Mode.SCANNING or S.long_term_goal is None:
            self._recent.clear()
            return False
        if S.long_term_goal != self._recent_goal:
            self._recent.clear()
            self._recent_goal = S.long_term_goal
        self._recent.append((state.x, state.y))
        if len(self._recent) < PROGRESS_WINDOW:
            return False
        return all(_euclid(p, (state.x, state.y)) <= PROGRESS_RADIUS for p in self._recent)

    def _give_up_target(self, state: AgentState):
        """Abandon a goal the agent has stopped making progress toward."""
        S = self.state
        self._recent.clear()
        if S.mode is Mode.GOTO_TEMP_GOAL and S.temp_goal is not None:
            self._temp_failed(S.temp_goal, arrival_failure=False)
            trigger = "temp_fail"
        elif S.mode in (Mode.REVALIDATE, Mode.REEXPLORE):
            self.unreachable.add(S.target_node)
            self.bad_targets.append(S.long_term_goal)
            trigger = "temp_fail"
        else:
            self.bad_targets.append(S.long_term_goal)
            trigger = "frontier"
        if self.decide(state, trigger) is None:
            return None
        return Action.TURN_LEFT

    def _act(self, state: AgentState, frame):
        S = self.state
        if S.mode is Mode.SCANNING:
            self._collect_scan(frame)
            if S.scan_remaining > 0:
                S.scan_remaining -= 1
                return Action.TURN_LEFT
            if not self._finish_scan(state):
                if self.decide(state, "arrival") is None:
                    return None
        if S.mode is not Mode.GOTO_TEMP_GOAL:
            self._fresh_detection(state, frame)
        for _ in range(4):
            if S.mode is Mode.GOTO_TEMP_GOAL:
                act = self._pursue_temp_goal(state, frame)
                if act is not None:
                    return act
                if self.decide(state, "temp_fail") is None:
                    return None
                continue
            if S.mode in (Mode.REVALIDATE, Mode.REEXPLORE):
                pts = self._node_points(S.target_node)
                if self._gap(state, pts) <= self.cfg.memory_gap:
                    self._collect_scan(frame)
                    return self._start_scan()
                act = self._step_to_points(state, pts, self.cfg.memory_gap)
                if act != STUCK:
                    return act
                self.unreachable.add(S.target_node)
                self.bad_targets.append(S.long_term_goal)
                if self.decide(state, "temp_fail") is None:
                    return None
                continue
            S.steps_since_frontier_refresh += 1
            trigger = None
            if S.mode is not Mode.GOTO_FRONTIER or S.long_term_goal is None:
                trigger = "refresh"
            elif S.steps_since_frontier_refresh >= self.cfg.frontier_refresh:
                trigger = "refresh"
            elif _euclid((state.x, state.y), S.long_term_goal) <= self.cfg.frontier_reach:
                trigger = "frontier"
            if trigger is not None:
                if self.decide(state, trigger) is None:
                    return None
                if S.mode is not Mode.GOTO_FRONTIER:
                    continue
            act = self._step_to_point(state, S.long_term_goal, self.cfg.frontier_reach)
            if act not in (STUCK, ARRIVED):
                self._near_turns = 0
                return act
            if act == ARRIVED and trigger is not None:
                # the chosen frontier is at the agent's feet: turning reveals it
                self._near_turns += 1
                if self._near_turns <= SCAN_STEPS:
                    return Action.TURN_LEFT
                self._near_turns = 0
                self.bad_targets.append(S.long_term_goal)
            if act == STUCK:
                self.bad_targets.append(S.long_term_goal)
            if self.decide(state, "frontier") is None:
                return None
        # no progress after several re-decisions this step: look around
        return Action.TURN_LEFT
