"""Ground-truth 2D world: scenes, agent kinematics and a planar depth sensor.

World frame: ``x`` grows with bitmap column, ``y`` with bitmap row, and cell
``(r, c)`` covers ``[c*res, (c+1)*res) x [r*res, (r+1)*res)``. Headings are
degrees counter-clockwise from +x.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from numba import njit
from scipy import ndimage

from . import vocab
from .fmm import travel_time, travel_time_from_mask

STEP_M = 0.25
TURN_DEG = 30
AGENT_RADIUS = 0.18
SCENE_FORMAT = "mcnav-scene/1"


class SceneError(ValueError):
    """A scene violates its invariants or cannot be parsed."""


class GenerationFailed(RuntimeError):
    pass


class Action(str, enum.Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    center: tuple[float, float]
    radius: float
    z_band: tuple[float, float] = (0.0, 1.0)
    intrinsic: frozenset = frozenset()
    extrinsic: frozenset = frozenset()
    is_goal: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise SceneError(f"object {self.id}: radius must be positive")
        for tok in self.intrinsic | self.extrinsic:
            if not tok or tok != tok.lower():
                raise SceneError(f"object {self.id}: bad attribute token {tok!r}")

    def visible_attrs(self) -> frozenset:
        return frozenset(
            [vocab.INTRINSIC_PREFIX + t for t in self.intrinsic]
            + [vocab.EXTRINSIC_PREFIX + t for t in self.extrinsic])


@dataclass(frozen=True, eq=False)
class Scene:
    bitmap: np.ndarray          # True = obstacle
    resolution: float
    objects: tuple
    start_pose: tuple[float, float, int]
    goal_object_id: str

    def __post_init__(self):
        bm = np.asarray(self.bitmap, dtype=bool)
        if bm.ndim != 2:
            raise SceneError("bitmap must be 2D")
        object.__setattr__(self, "bitmap", bm)
        if self.resolution <= 0:
            raise SceneError("resolution must be positive")
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError("duplicate object ids")
        if self.goal_object_id not in ids:
            raise SceneError(f"goal object {self.goal_object_id!r} not in scene")
        x, y, _ = self.start_pose
        if not self.in_bounds(x, y) or self.obstacles[self.cell_of(x, y)]:
            raise SceneError("start pose is not in free space")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bitmap.shape

    @property
    def width(self) -> float:
        return self.bitmap.shape[1] * self.resolution

    @property
    def height(self) -> float:
        return self.bitmap.shape[0] * self.resolution

    @property
    def goal(self) -> SceneObject:
        return self.object_by_id[self.goal_object_id]

    @cached_property
    def object_by_id(self) -> dict:
        return {o.id: o for o in self.objects}

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width and 0.0 <= y < self.height

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (c + 0.5) * self.resolution, (r + 0.5) * self.resolution

    @cached_property
    def obstacles(self) -> np.ndarray:
        """Walls plus rasterised object footprints."""
        occ = self.bitmap.copy()
        rr, cc = np.mgrid[0:occ.shape[0], 0:occ.shape[1]]
        ys = (rr + 0.5) * self.resolution
        xs = (cc + 0.5) * self.resolution
        for o in self.objects:
            occ |= (xs - o.center[0]) ** 2 + (ys - o.center[1]) ** 2 <= o.radius ** 2
        occ.setflags(write=False)
        return occ

    @cached_property
    def clearance(self) -> np.ndarray:
        """Distance (m) from each cell centre to the nearest wall cell edge."""
        d = ndimage.distance_transform_edt(~self.bitmap) * self.resolution - 0.5 * self.resolution
        d[self.bitmap] = 0.0
        d.setflags(write=False)
        return d

    def passable(self, inflate: float = 0.0) -> np.ndarray:
        if inflate <= 0:
            return ~self.obstacles
        d = ndimage.distance_transform_edt(~self.obstacles) * self.resolution
        return d > inflate


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    theta: int = 0
    step_count: int = 0
    path_length: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y


def initial_state(scene: Scene) -> AgentState:
    x, y, th = scene.start_pose
    return AgentState(float(x), float(y), int(th) % 360)


def _disc_collides(scene: Scene, x: float, y: float, radius: float) -> bool:
    res = scene.resolution
    if x - radius < 0 or y - radius < 0 or x + radius > scene.width or y + radius > scene.height:
        return True
    r0, r1 = int((y - radius) // res), int((y + radius) // res)
    c0, c1 = int((x - radius) // res), int((x + radius) // res)
    patch = scene.bitmap[r0:r1 + 1, c0:c1 + 1]
    if patch.any():
        rr, cc = np.nonzero(patch)
        lo_x, lo_y = (cc + c0) * res, (rr + r0) * res
        dx = np.maximum(np.maximum(lo_x - x, 0.0), x - (lo_x + res))
        dy = np.maximum(np.maximum(lo_y - y, 0.0), y - (lo_y + res))
        if np.any(dx * dx + dy * dy < radius * radius):
            return True
    for o in scene.objects:
        if math.hypot(o.center[0] - x, o.center[1] - y) < o.radius + radius:
            return True
    return False


def collides(scene: Scene, x: float, y: float, radius: float = AGENT_RADIUS) -> bool:
    """True when an agent disc at ``(x, y)`` overlaps a wall, an object or
    leaves the scene."""
    return _disc_collides(scene, x, y, radius)


def step(scene: Scene, state: AgentState, action: Action,
         radius: float = AGENT_RADIUS) -> tuple[AgentState, bool]:
    action = Action(action)
    nxt = replace(state, step_count=state.step_count + 1)
    if action is Action.TURN_LEFT:
        return replace(nxt, theta=(state.theta + TURN_DEG) % 360), False
    if action is Action.TURN_RIGHT:
        return replace(nxt, theta=(state.theta - TURN_DEG) % 360), False
    if action is Action.STOP:
        return nxt, False
    rad = math.radians(state.theta)
    dx, dy = STEP_M * math.cos(rad), STEP_M * math.sin(rad)
    n = max(2, int(math.ceil(STEP_M / (0.5 * scene.resolution))))
    for k in range(1, n + 1):
        f = k / n
        if _disc_collides(scene, state.x + f * dx, state.y + f * dy, radius):
            return nxt, True
    return replace(nxt, x=state.x + dx, y=state.y + dy,
                   path_length=state.path_length + STEP_M), False


@dataclass(frozen=True, eq=False)
class Observation:
    """One planar depth scan. ``depth`` is NaN and ``hit`` is None where a
    ray saw nothing within range. Bearings are absolute world degrees."""

    bearings: np.ndarray
    depth: np.ndarray
    hit: tuple
    pose: tuple[float, float, int]
    step: int
    max_range: float

    @property
    def rays(self):
        for b, d, h in zip(self.bearings.tolist(), self.depth.tolist(), self.hit):
            yield b, (None if math.isnan(d) else d), h

    def hit_points(self) -> np.ndarray:
        ok = ~np.isnan(self.depth)
        rad = np.radians(self.bearings[ok])
        x, y, _ = self.pose
        return np.column_stack([x + self.depth[ok] * np.cos(rad), y + self.depth[ok] * np.sin(rad)])


def ray_bearings(theta: float, fov: float, n_rays: int) -> np.ndarray:
    if fov >= 360:
        return (theta + np.arange(n_rays) * (360.0 / n_rays)) % 360.0
    return (theta + np.linspace(fov / 2.0, -fov / 2.0, n_rays)) % 360.0


@njit(cache=True)
def _cast_walls(bitmap, x0, y0, dirs, res, ds, n_samples):
    # distance to the first blocked sample along each ray (minus half a
    # sample), inf when the ray stays clear; leaving the map counts as blocked
    rows, cols = bitmap.shape
    out = np.full(dirs.shape[0], np.inf)
    for i in range(dirs.shape[0]):
        for k in range(1, n_samples + 1):
            t = k * ds
            c = int(math.floor((x0 + dirs[i, 0] * t) / res))
            r = int(math.floor((y0 + dirs[i, 1] * t) / res))
            if c < 0 or c >= cols or r < 0 or r >= rows or bitmap[r, c]:
                out[i] = t - 0.5 * ds
                break
    return out


def sense(scene: Scene, state: AgentState, fov: float = 90.0, n_rays: int = 120,
          max_range: float = 30.0) -> Observation:
    if n_rays < 2 or not 0 < fov <= 360:
        raise ValueError("need n_rays >= 2 and fov in (0, 360]")
    res = scene.resolution
    bearings = ray_bearings(state.theta, fov, n_rays)
    rad = np.radians(bearings)
    dirs = np.column_stack([np.cos(rad), np.sin(rad)])
    reach = min(max_range, math.hypot(scene.width, scene.height))
    ds = 0.25 * res
    wall_t = _cast_walls(scene.bitmap, state.x, state.y, np.ascontiguousarray(dirs), res, ds,
                         int(math.ceil(reach / ds)))
    # the boundary of the scene behaves like a wall but is not reported
    # as a separate object
    obj_t = np.full(n_rays, np.inf)
    obj_id = np.full(n_rays, -1)
    for k, o in enumerate(scene.objects):
        ox, oy = o.center[0] - state.x, o.center[1] - state.y
        b = dirs[:, 0] * ox + dirs[:, 1] * oy
        disc = b * b - (ox * ox + oy * oy - o.radius ** 2)
        ok = disc >= 0
        tt = np.where(ok, b - np.sqrt(np.where(ok, disc, 0.0)), np.inf)
        tt = np.where(tt < 0, np.where(ok & (b + np.sqrt(np.maximum(disc, 0)) > 0), 0.0, np.inf), tt)
        closer = tt < obj_t
        obj_t[closer] = tt[closer]
        obj_id[closer] = k
    depth = np.minimum(wall_t, obj_t)
    hit_obj = obj_t <= wall_t
    depth = np.where(depth <= max_range, depth, np.nan)
    hits = tuple(scene.objects[obj_id[i]].id if (hit_obj[i] and not math.isnan(depth[i])) else None
                 for i in range(n_rays))
    return Observation(bearings, depth, hits, (state.x, state.y, state.theta), state.step_count,
                       float(max_range))


@dataclass(frozen=True)
class Detection:
    """Perceived object evidence in one frame (the detector surrogate)."""

    object_id: str
    category: str
    points: np.ndarray
    confidence: float
    area_ratio: float
    visible_attrs: frozenset
    distance: float


def detect_objects(scene: Scene, obs: Observation) -> list[Detection]:
    """Group ray hits by object into detections with point clouds.

    Each hit contributes a small vertical column of points spanning the
    object's height band. Confidence falls off with distance; the area ratio
    is the fraction of rays landing on the object.
    """
    by_obj: dict[str, list[int]] = {}
    for i, h in enumerate(obs.hit):
        if h is not None:
            by_obj.setdefault(h, []).append(i)
    out = []
    x, y, _ = obs.pose
    for oid in sorted(by_obj):
        idx = np.array(by_obj[oid])
        o = scene.object_by_id[oid]
        rad = np.radians(obs.bearings[idx])
        d = obs.depth[idx]
        px, py = x + d * np.cos(rad), y + d * np.sin(rad)
        zs = np.linspace(o.z_band[0], o.z_band[1], 4)
        pts = np.column_stack([np.repeat(px, len(zs)), np.repeat(py, len(zs)), np.tile(zs, len(px))])
        dist = float(d.min())
        conf = float(np.clip(1.0 - dist / (2.0 * obs.max_range + 1e-9), 0.05, 1.0))
        area = float(len(idx) / len(obs.hit))
        out.append(Detection(oid, o.category, pts, round(conf, 6), round(area, 6),
                             o.visible_attrs(), dist))
    return out


# ---------------------------------------------------------------- geodesics

def _nearest_passable(passable: np.ndarray, cell: tuple[int, int], max_cells: int):
    r0, c0 = cell
    if 0 <= r0 < passable.shape[0] and 0 <= c0 < passable.shape[1] and passable[r0, c0]:
        return cell
    best, best_d = None, None
    for r in range(r0 - max_cells, r0 + max_cells + 1):
        for c in range(c0 - max_cells, c0 + max_cells + 1):
            if 0 <= r < passable.shape[0] and 0 <= c < passable.shape[1] and passable[r, c]:
                d = (r - r0) ** 2 + (c - c0) ** 2
                if best_d is None or d < best_d:
                    best, best_d = (r, c), d
    return best


def geodesic_distance(scene: Scene, a, b, inflate: float = 0.0) -> float:
    """Shortest obstacle-free path length between two points (``inf`` if
    disconnected). ``inflate`` grows obstacles, e.g. by the agent radius."""
    passable = scene.passable(inflate)
    ca, cb = scene.cell_of(*a), scene.cell_of(*b)
    if not (passable[ca] and passable[cb]):
        return math.inf
    if ca == cb:
        return math.hypot(a[0] - b[0], a[1] - b[1])
    T = travel_time(passable, ca, scene.resolution)
    return float(T[cb])


def goal_bodies(scene: Scene, any_instance: bool = False) -> list[SceneObject]:
    """Objects that count as reaching the goal: the goal object alone, or
    with ``any_instance`` every object of the goal's category."""
    if not any_instance:
        return [scene.goal]
    return [o for o in scene.objects if o.category == scene.goal.category]


def goal_region(scene: Scene, success_radius: float, radius: float = AGENT_RADIUS,
                bodies=None) -> np.ndarray:
    """Cells where an agent of ``radius`` stands within ``success_radius``
    of a goal body (the goal object unless ``bodies`` is given)."""
    rows, cols = scene.shape
    rr, cc = np.mgrid[0:rows, 0:cols]
    xs, ys = (cc + 0.5) * scene.resolution, (rr + 0.5) * scene.resolution
    out = np.zeros(scene.shape, dtype=bool)
    for g in bodies if bodies is not None else [scene.goal]:
        out |= np.hypot(xs - g.center[0], ys - g.center[1]) <= g.radius + radius + success_radius
    return out


def goal_distance_field(scene: Scene, radius: float = AGENT_RADIUS, bodies=None) -> np.ndarray:
    """Geodesic distance from every cell to the nearest goal body surface,
    measured as the gap between the agent disc and the object."""
    passable = scene.passable(radius)
    contact = goal_region(scene, scene.resolution, radius, bodies) & passable
    T = travel_time_from_mask(passable, contact, scene.resolution)
    return T


def body_gap(scene: Scene, x: float, y: float, radius: float = AGENT_RADIUS, bodies=None) -> float:
    return min(max(0.0, math.hypot(x - g.center[0], y - g.center[1]) - g.radius - radius)
               for g in (bodies if bodies is not None else [scene.goal]))


# ---------------------------------------------------------------- generation

@dataclass(frozen=True)
class GeneratorConfig:
    n_rooms: int = 2
    room_size: tuple[float, float] = (3.5, 5.0)
    resolution: float = 0.05
    wall_thickness: float = 0.10
    door_width: float = 1.0
    goal_category: str | None = None
    n_context: int = 2
    n_lookalikes: int = 0
    lookalike_companions: bool = True
    n_clutter: int = 2
    object_radius: tuple[float, float] = (0.2, 0.35)
    min_start_goal: float = 2.0
    max_attempts: int = 50

    def __post_init__(self):
        if self.n_rooms < 1:
            raise ValueError("n_rooms must be >= 1")
        if min(self.n_context, self.n_lookalikes, self.n_clutter) < 0:
            raise ValueError("object counts must be non-negative")

    @property
    def n_distractors(self) -> int:
        companions = self.n_lookalikes if self.lookalike_companions else 0
        return self.n_context + self.n_lookalikes + companions + self.n_clutter


def _room_grid(n: int) -> tuple[int, int]:
    cols = int(math.ceil(math.sqrt(n)))
    return int(math.ceil(n / cols)), cols


def _layout(rng, cfg: GeneratorConfig):
    """Rooms on a grid with doors between horizontal and vertical neighbours.

    Returns the bitmap, the room rectangles and the door centres.
    """
    nr, nc = _room_grid(cfg.n_rooms)
    lo, hi = cfg.room_size
    widths = np.round(rng.uniform(lo, hi, nc), 2)
    heights = np.round(rng.uniform(lo, hi, nr), 2)
    res, wt = cfg.resolution, cfg.wall_thickness
    xs = np.concatenate([[wt], wt + np.cumsum(widths + wt)])
    ys = np.concatenate([[wt], wt + np.cumsum(heights + wt)])
    W, H = xs[-1], ys[-1]
    rows, cols = int(round(H / res)), int(round(W / res))
    bm = np.ones((rows, cols), dtype=bool)
    rooms = []
    for k in range(cfg.n_rooms):
        i, j = divmod(k, nc)
        x0, x1 = xs[j], xs[j] + widths[j]
        y0, y1 = ys[i], ys[i] + heights[i]
        bm[int(round(y0 / res)):int(round(y1 / res)), int(round(x0 / res)):int(round(x1 / res))] = False
        rooms.append((x0, y0, x1, y1))

    def carve(x0, y0, x1, y1):
        bm[int(round(y0 / res)):int(round(y1 / res)), int(round(x0 / res)):int(round(x1 / res))] = False

    dw = cfg.door_width
    doors = []
    for k in range(cfg.n_rooms):
        i, j = divmod(k, nc)
        x0, y0, x1, y1 = rooms[k]
        right = k + 1
        if j + 1 < nc and right < cfg.n_rooms:
            yy0, yy1 = max(y0, rooms[right][1]), min(y1, rooms[right][3])
            cy = rng.uniform(yy0 + dw / 2 + 0.2, yy1 - dw / 2 - 0.2)
            carve(x1 - res, cy - dw / 2, x1 + wt + res, cy + dw / 2)
            doors.append((x1 + wt / 2, cy))
        below = k + nc
        if below < cfg.n_rooms:
            xx0, xx1 = max(x0, rooms[below][0]), min(x1, rooms[below][2])
            cx = rng.uniform(xx0 + dw / 2 + 0.2, xx1 - dw / 2 - 0.2)
            carve(cx - dw / 2, y1 - res, cx + dw / 2, y1 + wt + res)
            doors.append((cx, y1 + wt / 2))
    return bm, rooms, doors


def _room_style(rng):
    floor = rng.choice(["carpet", "tiled_floor", "wooden_floor"])
    wall = rng.choice(["white_wall", "beige_wall"])
    light = rng.choice(["bright_room", "dim_room", "window_light"])
    return {str(floor), str(wall), str(light)}


def _intrinsic(rng) -> set:
    return {str(rng.choice(v)) for v in vocab.INTRINSIC_TOKENS.values()}


# free distance (m) kept between an object and the edge of a doorway
DOOR_CLEARANCE = 0.6


def _place(rng, bm, res, rooms, placed, room_idx, radius, near=None, near_range=(0.8, 1.8), doors=(),
           door_width=1.0):
    """Rejection-sample a disc centre with room for the agent to walk around
    and with doorways left clear."""
    x0, y0, x1, y1 = rooms[room_idx]
    margin = radius + 0.45
    if x1 - x0 < 2 * margin or y1 - y0 < 2 * margin:
        return None
    for _ in range(200):
        if near is None:
            x, y = rng.uniform(x0 + margin, x1 - margin), rng.uniform(y0 + margin, y1 - margin)
        else:
            ang, dist = rng.uniform(0, 2 * math.pi), rng.uniform(*near_range)
            x, y = near[0] + dist * math.cos(ang), near[1] + dist * math.sin(ang)
            if not (x0 + margin <= x <= x1 - margin and y0 + margin <= y <= y1 - margin):
                continue
        x, y = round(float(x), 2), round(float(y), 2)
        if any(math.hypot(x - dx, y - dy) < door_width / 2 + radius + DOOR_CLEARANCE for dx, dy in doors):
            continue
        if all(math.hypot(x - px, y - py) >= radius + pr + 0.5 for px, py, pr in placed):
            return x, y
    return None


def _try_generate(rng, cfg: GeneratorConfig) -> Scene | None:
    bm, rooms, doors = _layout(rng, cfg)
    res = cfg.resolution
    styles = [_room_style(rng) for _ in rooms]
    goal_cat = cfg.goal_category or str(rng.choice(vocab.GOAL_CATEGORIES))
    placed, objects = [], []

    def radius():
        return round(float(rng.uniform(*cfg.object_radius)), 2)

    goal_room = int(rng.integers(len(rooms)))
    r = radius()
    pos = _place(rng, bm, res, rooms, placed, goal_room, r, doors=doors, door_width=cfg.door_width)
    if pos is None:
        return None
    placed.append((*pos, r))
    goal_int = _intrinsic(rng)
    local = {str(rng.choice(vocab.EXTRINSIC_TOKENS))}
    objects.append(SceneObject("obj_0", goal_cat, pos, r, (0.0, 0.9), frozenset(goal_int),
                               frozenset(styles[goal_room] | local), True))
    goal_pos = pos
    context = vocab.CO_OCCURRENCE[goal_cat]
    for k in range(cfg.n_context):
        cat = context[k % min(3, len(context))] if k < 3 else str(rng.choice(context))
        r = radius()
        pos = _place(rng, bm, res, rooms, placed, goal_room, r, near=goal_pos, doors=doors, door_width=cfg.door_width)
        if pos is None:
            return None
        placed.append((*pos, r))
        objects.append(SceneObject(f"obj_{len(objects)}", cat, pos, r, (0.0, 0.8),
                                   frozenset(_intrinsic(rng)), frozenset(styles[goal_room]), False))
    for k in range(cfg.n_lookalikes):
        room = int(rng.integers(len(rooms)))
        if len(rooms) > 1 and room == goal_room:
            room = (room + 1 + int(rng.integers(len(rooms) - 1))) % len(rooms)
        r = radius()
        pos = _place(rng, bm, res, rooms, placed, room, r, doors=doors, door_width=cfg.door_width)
        if pos is None:
            return None
        placed.append((*pos, r))
        # shares two of the three appearance tokens with the goal
        keep = sorted(goal_int)
        drop = keep.pop(int(rng.integers(len(keep))))
        swap = [t for v in vocab.INTRINSIC_TOKENS.values() if drop in v for t in v if t != drop]
        intr = set(keep) | {str(rng.choice(swap))}
        objects.append(SceneObject(f"obj_{len(objects)}", goal_cat, pos, r, (0.0, 0.9),
                                   frozenset(intr), frozenset(styles[room]), False))
        if cfg.lookalike_companions:
            # look-alikes keep plausible company, like a chair next to a table
            r2 = radius()
            pos2 = _place(rng, bm, res, rooms, placed, room, r2, near=pos, doors=doors, door_width=cfg.door_width)
            if pos2 is None:
                return None
            placed.append((*pos2, r2))
            objects.append(SceneObject(f"obj_{len(objects)}", context[k % min(3, len(context))], pos2,
                                       r2, (0.0, 0.8), frozenset(_intrinsic(rng)),
                                       frozenset(styles[room]), False))
    clutter_pool = [c for c in vocab.CONTEXT_CATEGORIES + vocab.BASE_CATEGORIES
                    if c not in vocab.CO_OCCURRENCE[goal_cat][:3] and c != goal_cat]
    for k in range(cfg.n_clutter):
        room = int(rng.integers(len(rooms)))
        r = radius()
        pos = _place(rng, bm, res, rooms, placed, room, r, doors=doors, door_width=cfg.door_width)
        if pos is None:
            return None
        placed.append((*pos, r))
        objects.append(SceneObject(f"obj_{len(objects)}", str(rng.choice(clutter_pool)), pos, r,
                                   (0.0, 0.8), frozenset(_intrinsic(rng)),
                                   frozenset(styles[room]), False))

    # start: a random room cell with clearance, away from the goal
    rows, cols = bm.shape
    tmp_objects = tuple(objects)
    occ = bm.copy()
    rr, cc = np.mgrid[0:rows, 0:cols]
    for o in tmp_objects:
        occ |= ((cc + 0.5) * res - o.center[0]) ** 2 + ((rr + 0.5) * res - o.center[1]) ** 2 <= o.radius ** 2
    clear = ndimage.distance_transform_edt(~occ) * res
    ok = clear > AGENT_RADIUS + 0.15
    goal_d = np.hypot((cc + 0.5) * res - goal_pos[0], (rr + 0.5) * res - goal_pos[1])
    ok &= goal_d >= cfg.min_start_goal
    cand = np.argwhere(ok)
    if len(cand) == 0:
        return None
    sr, sc = cand[int(rng.integers(len(cand)))]
    theta = int(rng.integers(12)) * TURN_DEG
    start = (round(float((sc + 0.5) * res), 3), round(float((sr + 0.5) * res), 3), theta)
    try:
        scene = Scene(bm, res, tmp_objects, start, "obj_0")
    except SceneError:
        return None
    field = goal_distance_field(scene)
    if not math.isfinite(field[scene.cell_of(start[0], start[1])]):
        return None
    return scene


def generate_scene(seed: int, params: GeneratorConfig | None = None) -> Scene:
    """Procedurally build a scene; a deterministic function of ``(seed, params)``."""
    cfg = params or GeneratorConfig()
    rng = np.random.default_rng(seed)
    for _ in range(cfg.max_attempts):
        scene = _try_generate(rng, cfg)
        if scene is not None:
            return scene
    raise GenerationFailed(f"no valid scene for seed {seed} after {cfg.max_attempts} attempts")


# ---------------------------------------------------------------- scene files

def _rle(bits: np.ndarray) -> list[int]:
    flat = bits.reshape(-1).astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return runs


def _unrle(runs: list[int], rows: int, cols: int) -> np.ndarray:
    vals = np.arange(len(runs)) % 2
    flat = np.repeat(vals, runs).astype(bool)
    if flat.size != rows * cols:
        raise SceneError(f"bitmap runs cover {flat.size} cells, expected {rows * cols}")
    return flat.reshape(rows, cols)


def scene_to_dict(scene: Scene) -> dict:
    rows, cols = scene.shape
    return {
        "format": SCENE_FORMAT,
        "resolution_m": scene.resolution,
        "bitmap": {"rows": rows, "cols": cols, "runs": _rle(scene.bitmap)},
        "objects": [
            {"id": o.id, "category": o.category, "center": list(o.center), "radius": o.radius,
             "z_band": list(o.z_band), "intrinsic": sorted(o.intrinsic),
             "extrinsic": sorted(o.extrinsic), "is_goal": o.is_goal}
            for o in scene.objects
        ],
        "start_pose": list(scene.start_pose),
        "goal_object_id": scene.goal_object_id,
    }


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("format") != SCENE_FORMAT:
        raise SceneError(f"unsupported scene format {doc.get('format')!r}")
    try:
        bm = doc["bitmap"]
        bitmap = _unrle(bm["runs"], bm["rows"], bm["cols"])
        objects = tuple(
            SceneObject(str(o["id"]), str(o["category"]), tuple(map(float, o["center"])),
                        float(o["radius"]), tuple(map(float, o.get("z_band", (0.0, 1.0)))),
                        frozenset(o.get("intrinsic", ())), frozenset(o.get("extrinsic", ())),
                        bool(o.get("is_goal", False)))
            for o in doc["objects"])
        x, y, th = doc["start_pose"]
        return Scene(bitmap, float(doc["resolution_m"]), objects, (float(x), float(y), int(th)),
                     str(doc["goal_object_id"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(f"malformed scene document: {exc}") from exc


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True, separators=(",", ":"))


def loads_scene(text: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene is not valid JSON: {exc}") from exc
    return scene_from_dict(doc)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_scene(scene))


def load_scene(path) -> Scene:
    with open(path) as fh:
        return loads_scene(fh.read())
