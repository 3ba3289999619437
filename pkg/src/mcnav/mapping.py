"""Online semantic occupancy grid, frontier extraction and the fast-marching
local policy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage

from .fmm import travel_time, travel_time_from_mask
from .geometry import DEFAULT_SPLIT_EXTENT, cluster_cells
from .world import Action, AgentState, Observation

UNKNOWN, FREE, OCCUPIED = 0, 1, 2
MAX_CHANNELS = 8
DEFAULT_INFLATE = 0.20
DEFAULT_SNAP = 0.30
HEADING_TOL = 15.0

ARRIVED = "arrived"
STUCK = "stuck"


class InvalidSource(ValueError):
    """The planning source lies inside an inflated obstacle with no free
    cell nearby."""


class SemanticOccupancyGrid:
    """An ``M x M`` map of unknown/free/occupied cells plus up to eight
    semantic channel flags per cell, stored as a bitmask.

    The grid is anchored so that ``center`` (the agent's start position)
    falls in the middle cell.
    """

    def __init__(self, size: int = 720, resolution: float = 0.05,
                 center: tuple[float, float] = (0.0, 0.0), channels=()):
        if len(channels) > MAX_CHANNELS:
            raise ValueError(f"at most {MAX_CHANNELS} semantic channels")
        self.size = int(size)
        self.resolution = float(resolution)
        half = self.size * self.resolution / 2.0
        self.origin = (center[0] - half, center[1] - half)
        self.state = np.zeros((self.size, self.size), dtype=np.uint8)
        self.semantic = np.zeros((self.size, self.size), dtype=np.uint8)
        self.channel_table = list(channels)
        # bumped whenever a cell newly becomes occupied; planners key caches on it
        self.occ_version = 0

    def copy(self) -> SemanticOccupancyGrid:
        other = SemanticOccupancyGrid.__new__(SemanticOccupancyGrid)
        other.__dict__.update(self.__dict__)
        other.state = self.state.copy()
        other.semantic = self.semantic.copy()
        other.channel_table = list(self.channel_table)
        return other

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((y - self.origin[1]) / self.resolution)),
                int(math.floor((x - self.origin[0]) / self.resolution)))

    def cell_center(self, r: int, c: int) -> tuple[float, float]:
        return (self.origin[0] + (c + 0.5) * self.resolution,
                self.origin[1] + (r + 0.5) * self.resolution)

    def contains(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return 0 <= r < self.size and 0 <= c < self.size

    def channel(self, category: str) -> int | None:
        try:
            return self.channel_table.index(category)
        except ValueError:
            return None

    def channel_mask(self, category: str) -> np.ndarray:
        ch = self.channel(category)
        if ch is None:
            return np.zeros_like(self.state, dtype=bool)
        return (self.semantic >> ch) & 1 == 1

    def mark_occupied(self, points) -> None:
        """Force the cells under ``points`` to occupied (e.g. after a bump)."""
        for x, y in points:
            r, c = self.cell_of(x, y)
            if 0 <= r < self.size and 0 <= c < self.size and self.state[r, c] != OCCUPIED:
                self.state[r, c] = OCCUPIED
                self.occ_version += 1

    def known_bbox(self, margin: int = 0):
        rows, cols = np.nonzero(self.state)
        if len(rows) == 0:
            return None
        return (max(rows.min() - margin, 0), min(rows.max() + margin + 1, self.size),
                max(cols.min() - margin, 0), min(cols.max() + margin + 1, self.size))


def channel_table_for(goal_category: str, context: list[str]) -> list[str]:
    """Channel 0 holds the goal category, channels 1-7 the first seven
    context categories in the order given."""
    table = [goal_category]
    for c in context:
        if c not in table:
            table.append(c)
        if len(table) == MAX_CHANNELS:
            break
    return table


@njit(cache=True)
def _free_along_rays(state, origin_x, origin_y, res, x0, y0, cos_b, sin_b, lengths, ds):
    """Mark unknown cells strictly before ``lengths`` along each ray as free."""
    size = state.shape[0]
    margin = 0.25 * res
    for i in range(lengths.shape[0]):
        k = 0
        while True:
            t = k * ds
            if not t < lengths[i] - margin:
                break
            c = int(math.floor((x0 + cos_b[i] * t - origin_x) / res))
            r = int(math.floor((y0 + sin_b[i] * t - origin_y) / res))
            if 0 <= c < size and 0 <= r < size and state[r, c] == 0:
                state[r, c] = 1
            k += 1


def integrate_observation(grid: SemanticOccupancyGrid, obs: Observation,
                          detections=()) -> SemanticOccupancyGrid:
    """Ray-cast one scan into the grid in place and return it.

    Cells a ray passes through become free unless already occupied; the
    cell just behind each hit becomes occupied. Hits on objects whose
    category has a channel set that channel's flag.
    """
    x0, y0, _ = obs.pose
    categories = {oid: cat for oid, cat in detections}
    depth = obs.depth
    hit = ~np.isnan(depth)
    lengths = np.where(hit, depth, obs.max_range)
    rad = np.radians(obs.bearings)
    _free_along_rays(grid.state, float(grid.origin[0]), float(grid.origin[1]), grid.resolution,
                     float(x0), float(y0), np.cos(rad), np.sin(rad),
                     np.ascontiguousarray(lengths, dtype=float), 0.25 * grid.resolution)

    if hit.any():
        rad = np.radians(obs.bearings[hit])
        d = depth[hit] + 0.25 * grid.resolution
        hx, hy = x0 + d * np.cos(rad), y0 + d * np.sin(rad)
        ci = np.floor((hx - grid.origin[0]) / grid.resolution).astype(np.int64)
        ri = np.floor((hy - grid.origin[1]) / grid.resolution).astype(np.int64)
        inside = (ci >= 0) & (ci < grid.size) & (ri >= 0) & (ri < grid.size)
        ri_in, ci_in = ri[inside], ci[inside]
        if np.any(grid.state[ri_in, ci_in] != OCCUPIED):
            grid.occ_version += 1
        grid.state[ri_in, ci_in] = OCCUPIED
        hit_ids = [h for h, k in zip(obs.hit, hit) if k]
        for k in np.flatnonzero(inside):
            cat = categories.get(hit_ids[k])
            ch = grid.channel(cat) if cat is not None else None
            if ch is not None:
                grid.semantic[ri[k], ci[k]] |= np.uint8(1 << ch)
    return grid


@dataclass(frozen=True)
class Frontier:
    centroid: tuple[float, float]
    cell_count: int
    cells: tuple = field(default=(), compare=False, repr=False)


def frontier_mask(grid: SemanticOccupancyGrid) -> np.ndarray:
    unknown = grid.state == UNKNOWN
    near = np.zeros_like(unknown)
    near[1:, :] |= unknown[:-1, :]
    near[:-1, :] |= unknown[1:, :]
    near[:, 1:] |= unknown[:, :-1]
    near[:, :-1] |= unknown[:, 1:]
    return (grid.state == FREE) & near


def extract_frontiers(grid: SemanticOccupancyGrid, split_extent: float = DEFAULT_SPLIT_EXTENT,
                      min_cells: int = 1) -> list[Frontier]:
    """Frontier cells (free, with an unknown 4-neighbour) clustered and
    reduced to centroids."""
    cells = map(tuple, np.argwhere(frontier_mask(grid)).tolist())
    out = []
    for cl in cluster_cells(set(cells), grid.resolution, split_extent):
        if cl.size < min_cells:
            continue
        cx, cy = cl.centroid
        out.append(Frontier((grid.origin[0] + cx, grid.origin[1] + cy), cl.size,
                            tuple(sorted(cl.cells))))
    return out


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Travel cost (m) to ``source`` over a window of the grid.

    ``offset`` is the (row, col) of ``values[0, 0]`` in grid coordinates;
    cells outside the window read as unreachable.
    """

    values: np.ndarray
    source: tuple[float, float]
    origin: tuple[float, float]
    resolution: float
    offset: tuple[int, int] = (0, 0)
    # values beyond this cost were not computed and read as unreachable
    horizon: float = math.inf

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((y - self.origin[1]) / self.resolution)),
                int(math.floor((x - self.origin[0]) / self.resolution)))

    def at_cell(self, r: int, c: int) -> float:
        r, c = r - self.offset[0], c - self.offset[1]
        if 0 <= r < self.values.shape[0] and 0 <= c < self.values.shape[1]:
            return float(self.values[r, c])
        return math.inf

    def at(self, x: float, y: float) -> float:
        return self.at_cell(*self.cell_of(x, y))


def planning_mask(grid: SemanticOccupancyGrid, inflate: float = DEFAULT_INFLATE,
                  window=None) -> np.ndarray:
    """Passable cells: anything farther than ``inflate`` from the edge of an
    occupied cell. Unknown space is passable."""
    occ = grid.state == OCCUPIED
    if window is not None:
        r0, r1, c0, c1 = window
        occ = occ[r0:r1, c0:c1]
    if inflate <= 0 or not occ.any():
        return ~occ
    # measured from the occupied cell's boundary, not its centre
    margin = inflate + grid.resolution / math.sqrt(2.0)
    return ndimage.distance_transform_edt(~occ) * grid.resolution > margin


def snap_to_passable(passable: np.ndarray, cell, max_cells: int):
    r0, c0 = cell
    rows, cols = passable.shape
    if 0 <= r0 < rows and 0 <= c0 < cols and passable[r0, c0]:
        return r0, c0
    lo_r, hi_r = max(r0 - max_cells, 0), min(r0 + max_cells + 1, rows)
    lo_c, hi_c = max(c0 - max_cells, 0), min(c0 + max_cells + 1, cols)
    if lo_r >= hi_r or lo_c >= hi_c:
        return None
    win = passable[lo_r:hi_r, lo_c:hi_c]
    rr, cc = np.nonzero(win)
    if len(rr) == 0:
        return None
    d2 = (rr + lo_r - r0) ** 2 + (cc + lo_c - c0) ** 2
    k = np.lexsort((cc, rr, d2))[0]
    if d2[k] > max_cells * max_cells:
        return None
    return int(rr[k] + lo_r), int(cc[k] + lo_c)


def _stop_cell(grid: SemanticOccupancyGrid, stop_at, window):
    if stop_at is None:
        return None
    r, c = grid.cell_of(*stop_at)
    r0, r1, c0, c1 = window
    if not (r0 <= r < r1 and c0 <= c < c1):
        return None
    return (r - r0, c - c0)


def _horizon(values: np.ndarray, stop, margin: float) -> float:
    if stop is None:
        return math.inf
    t = values[stop]
    return float(t + margin) if math.isfinite(t) else math.inf


def fmm_field(grid: SemanticOccupancyGrid, source: tuple[float, float],
              inflate: float = DEFAULT_INFLATE, snap: float = DEFAULT_SNAP,
              window=None, stop_at=None, margin: float = 1.0) -> DistanceField:
    """Eikonal distance to ``source`` with unit speed on free and unknown
    cells and zero speed inside inflated obstacles.

    ``window`` = (r0, r1, c0, c1) restricts the solve to a sub-rectangle of
    the grid, which the controller uses to skip far unknown space. With
    ``stop_at`` = (x, y) the solve ends ``margin`` metres past that point.
    """
    if window is None:
        window = (0, grid.size, 0, grid.size)
    r0, r1, c0, c1 = window
    passable = planning_mask(grid, inflate, window)
    sr, sc = grid.cell_of(*source)
    cell = snap_to_passable(passable, (sr - r0, sc - c0), int(snap / grid.resolution))
    if cell is None:
        raise InvalidSource(f"no passable cell within {snap} m of {source}")
    stop = _stop_cell(grid, stop_at, window)
    values = travel_time(passable, cell, grid.resolution, stop, margin)
    return DistanceField(values, tuple(source), grid.origin, grid.resolution, (r0, c0),
                         _horizon(values, stop, margin))


def fmm_field_to_points(grid: SemanticOccupancyGrid, points_xy, radius: float,
                        inflate: float = DEFAULT_INFLATE, window=None, stop_at=None,
                        margin: float = 1.0) -> DistanceField:
    """Distance to the ring of passable cells within ``radius`` of any of
    ``points_xy``; used to approach objects whose centre is not passable.

    Raises ``InvalidSource`` when no passable cell lies within the ring.
    """
    if window is None:
        window = (0, grid.size, 0, grid.size)
    r0, r1, c0, c1 = window
    passable = planning_mask(grid, inflate, window)
    pts = np.asarray(points_xy, dtype=float).reshape(-1, 2)
    rc = np.floor((pts[:, ::-1] - np.array([grid.origin[1], grid.origin[0]])) / grid.resolution).astype(int)
    rc -= np.array([r0, c0])
    inside = (rc[:, 0] >= 0) & (rc[:, 0] < r1 - r0) & (rc[:, 1] >= 0) & (rc[:, 1] < c1 - c0)
    if not inside.any():
        raise InvalidSource("target points lie outside the planning window")
    marks = np.ones(passable.shape, bool)
    marks[rc[inside, 0], rc[inside, 1]] = False
    near = ndimage.distance_transform_edt(marks) * grid.resolution <= radius
    seeds = near & passable
    if not seeds.any():
        raise InvalidSource(f"no passable cell within {radius} m of the target")
    stop = _stop_cell(grid, stop_at, window)
    values = travel_time_from_mask(passable, seeds, grid.resolution, stop, margin)
    centre = tuple(float(v) for v in pts.mean(axis=0))
    return DistanceField(values, centre, grid.origin, grid.resolution, (r0, c0),
                         _horizon(values, stop, margin))


_HEADINGS = tuple(range(0, 360, 30))
_LOOKAHEAD = (0.25, 0.5, 0.75, 1.0)


def _angle_diff(a: float, b: float) -> float:
    """Signed difference a - b wrapped into (-180, 180]."""
    d = (a - b) % 360.0
    return d - 360.0 if d > 180.0 else d


def next_action(field: DistanceField, state: AgentState, goal: tuple[float, float],
                success_radius: float, step_m: float = 0.25):
    """One step of field descent: ``ARRIVED``, ``STUCK`` or an ``Action``.

    Every reachable heading is scored by the field value one step ahead,
    skipping headings whose swept segment crosses an unreachable cell. The
    agent turns toward the best heading (shorter way, left on ties) and
    moves forward once aligned within the heading tolerance.
    """
    if math.hypot(state.x - goal[0], state.y - goal[1]) <= success_radius:
        return ARRIVED
    best = None
    for h in _HEADINGS:
        rad = math.radians(h)
        ux, uy = math.cos(rad), math.sin(rad)
        vals = [field.at(state.x + f * step_m * ux, state.y + f * step_m * uy) for f in _LOOKAHEAD]
        if not all(math.isfinite(v) for v in vals):
            continue
        key = (vals[-1], abs(_angle_diff(h, state.theta)))
        if best is None or key < best[0]:
            best = (key, h)
    if best is None:
        return STUCK
    diff = _angle_diff(best[1], state.theta)
    if abs(diff) <= HEADING_TOL:
        return Action.MOVE_FORWARD
    if diff == 180.0 or diff > 0:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT


# ---------------------------------------------------------------- export

def pgm_bytes(grid: SemanticOccupancyGrid) -> bytes:
    """Binary PGM with free=255, unknown=128, occupied=0; row 0 is the top
    (largest y) so the image reads like a map."""
    lut = np.array([128, 255, 0], dtype=np.uint8)
    img = lut[grid.state][::-1]
    header = f"P5\n{grid.size} {grid.size}\n255\n".encode()
    return header + img.tobytes()


def snapshot_sidecar(grid: SemanticOccupancyGrid, frontiers=None) -> dict:
    if frontiers is None:
        frontiers = extract_frontiers(grid)
    return {
        "format": "mcnav-map/1",
        "size": grid.size,
        "resolution_m": grid.resolution,
        "origin": list(grid.origin),
        "channels": {str(i): c for i, c in enumerate(grid.channel_table)},
        "frontiers": [{"centroid": [round(f.centroid[0], 4), round(f.centroid[1], 4)],
                       "cell_count": f.cell_count} for f in frontiers],
    }


def export_snapshot(grid: SemanticOccupancyGrid, pgm_path, frontiers=None) -> str:
    """Write ``pgm_path`` plus a ``.json`` sidecar next to it; returns the
    sidecar path."""
    with open(pgm_path, "wb") as fh:
        fh.write(pgm_bytes(grid))
    side = str(pgm_path).rsplit(".", 1)[0] + ".json"
    with open(side, "w") as fh:
        json.dump(snapshot_sidecar(grid, frontiers), fh, sort_keys=True, indent=1)
    return side
