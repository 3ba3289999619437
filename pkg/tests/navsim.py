"""Small helpers for closed-loop planner tests on fully known maps."""
from __future__ import annotations

import numpy as np

from mcnav.mapping import ARRIVED, FREE, OCCUPIED, SemanticOccupancyGrid, fmm_field, next_action, planning_mask
from mcnav.world import AgentState, Scene, SceneObject, step


def random_room_scene(seed: int, size_m: float = 6.0, res: float = 0.05) -> Scene:
    rng = np.random.default_rng(seed)
    n = int(round(size_m / res))
    bm = np.zeros((n, n), bool)
    bm[:2, :] = bm[-2:, :] = bm[:, :2] = bm[:, -2:] = True
    for _ in range(rng.integers(3, 8)):
        w, h = rng.integers(4, 30, 2)
        r, c = rng.integers(2, n - 2, 2)
        bm[r:r + h, c:c + w] = True
    dummy = SceneObject("g", "marker", (0.0, 0.0), 0.01, is_goal=True)
    free = np.argwhere(~bm)
    r, c = free[len(free) // 2]
    return Scene(bm, res, (dummy,), ((c + 0.5) * res, (r + 0.5) * res, 0), "g")


def grid_from_scene(scene: Scene) -> SemanticOccupancyGrid:
    n = max(scene.shape)
    g = SemanticOccupancyGrid(n, scene.resolution, center=(n * scene.resolution / 2, n * scene.resolution / 2))
    g.state[:] = OCCUPIED
    rows, cols = scene.shape
    g.state[:rows, :cols] = np.where(scene.bitmap, OCCUPIED, FREE)
    return g


def descend(seed: int, success_radius: float = 0.25):
    """Drive field descent from a random start to a random goal.

    Returns ``(steps, bound, arrived)`` where bound = 4 * geodesic / 0.25 + 24.
    """
    scene = random_room_scene(seed)
    grid = grid_from_scene(scene)
    rng = np.random.default_rng(1000 + seed)
    passable = planning_mask(grid, 0.2)
    cells = np.argwhere(passable)
    while True:
        a, b = cells[rng.integers(len(cells), size=2)]
        goal = grid.cell_center(*b)
        field = fmm_field(grid, goal, inflate=0.2)
        geo = field.at_cell(*a)
        if np.isfinite(geo) and geo > 1.0:
            break
    x, y = grid.cell_center(*a)
    state = AgentState(x, y, int(rng.integers(12)) * 30)
    bound = 4 * geo / 0.25 + 24
    for k in range(int(bound) + 1):
        act = next_action(field, state, goal, success_radius)
        if act == ARRIVED:
            return k, bound, True
        if not isinstance(act, str) or act not in ("stuck",):
            state, _ = step(scene, state, act)
        else:
            return k, bound, False
    return int(bound) + 1, bound, False
