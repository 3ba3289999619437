"""Point-cloud and planar-cluster primitives.

Point clouds are plain ``(N, 3)`` float arrays in world meters. Every
function here is pure; inputs are never modified.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

DEFAULT_VOXEL = 0.05
DEFAULT_EPS = 0.15
DEFAULT_MIN_PTS = 5
DEFAULT_SPLIT_EXTENT = 2.0


def as_cloud(points) -> np.ndarray:
    """Coerce ``points`` to an ``(N, 3)`` float64 array, rejecting NaN/inf."""
    cloud = np.asarray(points, dtype=np.float64)
    if cloud.size == 0:
        return np.zeros((0, 3))
    cloud = cloud.reshape(-1, 3)
    if not np.all(np.isfinite(cloud)):
        raise ValueError("point cloud contains non-finite coordinates")
    return cloud


def voxel_keys(cloud: np.ndarray, voxel: float) -> np.ndarray:
    """Integer voxel index of every point, shape ``(N, 3)``."""
    if voxel <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel}")
    return np.floor(as_cloud(cloud) / voxel).astype(np.int64)


def voxel_downsample(cloud, voxel: float = DEFAULT_VOXEL) -> np.ndarray:
    """Replace the points inside each occupied voxel by their centroid.

    Output rows are ordered by voxel index, so the result does not depend
    on input order beyond floating-point summation.
    """
    cloud = as_cloud(cloud)
    keys = voxel_keys(cloud, voxel)
    if len(cloud) == 0:
        return cloud
    # pack the three indices into one integer that sorts lexicographically,
    # which keeps the 1-D unique fast
    keys = keys - keys.min(axis=0)
    span = keys.max(axis=0) + 1
    packed = (keys[:, 0] * span[1] + keys[:, 1]) * span[2] + keys[:, 2]
    _, inverse, counts = np.unique(packed, return_inverse=True, return_counts=True)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, cloud)
    return sums / counts[:, None]


def dbscan_filter(cloud, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS) -> np.ndarray:
    """Drop DBSCAN noise points, keeping every point that belongs to a cluster.

    When every point is noise the cloud is returned unchanged: a small but
    genuine detection should not vanish from memory.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    cloud = as_cloud(cloud)
    if len(cloud) == 0:
        return cloud
    # noise is exactly the set of non-core points with no core point within
    # eps, so cluster labels are never needed
    pairs = cKDTree(cloud).query_pairs(eps, output_type="ndarray")
    n = len(cloud)
    counts = 1 + np.bincount(pairs.ravel(), minlength=n)
    core = counts >= min_pts
    keep = core.copy()
    keep[pairs[core[pairs[:, 0]], 1]] = True
    keep[pairs[core[pairs[:, 1]], 0]] = True
    if not keep.any():
        return cloud.copy()
    return cloud[keep]


def _voxel_set(cloud, voxel: float) -> set[tuple[int, int, int]]:
    return set(map(tuple, voxel_keys(cloud, voxel).tolist()))


def cloud_iou(a, b, voxel: float = DEFAULT_VOXEL) -> float:
    """Intersection-over-union of the voxel sets occupied by two clouds."""
    va, vb = _voxel_set(a, voxel), _voxel_set(b, voxel)
    union = len(va | vb)
    if union == 0:
        return 0.0
    return len(va & vb) / union


@dataclass(frozen=True)
class CellCluster:
    """A group of grid cells summarised by its centroid.

    ``cells`` holds ``(row, col)`` indices; ``centroid`` is ``(x, y)`` in
    meters with cell ``(r, c)`` centred at ``((c + .5) * res, (r + .5) * res)``.
    """

    cells: frozenset
    centroid: tuple[float, float]
    principal_extent: float

    @property
    def size(self) -> int:
        return len(self.cells)


def _principal_split(rc: np.ndarray, resolution: float, split_extent: float) -> list[np.ndarray]:
    xy = np.column_stack([rc[:, 1], rc[:, 0]]).astype(float) * resolution
    if len(rc) == 1:
        return [rc]
    centred = xy - xy.mean(axis=0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    proj = centred @ vt[0]
    extent = proj.max() - proj.min() + resolution
    if extent <= split_extent:
        return [rc]
    median = np.median(proj)
    lower = proj <= median
    if lower.all() or not lower.any():
        return [rc]
    return (_principal_split(rc[lower], resolution, split_extent)
            + _principal_split(rc[~lower], resolution, split_extent))


def _make_cluster(rc: np.ndarray, resolution: float) -> CellCluster:
    xy = (np.column_stack([rc[:, 1], rc[:, 0]]).astype(float) + 0.5) * resolution
    centroid = xy.mean(axis=0)
    if len(rc) > 1:
        _, _, vt = np.linalg.svd(xy - centroid, full_matrices=False)
        proj = (xy - centroid) @ vt[0]
        extent = float(proj.max() - proj.min() + resolution)
    else:
        extent = resolution
    cells = frozenset((int(r), int(c)) for r, c in rc)
    return CellCluster(cells, (float(centroid[0]), float(centroid[1])), extent)


def cluster_cells(cells, resolution: float,
                  split_extent: float = DEFAULT_SPLIT_EXTENT) -> list[CellCluster]:
    """Group cells into 8-connected components, bisecting long ones.

    A component whose extent along its first principal axis exceeds
    ``split_extent`` is cut at the median of the projected cells, and the
    halves are processed recursively. Clusters come out sorted by their
    smallest member cell so the result is deterministic.
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    rc = np.array(sorted(cells), dtype=np.int64).reshape(-1, 2)
    if len(rc) == 0:
        return []
    lo = rc.min(axis=0)
    shape = rc.max(axis=0) - lo + 1
    mask = np.zeros(tuple(shape), dtype=bool)
    mask[rc[:, 0] - lo[0], rc[:, 1] - lo[1]] = True
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    comp = labels[rc[:, 0] - lo[0], rc[:, 1] - lo[1]]

    clusters = []
    for label in np.unique(comp):
        for part in _principal_split(rc[comp == label], resolution, split_extent):
            clusters.append(_make_cluster(part, resolution))
    clusters.sort(key=lambda cl: min(cl.cells))
    return clusters
