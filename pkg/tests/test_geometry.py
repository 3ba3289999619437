import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcnav.geometry import cloud_iou, cluster_cells, dbscan_filter, voxel_downsample

from oracles import brute_dbscan_keep, hash_voxels, voxel_iou


def test_voxel_downsample_merges_close_points():
    out = voxel_downsample([[0.011, 0.011, 0.011], [0.021, 0.011, 0.011]], 0.05)
    np.testing.assert_allclose(out, [[0.016, 0.011, 0.011]])


def test_voxel_downsample_empty():
    assert voxel_downsample(np.zeros((0, 3)), 0.05).shape == (0, 3)


def test_voxel_downsample_rejects_bad_voxel():
    with pytest.raises(ValueError):
        voxel_downsample([[0, 0, 0]], 0.0)


def test_voxel_downsample_count_matches_hash_grid():
    pts = np.random.default_rng(3).uniform(0, 1, (1000, 3))
    out = voxel_downsample(pts, 0.05)
    assert len(out) == len(hash_voxels(pts, 0.05))


def test_voxel_downsample_idempotent_count():
    pts = np.random.default_rng(4).uniform(-1, 1, (500, 3))
    once = voxel_downsample(pts, 0.1)
    assert len(voxel_downsample(once, 0.1)) == len(once)


def test_dbscan_drops_far_outlier():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(20, 3))
    blob = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(0, 0.1, (20, 1))
    pts = np.vstack([blob, [[2.0, 0, 0]]])
    assert brute_dbscan_keep(pts, 0.15, 5) == set(range(20))
    out = dbscan_filter(pts, 0.15, 5)
    np.testing.assert_array_equal(out, blob)


def test_dbscan_coincident_points_kept():
    pts = np.ones((6, 3))
    assert len(dbscan_filter(pts, 0.15, 5)) == 6


def test_dbscan_all_noise_returns_input():
    pts = np.eye(3).tolist() + [[5, 5, 5]]
    np.testing.assert_array_equal(dbscan_filter(pts, 0.15, 5), np.array(pts, float))


def test_dbscan_precondition():
    with pytest.raises(ValueError):
        dbscan_filter([[0, 0, 0]], eps=0)
    with pytest.raises(ValueError):
        dbscan_filter([[0, 0, 0]], min_pts=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 120))
def test_dbscan_matches_bruteforce(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, (n, 3))
    keep = brute_dbscan_keep(pts, 0.15, 5)
    out = dbscan_filter(pts, 0.15, 5)
    expected = pts if not keep else pts[sorted(keep)]
    np.testing.assert_array_equal(out, expected)


def test_iou_cases():
    a = np.random.default_rng(1).uniform(0, 0.5, (50, 3))
    assert cloud_iou(a, a) == 1.0
    assert cloud_iou(a, a + 10.0) == 0.0
    v = 0.05
    c = lambda *ix: np.array([[i * v + v / 2, v / 2, v / 2] for i in ix])
    assert voxel_iou(c(1, 2, 3), c(2, 3, 4), v) == 0.5
    assert cloud_iou(c(1, 2, 3), c(2, 3, 4), v) == 0.5
    assert cloud_iou(np.zeros((0, 3)), np.zeros((0, 3))) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 200), st.integers(0, 200))
def test_iou_symmetric_and_matches_oracle(seed, na, nb):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 0.4, (na, 3))
    b = rng.uniform(0.1, 0.5, (nb, 3))
    assert cloud_iou(a, b) == cloud_iou(b, a) == voxel_iou(a, b, 0.05)


def test_cluster_line_single():
    cells = {(10, c) for c in range(5)}
    (cl,) = cluster_cells(cells, 0.05)
    assert cl.centroid == pytest.approx((2.5 * 0.05, 10.5 * 0.05))


def test_cluster_single_cell():
    (cl,) = cluster_cells({(3, 7)}, 0.05)
    assert cl.centroid == pytest.approx((7.5 * 0.05, 3.5 * 0.05))


def test_cluster_long_run_split():
    cells = {(0, c) for c in range(60)}
    parts = cluster_cells(cells, 0.05, split_extent=2.0)
    assert len(parts) == 2
    assert abs(parts[0].size - parts[1].size) <= 1


def test_cluster_diagonal_is_connected():
    assert len(cluster_cells({(0, 0), (1, 1), (2, 2)}, 0.1)) == 1
    assert len(cluster_cells({(0, 0), (2, 2)}, 0.1)) == 2


@settings(max_examples=50, deadline=None)
@given(st.sets(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=200))
def test_cluster_partitions_input(cells):
    parts = cluster_cells(cells, 0.05, split_extent=0.5)
    seen = [c for p in parts for c in p.cells]
    assert len(seen) == len(set(seen)) == len(cells)
    assert set(seen) == cells
    for p in parts:
        rows = [r for r, _ in p.cells]
        cols = [c for _, c in p.cells]
        x, y = p.centroid
        assert min(cols) * 0.05 <= x <= (max(cols) + 1) * 0.05
        assert min(rows) * 0.05 <= y <= (max(rows) + 1) * 0.05
