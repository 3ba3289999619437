import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcnav.cogmap import (
    COGMAP_FORMAT, Blacklist, CognitiveMap, Event, Level, NodeNotFound, ObservationRecord,
    fuse_detections, next_blacklist, quality_score,
)

from oracles import blacklist_reference


def rec(step=0, conf=0.5, area=0.1, attrs=()):
    return ObservationRecord(step, (0.0, 0.0, 0.0), None, conf, area, frozenset(attrs))


def blob(cx, cy, seed=0, half=0.1):
    """Box-shaped cloud on voxel centres with a small seeded jitter, so
    repeated views of the same spot overlap almost completely."""
    rng = np.random.default_rng(seed)
    ax = np.arange(-half, half + 1e-9, 0.05) + 0.025
    z = np.arange(0.0, 0.5, 0.05) + 0.025
    pts = np.array(np.meshgrid(ax + cx, ax + cy, z, indexing="ij")).reshape(3, -1).T
    return pts + rng.uniform(-0.01, 0.01, pts.shape)


def confirmed_map(items):
    """Map with one confirmed node per ``(category, x, y, conf)`` item."""
    cm = CognitiveMap({c for c, *_ in items})
    for k in range(4):
        cm.fuse([(c, blob(x, y, seed=k), rec(k, conf)) for c, x, y, conf in items])
    return cm


@pytest.mark.parametrize("conf,area,q", [(0.8, 0.2, 0.5), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)])
def test_quality_score_examples(conf, area, q):
    assert quality_score(conf, area) == q
    assert rec(conf=conf, area=area).quality == q


@pytest.mark.parametrize("bad", [(-0.1, 0.5), (0.5, 1.01)])
def test_quality_score_range(bad):
    with pytest.raises(ValueError):
        quality_score(*bad)


def test_four_detections_confirm_three_do_not():
    cm = CognitiveMap({"chair"})
    got = []
    for k in range(4):
        r = cm.fuse([("chair", blob(1.0, 1.0, seed=k), rec(k))])
        got.append(r.newly_confirmed)
        if k == 2:
            assert cm.confirmed == [] and len(cm.candidates) == 1
    assert got == [[], [], [], [0]]
    (node,) = cm.confirmed
    assert node.detection_count == 4 and cm.candidates == []


def test_disjoint_same_category_stay_separate():
    cm = CognitiveMap({"chair"})
    cm.fuse([("chair", blob(0, 0), rec())])
    cm.fuse([("chair", blob(3, 3), rec())])
    assert len(cm.candidates) == 2


def test_other_category_never_merges():
    cm = CognitiveMap({"chair", "table"})
    cm.fuse([("chair", blob(0, 0), rec())])
    cm.fuse([("table", blob(0, 0), rec())])
    assert len(cm) == 2


def test_same_frame_detections_do_not_merge():
    cm = CognitiveMap({"chair"})
    cm.fuse([("chair", blob(0, 0), rec()), ("chair", blob(0, 0), rec())])
    assert len(cm) == 2


def test_records_sorted_and_capped():
    cm = CognitiveMap({"chair"}, max_records=10)
    rng = np.random.default_rng(3)
    for k in range(15):
        cm.fuse([("chair", blob(0, 0, seed=k), rec(k, float(rng.random())))])
    (node,) = cm.confirmed
    q = [r.quality for r in node.records]
    assert len(q) == 10 and q == sorted(q, reverse=True)
    assert node.detection_count == 15


def test_untracked_category_rejected():
    with pytest.raises(ValueError):
        CognitiveMap({"chair"}).fuse([("sofa", blob(0, 0), rec())])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["chair", "table"]),
                          st.integers(0, 3), st.integers(0, 3), st.integers(0, 5)),
                min_size=1, max_size=25))
def test_detections_conserved_and_replay_identical(stream):
    def build():
        cm = CognitiveMap({"chair", "table"})
        for cat, x, y, seed in stream:
            cm.fuse([(cat, blob(x * 0.6, y * 0.6, seed=seed), rec(seed, conf=0.1 * seed))])
        return cm
    a, b = build(), build()
    assert sum(n.detection_count for n in a.confirmed + a.candidates) == len(stream)
    assert a.to_json() == b.to_json()
    for n in a.confirmed:
        assert n.detection_count >= 4


def test_center_is_cloud_centroid():
    cm = confirmed_map([("chair", 2.0, 1.0, 0.5)])
    (n,) = cm.confirmed
    assert n.center == pytest.approx(tuple(n.cloud[:, :2].mean(axis=0)))


def test_query_by_category_order_and_blacklist():
    cm = confirmed_map([("chair", 0, 0, 0.3), ("chair", 4, 0, 0.9)])
    assert [n.node_id for n in cm.query_by_category("chair")] == [1, 0]
    assert cm.query_by_category("bed") == []
    cm.blacklist_event(1, Event.ARRIVAL_VERIFICATION_FAILED)
    assert [n.node_id for n in cm.query_by_category("chair")] == [0]
    assert len(cm.query_by_category("chair", include_blacklisted=True)) == 2


def test_neighbors_radius_and_set_semantics():
    cm = confirmed_map([("chair", 0, 0, 0.5), ("table", 1.9, 0, 0.5), ("lamp", 2.1, 0, 0.5)])
    chair = cm.query_by_category("chair")[0]
    # blob centroids wobble by a few cm, so use the measured distances
    d = {n.category: np.hypot(*np.subtract(n.center, chair.center)) for n in cm.confirmed}
    assert d["table"] < 2.0 < d["lamp"]
    assert cm.neighbors(chair, 2.0) == {"table"}
    lonely = confirmed_map([("chair", 0, 0, 0.5)])
    assert lonely.neighbors(lonely.confirmed[0], 2.0) == set()
    two = confirmed_map([("chair", 0, 0, 0.5), ("table", 1, 0, 0.5), ("table", 0, 1, 0.5)])
    assert two.neighbors(two.query_by_category("chair")[0], 2.0) == {"table"}
    with pytest.raises(ValueError):
        two.neighbors(two.confirmed[0], 0.0)


def test_region_query():
    cm = confirmed_map([("chair", 1.0, 1.0, 0.5)])
    x, y = cm.confirmed[0].center
    assert cm.region_query((x - 0.5, y - 0.5, x + 0.5, y + 0.5), "chair")
    assert not cm.region_query((x + 0.01, y - 0.5, x + 1.0, y + 0.5), "chair")
    assert not cm.region_query((x - 0.5, y - 0.5, x + 0.5, y + 0.5), "sofa")
    assert not CognitiveMap({"chair"}).region_query((0, 0, 1, 1), "chair")
    with pytest.raises(ValueError):
        cm.region_query((0, 0, 0, 1), "chair")


def test_blacklist_examples():
    s = Blacklist()
    for _ in range(3):
        s = next_blacklist(s, "revalidation_failed")
    assert s.level is Level.TEMPORARY
    s = next_blacklist(next_blacklist(Blacklist(), "revalidation_passed"), "arrival_verification_failed")
    assert s.level is Level.PERMANENT
    assert next_blacklist(Blacklist(Level.TEMPORARY, 3), "strong_new_evidence") == Blacklist()
    assert next_blacklist(s, "strong_new_evidence").level is Level.PERMANENT


def test_blacklist_unknown_node():
    with pytest.raises(NodeNotFound):
        CognitiveMap({"chair"}).blacklist_event(7, "revalidation_failed")


def test_blacklist_exhaustive_against_reference():
    events = [e.value for e in Event]
    n = 0
    for length in range(7):
        for seq in itertools.product(events, repeat=length):
            s = Blacklist()
            was_perm = False
            for e in seq:
                s = next_blacklist(s, e)
                assert not (was_perm and s.level is not Level.PERMANENT)
                was_perm = s.level is Level.PERMANENT
            assert s.level.value == blacklist_reference(list(seq)), seq
            n += 1
    assert n == sum(4 ** k for k in range(7))


def test_strong_evidence_reported():
    cm = CognitiveMap({"chair"})
    cm.fuse([("chair", blob(0, 0), rec(0, conf=0.2, area=0.0))])
    r = cm.fuse([("chair", blob(0, 0, seed=1), rec(1, conf=0.4, area=0.0))])
    assert r.strong_evidence == []
    r = cm.fuse([("chair", blob(0, 0, seed=2), rec(2, conf=0.8, area=0.0))])
    assert r.strong_evidence == [0]


def test_snapshot_format():
    cm = confirmed_map([("chair", 0, 0, 0.5)])
    doc = json.loads(cm.to_json())
    assert doc["format"] == COGMAP_FORMAT
    (node,) = doc["nodes"]
    assert set(node) >= {"id", "category", "center", "count", "blacklist", "records"}


def test_functional_fuse_threshold_override():
    cm = CognitiveMap({"chair"})
    fuse_detections(cm, [("chair", blob(0, 0), rec())])
    # a 5 cm shift leaves a partial overlap: below 0.9, above the default
    fuse_detections(cm, [("chair", blob(0.05, 0), rec())], iou_threshold=0.9)
    assert len(cm) == 2 and cm.iou_threshold == 0.25
    fuse_detections(cm, [("chair", blob(0.05, 0, seed=1), rec())])
    assert len(cm) == 2
