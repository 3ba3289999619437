"""Dynamic cognitive map: sparse memory of confirmed object nodes.

Detections from each frame are associated with previously accumulated
candidates of the same category by point-cloud IoU. A candidate becomes a
confirmed node once it has been seen more than ``confirm_after`` times.
Every node keeps a short list of its best observation records and a
blacklist status driven by explicit events.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import DEFAULT_VOXEL, as_cloud, cloud_iou, voxel_downsample

COGMAP_FORMAT = "mcnav-cogmap/1"
DEFAULT_IOU_THRESHOLD = 0.25
CONFIRM_AFTER = 3
MAX_RECORDS = 10
TEMPORARY_STREAK = 3
STRONG_EVIDENCE_GAIN = 0.2


class NodeNotFound(KeyError):
    """Raised when an event or query names a node the map does not hold."""


def quality_score(confidence: float, area_ratio: float) -> float:
    """Equal-weight blend of detector confidence and image area ratio."""
    for name, v in (("confidence", confidence), ("area_ratio", area_ratio)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return 0.5 * confidence + 0.5 * area_ratio


@dataclass(frozen=True)
class ObservationRecord:
    """One frame's view of an object.

    ``object_id_hint`` is simulator ground truth. It is kept for tracing and
    for the scripted oracle's unreliability model; strategies never read it.
    """

    step: int
    pose: tuple[float, float, float]
    object_id_hint: str | None
    confidence: float
    area_ratio: float
    visible_attrs: frozenset = frozenset()
    scan: bool = False
    quality: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "quality", quality_score(self.confidence, self.area_ratio))

    def summary(self) -> dict:
        return {
            "step": self.step,
            "pose": [round(float(v), 6) for v in self.pose],
            "confidence": self.confidence,
            "area_ratio": self.area_ratio,
            "quality": round(self.quality, 9),
            "attrs": sorted(self.visible_attrs),
        }


class Level(str, enum.Enum):
    NONE = "none"
    TEMPORARY = "temporary"
    PERMANENT = "permanent"


class Event(str, enum.Enum):
    REVALIDATION_FAILED = "revalidation_failed"
    REVALIDATION_PASSED = "revalidation_passed"
    ARRIVAL_VERIFICATION_FAILED = "arrival_verification_failed"
    STRONG_NEW_EVIDENCE = "strong_new_evidence"


@dataclass(frozen=True)
class Blacklist:
    level: Level = Level.NONE
    fail_streak: int = 0

    @property
    def active(self) -> bool:
        return self.level is not Level.NONE


def next_blacklist(status: Blacklist, event: Event | str) -> Blacklist:
    """Pure transition function of the blacklist state machine."""
    event = Event(event)
    if status.level is Level.PERMANENT:
        return status
    if event is Event.ARRIVAL_VERIFICATION_FAILED:
        return Blacklist(Level.PERMANENT, status.fail_streak)
    if event is Event.REVALIDATION_FAILED:
        streak = status.fail_streak + 1
        level = Level.TEMPORARY if streak >= TEMPORARY_STREAK else status.level
        return Blacklist(level, streak)
    if event is Event.REVALIDATION_PASSED:
        return Blacklist(status.level, 0)
    return Blacklist(Level.NONE, 0)


@dataclass
class ObjectNode:
    node_id: int
    category: str
    cloud: np.ndarray
    records: list[ObservationRecord]
    detection_count: int = 1
    blacklist: Blacklist = Blacklist()

    @property
    def center(self) -> tuple[float, float]:
        xy = self.cloud[:, :2].mean(axis=0)
        return float(xy[0]), float(xy[1])

    @property
    def confirmed(self) -> bool:
        return self.detection_count > CONFIRM_AFTER

    @property
    def best_quality(self) -> float:
        return self.records[0].quality

    def add_record(self, rec: ObservationRecord, cap: int = MAX_RECORDS) -> None:
        # stable sort keeps the earlier record first among equal qualities
        self.records.append(rec)
        self.records.sort(key=lambda r: -r.quality)
        del self.records[cap:]


@dataclass
class FusionResult:
    """``assigned[k]`` is the node that detection ``k`` landed in (``None``
    for an empty cloud)."""

    newly_confirmed: list[int]
    assigned: list
    strong_evidence: list[int]


def _bbox(cloud: np.ndarray, pad: float) -> np.ndarray:
    return np.concatenate([cloud.min(axis=0) - pad, cloud.max(axis=0) + pad])


def _bbox_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(np.all(a[:3] <= b[3:]) and np.all(b[:3] <= a[3:]))


class CognitiveMap:
    """Candidates and confirmed object nodes for a single episode."""

    def __init__(self, categories, iou_threshold: float = DEFAULT_IOU_THRESHOLD,
                 voxel: float = DEFAULT_VOXEL, max_records: int = MAX_RECORDS):
        self.categories = frozenset(categories)
        self.iou_threshold = float(iou_threshold)
        self.voxel = float(voxel)
        self.max_records = int(max_records)
        self._nodes: dict[int, ObjectNode] = {}
        self._boxes: dict[int, np.ndarray] = {}
        self._next_id = 0
        self.ingested = 0

    # ------------------------------------------------------------ contents

    def __len__(self) -> int:
        return len(self._nodes)

    def node(self, node_id: int) -> ObjectNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise NodeNotFound(node_id) from None

    @property
    def confirmed(self) -> list[ObjectNode]:
        return [n for n in self._nodes.values() if n.confirmed]

    @property
    def candidates(self) -> list[ObjectNode]:
        return [n for n in self._nodes.values() if not n.confirmed]

    # ------------------------------------------------------------ fusion

    def fuse(self, dets) -> FusionResult:
        """Merge one frame of ``(category, cloud, record)`` detections.

        Association only considers nodes that existed before this frame, so
        two detections in the same frame never merge with each other.
        """
        prior = list(self._nodes.values())
        boxes = self._boxes
        result = FusionResult([], [], [])
        # association uses the boxes from before this frame; merged boxes land afterwards
        merged_boxes: dict[int, np.ndarray] = {}
        for category, cloud, rec in dets:
            if category not in self.categories:
                raise ValueError(f"category {category!r} is not tracked by this map")
            cloud = as_cloud(cloud)
            if len(cloud) == 0:
                result.assigned.append(None)
                continue
            self.ingested += 1
            box = _bbox(cloud, self.voxel)
            best, best_iou = None, -1.0
            for n in prior:
                if n.category != category or not _bbox_overlap(box, boxes[n.node_id]):
                    continue
                iou = cloud_iou(n.cloud, cloud, self.voxel)
                if iou >= self.iou_threshold and iou > best_iou:
                    best, best_iou = n, iou
            if best is None:
                node = ObjectNode(self._next_id, category, voxel_downsample(cloud, self.voxel), [rec])
                self._nodes[node.node_id] = node
                self._boxes[node.node_id] = _bbox(node.cloud, self.voxel)
                self._next_id += 1
                result.assigned.append(node.node_id)
                continue
            was_confirmed = best.confirmed
            if rec.quality >= best.best_quality + STRONG_EVIDENCE_GAIN:
                result.strong_evidence.append(best.node_id)
            best.cloud = voxel_downsample(np.vstack([best.cloud, cloud]), self.voxel)
            merged_boxes[best.node_id] = _bbox(best.cloud, self.voxel)
            best.detection_count += 1
            best.add_record(rec, self.max_records)
            result.assigned.append(best.node_id)
            if best.confirmed and not was_confirmed:
                result.newly_confirmed.append(best.node_id)
        self._boxes.update(merged_boxes)
        return result

    # ------------------------------------------------------------ queries

    def query_by_category(self, category: str, include_blacklisted: bool = False) -> list[ObjectNode]:
        hits = [n for n in self.confirmed if n.category == category
                and (include_blacklisted or not n.blacklist.active)]
        return sorted(hits, key=lambda n: (-n.best_quality, n.node_id))

    def neighbors(self, node: ObjectNode, r: float) -> set[str]:
        if not r > 0:
            raise ValueError("neighbour radius must be positive")
        cx, cy = node.center
        out = set()
        for other in self.confirmed:
            if other.node_id == node.node_id:
                continue
            ox, oy = other.center
            if np.hypot(ox - cx, oy - cy) <= r:
                out.add(other.category)
        return out

    def region_query(self, rect, category: str) -> bool:
        """True when a confirmed, non-blacklisted ``category`` node has its
        center inside ``rect = (xmin, ymin, xmax, ymax)``."""
        x0, y0, x1, y1 = rect
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate region {rect}")
        for n in self.confirmed:
            if n.category == category and not n.blacklist.active:
                x, y = n.center
                if x0 <= x <= x1 and y0 <= y <= y1:
                    return True
        return False

    def blacklist_event(self, node_id: int, event: Event | str) -> Blacklist:
        node = self.node(node_id)
        node.blacklist = next_blacklist(node.blacklist, event)
        return node.blacklist

    # ------------------------------------------------------------ export

    def snapshot(self) -> dict:
        nodes = []
        for n in sorted(self._nodes.values(), key=lambda n: n.node_id):
            if not n.confirmed:
                continue
            nodes.append({
                "id": n.node_id,
                "category": n.category,
                "center": [round(v, 6) for v in n.center],
                "count": n.detection_count,
                "blacklist": n.blacklist.level.value,
                "fail_streak": n.blacklist.fail_streak,
                "records": [r.summary() for r in n.records],
            })
        return {"format": COGMAP_FORMAT, "categories": sorted(self.categories), "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))


def fuse_detections(cmap: CognitiveMap, dets, iou_threshold: float | None = None) -> FusionResult:
    """Functional entry point; ``iou_threshold`` overrides the map's own
    threshold for this call only."""
    if iou_threshold is None:
        return cmap.fuse(dets)
    saved, cmap.iou_threshold = cmap.iou_threshold, float(iou_threshold)
    try:
        return cmap.fuse(dets)
    finally:
        cmap.iou_threshold = saved
