"""Procedural driving scenes: lane networks, oriented boxes, region bookkeeping.

A scene is a constant-curvature road (centerline arcs offset into lane
boundaries and per-lane centerlines) plus vehicles on lanes and pedestrians
beside them, all inside a square patch of flat ground (z = 0).  Two disjoint
"cities" share this geometry generator; they differ only in region-id sets
and in appearance (see :mod:`citygen.render`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

VEHICLE = "vehicle"
PEDESTRIAN = "pedestrian"


@dataclass(frozen=True)
class Box3D:
    """Upright box; center z puts the bottom face on the ground plane."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]  # length (along yaw), width, height
    yaw: float
    cls: str = VEHICLE

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError(f"box size must be positive, got {self.size}")
        if abs(self.center[2] - self.size[2] / 2.0) > 1e-9:
            raise ValueError("box bottom must sit on the ground plane z=0")


def box_footprint(box: Box3D) -> np.ndarray:
    """Ground-plane corners (4, 2), counter-clockwise."""
    l2, w2 = box.size[0] / 2.0, box.size[1] / 2.0
    local = np.array([[l2, w2], [-l2, w2], [-l2, -w2], [l2, -w2]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array(box.center[:2])


def box_corners(box: Box3D) -> np.ndarray:
    """All 8 corners (8, 3): bottom ring then top ring."""
    fp = box_footprint(box)
    z_lo = box.center[2] - box.size[2] / 2.0
    z_hi = box.center[2] + box.size[2] / 2.0
    bottom = np.column_stack([fp, np.full(4, z_lo)])
    top = np.column_stack([fp, np.full(4, z_hi)])
    return np.vstack([bottom, top])


BOX_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 0),  # bottom ring
    (4, 5), (5, 6), (6, 7), (7, 4),  # top ring
    (0, 4), (1, 5), (2, 6), (3, 7),  # verticals
]

BOX_FACES = [
    (0, 1, 2, 3),  # bottom
    (7, 6, 5, 4),  # top
    (0, 4, 5, 1),
    (1, 5, 6, 2),
    (2, 6, 7, 3),
    (3, 7, 4, 0),
]


def footprints_overlap(a: Box3D, b: Box3D, margin: float = 0.0) -> bool:
    """Separating-axis test between two oriented ground rectangles."""
    pa, pb = box_footprint(a), box_footprint(b)
    for poly in (pa, pb):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            n = np.linalg.norm(axis)
            if n == 0:
                continue
            axis /= n
            lo_a, hi_a = (pa @ axis).min(), (pa @ axis).max()
            lo_b, hi_b = (pb @ axis).min(), (pb @ axis).max()
            if hi_a + margin <= lo_b or hi_b + margin <= lo_a:
                return False
    return True


@dataclass
class SceneGraph:
    lane_boundaries: list[np.ndarray] = field(default_factory=list)  # (N, 3) world polylines
    lane_centerlines: list[np.ndarray] = field(default_factory=list)
    boxes: list[Box3D] = field(default_factory=list)
    region_id: int = 0
    city_id: str = "A"

    def all_polylines(self):
        return list(self.lane_boundaries) + list(self.lane_centerlines)

    def to_dict(self) -> dict:
        return {
            "city_id": self.city_id,
            "region_id": self.region_id,
            "lane_boundaries": [p.tolist() for p in self.lane_boundaries],
            "lane_centerlines": [p.tolist() for p in self.lane_centerlines],
            "boxes": [
                {"center": list(b.center), "size": list(b.size), "yaw": b.yaw, "cls": b.cls}
                for b in self.boxes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGraph":
        return cls(
            lane_boundaries=[np.asarray(p, dtype=np.float64) for p in d["lane_boundaries"]],
            lane_centerlines=[np.asarray(p, dtype=np.float64) for p in d["lane_centerlines"]],
            boxes=[
                Box3D(tuple(b["center"]), tuple(b["size"]), b["yaw"], b["cls"])
                for b in d["boxes"]
            ],
            region_id=int(d["region_id"]),
            city_id=d["city_id"],
        )


def _arc_centerline(anchor_xy, heading: float, curvature: float, half_extent: float, step: float) -> np.ndarray:
    """Constant-curvature arc through ``anchor_xy`` with the given heading at s=0."""
    n_steps = int(math.ceil(2.2 * half_extent / step))
    s = (np.arange(2 * n_steps + 1) - n_steps) * step
    if abs(curvature) < 1e-9:
        x = anchor_xy[0] + s * math.cos(heading)
        y = anchor_xy[1] + s * math.sin(heading)
    else:
        x = anchor_xy[0] + (np.sin(heading + curvature * s) - math.sin(heading)) / curvature
        y = anchor_xy[1] - (np.cos(heading + curvature * s) - math.cos(heading)) / curvature
    pts = np.column_stack([x, y, np.zeros_like(x)])
    return pts, s


def _trim_to_square(pts: np.ndarray, s: np.ndarray, half_extent: float) -> np.ndarray:
    """Longest run of vertices containing s=0 that stays inside the square."""
    inside = (np.abs(pts[:, 0]) <= half_extent) & (np.abs(pts[:, 1]) <= half_extent)
    mid = int(np.argmin(np.abs(s)))
    lo = mid
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    hi = mid
    while hi < len(pts) - 1 and inside[hi + 1]:
        hi += 1
    return pts[lo : hi + 1]


def _offset_polyline(pts: np.ndarray, headings: np.ndarray, offset: float) -> np.ndarray:
    out = pts.copy()
    out[:, 0] += -np.sin(headings) * offset
    out[:, 1] += np.cos(headings) * offset
    return out


def generate_scene(seed: int, cfg) -> SceneGraph:
    """Deterministic scene for (seed, config); regenerates on placement failure.

    ``cfg`` is a :class:`citygen.config.CityConfig` narrowed to one split
    (its ``regions`` list is the split's region set).
    """
    for attempt in range(cfg.max_scene_retries):
        scene = _try_generate(derive_seed(seed, "scene", attempt), cfg)
        if scene is not None:
            return scene
        log.warning("scene seed=%d attempt=%d: box placement failed, regenerating", seed, attempt)
    raise RuntimeError(f"scene generation failed after {cfg.max_scene_retries} attempts (seed={seed})")


def _try_generate(sub_seed: int, cfg) -> SceneGraph | None:
    rng = Rng(sub_seed)
    half = cfg.extent / 2.0
    curvature = (rng.uniform() * 2.0 - 1.0) * cfg.max_curvature
    heading = math.pi / 2.0 + (rng.uniform() * 2.0 - 1.0) * math.radians(cfg.heading_jitter_deg)
    anchor = (cfg.road_center_x + (rng.uniform() * 2.0 - 1.0) * cfg.anchor_jitter, 0.0)

    raw, s = _arc_centerline(anchor, heading, curvature, half, cfg.polyline_step)
    if abs(curvature) < 1e-9:
        headings = np.full(len(raw), heading)
    else:
        headings = heading + curvature * s
    lane_w = cfg.lane_width
    n_lanes = cfg.n_lanes
    offsets_b = [(i - n_lanes / 2.0) * lane_w for i in range(n_lanes + 1)]
    offsets_c = [(i - (n_lanes - 1) / 2.0) * lane_w for i in range(n_lanes)]

    def finish(polys):
        out = []
        for p in polys:
            t = _trim_to_square(p, s, half)
            if len(t) >= 2:
                out.append(t)
        return out

    boundaries = finish([_offset_polyline(raw, headings, o) for o in offsets_b])
    centerline_polys = [_offset_polyline(raw, headings, o) for o in offsets_c]
    centerlines = finish(centerline_polys)
    if not boundaries or not centerlines:
        return None

    n_boxes = int(rng.integers(cfg.n_boxes_min, cfg.n_boxes_max + 1))
    boxes: list[Box3D] = []
    for _ in range(n_boxes):
        placed = False
        for _retry in range(cfg.box_retry_budget):
            box = _draw_box(rng, cfg, centerline_polys, headings, boundaries)
            if box is None:
                continue
            fp = box_footprint(box)
            if np.abs(fp).max() > half:
                continue
            if np.linalg.norm(np.array(box.center[:2])) < cfg.ego_clear_radius:
                continue
            if any(footprints_overlap(box, other, margin=cfg.box_margin) for other in boxes):
                continue
            boxes.append(box)
            placed = True
            break
        if not placed:
            return None

    region = cfg.regions[rng.choice(len(cfg.regions))]
    return SceneGraph(
        lane_boundaries=boundaries,
        lane_centerlines=centerlines,
        boxes=boxes,
        region_id=int(region),
        city_id=cfg.city_id,
    )


def _draw_box(rng: Rng, cfg, centerlines, headings, boundaries) -> Box3D | None:
    if rng.uniform() < cfg.vehicle_fraction:
        lane = centerlines[rng.choice(len(centerlines))]
        idx = rng.choice(len(lane))
        x, y = lane[idx, 0], lane[idx, 1]
        jitter = (rng.uniform() * 2.0 - 1.0) * 0.3
        yaw = float(headings[min(idx, len(headings) - 1)])
        x += -math.sin(yaw) * jitter
        y += math.cos(yaw) * jitter
        length = cfg.vehicle_length[0] + rng.uniform() * (cfg.vehicle_length[1] - cfg.vehicle_length[0])
        width = cfg.vehicle_width[0] + rng.uniform() * (cfg.vehicle_width[1] - cfg.vehicle_width[0])
        height = cfg.vehicle_height[0] + rng.uniform() * (cfg.vehicle_height[1] - cfg.vehicle_height[0])
        return Box3D((float(x), float(y), height / 2.0), (length, width, height), yaw, VEHICLE)
    # pedestrian on the verge outside a random outer boundary
    side = 1.0 if rng.uniform() < 0.5 else -1.0
    bnd = boundaries[0] if side < 0 else boundaries[-1]
    idx = rng.choice(len(bnd))
    yaw_road = float(headings[min(idx, len(headings) - 1)])
    lateral = side * (0.8 + rng.uniform() * 2.0)
    x = bnd[idx, 0] - math.sin(yaw_road) * lateral
    y = bnd[idx, 1] + math.cos(yaw_road) * lateral
    sq = cfg.pedestrian_side[0] + rng.uniform() * (cfg.pedestrian_side[1] - cfg.pedestrian_side[0])
    height = cfg.pedestrian_height[0] + rng.uniform() * (cfg.pedestrian_height[1] - cfg.pedestrian_height[0])
    yaw = rng.uniform() * 2.0 * math.pi
    return Box3D((float(x), float(y), height / 2.0), (sq, sq, height), float(yaw), PEDESTRIAN)
