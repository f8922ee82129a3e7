"""Run configuration: one versioned document covering every stage.

Loaded from JSON; unknown keys are rejected so typos fail loudly.  The config
hash is SHA-256 over the canonical (sorted-key) serialization, so semantically
identical documents hash identically regardless of key order.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_VERSION = 1


@dataclass
class ImageConfig:
    height: int = 64
    width: int = 64
    views: int = 2
    patch: int = 8


@dataclass
class RigConfig:
    positions: list = field(default_factory=lambda: [[-0.7, 0.0, 1.7], [0.7, 0.0, 1.7]])
    yaws_deg: list = field(default_factory=lambda: [16.0, -16.0])
    pitches_deg: list = field(default_factory=lambda: [14.0, 14.0])
    focal: float = 48.0
    near: float = 0.1


@dataclass
class SceneGenConfig:
    extent: float = 36.0
    lane_width: float = 3.2
    n_lanes: int = 2
    road_center_x: float = -1.6
    anchor_jitter: float = 1.0
    max_curvature: float = 0.022
    heading_jitter_deg: float = 7.0
    polyline_step: float = 1.0
    n_boxes_min: int = 0
    n_boxes_max: int = 5
    vehicle_fraction: float = 0.7
    vehicle_length: list = field(default_factory=lambda: [4.2, 4.8])
    vehicle_width: list = field(default_factory=lambda: [1.8, 2.0])
    vehicle_height: list = field(default_factory=lambda: [1.45, 1.7])
    pedestrian_side: list = field(default_factory=lambda: [0.4, 0.6])
    pedestrian_height: list = field(default_factory=lambda: [1.6, 1.9])
    box_margin: float = 0.12
    ego_clear_radius: float = 4.0
    box_retry_budget: int = 40
    max_scene_retries: int = 8
    raster_thickness: int = 1


@dataclass
class StyleRangesConfig:
    ground_rgb_lo: list = field(default_factory=lambda: [0.42, 0.38, 0.34])
    ground_rgb_hi: list = field(default_factory=lambda: [0.54, 0.50, 0.44])
    lane_rgb_lo: list = field(default_factory=lambda: [0.88, 0.82, 0.52])
    lane_rgb_hi: list = field(default_factory=lambda: [1.0, 0.95, 0.68])
    sky_top_lo: list = field(default_factory=lambda: [0.45, 0.62, 0.88])
    sky_top_hi: list = field(default_factory=lambda: [0.55, 0.72, 0.98])
    sky_bottom_lo: list = field(default_factory=lambda: [0.78, 0.85, 0.92])
    sky_bottom_hi: list = field(default_factory=lambda: [0.88, 0.95, 1.0])
    texture_freq: list = field(default_factory=lambda: [0.08, 0.18])
    ambient: list = field(default_factory=lambda: [0.75, 0.95])
    vegetation: list = field(default_factory=lambda: [0.05, 0.25])


def _city_b_style() -> StyleRangesConfig:
    return StyleRangesConfig(
        ground_rgb_lo=[0.10, 0.14, 0.24],
        ground_rgb_hi=[0.20, 0.24, 0.36],
        lane_rgb_lo=[0.52, 0.60, 0.80],
        lane_rgb_hi=[0.66, 0.74, 0.95],
        sky_top_lo=[0.72, 0.40, 0.26],
        sky_top_hi=[0.85, 0.52, 0.38],
        sky_bottom_lo=[0.30, 0.26, 0.42],
        sky_bottom_hi=[0.42, 0.38, 0.55],
        texture_freq=[0.45, 0.80],
        ambient=[0.42, 0.62],
        vegetation=[0.50, 0.85],
    )


@dataclass
class CityConfig:
    city_id: str = "A"
    train_regions: list = field(default_factory=lambda: list(range(12)))
    test_regions: list = field(default_factory=lambda: list(range(12, 16)))
    style: StyleRangesConfig = field(default_factory=StyleRangesConfig)


@dataclass
class DatasetConfig:
    train_scenes: int = 64
    test_scenes: int = 24


@dataclass
class StyleLibConfig:
    k: int = 48
    color_bins: int = 8
    grad_bins: int = 8


@dataclass
class DiffusionConfig:
    t_steps: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.02
    dim: int = 64
    blocks: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    train_steps: int = 2000
    batch: int = 4
    lr: float = 2e-3
    structure_dropout: float = 0.3
    checkpoint_every: int = 500
    sampler: str = "ddim"
    sample_steps: int = 50
    sample_batch: int = 8


@dataclass
class SegmenterConfig:
    dim: int = 32
    blocks: int = 2
    heads: int = 4
    train_steps: int = 1500
    batch: int = 8
    lr: float = 3e-3
    pos_weight: float = 12.0


@dataclass
class BenchmarkConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    n_structure_samples: int = 16
    synth_per_map: int = 1
    stub_tolerance: float = 0.08
    style_separation_gate: float = 0.95


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    out_dir: str = "runs/default"
    image: ImageConfig = field(default_factory=ImageConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    city_a: CityConfig = field(default_factory=lambda: CityConfig(city_id="A"))
    city_b: CityConfig = field(default_factory=lambda: CityConfig(city_id="B", style=_city_b_style()))
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    style_lib: StyleLibConfig = field(default_factory=StyleLibConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version}")
        for city in (self.city_a, self.city_b):
            overlap = set(city.train_regions) & set(city.test_regions)
            if overlap:
                raise ValueError(f"city {city.city_id}: train/test regions overlap: {sorted(overlap)}")
            if not city.train_regions or not city.test_regions:
                raise ValueError(f"city {city.city_id}: empty region set")
        if self.image.height % self.image.patch or self.image.width % self.image.patch:
            raise ValueError("image size must be divisible by patch size")
        if len(self.rig.positions) != self.image.views:
            raise ValueError("rig positions must match the number of views")
        if not (0 < self.diffusion.beta_min <= self.diffusion.beta_max < 1):
            raise ValueError("need 0 < beta_min <= beta_max < 1")
        if self.diffusion.t_steps < 1:
            raise ValueError("t_steps must be >= 1")
        if not self.benchmark.seeds:
            raise ValueError("benchmark seeds list must be nonempty")
        if self.diffusion.sampler not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.diffusion.sampler!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:16]

    def city(self, city_id: str) -> CityConfig:
        if city_id == "A":
            return self.city_a
        if city_id == "B":
            return self.city_b
        raise KeyError(f"unknown city {city_id!r}")


def _from_dict(cls, d: dict):
    if not isinstance(d, dict):
        raise ValueError(f"expected mapping for {cls.__name__}, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        nested = _NESTED.get((cls.__name__, name))
        kwargs[name] = _from_dict(nested, value) if nested else value
    return cls(**kwargs)


_NESTED = {
    ("RunConfig", "image"): ImageConfig,
    ("RunConfig", "rig"): RigConfig,
    ("RunConfig", "scene"): SceneGenConfig,
    ("RunConfig", "city_a"): CityConfig,
    ("RunConfig", "city_b"): CityConfig,
    ("RunConfig", "dataset"): DatasetConfig,
    ("RunConfig", "style_lib"): StyleLibConfig,
    ("RunConfig", "diffusion"): DiffusionConfig,
    ("RunConfig", "segmenter"): SegmenterConfig,
    ("RunConfig", "benchmark"): BenchmarkConfig,
    ("CityConfig", "style"): StyleRangesConfig,
}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Config from a JSON file (or defaults), with CLI overrides applied."""
    if path is None:
        cfg = RunConfig()
    else:
        with open(path) as f:
            cfg = _from_dict(RunConfig, json.load(f))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise ValueError(f"unknown override {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


@dataclass
class SceneParams:
    """SceneGenConfig narrowed to one (city, split) for generate_scene."""

    city_id: str
    regions: list
    # mirrored generator fields
    extent: float
    lane_width: float
    n_lanes: int
    road_center_x: float
    anchor_jitter: float
    max_curvature: float
    heading_jitter_deg: float
    polyline_step: float
    n_boxes_min: int
    n_boxes_max: int
    vehicle_fraction: float
    vehicle_length: list
    vehicle_width: list
    vehicle_height: list
    pedestrian_side: list
    pedestrian_height: list
    box_margin: float
    ego_clear_radius: float
    box_retry_budget: int
    max_scene_retries: int


def scene_params(cfg: RunConfig, city_id: str, split: str) -> SceneParams:
    city = cfg.city(city_id)
    if split == "train":
        regions = list(city.train_regions)
    elif split == "test":
        regions = list(city.test_regions)
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    s = cfg.scene
    return SceneParams(
        city_id=city_id,
        regions=regions,
        extent=s.extent,
        lane_width=s.lane_width,
        n_lanes=s.n_lanes,
        road_center_x=s.road_center_x,
        anchor_jitter=s.anchor_jitter,
        max_curvature=s.max_curvature,
        heading_jitter_deg=s.heading_jitter_deg,
        polyline_step=s.polyline_step,
        n_boxes_min=s.n_boxes_min,
        n_boxes_max=s.n_boxes_max,
        vehicle_fraction=s.vehicle_fraction,
        vehicle_length=s.vehicle_length,
        vehicle_width=s.vehicle_width,
        vehicle_height=s.vehicle_height,
        pedestrian_side=s.pedestrian_side,
        pedestrian_height=s.pedestrian_height,
        box_margin=s.box_margin,
        ego_clear_radius=s.ego_clear_radius,
        box_retry_budget=s.box_retry_budget,
        max_scene_retries=s.max_scene_retries,
    )


def build_rig(cfg: RunConfig):
    from .geometry import CameraIntrinsics, CameraRig, build_camera

    intr = CameraIntrinsics(
        fx=cfg.rig.focal,
        fy=cfg.rig.focal,
        cx=(cfg.image.width - 1) / 2.0,
        cy=(cfg.image.height - 1) / 2.0,
        width=cfg.image.width,
        height=cfg.image.height,
    )
    cams = tuple(
        (intr, build_camera(pos, yaw, pitch))
        for pos, yaw, pitch in zip(cfg.rig.positions, cfg.rig.yaws_deg, cfg.rig.pitches_deg)
    )
    return CameraRig(cams, near=cfg.rig.near)
