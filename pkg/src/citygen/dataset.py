"""Dataset materialization and loading.

``make_dataset`` generates scenes for one (city, split), renders all rig
views, rasterizes structural maps, and writes everything under the output
directory with a JSON manifest.  Scenes are JSON, frames are binary PPM,
structural-map channels are binary PGM with a JSON index.  The whole tree is
a pure function of (config, seed), so regeneration is byte-identical.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio, raster
from .audit import AccessAudit
from .config import RunConfig, build_rig, scene_params
from .render import CityStyleParams, render_views, sample_style_params
from .rng import Rng, derive_seed
from .scene import SceneGraph, generate_scene

MANIFEST_NAME = "manifest.json"


def _worker_count() -> int:
    cap = os.environ.get("CITYGEN_THREADS")
    if cap is None:
        return 1
    return max(1, int(cap))


@dataclass
class DatasetEntry:
    index: int
    scene_path: str
    frame_paths: list[str]
    map_index_path: str
    region_id: int
    style: CityStyleParams
    scene_seed: int


@dataclass
class Manifest:
    city: str
    split: str
    seed: int
    config_hash: str
    entries: list[DatasetEntry]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "city": self.city,
            "split": self.split,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "entries": [
                {
                    "index": e.index,
                    "scene": e.scene_path,
                    "frames": e.frame_paths,
                    "map_index": e.map_index_path,
                    "region_id": e.region_id,
                    "style": e.style.to_dict(),
                    "scene_seed": e.scene_seed,
                }
                for e in self.entries
            ],
        }


def _build_sample(cfg: RunConfig, city_id: str, split: str, i: int):
    params = scene_params(cfg, city_id, split)
    rig = build_rig(cfg)
    scene_seed = derive_seed(cfg.seed, "scene", city_id, split, i)
    sg = generate_scene(scene_seed, params)
    style_rng = Rng(derive_seed(cfg.seed, "style", city_id, split, i))
    style = sample_style_params(cfg.city(city_id).style, style_rng)
    frames = render_views(sg, rig, style, seed=scene_seed, half_extent=cfg.scene.extent / 2.0,
                          thickness=cfg.scene.raster_thickness)
    struct = raster.build_structural_map(sg, rig, thickness=cfg.scene.raster_thickness)
    return sg, style, frames, struct, scene_seed


def make_dataset(cfg: RunConfig, city_id: str, split: str, n_scenes: int, out_root) -> Path:
    """Materialize a dataset; returns the manifest path."""
    out_root = Path(out_root)
    base = out_root / "data" / city_id / split
    base.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.hash()
    meta = {"config": cfg_hash, "seed": cfg.seed}

    workers = _worker_count()
    indices = list(range(n_scenes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(lambda i: _build_sample(cfg, city_id, split, i), indices))
    else:
        built = [_build_sample(cfg, city_id, split, i) for i in indices]

    entries = []
    for i, (sg, style, frames, struct, scene_seed) in zip(indices, built):
        scene_rel = f"scenes/scene_{i:04d}.json"
        scene_path = base / scene_rel
        scene_path.parent.mkdir(parents=True, exist_ok=True)
        scene_doc = dict(sg.to_dict(), seed=scene_seed, config_hash=cfg_hash)
        scene_path.write_text(json.dumps(scene_doc, sort_keys=True))

        frame_rels = []
        for v in range(frames.images.shape[0]):
            rel = f"frames/frame_{i:04d}_v{v}.ppm"
            imgio.write_ppm(base / rel, frames.images[v], meta=meta)
            frame_rels.append(rel)

        map_files = []
        for v in range(struct.shape[0]):
            row = []
            for c in range(struct.shape[1]):
                rel = f"maps/map_{i:04d}_v{v}_c{c}.pgm"
                imgio.write_pgm(base / rel, struct[v, c], meta=meta)
                row.append(rel)
            map_files.append(row)
        map_index_rel = f"maps/map_{i:04d}.json"
        (base / map_index_rel).write_text(
            json.dumps(
                {
                    "views": struct.shape[0],
                    "channels": struct.shape[1],
                    "height": struct.shape[2],
                    "width": struct.shape[3],
                    "files": map_files,
                },
                sort_keys=True,
            )
        )
        entries.append(
            DatasetEntry(
                index=i,
                scene_path=scene_rel,
                frame_paths=frame_rels,
                map_index_path=map_index_rel,
                region_id=sg.region_id,
                style=style,
                scene_seed=scene_seed,
            )
        )

    manifest = Manifest(city=city_id, split=split, seed=cfg.seed, config_hash=cfg_hash, entries=entries)
    manifest_path = base / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=1))
    return manifest_path


class DatasetReader:
    """Loads frames/maps/scenes listed in a manifest, noting every access."""

    def __init__(self, manifest_path, audit: AccessAudit | None = None):
        self.base = Path(manifest_path).parent
        self.doc = json.loads(Path(manifest_path).read_text())
        self.city = self.doc["city"]
        self.split = self.doc["split"]
        self.audit = audit

    def __len__(self) -> int:
        return len(self.doc["entries"])

    @property
    def entries(self):
        return self.doc["entries"]

    def _note(self, path, kind):
        if self.audit is not None:
            self.audit.note(path, self.city, self.split, kind)

    def load_frames(self, i: int) -> np.ndarray:
        """(V, 3, H, W) images of sample i."""
        entry = self.doc["entries"][i]
        views = []
        for rel in entry["frames"]:
            path = self.base / rel
            self._note(path, "frame")
            views.append(imgio.read_ppm(path))
        return np.stack(views)

    def load_map(self, i: int) -> np.ndarray:
        """(V, C, H, W) binary structural map of sample i."""
        entry = self.doc["entries"][i]
        index = json.loads((self.base / entry["map_index"]).read_text())
        out = np.zeros((index["views"], index["channels"], index["height"], index["width"]))
        for v, row in enumerate(index["files"]):
            for c, rel in enumerate(row):
                path = self.base / rel
                self._note(path, "mask")
                out[v, c] = (imgio.read_pgm(path) > 0.5).astype(np.float64)
        return out

    def load_scene(self, i: int) -> SceneGraph:
        entry = self.doc["entries"][i]
        path = self.base / entry["scene"]
        self._note(path, "scene")
        return SceneGraph.from_dict(json.loads(path.read_text()))

    def style_params(self, i: int) -> CityStyleParams:
        return CityStyleParams.from_dict(self.doc["entries"][i]["style"])

    def frame_ids(self) -> list[str]:
        return [f"{self.city}/{self.split}/{e['index']:04d}" for e in self.doc["entries"]]
