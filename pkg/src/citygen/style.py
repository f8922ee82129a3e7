"""Appearance descriptors mined from unlabeled frames.

A descriptor is a unit-L2 32-vector: three 8-bin color histograms (one per
RGB channel) plus an 8-bin gradient-orientation histogram.  Orientations are
computed from Sobel-style central differences and folded to [0, pi/2] via
absolute components, which makes the descriptor exactly invariant to
horizontal mirroring; per-bin magnitude sums are sorted before accumulation
so the invariance holds bit-for-bit.  The encoder never sees labels or masks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng

DESCRIPTOR_DIM = 32
COLOR_BINS = 8
GRAD_BINS = 8


def encode_style(image: np.ndarray) -> np.ndarray:
    """Descriptor of a (3, H, W) image with values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {img.shape}")
    parts = []
    n_px = img.shape[1] * img.shape[2]
    for c in range(3):
        bins = np.minimum((img[c] * COLOR_BINS).astype(np.int64), COLOR_BINS - 1)
        hist = np.bincount(bins.ravel(), minlength=COLOR_BINS).astype(np.float64)
        parts.append(hist / n_px)

    gray = (img[0] + img[1] + img[2]) / 3.0
    # Sobel with mirror-symmetric association: smoothing terms grouped as
    # (outer + outer) + 2*center so a horizontal flip negates gx and leaves
    # gy bit-identical.
    p = gray
    gx = ((p[:-2, 2:] + p[2:, 2:]) + 2.0 * p[1:-1, 2:]) - ((p[:-2, :-2] + p[2:, :-2]) + 2.0 * p[1:-1, :-2])
    gy = ((p[2:, :-2] + p[2:, 2:]) + 2.0 * p[2:, 1:-1]) - ((p[:-2, :-2] + p[:-2, 2:]) + 2.0 * p[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    theta = np.arctan2(np.abs(gy), np.abs(gx))  # in [0, pi/2]
    bins = np.minimum((theta / (math.pi / 2.0) * GRAD_BINS).astype(np.int64), GRAD_BINS - 1)
    grad_hist = np.zeros(GRAD_BINS)
    flat_bins = bins.ravel()
    flat_mag = mag.ravel()
    for b in range(GRAD_BINS):
        vals = flat_mag[flat_bins == b]
        if vals.size:
            vals = np.sort(vals)  # canonical summation order: exact flip invariance
            grad_hist[b] = vals.sum()
    total = grad_hist.sum()
    if total > 0:
        grad_hist = grad_hist / total
    parts.append(grad_hist)

    vec = np.concatenate(parts)
    return vec / np.linalg.norm(vec)


@dataclass
class StyleEntry:
    frame_id: str
    city: str
    seed: int
    vector: np.ndarray


@dataclass
class StyleLibrary:
    entries: list[StyleEntry] = field(default_factory=list)
    encoder_tag: str = f"hist{COLOR_BINS}x3+grad{GRAD_BINS}"

    def __len__(self) -> int:
        return len(self.entries)

    def vectors(self) -> np.ndarray:
        return np.stack([e.vector for e in self.entries])

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "encoder": self.encoder_tag,
            "k": len(self.entries),
            "entries": [
                {"frame_id": e.frame_id, "city": e.city, "seed": e.seed, "vector": e.vector.tolist()}
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "StyleLibrary":
        doc = json.loads(Path(path).read_text())
        lib = cls(encoder_tag=doc["encoder"])
        for e in doc["entries"]:
            lib.entries.append(
                StyleEntry(e["frame_id"], e["city"], int(e["seed"]), np.asarray(e["vector"], dtype=np.float64))
            )
        return lib


def build_library(reader, k: int, seed: int) -> StyleLibrary:
    """Encode K frames sampled without replacement from a dataset reader.

    One frame (a single view) per sampled dataset entry; the descriptor set
    carries frame ids and the generating seed as provenance.  Only images are
    read, never masks or scenes.
    """
    n = len(reader)
    if k > n:
        raise ValueError(f"K={k} exceeds manifest size {n}")
    rng = Rng(seed)
    perm = rng.shuffled(n)
    chosen = sorted(int(perm[i]) for i in range(k))
    frame_ids = reader.frame_ids()
    lib = StyleLibrary()
    for i in chosen:
        frames = reader.load_frames(i)
        view = int(rng.choice(frames.shape[0]))
        lib.entries.append(
            StyleEntry(
                frame_id=f"{frame_ids[i]}/v{view}",
                city=reader.city,
                seed=seed,
                vector=encode_style(frames[view]),
            )
        )
    return lib


def sample_style(library: StyleLibrary, rng: Rng) -> tuple[np.ndarray, StyleEntry]:
    """Uniform draw; the returned vector is a library element, never interpolated."""
    if len(library) == 0:
        raise ValueError("style library is empty")
    idx = rng.choice(len(library))
    entry = library.entries[idx]
    return entry.vector, entry


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b))


def mean_top_k_distance(query: np.ndarray, vectors: np.ndarray, k: int = 5) -> float:
    d = np.linalg.norm(vectors - query[None, :], axis=1)
    d.sort()
    return float(d[: min(k, len(d))].mean())
