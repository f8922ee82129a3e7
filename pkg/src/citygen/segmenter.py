"""Tiny lane-boundary segmenter and its IoU evaluation.

Patch-token encoder (self-attention + MLP blocks) with a per-pixel linear
head; input is a single view image, output per-pixel probability of the
lane-boundary class.  Training uses binary cross-entropy with an upweighted
positive class because boundary pixels are sparse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import Linear, LayerNorm, Attention, Mlp, Module
from .optim import Adam
from .rng import Rng
from .tensor import Tensor, bce_with_logits, no_grad, sigmoid

log = logging.getLogger(__name__)


class SegBlock(Module):
    def __init__(self, rng: Rng, dim: int, heads: int):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.ln2 = LayerNorm(dim)
        self.attn = Attention(rng, dim, heads)
        self.mlp = Mlp(rng, dim, 4)

    def __call__(self, h: Tensor) -> Tensor:
        a = self.ln1(h)
        h = h + self.attn(a, a)
        return h + self.mlp(self.ln2(h))


class SegModel(Module):
    """(B, 3, H, W) image -> (B, H, W) lane-boundary logits."""

    def __init__(self, rng: Rng, height: int, width: int, patch: int, dim: int, blocks: int, heads: int):
        super().__init__()
        self.height = height
        self.width = width
        self.patch = patch
        self.dim = dim
        self.grid_h = height // patch
        self.grid_w = width // patch
        self.n_tokens = self.grid_h * self.grid_w
        self.embed = Linear(rng, 3 * patch * patch, dim)
        self.pos_emb = Tensor(rng.normal((self.n_tokens, dim)) * 0.02, requires_grad=True)
        self.blocks = [SegBlock(rng, dim, heads) for _ in range(blocks)]
        self.ln_out = LayerNorm(dim)
        self.head = Linear(rng, dim, patch * patch)

    def __call__(self, x: Tensor) -> Tensor:
        b = x.shape[0]
        p = self.patch
        t = x.reshape((b, 3, self.grid_h, p, self.grid_w, p))
        t = t.transpose((0, 2, 4, 1, 3, 5)).reshape((b, self.n_tokens, 3 * p * p))
        h = self.embed(t) + self.pos_emb
        for blk in self.blocks:
            h = blk(h)
        logits = self.head(self.ln_out(h))
        logits = logits.reshape((b, self.grid_h, self.grid_w, p, p))
        return logits.transpose((0, 1, 3, 2, 4)).reshape((b, self.height, self.width))


def build_segmenter(rng: Rng, image_cfg, seg_cfg) -> SegModel:
    return SegModel(
        rng,
        height=image_cfg.height,
        width=image_cfg.width,
        patch=image_cfg.patch,
        dim=seg_cfg.dim,
        blocks=seg_cfg.blocks,
        heads=seg_cfg.heads,
    )


@dataclass
class SegSample:
    image: np.ndarray  # (3, H, W)
    mask: np.ndarray  # (H, W) binary ground truth


def train_segmenter(
    model: SegModel,
    dataset: list[SegSample],
    *,
    steps: int,
    batch_size: int,
    lr: float,
    seed: int,
    pos_weight: float = 1.0,
) -> SegModel:
    """BCE training in place; ``steps == 0`` leaves the model untouched."""
    if steps == 0:
        return model
    if not dataset:
        raise ValueError("empty segmenter dataset")
    rng = Rng(seed)
    opt = Adam(model.named_parameters(), lr=lr)
    n = len(dataset)
    for step in range(steps):
        idx = rng.integers(0, n, (batch_size,))
        x = Tensor(np.stack([dataset[i].image for i in idx]))
        gt = Tensor(np.stack([dataset[i].mask for i in idx]))
        try:
            loss = bce_with_logits(model(x), gt, pos_weight=pos_weight)
            loss.backward()
        except FloatingPointError as e:
            raise RuntimeError(f"non-finite segmenter loss at step {step}: {e}") from e
        opt.step()
        opt.zero_grad()
        if (step + 1) % 500 == 0:
            log.info("segmenter step %d/%d loss %.5f", step + 1, steps, loss.item())
    return model


def predict_probs(model: SegModel, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """(N, 3, H, W) -> (N, H, W) probabilities."""
    outs = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            logits = model(Tensor(images[i : i + batch_size]))
            outs.append(sigmoid(logits).data)
    return np.concatenate(outs) if outs else np.zeros((0, model.height, model.width))


def frame_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """IoU of two binary masks; empty-vs-empty counts as a perfect 1.0."""
    inter = float(np.logical_and(pred, gt).sum())
    union = float(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return inter / union


def eval_iou(model: SegModel, dataset: list[SegSample], thresholds=(0.4, 0.5)) -> dict[float, float]:
    """Mean per-frame IoU of thresholded predictions against ground truth."""
    images = np.stack([s.image for s in dataset])
    probs = predict_probs(model, images)
    out = {}
    for thr in thresholds:
        vals = [frame_iou(probs[i] >= thr, dataset[i].mask > 0.5) for i in range(len(dataset))]
        out[thr] = float(np.mean(vals))
    return out
