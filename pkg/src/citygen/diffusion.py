"""Diffusion training and sampling.

Training follows the standard noise-prediction objective: draw a step t and
Gaussian noise, form Z_t in closed form, and regress the denoiser output onto
the injected noise under (style vector, structural map) conditioning.  Every
random draw (batch indices, structure dropout, t, noise) comes from one
counter-based stream whose position is checkpointed, so resuming a run
reproduces the uninterrupted one bit-for-bit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .model import Denoiser
from .optim import Adam
from .rng import Rng
from .schedule import NoiseSchedule, q_sample
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainSample:
    """One diffusion training example; ``struct`` is all-zero when the sample
    carries no structural annotation (unlabeled imagery)."""

    image: np.ndarray  # (V, 3, H, W)
    struct: np.ndarray  # (V, 3, H, W)
    style_vec: np.ndarray  # (32,)


@dataclass
class DiffusionBatch:
    z0: np.ndarray  # (B, V, 3, H, W)
    m: np.ndarray  # (B, V, 3, H, W)
    y: np.ndarray  # (B, 32)


def diffusion_loss(batch: DiffusionBatch, model, schedule: NoiseSchedule, rng: Rng) -> Tensor:
    """Mean squared noise-prediction error; t uniform in [1, T], eps ~ N(0, I)."""
    b = batch.z0.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, schedule.t_steps + 1, (b,))
    eps = rng.normal(batch.z0.shape)
    z_t = q_sample(batch.z0, t, eps, schedule)
    eps_hat = model(Tensor(z_t), t, Tensor(batch.y), batch.m)
    diff = eps_hat - Tensor(eps)
    return (diff * diff).mean()


@dataclass
class TrainResult:
    model: Denoiser
    losses: list = field(default_factory=list)
    checkpoint_path: Path | None = None


def _split_u64(x: int) -> tuple[float, float]:
    return float(x & 0xFFFFFFFF), float(x >> 32)


def _join_u64(lo: float, hi: float) -> int:
    return int(lo) | (int(hi) << 32)


def save_training_checkpoint(path, model, opt: Adam, rng: Rng, step: int) -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters().items():
        tensors[f"model/{name}"] = p.data
    for name, arr in opt.state.m.items():
        tensors[f"adam/m/{name}"] = arr
    for name, arr in opt.state.v.items():
        tensors[f"adam/v/{name}"] = arr
    lo, hi = _split_u64(rng.seed)
    clo, chi = _split_u64(rng.counter)
    tensors["meta/state"] = np.array([float(step), float(opt.state.step_count), lo, hi, clo, chi])
    checkpoint.save_tensors(path, tensors)


def load_training_checkpoint(path, model, opt: Adam | None = None) -> tuple[int, Rng]:
    tensors = checkpoint.load_tensors(path)
    model.load_state_arrays(
        {n[len("model/") :]: a for n, a in tensors.items() if n.startswith("model/")}
    )
    step, adam_steps, lo, hi, clo, chi = tensors["meta/state"]
    if opt is not None:
        opt.state.step_count = int(adam_steps)
        opt.state.m = {n[len("adam/m/") :]: a.copy() for n, a in tensors.items() if n.startswith("adam/m/")}
        opt.state.v = {n[len("adam/v/") :]: a.copy() for n, a in tensors.items() if n.startswith("adam/v/")}
    rng = Rng(_join_u64(lo, hi), counter=_join_u64(clo, chi))
    return int(step), rng


def train(
    model: Denoiser,
    samples: list[TrainSample],
    schedule: NoiseSchedule,
    *,
    steps: int,
    batch_size: int,
    lr: float,
    seed: int,
    structure_dropout: float = 0.0,
    checkpoint_every: int = 0,
    checkpoint_dir=None,
    log_csv=None,
    resume_from=None,
) -> TrainResult:
    """Adam on the diffusion loss; deterministic for (model init, samples, seed)."""
    if not samples:
        raise ValueError("no training samples")
    opt = Adam(model.named_parameters(), lr=lr)
    rng = Rng(seed)
    start_step = 0
    if resume_from is not None:
        start_step, rng = load_training_checkpoint(resume_from, model, opt)
        log.info("resumed from %s at step %d", resume_from, start_step)

    n = len(samples)
    losses: list[float] = []
    csv_rows = ["step,loss,wall_ms"]
    ckpt_path = None
    for step in range(start_step, steps):
        t0 = time.perf_counter()
        idx = rng.integers(0, n, (batch_size,))
        drop = rng.uniform((batch_size,))
        z0 = np.stack([samples[i].image for i in idx])
        m = np.stack(
            [
                np.zeros_like(samples[i].struct) if drop[k] < structure_dropout else samples[i].struct
                for k, i in enumerate(idx)
            ]
        )
        y = np.stack([samples[i].style_vec for i in idx])
        try:
            loss = diffusion_loss(DiffusionBatch(z0, m, y), model, schedule, rng)
            loss.backward()
        except FloatingPointError as e:
            dump = None
            if checkpoint_dir is not None:
                dump = Path(checkpoint_dir) / f"diverged_step{step:06d}.cgck"
                save_training_checkpoint(dump, model, opt, rng, step)
            raise RuntimeError(f"non-finite loss at step {step} (state dump: {dump}): {e}") from e
        opt.step()
        opt.zero_grad()
        val = loss.item()
        losses.append(val)
        csv_rows.append(f"{step},{val:.10f},{(time.perf_counter() - t0) * 1e3:.3f}")
        if checkpoint_every and checkpoint_dir is not None and (step + 1) % checkpoint_every == 0:
            ckpt_path = Path(checkpoint_dir) / f"checkpoint_step{step + 1:06d}.cgck"
            save_training_checkpoint(ckpt_path, model, opt, rng, step + 1)
        if (step + 1) % 200 == 0:
            log.info("diffusion step %d/%d loss %.5f", step + 1, steps, val)

    if checkpoint_dir is not None:
        ckpt_path = Path(checkpoint_dir) / "checkpoint.cgck"
        save_training_checkpoint(ckpt_path, model, opt, rng, steps)
    if log_csv is not None:
        log_csv = Path(log_csv)
        log_csv.parent.mkdir(parents=True, exist_ok=True)
        log_csv.write_text("\n".join(csv_rows) + "\n")
    return TrainResult(model=model, losses=losses, checkpoint_path=ckpt_path)


def _sample_step_sequence(t_steps: int, n: int) -> list[int]:
    """Descending subsequence of 1..T with exactly min(n, T) entries, ending at 1."""
    n = max(1, min(n, t_steps))
    ts = np.unique(np.round(np.linspace(1, t_steps, n)).astype(int))
    return list(ts[::-1])


def sample(
    model: Denoiser,
    m: np.ndarray,
    y: np.ndarray,
    schedule: NoiseSchedule,
    sampler: str,
    rng: Rng,
    sample_steps: int | None = None,
) -> np.ndarray:
    """Reverse diffusion from pure noise; returns (B, V, 3, H, W) in [0, 1].

    ``ddpm`` runs full-length ancestral sampling; ``ddim`` is the
    deterministic (eta = 0) variant and may run on a step subsequence.
    """
    if sampler not in ("ddpm", "ddim"):
        raise ValueError(f"unknown sampler {sampler!r}")
    b = m.shape[0]
    shape = (b,) + model_input_shape(model)
    z = rng.normal(shape)
    if sampler == "ddpm":
        ts = list(range(schedule.t_steps, 0, -1))
    else:
        ts = _sample_step_sequence(schedule.t_steps, sample_steps or schedule.t_steps)
    with no_grad():
        for i, t in enumerate(ts):
            ab = schedule.alpha_bar_at(t)
            ab_prev = schedule.alpha_bar_at(ts[i + 1]) if i + 1 < len(ts) else 1.0
            eps_hat = model(Tensor(z), np.full(b, t), Tensor(y), m).data
            if sampler == "ddim":
                x0 = (z - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
                z = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat
            else:
                alpha = schedule.alpha_at(t)
                beta = schedule.beta_at(t)
                mean = (z - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
                if t > 1:
                    sigma = np.sqrt(beta * (1.0 - schedule.alpha_bar_at(t - 1)) / (1.0 - ab))
                    z = mean + sigma * rng.normal(shape)
                else:
                    z = mean
    return np.clip(z, 0.0, 1.0)


def model_input_shape(model: Denoiser) -> tuple[int, int, int, int]:
    return (model.views, 3, model.height, model.width)
