"""Patch-token denoiser with multi-view attention and structural control.

The denoiser maps (noisy images, step, style vector, structural map) to a
noise estimate of the same shape.  Tokens are non-overlapping p x p patches
per view.  Each block applies, in parallel off one layer norm: view-local
self-attention, multi-view attention across views at the same spatial index,
and cross-attention to a single projected style token; then an MLP off a
second layer norm.  After every block the pooled structural map is injected
additively through a per-block encoder whose final linear layer starts at
zero, so an untrained model is exactly independent of the structural input.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng
from .tensor import Tensor, gelu, layer_norm, softmax

STYLE_DIM = 32


class Module:
    """Parameter container; children and tensors register via attribute order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self.__dict__.setdefault("_children", {})[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, child in self._children.items():
            out.update(child.named_parameters(prefix + name + "."))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
        for n, p in params.items():
            if arrays[n].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {n}: {arrays[n].shape} vs {p.data.shape}")
            p.data = arrays[n].astype(np.float64).copy()
            p.grad = None


class Linear(Module):
    def __init__(self, rng: Rng, d_in: int, d_out: int, zero_init: bool = False):
        super().__init__()
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = rng.normal((d_in, d_out)) * (d_in**-0.5)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        d_in = x.shape[-1]
        flat = x.reshape((int(np.prod(lead)) if lead else 1, d_in))
        out = flat @ self.weight + self.bias
        return out.reshape(lead + (self.weight.shape[1],))


class LayerNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class Attention(Module):
    """Multi-head attention; query tokens on axis -2, any equal leading dims."""

    def __init__(self, rng: Rng, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        lead = x.shape[:-2]
        n, d = x.shape[-2], x.shape[-1]
        x = x.reshape(lead + (n, self.heads, self.head_dim))
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return x.transpose(axes)

    def _merge(self, x: Tensor) -> Tensor:
        lead = x.shape[:-3]
        h, n, hd = x.shape[-3], x.shape[-2], x.shape[-1]
        axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
        return x.transpose(axes).reshape(lead + (n, h * hd))

    def __call__(self, q_tokens: Tensor, kv_tokens: Tensor) -> Tensor:
        q = self._split(self.wq(q_tokens))
        k = self._split(self.wk(kv_tokens))
        v = self._split(self.wv(kv_tokens))
        k_t = k.transpose(tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
        scores = (q @ k_t) * (self.head_dim**-0.5)
        attn = softmax(scores, axis=-1)
        return self.wo(self._merge(attn @ v))


class Mlp(Module):
    def __init__(self, rng: Rng, dim: int, ratio: int):
        super().__init__()
        self.fc1 = Linear(rng, dim, dim * ratio)
        self.fc2 = Linear(rng, dim * ratio, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class ControlEncoder(Module):
    """Pooled structural map -> additive per-token features; zero at init."""

    def __init__(self, rng: Rng, in_channels: int, dim: int):
        super().__init__()
        self.embed = Linear(rng, in_channels, dim)
        self.project = Linear(rng, dim, dim, zero_init=True)

    def __call__(self, m_tokens: Tensor) -> Tensor:
        return self.project(self.embed(m_tokens).tanh())


class DenoiserBlock(Module):
    def __init__(self, rng: Rng, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.ln_attn = LayerNorm(dim)
        self.ln_mlp = LayerNorm(dim)
        self.attn_local = Attention(rng, dim, heads)
        self.attn_views = Attention(rng, dim, heads)
        self.attn_style = Attention(rng, dim, heads)
        self.mlp = Mlp(rng, dim, mlp_ratio)

    def __call__(self, h: Tensor, style_kv: Tensor) -> Tensor:
        b, v, n, d = h.shape
        a = self.ln_attn(h)
        local = self.attn_local(a, a)
        across = a.transpose((0, 2, 1, 3))  # (B, N, V, d): attend across views
        across = self.attn_views(across, across).transpose((0, 2, 1, 3))
        flat = a.reshape((b, v * n, d))
        styled = self.attn_style(flat, style_kv).reshape((b, v, n, d))
        h = h + local + across + styled
        return h + self.mlp(self.ln_mlp(h))


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps; (B, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1)


class Denoiser(Module):
    """Noise predictor over (B, V, 3, H, W) image stacks."""

    def __init__(self, rng: Rng, views: int, height: int, width: int, patch: int,
                 dim: int, blocks: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        if height % patch or width % patch:
            raise ValueError("image size must be divisible by patch size")
        self.views = views
        self.height = height
        self.width = width
        self.patch = patch
        self.dim = dim
        self.grid_h = height // patch
        self.grid_w = width // patch
        self.n_tokens = self.grid_h * self.grid_w
        patch_dim = 3 * patch * patch

        self.patch_embed = Linear(rng, patch_dim, dim)
        self.unembed = Linear(rng, dim, patch_dim)
        self.pos_emb = Tensor(rng.normal((self.n_tokens, dim)) * 0.02, requires_grad=True)
        self.view_emb = Tensor(rng.normal((views, 1, dim)) * 0.02, requires_grad=True)
        self.style_proj = Linear(rng, STYLE_DIM, dim)
        self.blocks = [DenoiserBlock(rng, dim, heads, mlp_ratio) for _ in range(blocks)]
        self.controls = [ControlEncoder(rng, 3, dim) for _ in range(blocks)]
        self.ln_out = LayerNorm(dim)

    # -- token plumbing ----------------------------------------------------
    def patchify(self, x: Tensor) -> Tensor:
        b, v, c, hh, ww = x.shape
        p = self.patch
        x = x.reshape((b, v, c, self.grid_h, p, self.grid_w, p))
        x = x.transpose((0, 1, 3, 5, 2, 4, 6))
        return x.reshape((b, v, self.n_tokens, c * p * p))

    def unpatchify(self, tokens: Tensor) -> Tensor:
        b, v = tokens.shape[0], tokens.shape[1]
        p = self.patch
        x = tokens.reshape((b, v, self.grid_h, self.grid_w, 3, p, p))
        x = x.transpose((0, 1, 4, 2, 5, 3, 6))
        return x.reshape((b, v, 3, self.height, self.width))

    def pool_structure(self, m: np.ndarray) -> np.ndarray:
        """Average-pool (B, V, C, H, W) onto the token grid -> (B, V, N, C)."""
        b, v, c, hh, ww = m.shape
        p = self.patch
        pooled = m.reshape(b, v, c, self.grid_h, p, self.grid_w, p).mean(axis=(4, 6))
        return pooled.transpose(0, 1, 3, 4, 2).reshape(b, v, self.n_tokens, c)

    def __call__(self, z_t: Tensor, t, y: Tensor, m) -> Tensor:
        b = z_t.shape[0]
        if z_t.shape[1] != self.views or z_t.shape[3] != self.height or z_t.shape[4] != self.width:
            raise ValueError(f"input shape {z_t.shape} does not match model config")
        t_arr = np.broadcast_to(np.asarray(t), (b,))
        m_arr = m.data if isinstance(m, Tensor) else np.asarray(m, dtype=np.float64)
        if m_arr.shape != z_t.shape:
            raise ValueError(f"structural map shape {m_arr.shape} != input shape {z_t.shape}")

        h = self.patch_embed(self.patchify(z_t))
        t_emb = Tensor(timestep_embedding(t_arr, self.dim).reshape(b, 1, 1, self.dim))
        h = h + self.pos_emb + self.view_emb + t_emb
        style_kv = self.style_proj(y).reshape((b, 1, self.dim))
        m_tokens = Tensor(self.pool_structure(m_arr))
        for blk, ctrl in zip(self.blocks, self.controls):
            h = blk(h, style_kv)
            h = h + ctrl(m_tokens)
        return self.unpatchify(self.unembed(self.ln_out(h)))


def build_denoiser(rng: Rng, image_cfg, diff_cfg) -> Denoiser:
    return Denoiser(
        rng,
        views=image_cfg.views,
        height=image_cfg.height,
        width=image_cfg.width,
        patch=image_cfg.patch,
        dim=diff_cfg.dim,
        blocks=diff_cfg.blocks,
        heads=diff_cfg.heads,
        mlp_ratio=diff_cfg.mlp_ratio,
    )
