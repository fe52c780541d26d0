"""Shifted-window attention blocks and patch-grid resampling layers.

Tokens travel as [batch, length, channels] tensors; every layer that needs the
spatial arrangement takes the grid height and width explicitly.  Windows are
square, attention within a window carries a learned relative-position bias,
and alternating blocks cyclically shift the grid by half a window so windows
overlap across blocks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

MASK_NEG = -100.0


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=T.DTYPE) -> np.ndarray:
    """Normal(0, std) clipped to two standard deviations."""
    v = rng.standard_normal(shape) * std
    return np.clip(v, -2.0 * std, 2.0 * std).astype(dtype)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return (x @ w) + b


# ---------------------------------------------------------------------------
# window bookkeeping


def window_partition(x: Tensor, window: int) -> Tensor:
    """[n, H, W, C] -> [n * (H/M) * (W/M), M*M, C] without reordering channels."""
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"grid {h}x{w} not divisible by window {window}")
    nh, nw = h // window, w // window
    t = T.reshape(x, (n, nh, window, nw, window, c))
    t = T.permute(t, (0, 1, 3, 2, 4, 5))
    return T.reshape(t, (n * nh * nw, window * window, c))


def window_reverse(wins: Tensor, window: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    nh, nw = h // window, w // window
    b, l, c = wins.shape
    if l != window * window or b % (nh * nw):
        raise ShapeError(f"cannot reassemble {wins.shape} into {h}x{w} grid of {window}-windows")
    n = b // (nh * nw)
    t = T.reshape(wins, (n, nh, nw, window, window, c))
    t = T.permute(t, (0, 1, 3, 2, 4, 5))
    return T.reshape(t, (n, h, w, c))


def build_relative_index(window: int) -> np.ndarray:
    """[M², M²] lookup into the (2M-1)² bias table, one row id per (Δrow, Δcol)."""
    m = window
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    flat = coords.reshape(2, -1)  # [2, M²]
    rel = flat[:, :, None] - flat[:, None, :]  # [2, M², M²]
    rel = rel.transpose(1, 2, 0)
    idx = (rel[:, :, 0] + m - 1) * (2 * m - 1) + (rel[:, :, 1] + m - 1)
    return idx.astype(np.int64)


def build_shift_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Attention mask [num_windows, M², M²] for a cyclically shifted grid.

    Positions of the shifted grid are labeled with the standard 3x3 slice
    pattern per axis ((0..-M), (-M..-shift), (-shift..)); token pairs whose
    labels differ came from non-adjacent parts of the unshifted image and get
    a large negative logit offset, everything else 0.
    """
    if shift == 0:
        nw = (h // window) * (w // window)
        return np.zeros((nw, window * window, window * window), dtype=T.DTYPE)
    if not 0 < shift < window:
        raise ShapeError(f"shift {shift} must lie in (0, window {window})")
    labels = np.zeros((h, w), dtype=np.int32)
    bands = ((0, -window), (-window, -shift), (-shift, None))
    count = 0
    for hs in bands:
        for ws in bands:
            labels[hs[0] : hs[1], ws[0] : ws[1]] = count
            count += 1
    part = labels.reshape(h // window, window, w // window, window)
    part = part.transpose(0, 2, 1, 3).reshape(-1, window * window)
    differs = part[:, :, None] != part[:, None, :]
    return np.where(differs, MASK_NEG, 0.0).astype(T.DTYPE)


# ---------------------------------------------------------------------------
# attention and transformer block


@dataclass
class SwinBlockParams:
    """Weights for one pre-norm window-attention block.

    ``window`` is the effective window edge for the block's grid, ``shift``
    is 0 for even blocks and window//2 for odd ones (0 whenever a single
    window covers the whole grid), and ``mask`` is precomputed from the grid
    size at build time.
    """

    dim: int
    num_heads: int
    window: int
    shift: int
    norm1_g: Tensor
    norm1_b: Tensor
    qkv_w: Tensor
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    bias_table: Tensor
    norm2_g: Tensor
    norm2_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    index: np.ndarray = field(repr=False, default=None)
    mask: np.ndarray | None = field(repr=False, default=None)

    @staticmethod
    def build(rng, dim, num_heads, grid, window, shift, mlp_ratio=4, dtype=T.DTYPE):
        if dim % num_heads:
            raise ShapeError(f"dim {dim} not divisible by {num_heads} heads")
        hidden = dim * mlp_ratio
        ones = lambda n: Tensor(np.ones(n, dtype=dtype), requires_grad=True)
        zeros = lambda n: Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        tn = lambda shape: Tensor(trunc_normal(rng, shape, dtype=dtype), requires_grad=True)
        return SwinBlockParams(
            dim=dim,
            num_heads=num_heads,
            window=window,
            shift=shift,
            norm1_g=ones(dim),
            norm1_b=zeros(dim),
            qkv_w=tn((dim, 3 * dim)),
            qkv_b=zeros(3 * dim),
            proj_w=tn((dim, dim)),
            proj_b=zeros(dim),
            bias_table=tn(((2 * window - 1) ** 2, num_heads)),
            norm2_g=ones(dim),
            norm2_b=zeros(dim),
            mlp_w1=tn((dim, hidden)),
            mlp_b1=zeros(hidden),
            mlp_w2=tn((hidden, dim)),
            mlp_b2=zeros(dim),
            index=build_relative_index(window),
            mask=build_shift_mask(grid, grid, window, shift) if shift else None,
        )

    def named(self, prefix: str):
        for name in (
            "norm1_g", "norm1_b", "qkv_w", "qkv_b", "proj_w", "proj_b",
            "bias_table", "norm2_g", "norm2_b", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
        ):
            yield f"{prefix}.{name}", getattr(self, name)


def window_attention(x: Tensor, p: SwinBlockParams, mask: np.ndarray | None = None) -> Tensor:
    """Multi-head self-attention inside each window of x [B, M², C].

    softmax(q kᵀ / sqrt(d) + bias [+ mask]) v, followed by the output
    projection.  ``mask`` has shape [num_windows, M², M²] and is broadcast
    over batch and heads; window index varies fastest in B.
    """
    b, l, c = x.shape
    m2 = p.window * p.window
    if l != m2:
        raise ShapeError(f"window_attention got {l} tokens, expected {m2}")
    if c != p.dim:
        raise ShapeError(f"window_attention got {c} channels, expected {p.dim}")
    heads = p.num_heads
    dh = c // heads

    qkv = linear(x, p.qkv_w, p.qkv_b)  # [B, L, 3C]
    qkv = T.reshape(qkv, (b, l, 3, heads, dh))
    qkv = T.permute(qkv, (2, 0, 3, 1, 4))  # [3, B, heads, L, dh]
    q, k, v = T.split(qkv, (1, 1, 1), axis=0)
    q = T.reshape(q, (b, heads, l, dh)) * float(dh**-0.5)
    k = T.reshape(k, (b, heads, l, dh))
    v = T.reshape(v, (b, heads, l, dh))

    attn = q @ T.permute(k, (0, 1, 3, 2))  # [B, heads, L, L]
    bias = T.take(p.bias_table, p.index.reshape(-1))  # [L·L, heads]
    bias = T.permute(T.reshape(bias, (l, l, heads)), (2, 0, 1))
    attn = attn + T.reshape(bias, (1, heads, l, l))
    if mask is not None:
        nw = mask.shape[0]
        if b % nw:
            raise ShapeError(f"batch {b} not a multiple of {nw} masked windows")
        attn = T.reshape(attn, (b // nw, nw, heads, l, l))
        attn = attn + Tensor(mask.reshape(1, nw, 1, l, l), dtype=x.data.dtype)
        attn = T.reshape(attn, (b, heads, l, l))
    attn = T.softmax(attn, axis=-1)

    out = attn @ v  # [B, heads, L, dh]
    out = T.reshape(T.permute(out, (0, 2, 1, 3)), (b, l, c))
    return linear(out, p.proj_w, p.proj_b)


def swin_block(x: Tensor, p: SwinBlockParams, h: int, w: int) -> Tensor:
    """Pre-norm transformer block: (S)W-MSA then a 4x GELU MLP, both residual."""
    b, l, c = x.shape
    if l != h * w:
        raise ShapeError(f"block got {l} tokens for a {h}x{w} grid")
    shortcut = x
    t = T.layer_norm(x, p.norm1_g, p.norm1_b)
    t = T.reshape(t, (b, h, w, c))
    if p.shift:
        t = T.roll(t, -p.shift, -p.shift)
    wins = window_partition(t, p.window)
    wins = window_attention(wins, p, p.mask)
    t = window_reverse(wins, p.window, h, w)
    if p.shift:
        t = T.roll(t, p.shift, p.shift)
    t = T.reshape(t, (b, l, c))
    x = shortcut + t

    y = T.layer_norm(x, p.norm2_g, p.norm2_b)
    y = linear(T.gelu(linear(y, p.mlp_w1, p.mlp_b1)), p.mlp_w2, p.mlp_b2)
    return x + y


# ---------------------------------------------------------------------------
# patch-grid resampling


@dataclass
class PatchEmbedParams:
    patch: int
    w: Tensor
    b: Tensor
    ln_g: Tensor
    ln_b: Tensor

    @staticmethod
    def build(rng, patch, in_chans, dim, dtype=T.DTYPE):
        return PatchEmbedParams(
            patch=patch,
            w=Tensor(trunc_normal(rng, (patch * patch * in_chans, dim), dtype=dtype), requires_grad=True),
            b=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
            ln_g=Tensor(np.ones(dim, dtype=dtype), requires_grad=True),
            ln_b=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        )

    def named(self, prefix: str):
        for name in ("w", "b", "ln_g", "ln_b"):
            yield f"{prefix}.{name}", getattr(self, name)


def patch_embed(x: Tensor, p: PatchEmbedParams) -> Tensor:
    """[n, c, H, W] image -> [n, (H/p)(W/p), dim] tokens (linear + layer norm)."""
    n, c, h, w = x.shape
    ps = p.patch
    if h % ps or w % ps:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {ps}")
    t = T.reshape(x, (n, c, h // ps, ps, w // ps, ps))
    t = T.permute(t, (0, 2, 4, 3, 5, 1))  # [n, gh, gw, ps, ps, c]
    t = T.reshape(t, (n, (h // ps) * (w // ps), ps * ps * c))
    t = linear(t, p.w, p.b)
    return T.layer_norm(t, p.ln_g, p.ln_b)


@dataclass
class PatchMergeParams:
    ln_g: Tensor
    ln_b: Tensor
    w: Tensor
    b: Tensor

    @staticmethod
    def build(rng, dim, dtype=T.DTYPE):
        return PatchMergeParams(
            ln_g=Tensor(np.ones(4 * dim, dtype=dtype), requires_grad=True),
            ln_b=Tensor(np.zeros(4 * dim, dtype=dtype), requires_grad=True),
            w=Tensor(trunc_normal(rng, (4 * dim, 2 * dim), dtype=dtype), requires_grad=True),
            b=Tensor(np.zeros(2 * dim, dtype=dtype), requires_grad=True),
        )

    def named(self, prefix: str):
        for name in ("ln_g", "ln_b", "w", "b"):
            yield f"{prefix}.{name}", getattr(self, name)


def patch_merge(x: Tensor, p: PatchMergeParams, h: int, w: int) -> Tensor:
    """Halve the grid: 2x2 neighborhoods concat to 4C, layer norm, project to 2C."""
    b, l, c = x.shape
    if l != h * w:
        raise ShapeError(f"merge got {l} tokens for a {h}x{w} grid")
    if h % 2 or w % 2:
        raise ShapeError(f"cannot merge odd grid {h}x{w}")
    t = T.reshape(x, (b, h // 2, 2, w // 2, 2, c))
    t = T.permute(t, (0, 1, 3, 2, 4, 5))
    t = T.reshape(t, (b, (h // 2) * (w // 2), 4 * c))
    t = T.layer_norm(t, p.ln_g, p.ln_b)
    return linear(t, p.w, p.b)


@dataclass
class PatchExpandParams:
    factor: int
    w: Tensor
    b: Tensor

    @staticmethod
    def build(rng, dim, factor, dtype=T.DTYPE):
        # factor 2 halves channels (C -> 2C spread over 2x2 = C/2 each);
        # factor 4 keeps them (C -> 16C spread over 4x4).
        out = 2 * dim if factor == 2 else dim * factor * factor
        return PatchExpandParams(
            factor=factor,
            w=Tensor(trunc_normal(rng, (dim, out), dtype=dtype), requires_grad=True),
            b=Tensor(np.zeros(out, dtype=dtype), requires_grad=True),
        )

    def named(self, prefix: str):
        for name in ("w", "b"):
            yield f"{prefix}.{name}", getattr(self, name)


def patch_expand(x: Tensor, p: PatchExpandParams, h: int, w: int) -> Tensor:
    """Grow the grid by ``factor`` per side, spreading projected channels spatially."""
    b, l, c = x.shape
    if l != h * w:
        raise ShapeError(f"expand got {l} tokens for a {h}x{w} grid")
    f = p.factor
    t = linear(x, p.w, p.b)
    cout = p.w.shape[1] // (f * f)
    t = T.reshape(t, (b, h, w, f, f, cout))
    t = T.permute(t, (0, 1, 3, 2, 4, 5))  # [b, h, f, w, f, cout]
    return T.reshape(t, (b, (h * f) * (w * f), cout))
