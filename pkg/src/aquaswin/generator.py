"""U-shaped windowed-attention generator for image-to-image enhancement.

Four encoder stages of attention blocks with patch merging between them, a
two-block bottleneck at the deepest grid, and a mirrored decoder whose stages
fuse the matching encoder output through a linear layer after concatenation.
A final 4x patch expansion restores pixel resolution and a linear head with
tanh produces a 3-channel image in [-1, 1].

``block_kind`` switches every stage to residual convolution blocks instead of
attention blocks while keeping the merge/expand skeleton, which isolates the
contribution of attention in ablations.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .swin import (
    PatchEmbedParams,
    PatchExpandParams,
    PatchMergeParams,
    SwinBlockParams,
    linear,
    patch_embed,
    patch_expand,
    patch_merge,
    swin_block,
    trunc_normal,
)
from .tensor import Tensor

N_STAGES = 4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and objective switches.

    The defaults describe the small configuration used throughout the test
    suite; the published-scale network is the same code with input_size=224,
    embed_dim=96, heads=(3,6,12,24), window=7.
    """

    input_size: int = 64
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple = (2, 2, 2, 2)
    heads: tuple = (2, 4, 4, 8)
    window: int = 4
    block_kind: str = "swin"  # "swin" | "conv"
    use_discriminator: bool = True
    lambda_l1: float = 100.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(self.depths))
        object.__setattr__(self, "heads", tuple(self.heads))

    def validate(self) -> None:
        if self.block_kind not in ("swin", "conv"):
            raise ConfigError(f"block_kind must be 'swin' or 'conv', got {self.block_kind!r}")
        if len(self.depths) != N_STAGES or len(self.heads) != N_STAGES:
            raise ConfigError(f"depths and heads must have {N_STAGES} entries")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"stage depths must be positive, got {self.depths}")
        if self.patch_size < 1 or self.input_size % self.patch_size:
            raise ConfigError(
                f"input_size {self.input_size} not divisible by patch_size {self.patch_size}"
            )
        if self.window < 1:
            raise ConfigError(f"window must be positive, got {self.window}")
        if self.lambda_l1 < 0:
            raise ConfigError(f"lambda_l1 must be non-negative, got {self.lambda_l1}")
        for s in range(N_STAGES):
            res = self.stage_resolution(s)
            if res < 1:
                raise ConfigError(f"stage {s} grid collapsed below 1 token per side")
            if s < N_STAGES - 1 and res % 2:
                raise ConfigError(f"stage {s} resolution {res} is odd and cannot be merged")
            eff = min(self.window, res)
            if res % eff:
                raise ConfigError(
                    f"stage {s} resolution {res} not divisible by window {eff}"
                )
            if self.stage_dim(s) % self.heads[s]:
                raise ConfigError(
                    f"stage {s} width {self.stage_dim(s)} not divisible by {self.heads[s]} heads"
                )

    def stage_resolution(self, stage: int) -> int:
        return (self.input_size // self.patch_size) >> stage

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim << stage

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["heads"] = list(self.heads)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        cfg = ModelConfig(**d)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# convolution block (ablation path)


@dataclass
class ConvBlockParams:
    """Residual block of two 3x3 convolutions with batch norm, for ablations."""

    dim: int
    w1: Tensor
    b1: Tensor
    bn1_g: Tensor
    bn1_b: Tensor
    bn1_mean: Tensor
    bn1_var: Tensor
    w2: Tensor
    b2: Tensor
    bn2_g: Tensor
    bn2_b: Tensor
    bn2_mean: Tensor
    bn2_var: Tensor

    @staticmethod
    def build(rng, dim, dtype=T.DTYPE):
        conv = lambda: Tensor(trunc_normal(rng, (dim, dim, 3, 3), dtype=dtype), requires_grad=True)
        ones = lambda: Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        zeros = lambda req=True: Tensor(np.zeros(dim, dtype=dtype), requires_grad=req)
        return ConvBlockParams(
            dim=dim,
            w1=conv(), b1=zeros(), bn1_g=ones(), bn1_b=zeros(),
            bn1_mean=zeros(req=False), bn1_var=ones_buffer(dim, dtype),
            w2=conv(), b2=zeros(), bn2_g=ones(), bn2_b=zeros(),
            bn2_mean=zeros(req=False), bn2_var=ones_buffer(dim, dtype),
        )

    def named(self, prefix: str):
        for name in ("w1", "b1", "bn1_g", "bn1_b", "w2", "b2", "bn2_g", "bn2_b"):
            yield f"{prefix}.{name}", getattr(self, name)

    def named_buffers(self, prefix: str):
        for name in ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var"):
            yield f"{prefix}.{name}", getattr(self, name)


def ones_buffer(dim: int, dtype=T.DTYPE) -> Tensor:
    return Tensor(np.ones(dim, dtype=dtype), requires_grad=False)


def conv_block(x: Tensor, p: ConvBlockParams, h: int, w: int, train: bool) -> Tensor:
    """Tokens -> conv(3x3)+BN+lrelu twice -> tokens, with a residual add."""
    b, l, c = x.shape
    if l != h * w:
        raise ShapeError(f"conv block got {l} tokens for a {h}x{w} grid")
    img = T.permute(T.reshape(x, (b, h, w, c)), (0, 3, 1, 2))
    t = T.conv2d(img, p.w1, p.b1, stride=1, padding=1)
    t = T.batch_norm(t, p.bn1_g, p.bn1_b, p.bn1_mean, p.bn1_var, train)
    t = T.leaky_relu(t, 0.2)
    t = T.conv2d(t, p.w2, p.b2, stride=1, padding=1)
    t = T.batch_norm(t, p.bn2_g, p.bn2_b, p.bn2_mean, p.bn2_var, train)
    t = T.leaky_relu(t, 0.2)
    t = T.reshape(T.permute(t, (0, 2, 3, 1)), (b, l, c))
    return x + t


# ---------------------------------------------------------------------------
# generator assembly


@dataclass
class FuseParams:
    """Linear 2C -> C applied to [skip, upsampled] concatenation."""

    w: Tensor
    b: Tensor

    @staticmethod
    def build(rng, dim, dtype=T.DTYPE):
        return FuseParams(
            w=Tensor(trunc_normal(rng, (2 * dim, dim), dtype=dtype), requires_grad=True),
            b=Tensor(np.zeros(dim, dtype=dtype), requires_grad=True),
        )

    def named(self, prefix: str):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


@dataclass
class GeneratorParams:
    config: ModelConfig
    embed: PatchEmbedParams
    enc_stages: list = field(default_factory=list)  # list[list[block params]]
    merges: list = field(default_factory=list)
    bottleneck: list = field(default_factory=list)
    expands: list = field(default_factory=list)
    fuses: list = field(default_factory=list)
    dec_stages: list = field(default_factory=list)
    final_expand: PatchExpandParams = None
    head_w: Tensor = None
    head_b: Tensor = None

    def named(self):
        yield from self.embed.named("embed")
        for s, blocks in enumerate(self.enc_stages):
            for i, blk in enumerate(blocks):
                yield from blk.named(f"enc{s}.b{i}")
        for s, m in enumerate(self.merges):
            yield from m.named(f"merge{s}")
        for i, blk in enumerate(self.bottleneck):
            yield from blk.named(f"mid.b{i}")
        for d in range(len(self.dec_stages)):
            yield from self.expands[d].named(f"up{d}")
            yield from self.fuses[d].named(f"fuse{d}")
            for i, blk in enumerate(self.dec_stages[d]):
                yield from blk.named(f"dec{d}.b{i}")
        yield from self.final_expand.named("final")
        yield "head.w", self.head_w
        yield "head.b", self.head_b

    def named_buffers(self):
        groups = [(f"enc{s}.b{i}", blk) for s, blocks in enumerate(self.enc_stages) for i, blk in enumerate(blocks)]
        groups += [(f"mid.b{i}", blk) for i, blk in enumerate(self.bottleneck)]
        groups += [(f"dec{d}.b{i}", blk) for d, blocks in enumerate(self.dec_stages) for i, blk in enumerate(blocks)]
        for prefix, blk in groups:
            if isinstance(blk, ConvBlockParams):
                yield from blk.named_buffers(prefix)

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named())


def _stage_blocks(rng, cfg: ModelConfig, stage: int, dtype, depth: int | None = None) -> list:
    dim = cfg.stage_dim(stage)
    res = cfg.stage_resolution(stage)
    blocks = []
    for i in range(cfg.depths[stage] if depth is None else depth):
        if cfg.block_kind == "conv":
            blocks.append(ConvBlockParams.build(rng, dim, dtype=dtype))
        else:
            # a single window covering the grid leaves nothing to shift
            eff = min(cfg.window, res)
            shift = (eff // 2) if (i % 2 and eff < res) else 0
            blocks.append(
                SwinBlockParams.build(rng, dim, cfg.heads[stage], res, eff, shift, dtype=dtype)
            )
    return blocks


def build_generator(cfg: ModelConfig, seed: int | None = None, dtype=T.DTYPE) -> GeneratorParams:
    """Create freshly initialized generator weights.

    Weight draws happen in a fixed traversal order, so the same seed always
    produces bit-identical parameters.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    p = GeneratorParams(config=cfg, embed=PatchEmbedParams.build(rng, cfg.patch_size, 3, cfg.embed_dim, dtype=dtype))
    for s in range(N_STAGES):
        p.enc_stages.append(_stage_blocks(rng, cfg, s, dtype))
        if s < N_STAGES - 1:
            p.merges.append(PatchMergeParams.build(rng, cfg.stage_dim(s), dtype=dtype))
    p.bottleneck = _stage_blocks(rng, cfg, N_STAGES - 1, dtype, depth=2)
    for d in range(N_STAGES - 1):
        src_stage = N_STAGES - 1 - d  # grid the expand starts from
        dst_stage = src_stage - 1
        p.expands.append(PatchExpandParams.build(rng, cfg.stage_dim(src_stage), 2, dtype=dtype))
        p.fuses.append(FuseParams.build(rng, cfg.stage_dim(dst_stage), dtype=dtype))
        p.dec_stages.append(_stage_blocks(rng, cfg, dst_stage, dtype))
    p.final_expand = PatchExpandParams.build(rng, cfg.embed_dim, cfg.patch_size, dtype=dtype)
    p.head_w = Tensor(trunc_normal(rng, (cfg.embed_dim, 3), dtype=dtype), requires_grad=True)
    p.head_b = Tensor(np.zeros(3, dtype=dtype), requires_grad=True)
    return p


def _run_blocks(x, blocks, h, w, train):
    for blk in blocks:
        if isinstance(blk, ConvBlockParams):
            x = conv_block(x, blk, h, w, train)
        else:
            x = swin_block(x, blk, h, w)
    return x


def generator_forward(p: GeneratorParams, x: Tensor, train: bool = False) -> Tensor:
    """Enhance a batch: [n, 3, S, S] in [-1, 1] -> same shape, tanh-bounded."""
    cfg = p.config
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise ShapeError(
            f"generator expects [n, 3, {cfg.input_size}, {cfg.input_size}], got {x.shape}"
        )
    n = x.shape[0]
    t = patch_embed(x, p.embed)
    skips = []
    for s in range(N_STAGES):
        res = cfg.stage_resolution(s)
        t = _run_blocks(t, p.enc_stages[s], res, res, train)
        if s < N_STAGES - 1:
            skips.append(t)
            t = patch_merge(t, p.merges[s], res, res)
    deep_res = cfg.stage_resolution(N_STAGES - 1)
    t = _run_blocks(t, p.bottleneck, deep_res, deep_res, train)
    for d in range(N_STAGES - 1):
        src_res = cfg.stage_resolution(N_STAGES - 1 - d)
        dst_res = src_res * 2
        t = patch_expand(t, p.expands[d], src_res, src_res)
        skip = skips[N_STAGES - 2 - d]
        t = T.concat([skip, t], axis=-1)
        t = linear(t, p.fuses[d].w, p.fuses[d].b)
        t = _run_blocks(t, p.dec_stages[d], dst_res, dst_res, train)
    grid = cfg.input_size // cfg.patch_size
    t = patch_expand(t, p.final_expand, grid, grid)
    t = linear(t, p.head_w, p.head_b)
    t = T.tanh(t)
    t = T.reshape(t, (n, cfg.input_size, cfg.input_size, 3))
    return T.permute(t, (0, 3, 1, 2))
