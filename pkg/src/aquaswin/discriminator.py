"""Patch-level discriminator over (input, candidate) image pairs.

Five 4x4 convolutions with widths 64, 128, 256, 512, 1; strides 2,2,2,1,1 and
padding 1 throughout.  Layers 1-4 use batch norm and leaky ReLU (slope 0.2),
the last layer maps to a single channel and a sigmoid, so the output is a grid
of per-patch real/fake probabilities rather than one global score.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

WIDTHS = (64, 128, 256, 512, 1)
STRIDES = (2, 2, 2, 1, 1)
KERNEL = 4
PADDING = 1
IN_CHANNELS = 6  # degraded image stacked with the candidate


def output_map_size(size: int) -> int:
    """Spatial edge of the probability map for a square input of this size."""
    for stride in STRIDES:
        size = (size + 2 * PADDING - KERNEL) // stride + 1
    return size


@dataclass
class DiscLayerParams:
    w: Tensor
    b: Tensor
    bn_g: Tensor | None = None
    bn_b: Tensor | None = None
    bn_mean: Tensor | None = field(default=None, repr=False)
    bn_var: Tensor | None = field(default=None, repr=False)


@dataclass
class DiscriminatorParams:
    layers: list

    def named(self):
        for i, layer in enumerate(self.layers):
            yield f"l{i}.w", layer.w
            yield f"l{i}.b", layer.b
            if layer.bn_g is not None:
                yield f"l{i}.bn_g", layer.bn_g
                yield f"l{i}.bn_b", layer.bn_b

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            if layer.bn_mean is not None:
                yield f"l{i}.bn_mean", layer.bn_mean
                yield f"l{i}.bn_var", layer.bn_var

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.named())


def build_discriminator(seed: int = 0, dtype=T.DTYPE) -> DiscriminatorParams:
    """Initialize weights: conv kernels ~ N(0, 0.02), biases zero, BN at identity."""
    rng = np.random.default_rng(seed)
    layers = []
    cin = IN_CHANNELS
    for i, cout in enumerate(WIDTHS):
        w = Tensor((rng.standard_normal((cout, cin, KERNEL, KERNEL)) * 0.02).astype(dtype), requires_grad=True)
        b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
        if i < len(WIDTHS) - 1:
            layers.append(
                DiscLayerParams(
                    w=w,
                    b=b,
                    bn_g=Tensor(np.ones(cout, dtype=dtype), requires_grad=True),
                    bn_b=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
                    bn_mean=Tensor(np.zeros(cout, dtype=dtype)),
                    bn_var=Tensor(np.ones(cout, dtype=dtype)),
                )
            )
        else:
            layers.append(DiscLayerParams(w=w, b=b))
        cin = cout
    return DiscriminatorParams(layers=layers)


def discriminator_forward(p: DiscriminatorParams, pair: Tensor, train: bool = True) -> Tensor:
    """[n, 6, H, W] pair -> [n, 1, h', w'] patch probabilities in (0, 1)."""
    if pair.ndim != 4 or pair.shape[1] != IN_CHANNELS:
        raise ShapeError(f"discriminator expects [n, {IN_CHANNELS}, H, W], got {pair.shape}")
    t = pair
    for i, layer in enumerate(p.layers):
        t = T.conv2d(t, layer.w, layer.b, stride=STRIDES[i], padding=PADDING)
        if layer.bn_g is not None:
            t = T.batch_norm(t, layer.bn_g, layer.bn_b, layer.bn_mean, layer.bn_var, train)
            t = T.leaky_relu(t, 0.2)
    return T.sigmoid(t)
