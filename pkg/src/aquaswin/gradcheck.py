"""Finite-difference verification of every differentiable operation.

Each registered check builds float64 inputs, runs a forward function, and
reduces the outputs to a scalar through fixed random weights so that every
output element influences the loss.  Analytic gradients from the tape are
compared elementwise against central differences (eps 1e-3) using the
relative error |a - f| / max(|a|, |f|, 1e-6).

Primitive ops are checked at every input element; the large composites
(full attention block, full discriminator) check a seeded subsample of
coordinates to keep the suite fast.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .discriminator import build_discriminator, discriminator_forward
from .generator import ConvBlockParams, conv_block
from .swin import (
    PatchEmbedParams,
    PatchExpandParams,
    PatchMergeParams,
    SwinBlockParams,
    patch_embed,
    patch_expand,
    patch_merge,
    swin_block,
    window_attention,
)
from .tensor import Tensor

EPS = 1e-3
REL_FLOOR = 1e-6
DEFAULT_TOL = 1e-2
SWIN_BLOCK_TOL = 3e-2
DISCRIMINATOR_TOL = 2e-2


@dataclass
class GradCheckReport:
    op: str
    max_rel_err: float
    tolerance: float
    passed: bool


@dataclass
class _Check:
    build: callable  # rng -> (inputs, forward)
    tolerance: float = DEFAULT_TOL
    max_coords: int | None = None  # per-input subsample for big composites
    eps: float = EPS


def _t(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _away_from(x: Tensor, gap: float) -> Tensor:
    """Push values at least ``gap`` from zero so kinks can't straddle the probe."""
    d = x.data
    d[np.abs(d) < gap] = gap * np.where(d[np.abs(d) < gap] >= 0, 1.0, -1.0)
    return x


def _build_registry() -> dict:
    reg = {}

    def simple(name, builder, tol=DEFAULT_TOL, max_coords=None, eps=EPS):
        reg[name] = _Check(builder, tol, max_coords, eps)

    simple("add", lambda rng: ([_t(rng, (2, 5)), _t(rng, (5,))], lambda a, b: a + b))
    simple("sub", lambda rng: ([_t(rng, (3, 4)), _t(rng, (3, 4))], lambda a, b: a - b))
    simple("mul", lambda rng: ([_t(rng, (2, 5)), _t(rng, (5,))], lambda a, b: a * b))
    simple("neg", lambda rng: ([_t(rng, (7,))], lambda a: -a))
    simple("log", lambda rng: ([Tensor(rng.uniform(0.1, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)], T.log))
    simple("matmul", lambda rng: ([_t(rng, (4, 5)), _t(rng, (5, 3))], lambda a, b: a @ b))
    simple(
        "matmul_batched",
        lambda rng: ([_t(rng, (2, 3, 4, 5)), _t(rng, (5, 6))], lambda a, b: a @ b),
    )
    simple(
        "conv2d",
        lambda rng: (
            [_t(rng, (1, 2, 6, 6)), _t(rng, (3, 2, 3, 3), 0.5), _t(rng, (3,), 0.5)],
            lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1),
        ),
    )
    simple(
        "conv2d_strided",
        lambda rng: (
            [_t(rng, (2, 3, 7, 7)), _t(rng, (4, 3, 4, 4), 0.5), _t(rng, (4,), 0.5)],
            lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
        ),
    )
    simple("gelu", lambda rng: ([_t(rng, (17,))], T.gelu))
    simple(
        "leaky_relu",
        lambda rng: ([_away_from(_t(rng, (17,)), 0.05)], lambda x: T.leaky_relu(x, 0.2)),
    )
    simple("tanh", lambda rng: ([_t(rng, (11,))], T.tanh))
    simple("sigmoid", lambda rng: ([_t(rng, (11,))], T.sigmoid))
    simple("softmax", lambda rng: ([_t(rng, (3, 7))], lambda x: T.softmax(x, axis=-1)))
    simple(
        "layer_norm",
        lambda rng: (
            [_t(rng, (4, 8)), _t(rng, (8,), 0.5), _t(rng, (8,), 0.5)],
            T.layer_norm,
        ),
    )

    def bn_builder(rng):
        x = _t(rng, (4, 2, 3, 3))
        g = _t(rng, (2,), 0.5)
        b = _t(rng, (2,), 0.5)
        rm = Tensor(np.zeros(2), dtype=np.float64)
        rv = Tensor(np.ones(2), dtype=np.float64)
        return [x, g, b], lambda x_, g_, b_: T.batch_norm(x_, g_, b_, rm, rv, train=True)

    simple("batch_norm", bn_builder)
    simple("roll", lambda rng: ([_t(rng, (2, 4, 5, 3))], lambda x: T.roll(x, 1, 2)))
    simple("reshape", lambda rng: ([_t(rng, (2, 3, 4))], lambda x: T.reshape(x, (4, 6))))
    simple("permute", lambda rng: ([_t(rng, (2, 3, 4))], lambda x: T.permute(x, (2, 0, 1))))
    simple(
        "concat",
        lambda rng: ([_t(rng, (2, 3)), _t(rng, (4, 3))], lambda a, b: T.concat([a, b], axis=0)),
    )
    simple(
        "split",
        lambda rng: ([_t(rng, (2, 6))], lambda x: T.split(x, (2, 4), axis=1)),
    )

    idx = np.array([[0, 3, 3], [7, 1, 0]])
    simple("take", lambda rng: ([_t(rng, (9, 2))], lambda t: T.take(t, idx)))
    simple("sum", lambda rng: ([_t(rng, (3, 4))], lambda x: x.sum(axes=(1,))))
    simple("mean", lambda rng: ([_t(rng, (3, 4))], lambda x: x.mean()))
    simple(
        "abs_mean",
        lambda rng: ([_away_from(_t(rng, (3, 4)), 0.05)], lambda x: x.abs_mean()),
    )

    def attention_builder(rng):
        p = SwinBlockParams.build(rng, dim=8, num_heads=2, grid=2, window=2, shift=0, dtype=np.float64)
        x = _t(rng, (3, 4, 8), 0.5)
        inputs = [x, p.qkv_w, p.qkv_b, p.proj_w, p.proj_b, p.bias_table]
        return inputs, lambda x_, *rest: window_attention(x_, p)

    simple("window_attention", attention_builder)

    def swin_block_builder(rng):
        p = SwinBlockParams.build(rng, dim=8, num_heads=2, grid=4, window=2, shift=1, dtype=np.float64)
        x = _t(rng, (1, 16, 8), 0.5)
        inputs = [x] + [t for _, t in p.named("p")]
        return inputs, lambda x_, *rest: swin_block(x_, p, 4, 4)

    simple("swin_block", swin_block_builder, tol=SWIN_BLOCK_TOL, max_coords=24)

    def conv_block_builder(rng):
        p = ConvBlockParams.build(rng, 4, dtype=np.float64)
        # init-scale (0.02) conv weights under-resolve the eps=1e-3 probe once
        # batch norm divides by the tiny pre-norm spread; test at unit scale
        p.w1.data *= 25.0
        p.w2.data *= 25.0
        x = _t(rng, (2, 12, 4), 0.5)  # 4x3 token grid
        inputs = [x] + [t for _, t in p.named("p")]
        return inputs, lambda x_, *rest: conv_block(x_, p, 4, 3, train=True)

    simple("conv_block", conv_block_builder, max_coords=24)

    def embed_builder(rng):
        p = PatchEmbedParams.build(rng, patch=2, in_chans=3, dim=6, dtype=np.float64)
        p.w.data *= 25.0  # keep the layer norm that follows well-conditioned
        x = _t(rng, (1, 3, 4, 4), 0.5)
        return [x, p.w, p.b, p.ln_g, p.ln_b], lambda x_, *rest: patch_embed(x_, p)

    simple("patch_embed", embed_builder)

    def merge_builder(rng):
        p = PatchMergeParams.build(rng, 6, dtype=np.float64)
        x = _t(rng, (1, 16, 6), 0.5)
        return [x, p.ln_g, p.ln_b, p.w, p.b], lambda x_, *rest: patch_merge(x_, p, 4, 4)

    simple("patch_merge", merge_builder)

    def expand_builder(rng):
        p = PatchExpandParams.build(rng, 8, 2, dtype=np.float64)
        x = _t(rng, (1, 4, 8), 0.5)
        return [x, p.w, p.b], lambda x_, *rest: patch_expand(x_, p, 2, 2)

    simple("patch_expand", expand_builder)

    def disc_builder(rng):
        p = build_discriminator(seed=int(rng.integers(1 << 30)), dtype=np.float64)
        # lift the normalized layers to unit scale for a resolvable probe; the
        # final conv stays at init scale so the sigmoid does not saturate
        for layer in p.layers[:-1]:
            layer.w.data *= 25.0
        x = _t(rng, (1, 6, 24, 24), 0.3)
        inputs = [x] + [t for _, t in p.named()]
        return inputs, lambda x_, *rest: discriminator_forward(p, x_, train=True)

    # batch norm centers every channel on the leaky-relu kink, so with ~10k
    # normalized units some pre-activation always lands within ~1e-6 of zero
    # and a wide probe steps across it, corrupting the difference quotient for
    # whichever weight feeds that unit.  A 1e-7 probe stays on one side; in
    # float64 the roundoff floor this leaves is ~1e-4 relative, well inside
    # the tolerance.
    simple("discriminator", disc_builder, tol=DISCRIMINATOR_TOL, max_coords=6, eps=1e-7)

    return reg


REGISTRY = _build_registry()


def gradcheck(op: str, seed: int = 0) -> GradCheckReport:
    """Check one registered op at one seed; raises KeyError for unknown names."""
    check = REGISTRY[op]
    rng = np.random.default_rng(seed)
    inputs, forward = check.build(rng)

    T.reset_tape()
    outs = forward(*inputs)
    if isinstance(outs, Tensor):
        outs = [outs]
    weights = [rng.standard_normal(o.shape) for o in outs]
    loss = None
    for o, w in zip(outs, weights):
        term = (o * Tensor(w, dtype=np.float64)).sum()
        loss = term if loss is None else loss + term
    loss.backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]

    def loss_value() -> float:
        with T.no_grad():
            res = forward(*inputs)
            res = [res] if isinstance(res, Tensor) else res
        return float(sum((o.data * w).sum() for o, w in zip(res, weights)))

    max_err = 0.0
    for t, grad in zip(inputs, analytic):
        if grad is None:
            raise AssertionError(f"{op}: no gradient reached input of shape {t.shape}")
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if check.max_coords is not None and flat.size > check.max_coords:
            coords = rng.choice(flat.size, size=check.max_coords, replace=False)
        gflat = grad.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + check.eps
            fp = loss_value()
            flat[c] = orig - check.eps
            fm = loss_value()
            flat[c] = orig
            fd = (fp - fm) / (2.0 * check.eps)
            a = gflat[c]
            rel = abs(a - fd) / max(abs(a), abs(fd), REL_FLOOR)
            if rel > max_err:
                max_err = rel
    T.reset_tape()
    return GradCheckReport(op=op, max_rel_err=float(max_err), tolerance=check.tolerance, passed=max_err <= check.tolerance)


def gradcheck_many(op: str, seeds=(0, 1, 2)) -> GradCheckReport:
    """Worst case across several seeds."""
    worst = None
    for seed in seeds:
        rep = gradcheck(op, seed)
        if worst is None or rep.max_rel_err > worst.max_rel_err:
            worst = rep
    return worst


def run_all(seeds=(0, 1, 2)):
    """Reports for every registered op, in name order."""
    return [gradcheck_many(name, seeds) for name in sorted(REGISTRY)]
