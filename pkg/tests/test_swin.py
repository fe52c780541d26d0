"""Window partitioning, relative bias indexing, shift masks, and block wiring."""
import numpy as np
import pytest

from aquaswin import tensor as T
from aquaswin.errors import ShapeError
from aquaswin.swin import (
    MASK_NEG,
    PatchEmbedParams,
    PatchExpandParams,
    PatchMergeParams,
    SwinBlockParams,
    build_relative_index,
    build_shift_mask,
    patch_embed,
    patch_expand,
    patch_merge,
    swin_block,
    window_attention,
    window_partition,
    window_reverse,
)
from aquaswin.tensor import Tensor


@pytest.fixture(autouse=True)
def fresh_tape():
    T.reset_tape()
    yield
    T.reset_tape()


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))


# ---------------------------------------------------------------------------
# partition / reverse


def test_window_partition_shapes_and_inverse():
    x = rand((2, 8, 8, 5))
    wins = window_partition(x, 4)
    assert wins.shape == (2 * 4, 16, 5)
    back = window_reverse(wins, 4, 8, 8)
    assert np.array_equal(back.data, x.data)  # bit-exact round trip


def test_window_partition_layout():
    # token (i, j) of window (a, b) must be pixel (4a+i, 4b+j)
    h = w = 8
    grid = np.arange(h * w, dtype=np.float32).reshape(1, h, w, 1)
    wins = window_partition(Tensor(grid), 4).data
    assert wins[0, 0, 0] == 0.0
    assert wins[1, 0, 0] == 4.0  # second window starts at column 4
    assert wins[2, 0, 0] == 32.0  # third window starts at row 4
    assert wins[0, 5, 0] == grid[0, 1, 1, 0]  # token 5 = (row 1, col 1)


def test_window_partition_divisibility_error():
    with pytest.raises(ShapeError):
        window_partition(rand((1, 6, 6, 2)), 4)


def test_window_reverse_rejects_bad_count():
    with pytest.raises(ShapeError):
        window_reverse(rand((3, 16, 2)), 4, 8, 8)


# ---------------------------------------------------------------------------
# relative position index


@pytest.mark.parametrize("m", [1, 2, 3, 7])
def test_relative_index_structure(m):
    idx = build_relative_index(m)
    assert idx.shape == (m * m, m * m)
    assert idx.min() >= 0 and idx.max() <= (2 * m - 1) ** 2 - 1
    # swapping the pair negates both offsets; the flat ids then sum to a constant
    assert np.all(idx + idx.T == 4 * m * (m - 1))
    # zero offset sits on the diagonal
    assert np.all(np.diag(idx) == 2 * m * (m - 1))


def test_relative_index_hand_case():
    # M=2 tokens are (0,0),(0,1),(1,0),(1,1); id = (dr+1)*3 + (dc+1)
    idx = build_relative_index(2)
    assert idx[0, 1] == 3  # dr=0, dc=-1
    assert idx[1, 0] == 5  # dr=0, dc=+1
    assert idx[0, 2] == 1  # dr=-1, dc=0
    assert idx[0, 3] == 0  # dr=-1, dc=-1
    assert idx[3, 0] == 8  # dr=+1, dc=+1


# ---------------------------------------------------------------------------
# shift mask


def test_shift_mask_zero_shift_is_all_zero():
    mask = build_shift_mask(8, 8, 4, 0)
    assert mask.shape == (4, 16, 16)
    assert np.all(mask == 0.0)


def test_shift_mask_invalid_shift():
    with pytest.raises(ShapeError):
        build_shift_mask(8, 8, 4, 4)
    with pytest.raises(ShapeError):
        build_shift_mask(8, 8, 4, -1)


@pytest.mark.parametrize("h,m,s", [(4, 2, 1), (8, 4, 2), (8, 2, 1)])
def test_shift_mask_matches_wrap_rule(h, m, s):
    # independent rule: a same-window pair may attend iff both tokens wrapped
    # around the same way on each axis when the grid was rolled by -s
    mask = build_shift_mask(h, h, m, s)
    nw = h // m
    for wi in range(nw * nw):
        wr, wc = divmod(wi, nw)
        toks = [(wr * m + i, wc * m + j) for i in range(m) for j in range(m)]
        for a, (ia, ja) in enumerate(toks):
            for b, (ib, jb) in enumerate(toks):
                allowed = ((ia + s >= h) == (ib + s >= h)) and (
                    (ja + s >= h) == (jb + s >= h)
                )
                expected = 0.0 if allowed else MASK_NEG
                assert mask[wi, a, b] == expected, (wi, a, b)


def test_shift_mask_symmetric_zero_diagonal():
    mask = build_shift_mask(8, 8, 4, 2)
    assert np.array_equal(mask, mask.transpose(0, 2, 1))
    assert np.all(mask[:, np.arange(16), np.arange(16)] == 0.0)


# ---------------------------------------------------------------------------
# window attention


def zeroed_block(dim=4, heads=2, grid=4, window=2, shift=0, seed=0):
    rng = np.random.default_rng(seed)
    p = SwinBlockParams.build(rng, dim, heads, grid, window, shift)
    return p


def test_window_attention_zero_weights_constant_output():
    p = zeroed_block()
    p.qkv_w.data[:] = 0.0
    p.bias_table.data[:] = 0.0
    p.proj_w.data[:] = 0.0
    p.proj_b.data[:] = np.array([1.0, -2.0, 3.0, 0.5], dtype=np.float32)
    out = window_attention(rand((8, 4, 4)), p)
    assert np.allclose(out.data, p.proj_b.data, atol=1e-6)


def test_window_attention_token_count_error():
    p = zeroed_block(window=2)
    with pytest.raises(ShapeError):
        window_attention(rand((1, 9, 4)), p)


def test_window_attention_channel_error():
    p = zeroed_block(dim=4)
    with pytest.raises(ShapeError):
        window_attention(rand((1, 4, 6)), p)


def test_masked_attention_averages_allowed_tokens_only():
    # dim 1, one head: make q=k=0 and v=x, so attention weights are
    # softmax(mask) and the output is the mean over unmasked tokens
    h, m, s = 4, 2, 1
    rng = np.random.default_rng(5)
    p = SwinBlockParams.build(rng, 1, 1, h, m, s)
    p.qkv_w.data[:] = 0.0
    p.qkv_w.data[0, 2] = 1.0  # v = x
    p.qkv_b.data[:] = 0.0
    p.bias_table.data[:] = 0.0
    p.proj_w.data[:] = 1.0
    p.proj_b.data[:] = 0.0
    x = rand((1, h, h, 1), seed=6)
    wins = window_partition(x, m)
    out = window_attention(wins, p, p.mask).data
    nw = h // m
    for wi in range(nw * nw):
        for a in range(m * m):
            allowed = p.mask[wi, a] == 0.0
            expect = wins.data[wi, allowed, 0].mean()
            assert abs(out[wi, a, 0] - expect) < 1e-5


# ---------------------------------------------------------------------------
# full block


def test_swin_block_preserves_shape():
    p = zeroed_block(dim=8, heads=2, grid=4, window=4, shift=0, seed=3)
    x = rand((2, 16, 8), seed=7)
    out = swin_block(x, p, 4, 4)
    assert out.shape == (2, 16, 8)


def test_swin_block_token_mismatch():
    p = zeroed_block(dim=8, heads=2, grid=4, window=4)
    with pytest.raises(ShapeError):
        swin_block(rand((1, 12, 8)), p, 4, 4)


def test_swin_block_deterministic():
    p = zeroed_block(dim=8, heads=2, grid=4, window=2, shift=1, seed=9)
    x = rand((1, 16, 8), seed=10)
    a = swin_block(x, p, 4, 4).data
    T.reset_tape()
    b = swin_block(x, p, 4, 4).data
    assert np.array_equal(a, b)


def test_swin_block_shifted_differs_from_unshifted():
    rng = np.random.default_rng(11)
    a = SwinBlockParams.build(rng, 8, 2, 4, 2, 0)
    b = SwinBlockParams.build(np.random.default_rng(11), 8, 2, 4, 2, 1)
    x = rand((1, 16, 8), seed=12)
    out_a = swin_block(x, a, 4, 4).data
    out_b = swin_block(x, b, 4, 4).data
    assert not np.allclose(out_a, out_b)


def test_dim_head_divisibility():
    with pytest.raises(ShapeError):
        SwinBlockParams.build(np.random.default_rng(0), 6, 4, 4, 2, 0)


# ---------------------------------------------------------------------------
# patch embed / merge / expand


def test_patch_embed_matches_numpy_reference():
    rng = np.random.default_rng(13)
    p = PatchEmbedParams.build(rng, 2, 3, 6)
    x = np.random.default_rng(14).standard_normal((2, 3, 4, 4)).astype(np.float32)
    out = patch_embed(Tensor(x), p).data

    # independent gather: token (gi, gj) sees patch rows then channels last
    n, c, hh, ww = x.shape
    toks = np.zeros((n, 4, 12), dtype=np.float32)
    for b in range(n):
        for gi in range(2):
            for gj in range(2):
                patch = x[b, :, 2 * gi : 2 * gi + 2, 2 * gj : 2 * gj + 2]
                toks[b, gi * 2 + gj] = patch.transpose(1, 2, 0).reshape(-1)
    pre = toks @ p.w.data + p.b.data
    mu = pre.mean(axis=-1, keepdims=True)
    var = pre.var(axis=-1, keepdims=True)
    ref = (pre - mu) / np.sqrt(var + 1e-5) * p.ln_g.data + p.ln_b.data
    assert np.allclose(out, ref, atol=1e-5)


def test_patch_embed_divisibility_error():
    p = PatchEmbedParams.build(np.random.default_rng(0), 4, 3, 8)
    with pytest.raises(ShapeError):
        patch_embed(rand((1, 3, 6, 6)), p)


def test_patch_merge_gathers_2x2_neighborhoods():
    rng = np.random.default_rng(15)
    p = PatchMergeParams.build(rng, 3)
    h = w = 4
    x = np.random.default_rng(16).standard_normal((1, h * w, 3)).astype(np.float32)
    out = patch_merge(Tensor(x), p, h, w).data
    assert out.shape == (1, 4, 6)

    grid = x.reshape(h, w, 3)
    for oi in range(2):
        for oj in range(2):
            cat = np.concatenate(
                [
                    grid[2 * oi, 2 * oj],
                    grid[2 * oi, 2 * oj + 1],
                    grid[2 * oi + 1, 2 * oj],
                    grid[2 * oi + 1, 2 * oj + 1],
                ]
            )
            mu, var = cat.mean(), cat.var()
            normed = (cat - mu) / np.sqrt(var + 1e-5) * p.ln_g.data + p.ln_b.data
            ref = normed @ p.w.data + p.b.data
            assert np.allclose(out[0, oi * 2 + oj], ref, atol=1e-5)


def test_patch_merge_odd_grid_error():
    p = PatchMergeParams.build(np.random.default_rng(0), 2)
    with pytest.raises(ShapeError):
        patch_merge(rand((1, 9, 2)), p, 3, 3)


def test_patch_expand_factor2_shapes():
    p = PatchExpandParams.build(np.random.default_rng(17), 8, 2)
    out = patch_expand(rand((2, 4, 8)), p, 2, 2)
    assert out.shape == (2, 16, 4)  # 4x tokens, half channels


def test_patch_expand_factor4_shapes():
    p = PatchExpandParams.build(np.random.default_rng(18), 8, 4)
    out = patch_expand(rand((1, 4, 8)), p, 2, 2)
    assert out.shape == (1, 64, 8)  # 16x tokens, same channels


def test_patch_expand_spatial_layout():
    # with w = identity-ish blocks, output pixel (f*i+di, f*j+dj) must read
    # slot (di, dj) of token (i, j)
    dim, f = 2, 2
    p = PatchExpandParams.build(np.random.default_rng(19), dim, f)
    p.w.data[:] = 0.0
    p.b.data[:] = 0.0
    # route channel 0 of the token to each spatial slot's single channel
    cout = (2 * dim) // (f * f)
    for slot in range(f * f):
        p.w.data[0, slot * cout] = float(slot + 1)
    x = np.zeros((1, 4, dim), dtype=np.float32)
    x[0, :, 0] = [1.0, 10.0, 100.0, 1000.0]  # token ids
    out = patch_expand(Tensor(x), p, 2, 2).data.reshape(4, 4)
    # token (i, j) value v appears as [v, 2v; 3v, 4v] in its 2x2 cell
    assert np.allclose(out[0:2, 0:2], [[1, 2], [3, 4]])
    assert np.allclose(out[0:2, 2:4], [[10, 20], [30, 40]])
    assert np.allclose(out[2:4, 0:2], [[100, 200], [300, 400]])
    assert np.allclose(out[2:4, 2:4], [[1000, 2000], [3000, 4000]])


def test_merge_then_expand_restores_token_geometry():
    dim = 4
    merge = PatchMergeParams.build(np.random.default_rng(20), dim)
    expand = PatchExpandParams.build(np.random.default_rng(21), 2 * dim, 2)
    x = rand((1, 16, dim), seed=22)
    down = patch_merge(x, merge, 4, 4)
    assert down.shape == (1, 4, 2 * dim)
    up = patch_expand(down, expand, 2, 2)
    assert up.shape == x.shape
