"""Forward values, backward gradients, and contracts of the tensor core."""
import numpy as np
import pytest

from aquaswin import tensor as T
from aquaswin.errors import ContractError, ShapeError
from aquaswin.tensor import Tensor


@pytest.fixture(autouse=True)
def fresh_tape():
    T.reset_tape()
    yield
    T.reset_tape()


def t_(data, grad=True, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=grad)


# ---------------------------------------------------------------------------
# constructor semantics


def test_tensor_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).data.dtype == np.float32
    assert Tensor(np.arange(4)).data.dtype == np.float32


def test_tensor_preserves_float64():
    # gradcheck relies on float64 staying float64
    assert Tensor(np.zeros(3, dtype=np.float64)).data.dtype == np.float64
    assert Tensor(np.zeros(3, dtype=np.float32)).data.dtype == np.float32


def test_tensor_explicit_dtype_wins():
    assert Tensor([1.0], dtype=np.float64).data.dtype == np.float64


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    eye = t_([[1.0, 0.0], [0.0, 1.0]])
    b = t_([[5.0, 6.0], [7.0, 8.0]])
    out = T.matmul(eye, b)
    assert np.array_equal(out.data, b.data)


def test_matmul_hand_case():
    out = T.matmul(t_([[1.0, 2.0]]), t_([[3.0], [4.0]]))
    assert out.shape == (1, 1)
    assert out.data[0, 0] == 11.0


def test_matmul_shape_mismatch_names_both():
    with pytest.raises(ShapeError) as exc:
        T.matmul(t_(np.zeros((2, 3))), t_(np.zeros((4, 2))))
    msg = str(exc.value)
    assert "(2, 3)" in msg and "(4, 2)" in msg


def test_matmul_batched_broadcast():
    a = t_(np.random.default_rng(0).standard_normal((2, 3, 4, 5)))
    b = t_(np.random.default_rng(1).standard_normal((5, 6)))
    out = T.matmul(a, b)
    assert out.shape == (2, 3, 4, 6)
    expect = a.data @ b.data
    assert np.allclose(out.data, expect, atol=1e-6)


def test_matmul_backward_matches_fd():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((4, 5)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal((5, 3)), requires_grad=True, dtype=np.float64)
    T.matmul(a, b).sum().backward()
    eps = 1e-3
    flat = a.data.reshape(-1)
    for c in (0, 7, 19):
        orig = flat[c]
        flat[c] = orig + eps
        fp = float((a.data @ b.data).sum())
        flat[c] = orig - eps
        fm = float((a.data @ b.data).sum())
        flat[c] = orig
        fd = (fp - fm) / (2 * eps)
        assert abs(a.grad.reshape(-1)[c] - fd) <= 1e-3 * max(1.0, abs(fd))


# ---------------------------------------------------------------------------
# conv2d


def test_conv2d_identity_kernel():
    x = t_(np.random.default_rng(2).standard_normal((1, 1, 5, 5)))
    w = t_(np.ones((1, 1, 1, 1)))
    b = t_(np.zeros(1))
    out = T.conv2d(x, w, b, stride=1, padding=0)
    assert np.allclose(out.data, x.data)


def test_conv2d_shape_formula():
    x = t_(np.zeros((1, 3, 64, 64)))
    w = t_(np.zeros((8, 3, 4, 4)))
    b = t_(np.zeros(8))
    out = T.conv2d(x, w, b, stride=2, padding=1)
    assert out.shape == (1, 8, 32, 32)


def test_conv2d_kernel_too_large():
    x = t_(np.zeros((1, 1, 3, 3)))
    w = t_(np.zeros((1, 1, 6, 6)))
    with pytest.raises(ShapeError):
        T.conv2d(x, w, t_(np.zeros(1)), stride=1, padding=1)


def test_conv2d_matches_direct_loop():
    # independent O(n^6) reference on a small case
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 6, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = T.conv2d(t_(x), t_(w), t_(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expect = np.zeros_like(out)
    for co in range(3):
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                patch = xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                expect[0, co, i, j] = (patch * w[co]).sum() + b[co]
    assert np.allclose(out, expect, atol=1e-5)


# ---------------------------------------------------------------------------
# activations


def test_activation_fixed_points():
    assert T.tanh(t_([0.0])).data[0] == 0.0
    assert T.sigmoid(t_([0.0])).data[0] == 0.5
    assert np.isclose(T.leaky_relu(t_([-1.0]), 0.2).data[0], -0.2)


def test_sigmoid_tanh_bounds_and_stability():
    x = t_([-1000.0, -10.0, 0.0, 10.0, 1000.0])
    s = T.sigmoid(x).data
    assert np.all((s >= 0.0) & (s <= 1.0)) and np.all(np.isfinite(s))
    th = T.tanh(x).data
    assert np.all((th >= -1.0) & (th <= 1.0)) and np.all(np.isfinite(th))


def test_gelu_reference_values():
    # tanh-form approximation evaluated independently
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0], dtype=np.float64)
    inner = np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)
    expect = 0.5 * x * (1.0 + np.tanh(inner))
    got = T.gelu(Tensor(x, requires_grad=False, dtype=np.float64)).data
    assert np.allclose(got, expect, atol=1e-12)


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry_and_closed_form():
    assert np.allclose(T.softmax(t_([0.0, 0.0])).data, [0.5, 0.5])
    assert np.allclose(T.softmax(t_([1000.0, 1000.0])).data, [0.5, 0.5])
    out = T.softmax(t_([0.0, np.log(3.0)])).data
    assert np.allclose(out, [0.25, 0.75], atol=1e-6)


def test_softmax_rows_sum_to_one_large_magnitudes():
    rng = np.random.default_rng(4)
    x = t_(rng.uniform(-1e4, 1e4, size=(5, 7)))
    out = T.softmax(x, axis=-1).data
    assert np.all(out >= 0.0)
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_invalid_axis():
    with pytest.raises(ShapeError):
        T.softmax(t_([1.0, 2.0]), axis=3)


# ---------------------------------------------------------------------------
# normalization


def test_layer_norm_constant_vector():
    x = t_([[3.0, 3.0, 3.0, 3.0]])
    out = T.layer_norm(x, t_(np.ones(4)), t_(np.zeros(4)))
    assert np.allclose(out.data, 0.0, atol=1e-4)


def test_layer_norm_two_point():
    x = t_([[1.0, 3.0]])
    out = T.layer_norm(x, t_(np.ones(2)), t_(np.zeros(2)), eps=0.0)
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_size_mismatch():
    with pytest.raises(ShapeError):
        T.layer_norm(t_(np.zeros((2, 4))), t_(np.ones(3)), t_(np.zeros(3)))


def test_batch_norm_eval_identity():
    x = t_(np.random.default_rng(5).standard_normal((2, 3, 4, 4)))
    g, b = t_(np.ones(3)), t_(np.zeros(3))
    rm, rv = t_(np.zeros(3), grad=False), t_(np.ones(3), grad=False)
    out = T.batch_norm(x, g, b, rm, rv, train=False)
    assert np.allclose(out.data, x.data, atol=1e-4)


def test_batch_norm_train_statistics():
    x = t_(np.random.default_rng(6).standard_normal((4, 2, 3, 3)) * 3 + 1)
    g, b = t_(np.ones(2)), t_(np.zeros(2))
    rm, rv = t_(np.zeros(2), grad=False), t_(np.ones(2), grad=False)
    out = T.batch_norm(x, g, b, rm, rv, train=True).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)
    # running buffers moved toward the batch statistics
    assert not np.allclose(rm.data, 0.0)


def test_batch_norm_degenerate_batch():
    x = t_(np.zeros((1, 2, 1, 1)))
    g, b = t_(np.ones(2)), t_(np.zeros(2))
    rm, rv = t_(np.zeros(2), grad=False), t_(np.ones(2), grad=False)
    with pytest.raises(ContractError):
        T.batch_norm(x, g, b, rm, rv, train=True)


# ---------------------------------------------------------------------------
# roll / restructure / reduce


def test_roll_cases():
    x = t_(np.arange(4, dtype=np.float32).reshape(1, 1, 4, 1) + 1)
    assert np.array_equal(T.roll(x, 0, 0).data, x.data)
    out = T.roll(x, 0, 1)
    assert np.array_equal(out.data.reshape(-1), [4, 1, 2, 3])
    back = T.roll(out, 0, -1)
    assert np.array_equal(back.data, x.data)


def test_reshape_roundtrip_and_mismatch():
    x = t_(np.arange(6, dtype=np.float32).reshape(2, 3))
    out = T.reshape(T.reshape(x, (3, 2)), (2, 3))
    assert np.array_equal(out.data, x.data)
    with pytest.raises(ShapeError):
        T.reshape(x, (4, 2))


def test_concat_and_split_roundtrip():
    a = t_(np.ones((1, 2)))
    b = t_(np.zeros((1, 2)))
    cat = T.concat([a, b], axis=0)
    assert cat.shape == (2, 2)
    parts = T.split(cat, [1, 1], axis=0)
    assert np.array_equal(parts[0].data, a.data)
    assert np.array_equal(parts[1].data, b.data)


def test_permute_backward_is_inverse_permutation():
    x = t_(np.random.default_rng(7).standard_normal((2, 3, 4)))
    out = T.permute(x, (2, 0, 1))
    g = np.random.default_rng(8).standard_normal(out.shape)
    (out * Tensor(g)).sum().backward()
    assert np.allclose(x.grad, g.transpose(1, 2, 0), atol=1e-6)


def test_reduce_values():
    assert t_([1.0, 2.0, 3.0]).mean().item() == 2.0
    x = t_([[1.0, -2.0]])
    out = x.sum(axes=())
    assert np.array_equal(out.data, x.data)  # empty axis list: identity
    assert t_([-1.0, 1.0]).abs_mean().item() == 1.0


def test_reduce_invalid_axis():
    with pytest.raises(ShapeError):
        t_([1.0, 2.0]).sum(axes=5)


# ---------------------------------------------------------------------------
# log


def test_log_floor_keeps_gradients_finite():
    x = t_([0.0, 1e-20, 1.0])
    out = T.log(x)
    assert np.all(np.isfinite(out.data))
    assert np.isclose(out.data[0], np.log(1e-12))
    out.sum().backward()
    assert np.all(np.isfinite(x.grad))


# ---------------------------------------------------------------------------
# backward mechanics


def test_backward_sum_gives_ones():
    x = t_(np.random.default_rng(9).standard_normal((3, 4)))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((3, 4), dtype=np.float32))


def test_backward_quadratic():
    x = t_([1.0, -2.0, 0.5])
    (x * x).sum().backward()
    assert np.allclose(x.grad, 2 * x.data, atol=1e-6)


def test_backward_chain_matches_fd():
    rng = np.random.default_rng(10)
    x = Tensor(rng.standard_normal(6), requires_grad=True, dtype=np.float64)

    def forward():
        return (T.tanh(x * x) + x).sum()

    forward().backward()
    eps = 1e-4
    for c in range(6):
        orig = x.data[c]
        x.data[c] = orig + eps
        fp = forward().item()
        x.data[c] = orig - eps
        fm = forward().item()
        x.data[c] = orig
        fd = (fp - fm) / (2 * eps)
        assert abs(x.grad[c] - fd) <= 1e-3 * max(1.0, abs(fd))


def test_backward_rejects_non_scalar():
    x = t_(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        (x + x).backward()


def test_backward_accumulates_without_reset():
    x = t_([1.0, 2.0])
    x.sum().backward()
    first = x.grad.copy()
    x.sum().backward()
    assert np.array_equal(x.grad, 2 * first)


def test_zero_grad_and_detach():
    x = t_([1.0, 2.0])
    x.sum().backward()
    x.zero_grad()
    assert x.grad is None
    d = x.detach()
    assert not d.requires_grad
    assert np.array_equal(d.data, x.data)


def test_no_grad_suppresses_recording():
    x = t_([1.0])
    before = len(T.tape().nodes)
    with T.no_grad():
        y = x * x
    assert len(T.tape().nodes) == before
    assert y.data[0] == 1.0


def test_broadcast_add_unbroadcasts_gradient():
    x = t_(np.zeros((2, 3)))
    b = t_(np.zeros(3))
    (x + b).sum().backward()
    assert b.grad.shape == (3,)
    assert np.array_equal(b.grad, np.full(3, 2.0, dtype=np.float32))


def test_forward_determinism():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 8)).astype(np.float32)
    a = T.softmax(t_(x), axis=-1).data
    b = T.softmax(t_(x), axis=-1).data
    assert np.array_equal(a, b)
