import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from facereenact.autodiff import (Adam, AdamState, Parameter, Tensor, adam_step, backward,
                                  load_checkpoint, ops, save_checkpoint)
from facereenact.autodiff.gradcheck import check_op
from facereenact.container import ContainerError

RNG = np.random.default_rng(0)


def r(*shape):
    return RNG.normal(size=shape)


def away_from_zero(*shape):
    x = r(*shape)
    return np.where(np.abs(x) < 0.1, np.sign(x) * 0.1 + x, x)


# every differentiable op at a small random point
OP_CASES = {
    "add": (ops.add, [r(3, 4), r(3, 4)]),
    "sub": (ops.sub, [r(3, 4), r(3, 4)]),
    "mul": (ops.mul, [r(3, 4), r(3, 4)]),
    "div": (ops.div, [r(3, 4), away_from_zero(3, 4) + 3]),
    "scale": (lambda a: ops.scale(a, -1.7), [r(5)]),
    "add_scalar": (lambda a: ops.add_scalar(a, 2.5), [r(5)]),
    "sqrt": (ops.sqrt, [np.abs(r(6)) + 0.5]),
    "relu": (ops.relu, [away_from_zero(2, 3, 4, 4)]),
    "leaky_relu": (ops.leaky_relu, [away_from_zero(2, 3, 4, 4)]),
    "tanh": (ops.tanh, [r(4, 5)]),
    "sigmoid": (ops.sigmoid, [r(4, 5)]),
    "abs": (ops.abs_, [away_from_zero(7)]),
    "shift": (ops.shift, [r(3, 2), r()]),
    "mean_rows": (ops.mean_rows, [r(4, 3)]),
    "sum": (ops.sum_, [r(3, 3)]),
    "mean": (ops.mean, [r(3, 3)]),
    "spatial_mean": (ops.spatial_mean, [r(2, 3, 4, 5)]),
    "spatial_var": (ops.spatial_var, [r(2, 3, 4, 5)]),
    "instance_standardize": (ops.instance_standardize, [r(2, 3, 4, 5)]),
    "channel_affine": (ops.channel_affine, [r(2, 3, 4, 4), r(3), r(3)]),
    "matmul_mm": (ops.matmul, [r(3, 4), r(4, 2)]),
    "matmul_mv": (ops.matmul, [r(3, 4), r(4)]),
    "matmul_vm": (ops.matmul, [r(3), r(3, 4)]),
    "dot": (ops.dot, [r(5), r(5)]),
    "index_row": (lambda W: ops.index_row(W, 2), [r(4, 3)]),
    "reshape": (lambda a: ops.reshape(a, (6, 2)), [r(3, 4)]),
    "conv2d_s1": (lambda x, w, b: ops.conv2d(x, w, b), [r(2, 3, 6, 6), r(4, 3, 3, 3), r(4)]),
    "conv2d_s2": (lambda x, w, b: ops.conv2d(x, w, b, stride=2),
                  [r(2, 3, 6, 6), r(4, 3, 3, 3), r(4)]),
    "conv2d_1x1": (lambda x, w: ops.conv2d(x, w), [r(1, 3, 4, 4), r(2, 3, 1, 1)]),
    "upsample2x": (ops.upsample2x, [r(2, 3, 3, 4)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), [r(2, 3, 4, 4), r(2, 1, 4, 4)]),
    "channel_slice": (lambda a: ops.channel_slice(a, 1, 3), [r(2, 4, 3, 3)]),
    "crop": (lambda a: ops.crop(a, 1, 2, 3, 2), [r(1, 2, 5, 6)]),
    "resize": (lambda a: ops.resize(a, 7, 3), [r(1, 2, 5, 6)]),
    "l1_loss": (ops.l1_loss, [r(3, 4), r(3, 4) + 5]),
    "mse_loss": (ops.mse_loss, [r(3, 4), r(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradient(name):
    fn, inputs = OP_CASES[name]
    assert check_op(fn, inputs) < 1e-4


def naive_conv(x, w, b, stride):
    N, C, H, W = x.shape
    O, _, k, _ = w.shape
    p = k // 2
    Ho, Wo = (H + 2 * p - k) // stride + 1, (W + 2 * p - k) // stride + 1
    out = np.zeros((N, O, Ho, Wo))
    for n in range(N):
        for o in range(O):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for i in range(k):
                            for j in range(k):
                                yy, xi = y * stride + i - p, xx * stride + j - p
                                if 0 <= yy < H and 0 <= xi < W:
                                    acc += w[o, c, i, j] * x[n, c, yy, xi]
                    out[n, o, y, xx] = acc
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_six_loop_oracle(stride):
    rng = np.random.default_rng(stride)
    x, w, b = rng.normal(size=(2, 3, 6, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    np.testing.assert_allclose(ops.conv2d(x, w, b, stride).data, naive_conv(x, w, b, stride),
                               atol=1e-10)


def test_identity_kernel_and_relu():
    x = r(1, 2, 5, 5)
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = k[1, 1, 1, 1] = 1
    np.testing.assert_array_equal(ops.conv2d(x, k).data, x)
    pos = np.abs(r(10)) + 1e-3
    assert np.all(ops.relu(-pos).data == 0)
    assert ops.conv2d(r(1, 1, 8, 8), r(1, 1, 3, 3), stride=2).shape == (1, 1, 4, 4)


def test_shape_errors():
    with pytest.raises(ValueError):
        ops.add(r(2), r(3))
    with pytest.raises(ValueError):
        ops.conv2d(r(1, 2, 4, 4), r(1, 3, 3, 3))
    with pytest.raises(ValueError):
        ops.matmul(r(2, 3), r(2, 3))
    with pytest.raises(ValueError):
        ops.crop(r(1, 1, 4, 4), 2, 2, 3, 3)
    with pytest.raises(IndexError):
        ops.index_row(r(2, 2), 2)


def test_backward_basics():
    th = Parameter(r(3, 4))
    backward(ops.sum_(th))
    np.testing.assert_array_equal(th.grad, np.ones((3, 4)))
    th.zero_grad()
    backward(ops.sum_(ops.mul(th, th)))
    np.testing.assert_allclose(th.grad, 2 * th.data)
    with pytest.raises(ValueError, match="scalar"):
        backward(ops.mul(th, th))


def test_backward_visits_shared_nodes_once():
    # y = x * x used twice: d/dx (y + y) = 4x, each node contributes exactly once
    x = Parameter(np.array([1.5, -2.0]))
    y = ops.mul(x, x)
    backward(ops.sum_(ops.add(y, y)))
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_backward_restricted_params():
    a, b = Parameter(r(3)), Parameter(r(3))
    backward(ops.dot(a, b), [a])
    np.testing.assert_array_equal(a.grad, b.data)
    assert np.all(b.grad == 0)


def test_adam_zero_gradient():
    p = {"w": r(4)}
    before = p["w"].copy()
    adam_step(p, {"w": np.zeros(4)})
    np.testing.assert_array_equal(p["w"], before)


def test_adam_first_step():
    p = {"w": r(5)}
    g = r(5)
    before = p["w"].copy()
    adam_step(p, {"w": g}, lr=0.1, eps=1e-8)
    np.testing.assert_allclose(p["w"] - before, -0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_constant_gradient_asymptote():
    """Scalar simulation oracle: steps approach lr * sign(g)."""
    p = {"w": np.zeros(2)}
    g = np.array([0.3, -4.0])
    state = AdamState()
    prev = p["w"].copy()
    for _ in range(5000):
        prev = p["w"].copy()
        adam_step(p, {"w": g}, lr=1e-3, state=state)
    np.testing.assert_allclose(p["w"] - prev, -1e-3 * np.sign(g), rtol=1e-6)


def test_adam_class_reads_grads():
    w = Parameter(np.ones(3), "w")
    opt = Adam({"w": w}, lr=0.5)
    backward(ops.sum_(w))
    opt.step()
    np.testing.assert_allclose(w.data, 0.5, rtol=1e-7)
    opt.zero_grad()
    assert np.all(w.grad == 0)


def test_checkpoint_round_trip(tmp_path):
    arrays = {"b": r(3), "a.w": r(2, 3, 3, 3), "scalar": np.array(1.5)}
    save_checkpoint(tmp_path / "c.ck", arrays, {"kind": "test"})
    back, meta = load_checkpoint(tmp_path / "c.ck")
    assert meta == {"kind": "test"} and set(back) == set(arrays)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
    raw = (tmp_path / "c.ck").read_bytes()
    (tmp_path / "t.ck").write_bytes(raw[:-8])
    with pytest.raises(ContainerError):
        load_checkpoint(tmp_path / "t.ck")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_composite_layer_gradients(seed):
    """conv -> standardize -> affine -> leaky relu -> upsample -> loss."""
    rng = np.random.default_rng(seed)
    x, w = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))
    g, b = rng.normal(size=3), rng.normal(size=3)
    target = rng.normal(size=(1, 3, 8, 8))

    def f(x, w, g, b):
        y = ops.leaky_relu(ops.channel_affine(ops.instance_standardize(ops.conv2d(x, w)), g, b))
        return ops.mse_loss(ops.upsample2x(y), Tensor(target))
    assert check_op(f, [x, w, g, b]) < 1e-4
