import math

import numpy as np
import pytest

from _helpers import check_op_grads, conv2d_loops, numeric_grad
from contra_cluster.nncore import (
    LARS,
    Adam,
    GraphError,
    Parameter,
    ScheduleConfig,
    ShapeError,
    Tensor,
    TrainingError,
    load_checkpoint,
    lr_at,
    ops,
    save_checkpoint,
)
from contra_cluster.nncore.checkpoint import CheckpointError


# -- conv2d --------------------------------------------------------------

def test_conv2d_halves_28():
    x = Tensor(np.zeros((2, 1, 28, 28), np.float32))
    w = Tensor(np.zeros((4, 1, 4, 4), np.float32))
    assert ops.conv2d(x, w, Tensor(np.zeros(4, np.float32))).shape == (2, 4, 14, 14)


def test_conv2d_shape_chain():
    sizes = [28]
    for _ in range(3):
        sizes.append((sizes[-1] + 2 - 4) // 2 + 1)
    assert sizes == [28, 14, 7, 3]


def test_conv2d_zero_weights(rng):
    x = Tensor(rng.normal(size=(1, 2, 6, 6)))
    out = ops.conv2d(x, Tensor(np.zeros((3, 2, 4, 4))), Tensor(np.zeros(3)))
    assert np.all(out.data == 0)


def test_conv2d_matches_loops(rng):
    x = rng.normal(size=(1, 1, 6, 6))
    w = rng.normal(size=(2, 1, 4, 4))
    b = rng.normal(size=2)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, conv2d_loops(x, w, b, 2, 1), atol=1e-6)


def test_conv2d_matches_loops_multichannel(rng):
    x = rng.normal(size=(2, 3, 7, 7))
    w = rng.normal(size=(4, 3, 4, 4))
    b = rng.normal(size=4)
    got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(got, conv2d_loops(x, w, b, 2, 1), atol=1e-10)


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 2, 6, 6))), Tensor(np.zeros((3, 1, 4, 4))))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 1, 1, 1))), Tensor(np.zeros((3, 1, 4, 4))))


# -- conv2d_transpose ----------------------------------------------------

@pytest.mark.parametrize("size,opad,expected", [(3, 1, 7), (7, 0, 14), (14, 0, 28)])
def test_conv_transpose_shapes(size, opad, expected):
    x = Tensor(np.zeros((1, 2, size, size)))
    w = Tensor(np.zeros((2, 3, 4, 4)))
    assert ops.conv2d_transpose(x, w, output_pad=opad).shape == (1, 3, expected, expected)


def test_conv_transpose_adjoint_identity(rng):
    for _ in range(20):
        x = rng.normal(size=(1, 1, 6, 6))
        w = rng.normal(size=(2, 1, 4, 4))
        y = rng.normal(size=(1, 2, 3, 3))
        lhs = np.sum(ops.conv2d(Tensor(x), Tensor(w)).data * y)
        rhs = np.sum(x * ops.conv2d_transpose(Tensor(y), Tensor(w)).data)
        assert abs(lhs - rhs) < 1e-5 * max(1.0, abs(lhs))


def test_conv_transpose_bad_output_pad():
    with pytest.raises(ShapeError):
        ops.conv2d_transpose(Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 4, 4))), output_pad=2)


# -- linear / gelu / pool ------------------------------------------------

def test_linear_identity():
    x = np.arange(12.0).reshape(3, 4)
    out = ops.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, x)


def test_linear_zero_input_gives_bias():
    b = np.array([1.0, -2.0, 3.0])
    out = ops.linear(Tensor(np.zeros((2, 5))), Tensor(np.ones((3, 5))), Tensor(b))
    np.testing.assert_array_equal(out.data, np.tile(b, (2, 1)))


def test_linear_matches_loops(rng):
    x, w, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5)), rng.normal(size=4)
    expected = np.zeros((3, 4))
    for i in range(3):
        for j in range(4):
            expected[i, j] = b[j] + sum(x[i, k] * w[j, k] for k in range(5))
    np.testing.assert_allclose(ops.linear(Tensor(x), Tensor(w), Tensor(b)).data, expected, atol=1e-6)


def test_linear_shape_error():
    with pytest.raises(ShapeError):
        ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(4)))


def test_gelu_values():
    phi1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    out = ops.gelu(Tensor(np.array([0.0, 1.0, -10.0]))).data
    assert out[0] == 0.0
    assert abs(out[1] - phi1) < 1e-12
    assert abs(out[1] - 0.841345) < 1e-6
    assert abs(out[2]) < 1e-6


def test_avgpool_values():
    assert ops.avgpool2d(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))).data.item() == 2.5
    assert ops.avgpool2d(Tensor(np.zeros((1, 1, 3, 3)))).shape == (1, 1, 1, 1)
    c = ops.avgpool2d(Tensor(np.full((2, 3, 6, 6), 0.7))).data
    np.testing.assert_allclose(c, 0.7)


def test_avgpool_too_small():
    with pytest.raises(ShapeError):
        ops.avgpool2d(Tensor(np.zeros((1, 1, 1, 4))))


# -- backward ------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_backward_inner_product_gives_2x(rng):
    d = rng.normal(size=(3, 4))
    x = Tensor(d, requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * d)


def test_backward_nonscalar_raises():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(GraphError):
        (x * 2.0).backward()


def test_graph_consumed_once():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_grads_accumulate_across_backward_calls():
    x = Tensor(np.ones(3), requires_grad=True)
    (x * 2.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, np.full(3, 5.0))


def test_shared_subexpression():
    # y = x*x used twice; d/dx sum(y + y) = 4x
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [4.0, -8.0])


GRAD_CASES = {
    "conv2d": (lambda x, w, b: ops.conv2d(x, w, b, 2, 1), [(1, 2, 6, 6), (3, 2, 4, 4), (3,)]),
    "conv2d_transpose": (lambda x, w, b: ops.conv2d_transpose(x, w, b, 2, 1, 1), [(1, 2, 3, 3), (2, 3, 4, 4), (3,)]),
    "linear": (lambda x, w, b: ops.linear(x, w, b), [(3, 5), (4, 5), (4,)]),
    "gelu": (ops.gelu, [(3, 4)]),
    "sigmoid": (ops.sigmoid, [(3, 4)]),
    "avgpool2d": (ops.avgpool2d, [(1, 2, 5, 5)]),
    "log_softmax": (lambda x: ops.log_softmax(x, axis=1), [(3, 5)]),
    "l2_normalize": (lambda x: ops.l2_normalize(x, axis=1), [(3, 4)]),
    "matmul": (ops.matmul, [(3, 4), (4, 2)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "rows": (lambda x: ops.rows(x, 1, 3), [(4, 3)]),
    "mean": (lambda x: ops.mean(x, axis=0), [(3, 4)]),
    "div": (ops.div, [(2, 3), (2, 3)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(name, rng):
    op, shapes = GRAD_CASES[name]
    worst = 0.0
    for _ in range(3):
        arrays = [rng.normal(size=s) for s in shapes]
        if name == "div":
            arrays[1] = np.abs(arrays[1]) + 0.5
        worst = max(worst, check_op_grads(op, arrays, rng))
    assert worst < 1e-4


def test_numeric_grad_helper_on_quadratic():
    a = np.array([1.0, 2.0])
    (g,) = numeric_grad(lambda v: float(v @ v), [a])
    np.testing.assert_allclose(g, 2 * a, atol=1e-8)


# -- optimizers ----------------------------------------------------------

def test_lars_zero_gradient_leaves_params(rng):
    p = Parameter(rng.normal(size=(3, 3)), "w")
    before = p.data.copy()
    opt = LARS([p], weight_decay=0.0)
    p.grad = np.zeros_like(p.data)
    opt.step(0.1)
    np.testing.assert_array_equal(p.data, before)
    np.testing.assert_array_equal(opt.momentum_buffers[0], 0)


def test_lars_scalar_hand_computation():
    p = Parameter(np.array([2.0]), "w")
    opt = LARS([p], momentum=0.0, weight_decay=0.0, trust_coefficient=1.0, eps=0.0)
    p.grad = np.array([1.0])
    lr = 0.1
    opt.step(lr)
    # local lr = lr * |w| / |g| = 2 lr; w <- 2 - 2 lr * g
    assert p.data[0] == pytest.approx(2.0 - 2.0 * lr, abs=1e-15)


def test_lars_reduces_to_sgd_when_ratio_is_one(rng):
    w = rng.normal(size=(4,))
    g = rng.normal(size=(4,))
    trust = (np.linalg.norm(g) + 1e-8) / np.linalg.norm(w)
    p = Parameter(w.copy(), "w")
    opt = LARS([p], momentum=0.0, weight_decay=0.0, trust_coefficient=trust)
    p.grad = g.copy()
    assert opt.trust_ratio(p.data, g) == pytest.approx(1.0, abs=1e-12)
    opt.step(0.05)
    np.testing.assert_allclose(p.data, w - 0.05 * g, atol=1e-12)


def test_lars_zero_norm_weight_uses_ratio_one():
    p = Parameter(np.zeros(3), "b")
    opt = LARS([p], momentum=0.0, weight_decay=0.0)
    p.grad = np.array([1.0, 2.0, 3.0])
    opt.step(0.5)
    np.testing.assert_allclose(p.data, [-0.5, -1.0, -1.5])


def test_lars_nan_gradient_raises():
    p = Parameter(np.ones(2), "w")
    p.grad = np.array([np.nan, 0.0])
    with pytest.raises(TrainingError):
        LARS([p]).step(0.1)


def test_adam_zero_grad_unchanged(rng):
    p = Parameter(rng.normal(size=5), "w")
    before = p.data.copy()
    p.grad = np.zeros(5)
    Adam([p]).step(1e-3)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_is_sign(rng):
    w = rng.normal(size=6)
    g = rng.normal(size=6)
    p = Parameter(w.copy(), "w")
    p.grad = g
    Adam([p]).step(3e-4)
    # bias correction: m_hat / sqrt(v_hat) = g / |g|
    np.testing.assert_allclose(p.data - w, -3e-4 * np.sign(g), rtol=1e-6)


def test_adam_deterministic(rng):
    g = rng.normal(size=(10, 4))

    def run():
        p = Parameter(np.ones(4), "w")
        opt = Adam([p])
        for row in g:
            p.grad = row.copy()
            opt.step(0.01)
        return p.data

    np.testing.assert_array_equal(run(), run())


# -- schedule ------------------------------------------------------------

def test_schedule_endpoints():
    assert lr_at(0) == 0.01
    assert lr_at(10) == 0.25
    assert lr_at(100) == 0.05


def test_schedule_midpoint_of_cosine():
    expected = 0.05 + (0.25 - 0.05) * (1 + math.cos(math.pi * 45 / 90)) / 2
    assert lr_at(55) == pytest.approx(expected, abs=1e-15)
    assert lr_at(55) == pytest.approx(0.15, abs=1e-12)


def test_schedule_linear_ramp_and_monotone_decay():
    vals = [lr_at(e) for e in range(101)]
    ramp = np.diff(vals[:11])
    assert np.all(ramp > 0) and np.allclose(ramp, 0.024)
    assert np.all(np.diff(vals[10:]) < 0)


def test_schedule_out_of_range():
    with pytest.raises(ValueError):
        lr_at(-1)
    with pytest.raises(ValueError):
        lr_at(101)


def test_schedule_custom_span():
    s = ScheduleConfig(ramp_epochs=1, total_epochs=4)
    assert lr_at(0, s) == 0.01 and lr_at(1, s) == 0.25 and lr_at(4, s) == 0.05


# -- checkpoint ----------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b": np.arange(5, dtype=np.float32)}
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, {"epoch": 3, "name": "t"})
    got, meta = load_checkpoint(path)
    assert meta == {"epoch": 3, "name": "t"}
    for k in tensors:
        np.testing.assert_array_equal(got[k], tensors[k])


def test_checkpoint_layout_is_manifest_then_le_float32(tmp_path):
    import json
    import struct

    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"w": np.array([1.5, -2.0], np.float32)}, {})
    raw = path.read_bytes()
    magic, version, mlen = struct.unpack("<4sIQ", raw[:16])
    assert magic == b"CCKP" and version == 1
    manifest = json.loads(raw[16 : 16 + mlen])
    entry = manifest["tensors"][0]
    assert entry["dtype"] == "float32" and entry["offset"] == 0 and entry["nbytes"] == 8
    assert struct.unpack("<2f", raw[16 + mlen :]) == (1.5, -2.0)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
