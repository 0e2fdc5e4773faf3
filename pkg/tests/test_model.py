import numpy as np
import pytest

from contra_cluster.model import ConditionalDecoder, ContrastiveAutoencoder, Decoder, Encoder, Projector
from contra_cluster.nncore import Adam, ops
from contra_cluster.nncore.tensor import Tensor

# hand counts: conv weights C_out*C_in*16 + C_out, linear out*in + out
ENCODER_PARAMS = (32 * 1 * 16 + 32) + (64 * 32 * 16 + 64) + (128 * 64 * 16 + 128) + (128 * 128 + 128)
PROJECTOR_PARAMS = 2 * (128 * 128 + 128) + (64 * 128 + 64)
DECODER_PARAMS = (1152 * 128 + 1152) + (128 * 64 * 16 + 64) + (64 * 32 * 16 + 32) + (32 * 1 * 16 + 1)


@pytest.fixture(scope="module")
def net():
    return ContrastiveAutoencoder(np.random.default_rng(0))


def test_parameter_counts(net):
    assert ENCODER_PARAMS == 181088
    assert PROJECTOR_PARAMS == 41280
    assert DECODER_PARAMS == 313057
    assert net.encoder.num_parameters() == ENCODER_PARAMS
    assert net.projector.num_parameters() == PROJECTOR_PARAMS
    assert net.decoder.num_parameters() == DECODER_PARAMS
    cond = ConditionalDecoder(net.decoder, 7, np.random.default_rng(1))
    assert cond.cond.num_parameters() == (128 + 7) * 128 + 128


def test_encoder_shapes_and_zero_input(net):
    x = np.zeros((2, 1, 28, 28), np.float32)
    h = net.encoder(x)
    assert h.shape == (2, 128) and np.all(np.isfinite(h.data))
    t = Tensor(x)
    for conv, size in zip(net.encoder.convs, (14, 7, 3)):
        t = conv(t)
        assert t.shape[-2:] == (size, size)
    assert ops.avgpool2d(t).shape[-2:] == (1, 1)


def test_encoder_rejects_wrong_shape(net):
    with pytest.raises(ops.ShapeError):
        net.encoder(np.zeros((2, 1, 32, 32), np.float32))


def test_encoder_batch_independence(net):
    x = np.random.default_rng(3).uniform(size=(8, 1, 28, 28)).astype(np.float32)
    full = net.encoder(x).data
    single = net.encoder(x[5:6]).data
    assert np.max(np.abs(full[5] - single[0])) < 1e-6
    perm = np.random.default_rng(4).permutation(8)
    np.testing.assert_allclose(net.encoder(x[perm]).data, full[perm], atol=1e-6)


def test_encoder_deterministic(net):
    x = np.random.default_rng(5).uniform(size=(4, 1, 28, 28)).astype(np.float32)
    np.testing.assert_array_equal(net.encoder(x).data, net.encoder(x).data)


def test_projector_zero_path():
    p = Projector(np.random.default_rng(0))
    for layer in p.layers:
        layer.bias.data[:] = 0
    assert np.all(p(np.zeros((3, 128), np.float32)).data == 0)


def test_projector_identity_wiring():
    p = Projector(np.random.default_rng(0))
    for layer in p.layers:
        layer.weight.data[:] = np.eye(*layer.weight.shape)
        layer.bias.data[:] = 0
    h = np.abs(np.random.default_rng(1).normal(size=(2, 128))) + 5.0
    z = p(h).data
    # GELU(x) ~ x for large positive x
    np.testing.assert_allclose(z, h[:, :64], rtol=1e-5)


def test_gradient_reaches_encoder(net):
    x = np.random.default_rng(6).uniform(size=(2, 1, 28, 28)).astype(np.float32)
    net.zero_grad()
    z = net.projector(net.encoder(x))
    (z * z).sum().backward()
    for name, p in net.encoder.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name
    net.zero_grad()


def test_projector_grad_spot_check():
    # finite-difference check of one encoder weight through encoder+projector, in float64
    rng = np.random.default_rng(7)
    enc = Encoder(rng).astype(np.float64)
    proj = Projector(rng).astype(np.float64)
    x = rng.uniform(size=(2, 1, 28, 28))
    r = rng.normal(size=(2, 64))

    def f():
        return float(np.sum(proj(enc(x)).data * r))

    loss = (proj(enc(x)) * Tensor(r)).sum()
    loss.backward()
    w = enc.convs[0].weight
    for idx in [(0, 0, 0, 0), (5, 0, 2, 1), (31, 0, 3, 3)]:
        orig = w.data[idx]
        w.data[idx] = orig + 1e-6
        fp = f()
        w.data[idx] = orig - 1e-6
        fm = f()
        w.data[idx] = orig
        num = (fp - fm) / 2e-6
        assert abs(num - w.grad[idx]) <= 1e-4 * max(1.0, abs(num))


def test_decoder_range_and_shape(net):
    h = np.random.default_rng(8).normal(scale=5.0, size=(3, 128)).astype(np.float32)
    y = net.decoder(h).data
    assert y.shape == (3, 1, 28, 28)
    assert np.all(y > 0) and np.all(y < 1)


def test_decoder_zero_weights_gives_half():
    d = Decoder(np.random.default_rng(0))
    for _, p in d.named_parameters():
        p.data[:] = 0
    np.testing.assert_array_equal(d(np.zeros((2, 128), np.float32)).data, 0.5)


def test_conditional_decoder_starts_as_trunk_on_zero_block(net):
    cond = ConditionalDecoder(net.decoder, 4, np.random.default_rng(0))
    cond.cond.weight.data[:, 128:] = 0
    h = np.random.default_rng(1).normal(size=(2, 128)).astype(np.float32)
    c = np.full((2, 4), 0.25, np.float32)
    np.testing.assert_allclose(cond(h, c).data, net.decoder(h).data, atol=1e-6)


def test_conditional_decoder_simplex_errors(net):
    cond = ConditionalDecoder(net.decoder, 3, np.random.default_rng(0))
    h = np.zeros((2, 128), np.float32)
    with pytest.raises(ValueError):
        cond(h, np.array([[0.5, 0.5, 0.5], [1, 0, 0]], np.float32))
    with pytest.raises(ValueError):
        cond(h, np.array([[1.5, -0.5, 0.0], [1, 0, 0]], np.float32))
    with pytest.raises(ops.ShapeError):
        cond(h, np.ones((2, 4), np.float32) / 4)
    with pytest.raises(ValueError):
        ConditionalDecoder(net.decoder, 1, np.random.default_rng(0))


def test_conditioning_changes_output_after_a_step():
    rng = np.random.default_rng(9)
    net = ContrastiveAutoencoder(rng)
    cond = net.attach_conditional(3, rng)
    h = rng.normal(size=(4, 128)).astype(np.float32)
    target = rng.uniform(size=(4, 1, 28, 28)).astype(np.float32)
    onehot = np.eye(3, dtype=np.float32)[[0, 1, 2, 0]]
    opt = Adam(cond.cond.parameters())
    d = cond(h, onehot) - Tensor(target)
    ops.mean(d * d).backward()
    opt.step(1e-2)
    uniform = np.full((4, 3), 1 / 3, np.float32)
    a, b = cond(h, onehot).data, cond(h, uniform).data
    assert np.max(np.abs(a - b)) > 0
    assert np.all((a > 0) & (a < 1))


def test_named_parameter_prefixes():
    net = ContrastiveAutoencoder(np.random.default_rng(0))
    net.attach_conditional(5, np.random.default_rng(1))
    names = [n for n, _ in net.named_parameters()]
    assert len(names) == len(set(names))
    assert {n.split(".")[0] for n in names} == {"encoder", "projector", "decoder", "cond"}
