import numpy as np
import pytest

from manifold_dwi.synth.nn import (
    Adam,
    Conv3d,
    Hardtanh,
    PatchDiscriminator,
    Sigmoid,
    TangentBall,
    UNet3,
    add_grads,
    leaky_relu,
    leaky_relu_backward,
    pool2,
    pool2_backward,
    spread_input_kinks,
    up2,
    up2_backward,
)

F64 = np.float64


def _fd_check(fun, x, grad, rng, n_probe=12, h=1e-6, rtol=1e-5, atol=1e-8):
    """Compare ``grad`` with central differences of scalar ``fun`` at probed entries of ``x``."""
    flat = x.reshape(-1)
    for idx in rng.choice(flat.size, size=min(n_probe, flat.size), replace=False):
        old = flat[idx]
        flat[idx] = old + h
        fp = fun()
        flat[idx] = old - h
        fm = fun()
        flat[idx] = old
        num = (fp - fm) / (2 * h)
        assert grad.reshape(-1)[idx] == pytest.approx(num, rel=rtol, abs=atol)


@pytest.mark.parametrize("k", [1, 3])
def test_conv3d_gradients(k, rng):
    conv = Conv3d(2, 3, k=k, rng=0, dtype=F64)
    conv.params["b"][:] = rng.standard_normal(3)
    x = rng.standard_normal((2, 4, 4, 4, 2))
    R = rng.standard_normal((2, 4, 4, 4, 3))

    def loss():
        return float((conv.forward(x)[0] * R).sum())

    out, cache = conv.forward(x)
    dx, grads = conv.backward(cache, R)
    _fd_check(loss, x, dx, rng)
    for name in ("W", "b"):
        _fd_check(loss, conv.params[name], grads[name], rng)


def test_conv3d_matches_direct_sum(rng):
    conv = Conv3d(1, 1, k=3, rng=1, dtype=F64)
    x = rng.standard_normal((1, 5, 5, 5, 1))
    out, _ = conv.forward(x)
    W = conv.params["W"].reshape(3, 3, 3)
    xp = np.pad(x[0, ..., 0], 1)
    i, j, l = 2, 0, 4
    direct = float((xp[i : i + 3, j : j + 3, l : l + 3] * W).sum())
    assert out[0, i, j, l, 0] == pytest.approx(direct, rel=1e-12)


def test_conv3d_rejects_even_kernel():
    with pytest.raises(ValueError):
        Conv3d(1, 1, k=2)


def test_conv3d_backward_needs_training_cache(rng):
    conv = Conv3d(1, 1, k=3, rng=0)
    out, cache = conv.forward(rng.standard_normal((1, 2, 2, 2, 1)), train=False)
    with pytest.raises(RuntimeError):
        conv.backward(cache, out)


def test_elementwise_layer_gradients(rng):
    z = rng.standard_normal((3, 7)) * 3.0
    z[np.abs(z) < 1e-3] = 0.5  # keep away from the leaky-relu kink
    z[np.abs(np.abs(z) - 2.0) < 1e-3] = 1.0  # and the hardtanh corners
    R = rng.standard_normal(z.shape)
    ht, sg = Hardtanh(2.0), Sigmoid()
    checks = [
        (lambda: float((leaky_relu(z)[0] * R).sum()), leaky_relu_backward(z, R)),
        (lambda: float((ht.forward(z)[0] * R).sum()), ht.backward(ht.forward(z)[1], R)),
        (lambda: float((sg.forward(z)[0] * R).sum()), sg.backward(sg.forward(z)[1], R)),
    ]
    for fun, grad in checks:
        _fd_check(fun, z, grad, rng, n_probe=21)


def test_sigmoid_is_stable_for_large_inputs():
    s, _ = Sigmoid().forward(np.array([-1e4, 0.0, 1e4]))
    assert np.allclose(s, [0.0, 0.5, 1.0])


@pytest.mark.parametrize("scale", [1e-6, 1e-3, 0.5, 10.0])
def test_tangent_ball_gradient_and_bound(scale, rng):
    tb = TangentBall(np.pi / 2)
    z = rng.standard_normal((5, 15)) * scale
    out, cache = tb.forward(z)
    assert np.all(out[..., 0] == 0.0)
    assert np.all(np.linalg.norm(out, axis=-1) <= np.pi / 2 * (1 + 1e-12))
    R = rng.standard_normal(z.shape)
    grad = tb.backward(cache, R)

    def loss():
        return float((tb.forward(z)[0] * R).sum())

    _fd_check(loss, z, grad, rng, n_probe=20, h=min(1e-6, scale * 1e-3), rtol=1e-4, atol=1e-7)


def test_pool_and_upsample_are_adjoint(rng):
    a = rng.standard_normal((2, 4, 4, 4, 3))
    b = rng.standard_normal((2, 2, 2, 2, 3))
    assert float((pool2(a) * b).sum()) == pytest.approx(float((a * pool2_backward(b)).sum()))
    assert float((up2(b) * a).sum()) == pytest.approx(float((b * up2_backward(a)).sum()))


def _net_check(net, x, rng, n_param_probe=4):
    out, tape = net.forward(x)
    R = rng.standard_normal(np.shape(out))

    def loss():
        return float((net.forward(x)[0] * R).sum())

    dx, grads = net.backward(tape, R)
    _fd_check(loss, x, dx, rng, n_probe=8)
    params = net.parameters()
    assert set(grads) == set(params)
    for name, p in params.items():
        _fd_check(loss, p, grads[name], rng, n_probe=n_param_probe)


@pytest.mark.parametrize("head", ["hardtanh", "sigmoid", "tangent_ball", "linear"])
def test_unet_gradients(head, rng):
    net = UNet3(2, 4, widths=(3, 4, 5), head=head, head_bound=1.5, rng=0, dtype=F64)
    _net_check(net, rng.standard_normal((1, 4, 4, 4, 2)) * 0.5, rng)


def test_discriminator_gradients(rng):
    net = PatchDiscriminator(3, widths=(3, 4), rng=0, dtype=F64)
    _net_check(net, rng.standard_normal((2, 4, 4, 4, 3)), rng)


def test_parameter_counts():
    net = UNet3(1, 6)
    assert net.n_parameters() == sum(v.size for v in net.parameters().values())
    assert 1e4 <= net.n_parameters() <= 1e5


def test_spread_input_kinks_places_switch_points(rng):
    conv = Conv3d(1, 4, k=3, rng=0, dtype=F64)
    sample = np.linspace(0.0, 1.0, 11)[:, None]
    spread_input_kinks(conv, sample)
    wsum = conv.params["W"].sum(axis=0)
    # on a uniform region at level v, unit c switches where wsum_c * v + b_c == 0
    levels = -conv.params["b"] / wsum
    proj_lo = np.minimum(0.0, wsum)
    proj_hi = np.maximum(0.0, wsum)
    frac = (levels * wsum - proj_lo) / (proj_hi - proj_lo)
    assert np.allclose(frac, (np.arange(4) + 0.5) / 4)


def test_adam_matches_reference_update(rng):
    p = {"w": rng.standard_normal(5)}
    w0 = p["w"].copy()
    opt = Adam(p, lr=1e-2, betas=(0.5, 0.999), eps=1e-8)
    g1, g2 = rng.standard_normal(5), rng.standard_normal(5)
    opt.step({"w": g1})
    opt.step({"w": g2})
    m = 0.5 * (0.5 * g1) + 0.5 * g2
    v = 0.999 * (0.001 * g1**2) + 0.001 * g2**2
    w1 = w0 - 1e-2 * (0.5 * g1 / 0.5) / (np.sqrt(0.001 * g1**2 / 0.001) + 1e-8)
    expected = w1 - 1e-2 * (m / (1 - 0.25)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert np.allclose(p["w"], expected, rtol=1e-12)


def test_adam_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        Adam({"w": np.zeros(1)}, lr=0.0)


def test_add_grads():
    a = {"x": np.ones(2)}
    assert add_grads(None, a)["x"] is not None
    assert np.array_equal(add_grads(a, a)["x"], [2.0, 2.0])
