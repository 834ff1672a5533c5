import numpy as np
import pytest

from _helpers import random_spd, random_sym
from manifold_dwi import NotOnManifoldError
from manifold_dwi.spectral import (
    exp_id_backward,
    exp_id_forward,
    fd_gradcheck,
    log_id_backward,
    log_id_forward,
    random_gradcheck,
    spectral_forward,
)


def test_trace_log_gradient_is_inverse():
    a, b, c = 2.0, 0.5, 3.0
    _, ctx = log_id_forward(np.diag([a, b, c]))
    g = log_id_backward(ctx, np.eye(3))
    assert np.allclose(g, np.diag([1 / a, 1 / b, 1 / c]), atol=1e-14)


def test_trace_exp_gradient_is_exp():
    a, b, c = 0.3, -1.0, 2.0
    _, ctx = exp_id_forward(np.diag([a, b, c]))
    g = exp_id_backward(ctx, np.eye(3))
    assert np.allclose(g, np.diag(np.exp([a, b, c])), atol=1e-14)


def test_trace_log_gradient_rotated(rng):
    p = random_spd(rng, 50)
    _, ctx = log_id_forward(p)
    g = log_id_backward(ctx, np.broadcast_to(np.eye(3), p.shape))
    assert np.allclose(g, np.linalg.inv(p), atol=1e-10)


def test_zero_upstream(rng):
    p = random_spd(rng, 5)
    _, ctx = log_id_forward(p)
    assert np.array_equal(log_id_backward(ctx, np.zeros_like(p)), np.zeros_like(p))
    _, ctx = exp_id_forward(random_sym(rng, 5))
    assert np.array_equal(exp_id_backward(ctx, np.zeros((5, 3, 3))), np.zeros((5, 3, 3)))


def test_gradients_are_symmetric(rng):
    _, ctx = exp_id_forward(random_sym(rng, 20))
    g = exp_id_backward(ctx, rng.normal(size=(20, 3, 3)))
    assert np.allclose(g, np.swapaxes(g, 1, 2))


def test_composite_passes_upstream_through(rng):
    s = random_sym(rng, 50)
    p, ctx_e = exp_id_forward(s)
    _, ctx_l = log_id_forward(p)
    up = random_sym(rng, 50)
    g = exp_id_backward(ctx_e, log_id_backward(ctx_l, up))
    assert np.max(np.abs(g - up)) < 1e-6


def _fd_component_grad(kind, m, W, h=1e-6):
    f = np.log if kind == "log" else np.exp

    def loss(x):
        lam, U = np.linalg.eigh(x)
        return float((W * ((U * f(lam)) @ U.T)).sum())

    g = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            E = np.zeros((3, 3))
            E[i, j] = 1.0
            g[i, j] = (loss(m + h * E) - loss(m - h * E)) / (2 * h)
    return 0.5 * (g + g.T)


def test_degenerate_uses_derivative_limit(rng):
    # exactly repeated eigenvalue: compare with finite differences of a LAPACK oracle
    W = random_sym(rng, 1)[0]
    for kind, m in (("log", np.diag([2.0, 2.0, 0.5])), ("exp", np.diag([1.0, 1.0, 1.0]))):
        _, ctx = spectral_forward(m, kind)
        assert ctx.degenerate.any()
        g = log_id_backward(ctx, W) if kind == "log" else exp_id_backward(ctx, W)
        assert np.allclose(g, _fd_component_grad(kind, m, W), atol=1e-6)


def test_harness_reports_and_skips(rng):
    m = random_spd(rng, 1)[0]
    W = random_sym(rng, 1)[0]
    res = fd_gradcheck("log", m, W)
    assert res.status == "ok" and res.max_rel_error < 1e-5
    res = fd_gradcheck("log", np.eye(3), W)
    assert res.status == "skipped" and res.min_gap == 0.0


def test_random_gradcheck_passes():
    rep = random_gradcheck(n_trials=100, seed=0)
    for tag in ("log", "exp"):
        n_checked, _, worst = rep[tag]
        assert n_checked == 100
        assert worst < 1e-5


def test_forward_errors():
    with pytest.raises(NotOnManifoldError):
        log_id_forward(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError, match="unknown spectral map"):
        spectral_forward(np.eye(3), "sqrt")
    with pytest.raises(ValueError, match="context"):
        log_id_backward(None, np.eye(3))
    _, ctx = exp_id_forward(np.eye(3))
    with pytest.raises(ValueError):
        log_id_backward(ctx, np.eye(3))
    with pytest.raises(ValueError, match="non-finite"):
        exp_id_backward(ctx, np.full((3, 3), np.inf))
