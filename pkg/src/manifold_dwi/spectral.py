"""Backward passes for the matrix log and exp of symmetric 3x3 matrices.

The gradient of a scalar loss ``L`` with respect to the input ``M`` of a
spectral map ``f(M) = U f(S) U^T`` is assembled from the partials

    dL/dU = 2 sym(G) U f(S)
    dL/dS = f'(S) U^T sym(G) U

where ``G = dL/df(M)`` is the upstream gradient, through

    dL/dM = U (sym(K^T o (U^T dL/dU)) + diag(dL/dS)) U^T,

with ``K[i, j] = 1 / (s_i - s_j)`` off the diagonal and ``o`` the Hadamard
product. For near-equal eigenvalues the divided difference ``K`` is
replaced by its limit ``f'(s)``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_finite, check_sym_matrices
from .spd import SPD_FLOOR, EigenDecomp3, NotOnManifoldError, eig_sym3

GAP_EPS = 1e-6

_MAPS = {
    "log": (np.log, lambda s: 1.0 / s),
    "exp": (np.exp, np.exp),
}


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class SpectralContext:
    """What the backward pass needs from the forward evaluation.

    ``K`` holds ``1 / (s_i - s_j)`` off the diagonal, zero on the diagonal
    and at degenerate pairs (those use the derivative limit instead).
    """

    kind: str
    eigenvalues: np.ndarray  # (..., 3)
    eigenvectors: np.ndarray  # (..., 3, 3)
    K: np.ndarray  # (..., 3, 3)
    degenerate: np.ndarray  # (..., 3, 3) bool, off-diagonal pairs below the gap threshold


def _context(kind, e):
    s = e.eigenvalues
    diff = s[..., :, None] - s[..., None, :]
    scale = np.maximum(np.abs(s).max(axis=-1), 1e-300)[..., None, None]
    off = ~np.eye(3, dtype=bool)
    degenerate = off & (np.abs(diff) < GAP_EPS * scale)
    K = np.zeros_like(diff)
    ok = off & ~degenerate
    K[ok] = 1.0 / diff[ok]
    return SpectralContext(kind, s, e.eigenvectors, K, degenerate)


def spectral_forward(m, kind, eig=None):
    """Evaluate ``log`` or ``exp`` of symmetric matrices, keeping a context.

    ``eig`` may carry an already computed :class:`EigenDecomp3` of ``m``.
    """
    if kind not in _MAPS:
        raise ValueError(f"unknown spectral map {kind!r}; expected 'log' or 'exp'")
    e = eig_sym3(m) if eig is None else eig
    if kind == "log" and np.any(e.eigenvalues[..., 2] <= SPD_FLOOR):
        raise NotOnManifoldError("tensor is not on the SPD manifold (lambda_3 <= floor)")
    f, _ = _MAPS[kind]
    U = e.eigenvectors
    out = sym((U * f(e.eigenvalues)[..., None, :]) @ np.swapaxes(U, -1, -2))
    return out, _context(kind, e)


def log_id_forward(p, eig=None):
    return spectral_forward(p, "log", eig)


def exp_id_forward(s):
    return spectral_forward(s, "exp")


def spectral_backward(ctx, upstream):
    """Gradient with respect to the input of the forward map.

    Parameters
    ----------
    ctx : SpectralContext
    upstream : array_like, shape (..., 3, 3)
        Gradient of the loss with respect to the map's output.
    """
    if ctx is None:
        raise ValueError("forward context missing; run the forward map first")
    upstream = check_finite(upstream, "upstream gradient")
    f, fprime = _MAPS[ctx.kind]
    U = ctx.eigenvectors
    Ut = np.swapaxes(U, -1, -2)
    s = ctx.eigenvalues
    G = sym(upstream)

    dU = 2.0 * (G @ U) * f(s)[..., None, :]
    G_hat = Ut @ G @ U
    dS = fprime(s) * np.diagonal(G_hat, axis1=-2, axis2=-1)

    inner = sym(np.swapaxes(ctx.K, -1, -2) * (Ut @ dU))
    if np.any(ctx.degenerate):
        mean = 0.5 * (s[..., :, None] + s[..., None, :])
        inner = np.where(ctx.degenerate, G_hat * fprime(mean), inner)
    idx = np.arange(3)
    inner[..., idx, idx] = dS
    return sym(U @ inner @ Ut)


def log_id_backward(ctx, upstream):
    if ctx is None or ctx.kind != "log":
        raise ValueError("log_id_backward needs a context from log_id_forward")
    return spectral_backward(ctx, upstream)


def exp_id_backward(ctx, upstream):
    if ctx is None or ctx.kind != "exp":
        raise ValueError("exp_id_backward needs a context from exp_id_forward")
    return spectral_backward(ctx, upstream)


@dataclass(frozen=True)
class GradCheckResult:
    status: str  # "ok" or "skipped"
    max_rel_error: float
    min_gap: float


_COMPONENTS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def fd_gradcheck(map_tag, m, loss_weights, step=1e-5, min_gap=1e-3):
    """Compare the analytic gradient with central finite differences.

    The loss is linear in the map output, ``L(M) = sum(W * f(M))``. Each of
    the six independent components of ``M`` is perturbed by ``+-step``
    (off-diagonal perturbations move both symmetric entries).

    Returns
    -------
    GradCheckResult
        ``max_rel_error`` is the max over components of
        ``|analytic - fd| / (|fd| + 1e-12)``. Inputs whose smallest
        eigenvalue gap is below ``min_gap`` are skipped, not checked.
    """
    m = check_sym_matrices(m)
    W = np.asarray(loss_weights, dtype=float)
    lam = eig_sym3(m).eigenvalues
    gap = float(min(lam[0] - lam[1], lam[1] - lam[2]))
    if gap <= min_gap:
        return GradCheckResult("skipped", float("nan"), gap)

    f, _ = _MAPS[map_tag]

    def loss(x):
        e = eig_sym3(x)
        U = e.eigenvectors
        return float((W * ((U * f(e.eigenvalues)) @ U.T)).sum())

    _, ctx = spectral_forward(m, map_tag)
    grad = spectral_backward(ctx, W)
    worst = 0.0
    for i, j in _COMPONENTS:
        E = np.zeros((3, 3))
        E[i, j] = E[j, i] = 1.0
        fd = (loss(m + step * E) - loss(m - step * E)) / (2.0 * step)
        analytic = grad[i, j] if i == j else grad[i, j] + grad[j, i]
        worst = max(worst, abs(analytic - fd) / (abs(fd) + 1e-12))
    return GradCheckResult("ok", worst, gap)


def random_gradcheck(n_trials=100, seed=0, step=1e-5, min_gap=1e-3):
    """Run :func:`fd_gradcheck` on random inputs for both maps.

    Draws whose eigengap is at most ``min_gap`` are rejected and replaced,
    so ``n_trials`` inputs are checked per map.

    Returns a dict ``{map_tag: (n_checked, n_rejected, max_rel_error)}``.
    """
    from scipy.stats import special_ortho_group

    rng = np.random.default_rng(seed)
    report = {}
    for tag in ("log", "exp"):
        checked, rejected, worst = 0, 0, 0.0
        while checked < n_trials:
            R = special_ortho_group.rvs(3, random_state=rng)
            if tag == "log":
                lam = rng.uniform(0.2, 3.0, 3)
            else:
                lam = rng.uniform(-2.0, 2.0, 3)
            m = (R * lam) @ R.T
            W = rng.normal(size=(3, 3))
            res = fd_gradcheck(tag, sym(m), sym(W), step=step, min_gap=min_gap)
            if res.status == "skipped":
                rejected += 1
                continue
            checked += 1
            worst = max(worst, res.max_rel_error)
        report[tag] = (checked, rejected, worst)
    return report


__all__ = [
    "EigenDecomp3",
    "GradCheckResult",
    "SpectralContext",
    "exp_id_backward",
    "exp_id_forward",
    "fd_gradcheck",
    "log_id_backward",
    "log_id_forward",
    "random_gradcheck",
    "spectral_backward",
    "spectral_forward",
]
