"""Log-Euclidean geometry of 3x3 symmetric positive definite tensors.

All functions are batched: matrices are arrays of shape ``(..., 3, 3)``.
"""

from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    DegenerateError,
    NotOnManifoldError,
    check_finite,
    check_sym_matrices,
    mat_to_sym6,
    sym6_to_mat,
)

SPD_FLOOR = 1e-12
GAP_RTOL = 1e-6
TIE_RTOL = 1e-9

_PAIRS = ((0, 1), (0, 2), (1, 2))


class EigenDecomp3(NamedTuple):
    """Eigenvalues in descending order and matching eigenvector columns."""

    eigenvalues: np.ndarray  # (..., 3)
    eigenvectors: np.ndarray  # (..., 3, 3), column k pairs with eigenvalues[..., k]


def _cross(a, b):
    return np.stack(
        [
            a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
        ],
        axis=-1,
    )


def _cross_eigvec(b, w):
    """Null vector of ``b - w I`` from the largest cross product of its rows."""
    r = b - w[:, None, None] * np.eye(3)
    cands = np.stack(
        [_cross(r[:, 0], r[:, 1]), _cross(r[:, 0], r[:, 2]), _cross(r[:, 1], r[:, 2])],
        axis=1,
    )
    norms = np.sqrt(np.einsum("nck,nck->nc", cands, cands))
    best = np.argmax(norms, axis=1)
    idx = np.arange(len(b))
    v = cands[idx, best]
    nv = norms[idx, best]
    with np.errstate(invalid="ignore", divide="ignore"):
        v = v / nv[:, None]
    return v, nv


def _cardano(b):
    """Closed-form (trigonometric) eigen-solve of scaled symmetric matrices.

    Returns eigenvalues (descending), eigenvectors and a mask of matrices
    whose eigenvalue gaps are too small for the cross-product vectors.
    """
    q = np.trace(b, axis1=1, axis2=2) / 3.0
    bb = b - q[:, None, None] * np.eye(3)
    p2 = (bb * bb).sum(axis=(1, 2))
    p = np.sqrt(p2 / 6.0)
    flat = p <= 1e-300
    p_safe = np.where(flat, 1.0, p)
    r = np.linalg.det(bb / p_safe[:, None, None]) / 2.0
    phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
    w1 = q + 2.0 * p * np.cos(phi)
    w3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    w2 = 3.0 * q - w1 - w3
    w = np.stack([w1, w2, w3], axis=1)

    mag = np.maximum(np.abs(w).max(axis=1), 1e-300)
    degenerate = flat | ((w1 - w2) < GAP_RTOL * mag) | ((w2 - w3) < GAP_RTOL * mag)

    u1, n1 = _cross_eigvec(b, w1)
    u3, n3 = _cross_eigvec(b, w3)
    # re-orthogonalize so the Jacobi polish below is a true similarity
    u3 = u3 - (u3 * u1).sum(axis=-1, keepdims=True) * u1
    u3 /= np.linalg.norm(u3, axis=-1, keepdims=True) + 1e-300
    u2 = _cross(u3, u1)
    u2 /= np.linalg.norm(u2, axis=-1, keepdims=True) + 1e-300
    U = np.stack([u1, u2, u3], axis=2)
    bad = degenerate | ~np.isfinite(U).all(axis=(1, 2)) | (n1 <= 1e-300) | (n3 <= 1e-300)
    U[bad] = np.eye(3)
    return w, U, bad


def _jacobi(A, V, max_sweeps, tol):
    """Cyclic Jacobi sweeps on a stack of symmetric matrices, in place."""
    active = np.arange(len(A))
    for _ in range(max_sweeps):
        a = A[active]
        off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
        scale = (a * a).sum(axis=(1, 2))
        keep = off > (tol * tol) * scale
        active = active[keep]
        if active.size == 0:
            break
        a = A[active]
        v = V[active]
        for p, q in _PAIRS:
            apq = a[:, p, q]
            nz = apq != 0.0
            safe = np.where(nz, apq, 1.0)
            theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(nz, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.zeros_like(a)
            J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
            J[:, p, p] = c
            J[:, q, q] = c
            J[:, p, q] = s
            J[:, q, p] = -s
            a = np.swapaxes(J, 1, 2) @ a @ J
            a[:, p, q] = a[:, q, p] = 0.0
            v = v @ J
        A[active] = a
        V[active] = v
    return A, V


def _sign_normalize(U, tol=1e-12):
    """Flip eigenvector columns so their first non-negligible entry is >= 0."""
    nonzero = np.abs(U) > tol
    first = np.argmax(nonzero, axis=-2)  # (..., 3) row index per column
    lead = np.take_along_axis(U, first[..., None, :], axis=-2)[..., 0, :]
    sign = np.where(lead < 0, -1.0, 1.0)
    return U * sign[..., None, :]


def eig_sym3(m):
    """Eigendecomposition of symmetric 3x3 matrices.

    Closed-form trigonometric eigenvalues with cross-product eigenvectors,
    polished by Jacobi sweeps; matrices with near-equal eigenvalues
    (gap below ``1e-6 * |lambda_1|``) go through plain cyclic Jacobi.

    Parameters
    ----------
    m : array_like, shape (..., 3, 3)
        Finite symmetric matrices.

    Returns
    -------
    EigenDecomp3
        Descending eigenvalues and sign-normalized eigenvectors (columns).
    """
    m = check_sym_matrices(m)
    batch = m.shape[:-2]
    a = m.reshape(-1, 3, 3)
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    scale = np.abs(a).max(axis=(1, 2))
    scale = np.where(scale > 0, scale, 1.0)
    b = a / scale[:, None, None]

    _, U, _ = _cardano(b)
    A = np.swapaxes(U, 1, 2) @ b @ U
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    A, U = _jacobi(A, U, max_sweeps=30, tol=1e-15)

    w = np.diagonal(A, axis1=1, axis2=2) * scale[:, None]
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    U = np.take_along_axis(U, order[:, None, :], axis=2)
    U = _sign_normalize(U)
    return EigenDecomp3(w.reshape(batch + (3,)), U.reshape(batch + (3, 3)))


def _spectral_apply(e, f):
    U = e.eigenvectors
    out = (U * f(e.eigenvalues)[..., None, :]) @ np.swapaxes(U, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def is_spd(m, floor=SPD_FLOOR):
    """Strict SPD check: smallest eigenvalue above ``floor``."""
    return eig_sym3(m).eigenvalues[..., 2] > floor


def log_id(p, lenient=False, floor=SPD_FLOOR):
    """Matrix logarithm of SPD tensors (log map at the identity).

    Parameters
    ----------
    p : array_like, shape (..., 3, 3)
        SPD tensors.
    lenient : bool, default=False
        Clamp eigenvalues at or below ``floor`` to ``floor`` instead of
        raising. Meant for noisy real-world fits.
    floor : float
        Smallest eigenvalue accepted as positive.

    Raises
    ------
    NotOnManifoldError
        If any tensor has an eigenvalue ``<= floor`` and ``lenient`` is off.
    """
    e = eig_sym3(p)
    lam = e.eigenvalues
    if np.any(lam[..., 2] <= floor):
        if not lenient:
            raise NotOnManifoldError("tensor is not on the SPD manifold (lambda_3 <= floor)")
        lam = np.maximum(lam, floor)
    return _spectral_apply(EigenDecomp3(lam, e.eigenvectors), np.log)


def exp_id(s):
    """Matrix exponential of symmetric matrices (exp map at the identity).

    The output is SPD for every finite input.
    """
    return _spectral_apply(eig_sym3(s), np.exp)


def geodesic_spd(p1, p2):
    """Log-Euclidean distance ``||log(P1) - log(P2)||_F``."""
    d = log_id(p1) - log_id(p2)
    return np.sqrt((d * d).sum(axis=(-2, -1)))


def _eigenvalues(e):
    if isinstance(e, EigenDecomp3):
        return np.asarray(e.eigenvalues, dtype=float)
    return check_finite(e, "eigenvalues")


def fa(e):
    """Fractional anisotropy from eigenvalues.

    Accepts an :class:`EigenDecomp3` or an array of eigenvalues with the
    three values in the last axis.
    """
    lam = _eigenvalues(e)
    if np.any(lam < 0):
        raise NotOnManifoldError("fractional anisotropy needs nonnegative eigenvalues")
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    den = l1 * l1 + l2 * l2 + l3 * l3
    if np.any(den == 0):
        raise DegenerateError("degenerate tensor: all eigenvalues are zero")
    num = (l1 - l2) ** 2 + (l2 - l3) ** 2 + (l1 - l3) ** 2
    return np.sqrt(0.5 * num / den)


def fa_from_log(s):
    """FA of ``exp(s)`` without forming the exponential."""
    return fa(np.exp(eig_sym3(s).eigenvalues))


def principal_direction_field(e, rtol=TIE_RTOL):
    """Principal eigenvectors and a mask of voxels where they are defined."""
    lam = e.eigenvalues
    valid = (lam[..., 0] - lam[..., 1]) > rtol * np.abs(lam[..., 0])
    return e.eigenvectors[..., :, 0], valid


def principal_direction(e, rtol=TIE_RTOL):
    """Unit eigenvector of the largest eigenvalue.

    Raises
    ------
    DegenerateError
        If the two leading eigenvalues are tied within ``rtol * lambda_1``.
    """
    d, valid = principal_direction_field(e, rtol)
    if not np.all(valid):
        raise DegenerateError("ill-defined direction: leading eigenvalue is degenerate")
    return d


class LogEuclideanTensorTransformer(TransformerMixin, BaseEstimator):
    """Map tensors in 6-component form to and from the log domain.

    Parameters
    ----------
    lenient : bool, default=False
        Clamp non-positive eigenvalues instead of raising in ``transform``.
    """

    def __init__(self, lenient=False):
        self.lenient = lenient

    def fit(self, X, y=None):
        X = check_finite(X, "X")
        if X.ndim != 2 or X.shape[1] != 6:
            raise ValueError(f"X must have shape (n_samples, 6), got {X.shape}")
        self.n_features_in_ = 6
        return self

    def transform(self, X):
        check_is_fitted(self)
        return mat_to_sym6(log_id(sym6_to_mat(check_finite(X, "X")), lenient=self.lenient))

    def inverse_transform(self, X):
        check_is_fitted(self)
        return mat_to_sym6(exp_id(sym6_to_mat(check_finite(X, "X"))))
