"""Square-root ODFs as points on the unit sphere of SH coefficients.

A square-root ODF is ``psi(s) = sum_i c_i B_i(s)`` with a real, even-order
spherical-harmonic basis; ``p(s) = psi(s)**2`` is the ODF. Unit-norm ``c``
gives a density that integrates to one. The reference point of the log/exp
maps is the uniform ODF ``u = (1, 0, ..., 0)``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull, SphericalVoronoi
from scipy.special import sph_harm_y
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import NotOnManifoldError, check_finite, check_random_state

UNIT_NORM_TOL = 1e-8
NEGATIVITY_TOL = -1e-6


# --------------------------------------------------------------------------
# sphere grids


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _subdivide(vertices, faces):
    verts = list(vertices)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(verts), np.array(out)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Discretized unit sphere with a neighbor graph and quadrature weights.

    Attributes
    ----------
    vertices : ndarray, shape (N, 3)
        Unit directions, closed under negation.
    weights : ndarray, shape (N,)
        Spherical Voronoi cell areas, nudged (minimum-norm correction) so
        the rule integrates even harmonics up to ``quadrature_order``
        exactly. They sum to 4 pi.
    indptr, indices : ndarray
        Neighbor lists in compressed sparse row form.
    """

    vertices: np.ndarray
    weights: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_vertices(cls, vertices, quadrature_order=8):
        vertices = np.asarray(vertices, dtype=float)
        vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
        weights = SphericalVoronoi(vertices).calculate_areas()
        if quadrature_order:
            A = real_sh(quadrature_order, vertices).T
            target = np.zeros(len(A))
            target[0] = np.sqrt(4.0 * np.pi)
            weights = weights + A.T @ np.linalg.solve(A @ A.T, target - A @ weights)
        hull = ConvexHull(vertices)
        n = len(vertices)
        nbrs = [set() for _ in range(n)]
        for a, b, c in hull.simplices:
            nbrs[a].update((b, c))
            nbrs[b].update((a, c))
            nbrs[c].update((a, b))
        indptr = np.zeros(n + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(s) for s in nbrs])
        indices = np.concatenate([np.array(sorted(s), dtype=np.int64) for s in nbrs])
        return cls(vertices, weights, indptr, indices)

    @classmethod
    def icosahedron(cls, subdivisions=3):
        """Subdivided icosahedron; 3 subdivisions give 642 vertices."""
        v = _icosahedron()
        faces = ConvexHull(v).simplices
        for _ in range(subdivisions):
            v, faces = _subdivide(v, faces)
        return cls.from_vertices(v)

    @classmethod
    def repulsion(cls, n_points=724, n_iter=200, random_state=0):
        """Antipodally symmetric grid relaxed by electrostatic repulsion."""
        if n_points % 2:
            raise ValueError("n_points must be even for an antipodal grid")
        rng = check_random_state(random_state)
        half = rng.normal(size=(n_points // 2, 3))
        half /= np.linalg.norm(half, axis=1, keepdims=True)
        step = 0.5 / np.sqrt(n_points)
        for _ in range(n_iter):
            pts = np.concatenate([half, -half])
            diff = half[:, None, :] - pts[None, :, :]
            d2 = (diff * diff).sum(-1)
            np.fill_diagonal(d2[:, : len(half)], np.inf)
            force = (diff / d2[..., None] ** 1.5).sum(axis=1)
            force -= (force * half).sum(1, keepdims=True) * half
            fnorm = np.linalg.norm(force, axis=1, keepdims=True).max()
            half = half + step * force / fnorm
            half /= np.linalg.norm(half, axis=1, keepdims=True)
        return cls.from_vertices(np.concatenate([half, -half]))

    @property
    def n_vertices(self):
        return len(self.vertices)

    def neighbors(self, i):
        return self.indices[self.indptr[i] : self.indptr[i + 1]]


# --------------------------------------------------------------------------
# spherical harmonics


def sh_degrees(order):
    """Degree ``l`` and order ``m`` of each basis function, in storage order."""
    if order < 0 or order % 2:
        raise ValueError(f"SH order must be even and nonnegative, got {order}")
    ls, ms = [], []
    for l in range(0, order + 1, 2):
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
    return np.array(ls), np.array(ms)


def n_coeffs(order):
    return (order + 1) * (order + 2) // 2


def order_from_n_coeffs(k):
    order = int(round((np.sqrt(8 * k + 1) - 3) / 2))
    if n_coeffs(order) != k or order % 2:
        raise ValueError(f"{k} is not the size of an even-order SH basis")
    return order


def real_sh(order, directions):
    """Real symmetric SH basis evaluated at unit directions, shape (N, K)."""
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    polar = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    azimuth = np.arctan2(d[:, 1], d[:, 0])
    ls, ms = sh_degrees(order)
    out = np.empty((len(d), len(ls)))
    for j, (l, m) in enumerate(zip(ls, ms)):
        y = sph_harm_y(l, abs(m), polar, azimuth)
        if m < 0:
            out[:, j] = np.sqrt(2.0) * y.real
        elif m == 0:
            out[:, j] = y.real
        else:
            out[:, j] = np.sqrt(2.0) * y.imag
    return out


@dataclass(frozen=True, eq=False)
class ShBasis:
    """Even-order real SH basis tabulated on a sphere grid."""

    order: int
    grid: SphereGrid = field(repr=False)
    matrix: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, order=4, grid=None):
        grid = SphereGrid.icosahedron(3) if grid is None else grid
        return cls(order, grid, real_sh(order, grid.vertices))

    @property
    def n_coeffs(self):
        return self.matrix.shape[1]

    def evaluate(self, directions):
        return real_sh(self.order, directions)


@lru_cache(maxsize=4)
def default_basis(order=4):
    """Order-``order`` basis on the 642-vertex icosahedral grid (cached)."""
    return ShBasis.build(order)


def uniform_coeffs(k=15):
    u = np.zeros(k)
    u[0] = 1.0
    return u


def _check_k(c, basis):
    if c.shape[-1] != basis.n_coeffs:
        raise ValueError(
            f"coefficient count {c.shape[-1]} does not match basis size {basis.n_coeffs}"
        )


def sh_eval(c, basis=None):
    """Square-root ODF values ``psi`` on the basis grid, shape (..., N)."""
    basis = default_basis() if basis is None else basis
    c = check_finite(c, "coefficients")
    _check_k(c, basis)
    return c @ basis.matrix.T


def odf_values(c, basis=None):
    """ODF ``p(s|c) = psi(s)**2`` on the basis grid."""
    return sh_eval(c, basis) ** 2


def fit_sh(psi, basis=None):
    """Weighted least-squares SH projection, renormalized to unit norm.

    Parameters
    ----------
    psi : array_like, shape (..., N)
        Square-root ODF samples on ``basis.grid``.
    basis : ShBasis, optional

    Raises
    ------
    ValueError
        If the design matrix is rank deficient for the basis order.
    """
    basis = default_basis() if basis is None else basis
    psi = check_finite(psi, "psi")
    B = basis.matrix
    if psi.shape[-1] != B.shape[0]:
        raise ValueError(f"expected {B.shape[0]} samples, got {psi.shape[-1]}")
    sw = np.sqrt(basis.grid.weights)
    A = B * sw[:, None]
    if np.linalg.matrix_rank(A) < B.shape[1]:
        raise ValueError("rank-deficient design: grid too small for the SH order")
    gram = A.T @ A
    rhs = (psi * basis.grid.weights) @ B
    c = np.linalg.solve(gram, rhs.T if rhs.ndim > 1 else rhs)
    c = c.T if rhs.ndim > 1 else c
    nrm = np.linalg.norm(c, axis=-1, keepdims=True)
    if np.any(nrm == 0):
        raise ValueError("fitted coefficients are all zero")
    return c / nrm


# --------------------------------------------------------------------------
# log / exp maps at the uniform ODF


def check_sh_coeffs(c, tol=UNIT_NORM_TOL, positive_orthant=True):
    c = check_finite(c, "coefficients")
    nrm = np.linalg.norm(c, axis=-1)
    if np.any(np.abs(nrm - 1.0) > tol):
        raise NotOnManifoldError("SH coefficients are not unit norm")
    if positive_orthant and np.any(c[..., 0] <= 0):
        raise NotOnManifoldError("SH coefficients outside positive orthant (c0 <= 0)")
    return c


def log_u(c, positive_orthant=True):
    """Log map at the uniform ODF.

    Returns the tangent vector ``Psi * (c - u cos Psi) / ||c - u cos Psi||``
    with ``Psi = arccos(c0)``; its first component is exactly zero.

    Parameters
    ----------
    c : array_like, shape (..., K)
        Unit-norm coefficients.
    positive_orthant : bool, default=True
        Reject ``c0 <= 0``. Switch off to invert ``exp_u`` on the whole
        open ball ``||v|| < pi``.
    """
    c = check_sh_coeffs(c, positive_orthant=positive_orthant)
    tail = c[..., 1:]
    tnorm = np.linalg.norm(tail, axis=-1, keepdims=True)
    # arctan2 is the well-conditioned form of arccos(c0) on the unit sphere
    angle = np.arctan2(tnorm, c[..., :1])
    scale = np.divide(angle, tnorm, out=np.zeros_like(tnorm), where=tnorm > 0)
    v = np.zeros_like(c)
    v[..., 1:] = tail * scale
    return v


def exp_u(v):
    """Exp map at the uniform ODF; ``exp_u(0) = u``.

    Raises
    ------
    NotOnManifoldError
        If ``v`` is not tangent at ``u`` (``|v0| > 1e-8``).
    ValueError
        If ``||v|| >= pi`` (cut locus).
    """
    v = check_finite(v, "tangent vector")
    if np.any(np.abs(v[..., 0]) > UNIT_NORM_TOL):
        raise NotOnManifoldError("vector is not tangent at the uniform ODF")
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(angle >= np.pi):
        raise ValueError("cut locus exceeded: ||v|| >= pi")
    sinc = np.divide(np.sin(angle), angle, out=np.ones_like(angle), where=angle > 0)
    c = v * sinc
    c[..., 0] = np.cos(angle[..., 0])
    return c


def geodesic_odf(c1, c2):
    """Log-Euclidean ODF distance ``||log_u(c1) - log_u(c2)||``."""
    return np.linalg.norm(log_u(c1) - log_u(c2), axis=-1)


def gfa(c):
    """Generalized FA, ``sqrt(1 - c0**2 / sum(c**2))``."""
    c = check_finite(c, "coefficients")
    ss = (c * c).sum(axis=-1)
    if np.any(ss == 0):
        raise ValueError("GFA is undefined for a zero coefficient vector")
    return np.sqrt(np.clip(1.0 - c[..., 0] ** 2 / ss, 0.0, 1.0))


# --------------------------------------------------------------------------
# peaks


def _axial_normalize(d, tol=1e-12):
    d = np.array(d, dtype=float)
    nonzero = np.abs(d) > tol
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(d, first[..., None], axis=-1)
    return np.where(lead < 0, -d, d)


@dataclass(frozen=True)
class _RingFit:
    """Per-vertex least-squares operators for a quadratic fit over the ring.

    Rows are the vertex itself and its neighbors, padded to a fixed count
    by repeating the first neighbor.
    """

    rows: np.ndarray  # (N, R) vertex indices
    e1: np.ndarray  # (N, 3) tangent frame
    e2: np.ndarray
    pinv: np.ndarray  # (N, 6, R)
    reach: np.ndarray  # (N,) largest ring offset in the tangent plane

    @classmethod
    def build(cls, grid):
        n = grid.n_vertices
        width = 1 + int(np.diff(grid.indptr).max())
        rows = np.empty((n, width), dtype=np.int64)
        for i in range(n):
            ring = grid.neighbors(i)
            rows[i] = np.concatenate([[i], ring, np.repeat(ring[:1], width - 1 - len(ring))])
        v = grid.vertices
        helper = np.eye(3)[np.argmin(np.abs(v), axis=1)]
        e1 = np.cross(v, helper)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(v, e1)
        pts = v[rows]
        x = np.einsum("nrk,nk->nr", pts, e1)
        y = np.einsum("nrk,nk->nr", pts, e2)
        A = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=2)
        return cls(rows, e1, e2, np.linalg.pinv(A), np.hypot(x, y).max(axis=1))


def _ring_fit(basis):
    fit = basis.__dict__.get("_ring_fit")
    if fit is None:
        fit = _RingFit.build(basis.grid)
        object.__setattr__(basis, "_ring_fit", fit)
    return fit


def ring_neighbors(basis):
    """(N, R) neighbor indices of each grid vertex, padded by repetition."""
    return _ring_fit(basis).rows[:, 1:]


def refine_peaks(c, idx, basis=None):
    """Sub-grid peak directions by a quadratic fit of the ODF around vertices.

    Parameters
    ----------
    c : ndarray, shape (B, K)
        Coefficients, one row per peak.
    idx : ndarray of int, shape (B,)
        Grid vertex of each peak.

    Returns
    -------
    ndarray, shape (B, 3)
        Refined unit directions; the vertex itself where the fit has no
        interior maximum nearby or does not improve the value.
    """
    basis = default_basis() if basis is None else basis
    c = np.atleast_2d(np.asarray(c, dtype=float))
    idx = np.asarray(idx, dtype=np.int64)
    fit = _ring_fit(basis)
    v = basis.grid.vertices[idx]
    vals = np.einsum("brk,bk->br", basis.matrix[fit.rows[idx]], c) ** 2
    _, bx, by, axx, axy, ayy = np.einsum("bir,br->ib", fit.pinv[idx], vals)
    h11, h12, h22 = 2 * axx, axy, 2 * ayy
    det = h11 * h22 - h12 * h12
    ok = (det > 0) & (h11 < 0)
    safe = np.where(ok, det, 1.0)
    ox = -(h22 * bx - h12 * by) / safe
    oy = -(-h12 * bx + h11 * by) / safe
    ok &= np.hypot(ox, oy) <= 2.0 * fit.reach[idx]
    cand = v + ox[:, None] * fit.e1[idx] + oy[:, None] * fit.e2[idx]
    cand /= np.linalg.norm(cand, axis=1, keepdims=True)
    better = ((basis.evaluate(cand) * c).sum(axis=1)) ** 2 >= vals[:, 0]
    return np.where((ok & better)[:, None], cand, v)


def odf_maxima(c, basis=None, rel_threshold=0.5, min_separation_deg=25.0, refine=True):
    """Principal directions of an ODF, strongest first.

    Local maxima of ``p(s|c)`` over the grid neighbor graph that reach
    ``rel_threshold`` of the global maximum. Antipodal pairs collapse to a
    single representative whose first nonzero component is positive, and
    peaks closer than ``min_separation_deg`` to a stronger one are dropped.
    A flat ODF has no peaks.

    Returns
    -------
    ndarray, shape (n_peaks, 3)
    """
    basis = default_basis() if basis is None else basis
    c = check_finite(c, "coefficients")
    _check_k(c, basis)
    p = (basis.matrix @ c) ** 2
    pmax, pmin = p.max(), p.min()
    if pmax - pmin <= 1e-10 * max(pmax, 1e-300):
        return np.zeros((0, 3))
    grid = basis.grid
    nbr_max = np.maximum.reduceat(p[grid.indices], grid.indptr[:-1])
    cand = np.flatnonzero((p >= nbr_max) & (p >= rel_threshold * pmax))
    cand = cand[np.argsort(-p[cand], kind="stable")]
    cos_sep = np.cos(np.deg2rad(min_separation_deg))
    dirs = refine_peaks(np.broadcast_to(c, (len(cand), len(c))), cand, basis) if refine \
        else grid.vertices[cand]
    peaks = []
    for d in dirs:
        if any(abs(d @ q) > cos_sep for q in peaks):
            continue
        peaks.append(d)
    if not peaks:
        return np.zeros((0, 3))
    return _axial_normalize(np.array(peaks))


# --------------------------------------------------------------------------
# analytic ODFs


def tensor_odf(tensors, directions):
    """Diffusion ODF of Gaussian tensors, ``1 / (4 pi sqrt|D| (s^T D^-1 s)^1.5)``."""
    D = np.asarray(tensors, dtype=float)
    inv = np.linalg.inv(D)
    det = np.linalg.det(D)
    q = np.einsum("nj,...jk,nk->...n", directions, inv, directions)
    return 1.0 / (4.0 * np.pi * np.sqrt(det)[..., None] * q**1.5)


def odf_coeffs_from_tensors(tensors, fractions=None, basis=None, chunk=4096):
    """Unit-norm square-root-ODF coefficients of a tensor mixture.

    Parameters
    ----------
    tensors : array_like, shape (..., n_fibers, 3, 3)
    fractions : array_like, shape (..., n_fibers), optional
        Mixture weights; equal by default.
    """
    basis = default_basis() if basis is None else basis
    tensors = np.asarray(tensors, dtype=float)
    n_fib = tensors.shape[-3]
    if fractions is None:
        fractions = np.full(tensors.shape[:-2], 1.0 / n_fib)
    fractions = np.broadcast_to(np.asarray(fractions, dtype=float), tensors.shape[:-2])
    batch = tensors.shape[:-3]
    t = tensors.reshape((-1, n_fib, 3, 3))
    f = fractions.reshape((-1, n_fib))
    out = np.empty((len(t), basis.n_coeffs))
    for lo in range(0, len(t), chunk):
        p = (tensor_odf(t[lo : lo + chunk], basis.grid.vertices) * f[lo : lo + chunk, :, None])
        out[lo : lo + chunk] = fit_sh(np.sqrt(p.sum(axis=-2)), basis)
    return out.reshape(batch + (basis.n_coeffs,))


class SqrtOdfTransformer(TransformerMixin, BaseEstimator):
    """Map unit-norm SH coefficients to and from the tangent plane at ``u``."""

    def fit(self, X, y=None):
        X = check_finite(X, "X")
        if X.ndim != 2:
            raise ValueError(f"X must be 2D, got shape {X.shape}")
        order_from_n_coeffs(X.shape[1])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return log_u(X)

    def inverse_transform(self, X):
        check_is_fitted(self)
        return exp_u(X)
