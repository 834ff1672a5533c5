"""Comparison metrics for diffusion fields and tractograms."""

from dataclasses import dataclass

import numpy as np

from ._validation import (
    DegenerateError,
    NotOnManifoldError,
    check_mask,
    check_same_shape,
    sym6_to_mat,
)
from .odf import default_basis, exp_u, gfa, log_u, order_from_n_coeffs, refine_peaks, sh_eval
from .spd import SPD_FLOOR, EigenDecomp3, eig_sym3, fa, principal_direction_field
from .volume import Volume


def cosine_similarity(a, b):
    """Absolute cosine ``|a . b| / (|a| |b|)`` along the last axis.

    Raises
    ------
    DegenerateError
        If any vector is zero.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateError("cosine similarity of a zero vector")
    return np.clip(np.abs((a * b).sum(axis=-1)) / (na * nb), 0.0, 1.0)


@dataclass
class FieldSummary:
    """Per-voxel quantities of a diffusion field, computed once.

    Attributes
    ----------
    kind : {"tensor", "odf"}
    anisotropy : ndarray
        FA (tensors) or GFA (ODFs).
    directions : ndarray, shape (..., 3)
        Principal direction per voxel.
    valid : ndarray of bool
        Where the principal direction is defined.
    points : ndarray
        Tangent coordinates used for geodesic distances: matrix logs of
        tensors, ``log_u`` of ODF coefficients.
    """

    kind: str
    anisotropy: np.ndarray
    directions: np.ndarray
    valid: np.ndarray
    points: np.ndarray

    @property
    def shape(self):
        return self.anisotropy.shape


def _grid_peaks(c, basis, flat_tol=1e-9):
    """Refined direction of the largest grid value of each ODF; flat ODFs are invalid."""
    spatial = c.shape[:-1]
    flat = c.reshape(-1, c.shape[-1])
    dirs = np.zeros((len(flat), 3))
    valid = np.zeros(len(flat), dtype=bool)
    for lo in range(0, len(flat), 16384):
        psi = sh_eval(flat[lo : lo + 16384], basis)
        p = psi * psi
        best = np.argmax(p, axis=1)
        dirs[lo : lo + 16384] = refine_peaks(flat[lo : lo + 16384], best, basis)
        valid[lo : lo + 16384] = (p.max(axis=1) - p.min(axis=1)) > flat_tol
    return dirs.reshape(spatial + (3,)), valid.reshape(spatial)


def summarize_field(vol, basis=None, eig=None):
    """Compute anisotropy, principal directions and tangent points of a field.

    Parameters
    ----------
    vol : Volume, FieldSummary or array_like
        Spaces ``tensor``, ``tensor_log``, ``sh`` or ``sh_log``; bare arrays
        with 6 channels are tensors, anything else SH coefficients.
    basis : ShBasis, optional
        Sphere grid for ODF peak directions.
    eig : EigenDecomp3, optional
        Precomputed decomposition of the tensor (or log tensor) field.

    Notes
    -----
    Tensor fields take one eigendecomposition. ODF directions are the
    global maximum, located on the grid and refined by a local quadratic fit.
    """
    if isinstance(vol, FieldSummary):
        return vol
    if isinstance(vol, Volume):
        space, data = vol.space, vol.data
    else:
        data = np.asarray(vol, dtype=float)
        space = "tensor" if data.shape[-1] == 6 else "sh"
    if space in ("tensor", "tensor_log"):
        e = eig_sym3(sym6_to_mat(data)) if eig is None else eig
        U, lam = e.eigenvectors, e.eigenvalues
        if space == "tensor":
            if np.any(lam[..., 2] <= SPD_FLOOR):
                raise NotOnManifoldError("tensor is not on the SPD manifold (lambda_3 <= floor)")
            log_lam = np.log(lam)
        else:
            log_lam, lam = lam, np.exp(lam)
        points = (U * log_lam[..., None, :]) @ np.swapaxes(U, -1, -2)
        dirs, valid = principal_direction_field(EigenDecomp3(lam, U))
        return FieldSummary("tensor", fa(lam), dirs, valid, points)
    if space in ("sh", "sh_log"):
        if space == "sh":
            c = np.asarray(data, dtype=float)
            points = log_u(c)
        else:
            points = np.asarray(data, dtype=float)
            c = exp_u(points)
        basis = default_basis(order_from_n_coeffs(c.shape[-1])) if basis is None else basis
        dirs, valid = _grid_peaks(c, basis)
        return FieldSummary("odf", gfa(c), dirs, valid, points)
    raise ValueError(f"expected a diffusion field, got space {space!r}")


def _pair(gen, ref, basis=None):
    g = summarize_field(gen, basis)
    r = summarize_field(ref, basis)
    if g.kind != r.kind:
        raise ValueError(f"cannot compare a {g.kind} field with a {r.kind} field")
    check_same_shape(g.anisotropy, r.anisotropy, names=("gen", "ref"))
    return g, r


def anisotropy_map(vol):
    """FA of tensor fields or GFA of ODF fields."""
    return summarize_field(vol).anisotropy


def principal_directions(vol, basis=None):
    """Principal direction per voxel and a mask of where it is defined.

    Tensors use the leading eigenvector (undefined at eigen-ties); ODFs use
    the largest value on the sphere grid (undefined for flat ODFs).
    """
    s = summarize_field(vol, basis)
    return s.directions, s.valid


@dataclass
class SimilarityResult:
    """Mean absolute cosine over the evaluation mask.

    ``cosine_map`` is NaN outside the evaluated voxels. ``n_undefined``
    counts masked voxels skipped because a direction was ill-defined.
    """

    mean: float
    cosine_map: np.ndarray
    n_evaluated: int
    n_undefined: int


def _eval_mask(ref, threshold, mask):
    m = np.ones(ref.shape, dtype=bool) if threshold is None else ref.anisotropy >= threshold
    if mask is not None:
        m &= check_mask(mask) if np.ndim(mask) == 3 else np.asarray(mask, dtype=bool)
    if not m.any():
        raise DegenerateError("empty evaluation mask")
    return m


def field_similarity(gen, ref, fa_threshold=0.2, mask=None, basis=None):
    """Principal-direction cosine similarity where the reference FA/GFA is high.

    Parameters
    ----------
    gen, ref : Volume, FieldSummary or array_like
        Tensor (6-channel) or ODF fields on the same grid.
    fa_threshold : float
        Voxels with reference FA (or GFA) at or above this are evaluated.
    mask : array_like of bool, optional
        Further restricts the evaluation.
    """
    g, r = _pair(gen, ref, basis)
    m = _eval_mask(r, fa_threshold, mask)
    ok = m & g.valid & r.valid
    cmap = np.full(m.shape, np.nan)
    if ok.any():
        cmap[ok] = cosine_similarity(g.directions[ok], r.directions[ok])
    mean = float(cmap[ok].mean()) if ok.any() else float("nan")
    return SimilarityResult(mean, cmap, int(ok.sum()), int((m & ~ok).sum()))


def fa_mse(gen, ref, threshold=None, mask=None):
    """Mean squared FA (or GFA) difference over the evaluation mask.

    With ``threshold=None`` every voxel (inside ``mask`` if given) counts.
    """
    g, r = _pair(gen, ref)
    m = _eval_mask(r, threshold, mask)
    return float(np.mean((g.anisotropy[m] - r.anisotropy[m]) ** 2))


def mean_geodesic(gen, ref, threshold=None, mask=None):
    """Mean Log-Euclidean (tensor) or spherical (ODF) geodesic distance."""
    g, r = _pair(gen, ref)
    m = _eval_mask(r, threshold, mask)
    d = g.points[m] - r.points[m]
    axes = (-2, -1) if g.kind == "tensor" else (-1,)
    return float(np.mean(np.sqrt((d * d).sum(axis=axes))))


def compare_fields(gen, ref, thresholds=(0.2, 0.5), mask=None, basis=None):
    """FA MSE, cosine similarity per threshold and mean geodesic in one pass.

    Returns
    -------
    dict
        Keys ``fa_mse``, ``cosine_<threshold>`` and ``geodesic``; a cosine
        is NaN when no reference voxel reaches its threshold.
    """
    g, r = _pair(gen, ref, basis)
    out = {"fa_mse": fa_mse(g, r, mask=mask)}
    for thr in thresholds:
        try:
            out[f"cosine_{thr}"] = field_similarity(g, r, thr, mask=mask).mean
        except DegenerateError:
            out[f"cosine_{thr}"] = float("nan")
    out["geodesic"] = mean_geodesic(g, r, mask=mask)
    return out


def _masks(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    check_same_shape(a, b, names=("a", "b"))
    return a, b


def dice(a, b):
    """``2 |A & B| / (|A| + |B|)``."""
    a, b = _masks(a, b)
    total = a.sum() + b.sum()
    if total == 0:
        raise DegenerateError("dice of two empty masks")
    return 2.0 * float((a & b).sum()) / float(total)


def overlap(a_ref, b):
    """Fraction of the reference bundle covered: ``|B & A| / |A|``."""
    a, b = _masks(a_ref, b)
    n = a.sum()
    if n == 0:
        raise DegenerateError("overlap against an empty reference mask")
    return float((a & b).sum()) / float(n)


def overreach(a_ref, b, variant="symmetric"):
    """How far bundle B goes beyond reference A.

    ``variant="symmetric"`` computes ``(|B | A| - |B & A|) / |A|``, which counts
    voxels missed in A as well as extra voxels in B and can exceed 1.
    ``variant="common"`` computes ``(|B| - |B & A|) / |A|``.
    """
    a, b = _masks(a_ref, b)
    n = a.sum()
    if n == 0:
        raise DegenerateError("overreach against an empty reference mask")
    inter = (a & b).sum()
    if variant == "symmetric":
        return float((a | b).sum() - inter) / float(n)
    if variant == "common":
        return float(b.sum() - inter) / float(n)
    raise ValueError(f"unknown overreach variant {variant!r}")


def streamline_length(s):
    """Polyline arc length."""
    s = np.asarray(s, dtype=float)
    return float(np.linalg.norm(np.diff(s, axis=0), axis=1).sum())


def _traverse_segments(p0, p1):
    """Voxels crossed by segments, in shifted coords where voxel v spans [v, v+1).

    Segments are split so that no piece moves one unit or more along any
    axis; each piece then crosses at most one boundary per axis and its
    voxels follow from the sorted crossing times.

    Returns an (M, 4) int array of (segment index, i, j, k).
    """
    d = p1 - p0
    n = np.maximum(np.ceil(np.abs(d).max(axis=1) / 0.999).astype(int), 1)
    seg = np.repeat(np.arange(len(p0)), n)
    k = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    frac0 = k / n[seg]
    frac1 = (k + 1) / n[seg]
    a = p0[seg] + frac0[:, None] * d[seg]
    b = np.where((k + 1 == n[seg])[:, None], p1[seg], p0[seg] + frac1[:, None] * d[seg])
    va = np.floor(a).astype(np.int64)
    vb = np.floor(b).astype(np.int64)
    dd = b - a
    cross = va != vb
    boundary = np.maximum(va, vb).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(cross, (boundary - a) / np.where(dd == 0, 1.0, dd), np.inf)
    order = np.argsort(t, axis=1, kind="stable")
    out = [np.column_stack([seg, va])]
    v = va.copy()
    rows = np.arange(len(v))
    for step in range(3):
        ax = order[:, step]
        hit = np.isfinite(t[rows, ax])
        v[rows[hit], ax[hit]] = vb[rows[hit], ax[hit]]
        out.append(np.column_stack([seg[hit], v[hit]]))
    return np.concatenate(out)


def rasterize_streamlines(streamlines, shape, affine=None):
    """Streamline count per voxel (each streamline counted once per voxel).

    A voxel is occupied when any polyline segment passes through it.
    Voxel ``v`` covers world points whose voxel coordinates lie in
    ``[v - 0.5, v + 0.5)``.
    """
    shape = tuple(int(s) for s in shape)
    density = np.zeros(shape, dtype=np.int64)
    if not len(streamlines):
        return density
    inv = np.linalg.inv(np.eye(4) if affine is None else np.asarray(affine, dtype=float))
    p0s, p1s, ids = [], [], []
    for i, s in enumerate(streamlines):
        s = np.asarray(s, dtype=float)
        v = s @ inv[:3, :3].T + inv[:3, 3] + 0.5
        p0s.append(v[:-1])
        p1s.append(v[1:])
        ids.append(np.full(len(v) - 1, i))
    p0, p1, ids = np.concatenate(p0s), np.concatenate(p1s), np.concatenate(ids)
    hits = _traverse_segments(p0, p1)
    vox = hits[:, 1:]
    inside = np.all((vox >= 0) & (vox < np.array(shape)), axis=1)
    sid = ids[hits[inside, 0]]
    flat = np.ravel_multi_index(tuple(vox[inside].T), shape)
    pairs = np.unique(sid * density.size + flat)
    np.add.at(density.reshape(-1), pairs % density.size, 1)
    return density


@dataclass
class TractogramStats:
    n_streamlines: int
    mean_length: float
    std_length: float
    volume: int
    density: np.ndarray


def tractogram_stats(streamlines, shape, affine=None):
    """Mean length (mm), occupied volume (voxels) and density map.

    Raises
    ------
    DegenerateError
        For an empty tractogram.
    """
    if not len(streamlines):
        raise DegenerateError("empty tractogram")
    lengths = np.array([streamline_length(s) for s in streamlines])
    density = rasterize_streamlines(streamlines, shape, affine)
    return TractogramStats(
        n_streamlines=len(streamlines),
        mean_length=float(lengths.mean()),
        std_length=float(lengths.std()),
        volume=int((density > 0).sum()),
        density=density,
    )


def bundle_compare(ref_mask, streamlines, affine=None):
    """Dice, overlap, overreach, mean length and volume of a tractogram vs a mask."""
    ref = np.asarray(ref_mask, dtype=bool)
    stats = tractogram_stats(streamlines, ref.shape, affine)
    occ = stats.density > 0
    return {
        "dice": dice(ref, occ),
        "overlap": overlap(ref, occ),
        "overreach": overreach(ref, occ),
        "n_streamlines": stats.n_streamlines,
        "mean_length_mm": stats.mean_length,
        "volume_voxels": stats.volume,
    }
