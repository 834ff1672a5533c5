"""Log-domain resampling, patching, normalization and validity audits."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import DegenerateError, full9_to_mat, sym6_to_mat
from .odf import NEGATIVITY_TOL, default_basis, order_from_n_coeffs, sh_eval, ShBasis
from .spd import eig_sym3
from .volume import TANGENT_SPACES, Volume


def _as_volume(vol, space="scalar"):
    return vol if isinstance(vol, Volume) else Volume(np.asarray(vol), space=space)


def _target_dims(shape, factor=None, dims=None):
    if (factor is None) == (dims is None):
        raise ValueError("give exactly one of factor or dims")
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"target dims must be 3 positive integers, got {dims}")
        return dims
    f = np.broadcast_to(np.asarray(factor, dtype=float), (3,))
    if np.any(f < 1):
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    return tuple(int(round(n * k)) for n, k in zip(shape, f))


def _linear_axis(a, axis, n_out):
    n_in = a.shape[axis]
    if n_out == n_in:
        return a
    if n_in == 1:
        return np.repeat(a, n_out, axis=axis)
    pos = np.arange(n_out) * ((n_in - 1) / max(n_out - 1, 1))
    pos = np.clip(pos, 0, n_in - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    t = pos - i0
    shape = [1] * a.ndim
    shape[axis] = n_out
    t = t.reshape(shape)
    return np.take(a, i0, axis=axis) * (1.0 - t) + np.take(a, i0 + 1, axis=axis) * t


def trilinear_resize(a, dims):
    """Corner-aligned trilinear resize of an (X, Y, Z, ...) array."""
    a = np.asarray(a, dtype=float)
    for axis, n in enumerate(dims):
        a = _linear_axis(a, axis, n)
    return a


def upsample_log_trilinear(vol, factor=None, dims=None):
    """Trilinear upsampling of tangent-domain values.

    Grids are corner-aligned: the first and last voxel centres of input
    and output coincide. Values never leave the convex hull of their
    neighbours, so exponentiating the result always lands on the manifold.

    Parameters
    ----------
    vol : Volume
        Space ``scalar``, ``tensor_log`` or ``sh_log``.
    factor : float or sequence of 3 floats, optional
        Per-axis scale (``>= 1``); output dims are ``round(n * factor)``.
    dims : sequence of 3 ints, optional
        Explicit output dims.
    """
    if not isinstance(vol, Volume):
        raise TypeError("upsample_log_trilinear expects a Volume tagged with its space")
    if vol.space not in TANGENT_SPACES:
        raise ValueError(
            f"refusing to interpolate {vol.space!r} values; map them to the log domain first"
        )
    out_dims = _target_dims(vol.shape, factor, dims)
    data = trilinear_resize(vol.data, out_dims)
    affine = vol.affine.copy()
    for ax, (n_in, n_out) in enumerate(zip(vol.shape, out_dims)):
        ratio = (n_in - 1) / (n_out - 1) if n_out > 1 and n_in > 1 else n_in / n_out
        affine[:3, ax] *= ratio
    return Volume(data, affine, vol.space)


def avg_pool(a, factor):
    """Block mean of an (X, Y, Z, C) array over ``factor``-sized cubes."""
    a = np.asarray(a, dtype=float)
    X, Y, Z = a.shape[:3]
    if X % factor or Y % factor or Z % factor:
        raise ValueError(f"dims {a.shape[:3]} are not divisible by {factor}")
    b = a.reshape(X // factor, factor, Y // factor, factor, Z // factor, factor, *a.shape[3:])
    return b.mean(axis=(1, 3, 5))


def downsample_avg(vol, factor):
    """Average-pool a volume by an integer factor (block mean per channel)."""
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {factor}")
    vol = _as_volume(vol)
    affine = vol.affine.copy()
    affine[:3, 3] += affine[:3, :3] @ np.full(3, (factor - 1) / 2.0)
    affine[:3, :3] *= factor
    return Volume(avg_pool(vol.data, factor), affine, vol.space)


def _starts(n, size, stride):
    s = list(range(0, n - size + 1, stride))
    if s[-1] != n - size:
        s.append(n - size)
    return s


def extract_patches(vol, size, stride):
    """Cut overlapping cubic (or box) patches that cover the whole volume.

    Starts step by ``stride`` along each axis; a final patch flush with the
    far border is added when the stride does not land on it.

    Returns
    -------
    patches : ndarray, shape (n_patches, sx, sy, sz, C)
    starts : ndarray, shape (n_patches, 3)
        Corner index of each patch, for :func:`reassemble_patches`.
    """
    data = vol.data if isinstance(vol, Volume) else np.asarray(vol, dtype=float)
    if data.ndim == 3:
        data = data[..., None]
    size = tuple(np.broadcast_to(np.asarray(size, dtype=int), (3,)))
    stride = tuple(np.broadcast_to(np.asarray(stride, dtype=int), (3,)))
    if min(stride) < 1:
        raise ValueError("stride must be >= 1")
    if any(s > n for s, n in zip(size, data.shape[:3])):
        raise ValueError(f"patch size {size} exceeds volume dims {data.shape[:3]}")
    if any(st > s for st, s in zip(stride, size)):
        raise ValueError("stride larger than patch size leaves gaps")
    grids = [_starts(n, s, st) for n, s, st in zip(data.shape[:3], size, stride)]
    starts = np.array([(i, j, k) for i in grids[0] for j in grids[1] for k in grids[2]])
    sx, sy, sz = size
    patches = np.stack([data[i : i + sx, j : j + sy, k : k + sz] for i, j, k in starts])
    return patches, starts


def reassemble_patches(patches, starts, dims):
    """Average overlapping patches back into an (X, Y, Z, C) array."""
    patches = np.asarray(patches, dtype=float)
    out = np.zeros((*dims, patches.shape[-1]))
    count = np.zeros(tuple(dims) + (1,))
    sx, sy, sz = patches.shape[1:4]
    for p, (i, j, k) in zip(patches, starts):
        out[i : i + sx, j : j + sy, k : k + sz] += p
        count[i : i + sx, j : j + sy, k : k + sz] += 1
    if np.any(count == 0):
        raise ValueError("patches do not cover the volume")
    return out / count


def minmax_normalize(vol):
    """Affinely rescale a scalar volume so its min is 0 and max is 1.

    Raises
    ------
    DegenerateError
        For a constant volume (degenerate range).
    """
    is_vol = isinstance(vol, Volume)
    data = vol.data if is_vol else np.asarray(vol, dtype=float)
    if not np.all(np.isfinite(data)):
        raise ValueError("volume contains non-finite values")
    lo, hi = data.min(), data.max()
    if hi == lo:
        raise DegenerateError("degenerate range: volume is constant")
    out = (data - lo) / (hi - lo)
    return vol.with_data(out) if is_vol else out


@dataclass
class AuditReport:
    """Per-kind failure counts of a validity audit.

    ``n_invalid`` counts voxels with at least one counted failure kind.
    Tensor kinds are ``non_finite``, ``asymmetric`` and ``non_spd``. ODF
    kinds are ``non_finite`` and ``non_unit_norm`` (``p = psi**2`` is not
    a density); ``non_positive_c0`` and ``negative_psi`` (outside the
    positive orthant) are reported too and counted only in strict mode.
    """

    kind: str
    n_voxels: int
    n_invalid: int
    failures: dict = field(default_factory=dict)

    def as_row(self):
        return {"kind": self.kind, "n_voxels": self.n_voxels, "n_invalid": self.n_invalid,
                **self.failures}


def _audit_tensors(flat, channels, tol, eigenvalues=None):
    n = len(flat)
    finite = np.isfinite(flat).all(axis=1)
    asym = np.zeros(n, dtype=bool)
    if channels == 9:
        m = full9_to_mat(np.where(finite[:, None], flat, 0.0))
        asym = np.abs(m - np.swapaxes(m, 1, 2)).max(axis=(1, 2)) > tol
        m = 0.5 * (m + np.swapaxes(m, 1, 2))
    else:
        m = sym6_to_mat(np.where(finite[:, None], flat, 0.0))
    if eigenvalues is None:
        lam3 = eig_sym3(m).eigenvalues[:, 2]
    else:
        lam3 = np.asarray(eigenvalues, dtype=float).reshape(-1, 3)[:, 2]
    non_spd = finite & (lam3 <= 0)
    failures = {"non_finite": int((~finite).sum()), "asymmetric": int(asym.sum()),
                "non_spd": int(non_spd.sum())}
    return failures, ~finite | asym | non_spd


def _audit_odfs(flat, tol, basis, strict):
    finite = np.isfinite(flat).all(axis=1)
    c = np.where(finite[:, None], flat, 0.0)
    bad_norm = finite & (np.abs(np.linalg.norm(c, axis=1) - 1.0) > tol)
    c0_bad = finite & (c[:, 0] <= 0)
    if basis is None:
        basis = default_basis(order_from_n_coeffs(flat.shape[1]))
    neg = np.zeros(len(c), dtype=bool)
    for lo in range(0, len(c), 65536):
        neg[lo : lo + 65536] = (sh_eval(c[lo : lo + 65536], basis) < NEGATIVITY_TOL).any(axis=1)
    neg &= finite
    failures = {"non_finite": int((~finite).sum()), "non_unit_norm": int(bad_norm.sum()),
                "non_positive_c0": int(c0_bad.sum()), "negative_psi": int(neg.sum())}
    invalid = ~finite | bad_norm
    if strict:
        invalid = invalid | c0_bad | neg
    return failures, invalid


def audit_validity(vol, space=None, tol=1e-6, basis=None, strict=False, return_mask=False,
                   eigenvalues=None):
    """Count voxels that are not valid tensors or ODFs.

    Parameters
    ----------
    vol : Volume or array_like, shape (..., C)
        Tensor (6 or 9 channels) or square-root ODF coefficients.
    space : {"tensor", "tensor9", "sh"}, optional
        Overrides the volume's tag; for bare arrays it is inferred from
        the channel count (6 and 9 mean tensors).
    tol : float
        Asymmetry and unit-norm tolerance.
    basis : ShBasis, optional
        Grid used for the ``negative_psi`` check.
    strict : bool, default=False
        Also count ODFs outside the positive orthant as invalid.
    return_mask : bool
        Also return the per-voxel invalid mask.
    eigenvalues : array_like, shape (..., 3), optional
        Precomputed descending eigenvalues of 6-channel tensors, to skip
        the decomposition.
    """
    if isinstance(vol, Volume):
        data, space = vol.data, space or vol.space
    else:
        data = np.asarray(vol, dtype=float)
    channels = data.shape[-1]
    if space is None:
        space = {6: "tensor", 9: "tensor9"}.get(channels, "sh")
    flat = data.reshape(-1, channels).astype(float)
    if space in ("tensor", "tensor9") and channels in (6, 9):
        if eigenvalues is not None and channels != 6:
            raise ValueError("precomputed eigenvalues apply to 6-channel tensors only")
        failures, invalid = _audit_tensors(flat, channels, tol, eigenvalues)
        kind = "tensor"
    elif space == "sh":
        try:
            order_from_n_coeffs(channels)
        except ValueError:
            raise ValueError(f"unrecognized channel count {channels} for an audit") from None
        if basis is not None and not isinstance(basis, ShBasis):
            raise TypeError("basis must be an ShBasis")
        failures, invalid = _audit_odfs(flat, tol, basis, strict)
        kind = "odf"
    else:
        raise ValueError(f"cannot audit {space!r} data with {channels} channels")
    report = AuditReport(kind, len(flat), int(invalid.sum()), failures)
    if return_mask:
        return report, invalid.reshape(data.shape[:-1])
    return report
