"""Deterministic streamline tracking on tensor and ODF fields.

Tracking follows the principal direction of the tensor field or the ODF
peak closest to the incoming direction, with fixed-length Euler steps.
Streamlines are propagated in batches; seeds are processed in fixed-size
chunks so the output does not depend on the number of worker threads.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_random_state, mat_to_sym6, sym6_to_mat
from .metrics import streamline_length
from .odf import default_basis, exp_u, order_from_n_coeffs, refine_peaks, ring_neighbors
from .spd import TIE_RTOL, eig_sym3, log_id
from .volume import Volume

SEED_CHUNK = 2048


@dataclass(frozen=True)
class TrackingParams:
    """Tracking settings.

    Parameters
    ----------
    step : float
        Euler step in mm.
    max_angle : float
        Largest turn between consecutive steps, in degrees.
    seeds_per_voxel : int
    min_length, max_length : float
        Streamlines outside ``[min_length, max_length]`` mm are discarded.
    peak_threshold : float
        ODF maxima below this fraction of the largest value are ignored.
    """

    step: float = 0.5
    max_angle: float = 60.0
    seeds_per_voxel: int = 2
    min_length: float = 10.0
    max_length: float = 300.0
    peak_threshold: float = 0.5

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not 0 < self.max_angle < 90:
            raise ValueError("max_angle must lie in (0, 90) degrees")
        if self.seeds_per_voxel < 1:
            raise ValueError("seeds_per_voxel must be >= 1")
        if not 0 <= self.min_length < self.max_length:
            raise ValueError("need 0 <= min_length < max_length")
        if not 0 < self.peak_threshold <= 1:
            raise ValueError("peak_threshold must lie in (0, 1]")

    @property
    def max_steps(self):
        """Steps per half-track; enough to exceed ``max_length`` when joined."""
        return int(np.ceil(self.max_length / self.step)) + 1


def seed_mask(mask, seeds_per_voxel=2, rng_seed=0, affine=None):
    """Uniformly jittered seed points inside the masked voxels.

    Seeds are ordered by voxel (C order), then by seed index within the
    voxel. Voxel ``v`` spans ``[v - 0.5, v + 0.5)`` in index space.

    Returns
    -------
    ndarray, shape (n_voxels * seeds_per_voxel, 3)
        World coordinates.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {mask.shape}")
    rng = check_random_state(rng_seed)
    vox = np.argwhere(mask).astype(float)
    pts = np.repeat(vox, seeds_per_voxel, axis=0)
    pts += rng.uniform(-0.5, 0.5, size=pts.shape)
    A = np.eye(4) if affine is None else np.asarray(affine, dtype=float)
    return pts @ A[:3, :3].T + A[:3, 3]


@dataclass
class TrackingField:
    """A field prepared for direction queries.

    ``data`` holds the values that are interpolated: log tensors (6
    channels) or square-root ODF coefficients.
    """

    kind: str
    data: np.ndarray
    mask: np.ndarray
    affine: np.ndarray
    basis: object = None

    @classmethod
    def from_volume(cls, vol, mask=None, basis=None):
        """Wrap a ``tensor``, ``tensor_log``, ``sh`` or ``sh_log`` volume."""
        if not isinstance(vol, Volume):
            raise TypeError("tracking expects a Volume tagged with its space")
        mask = np.ones(vol.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if mask.shape != vol.shape:
            raise ValueError(f"grid mismatch: field {vol.shape} vs mask {mask.shape}")
        if vol.space == "tensor":
            kind, data = "tensor", mat_to_sym6(log_id(sym6_to_mat(vol.data)))
        elif vol.space == "tensor_log":
            kind, data = "tensor", vol.data
        elif vol.space in ("sh", "sh_log"):
            kind = "odf"
            data = vol.data if vol.space == "sh" else exp_u(vol.data)
            if basis is None:
                basis = default_basis(order_from_n_coeffs(data.shape[-1]))
        else:
            raise ValueError(f"cannot track on a {vol.space!r} volume")
        return cls(kind, np.asarray(data, dtype=float), mask, vol.affine, basis)

    @property
    def shape(self):
        return self.mask.shape

    def to_voxel(self, points):
        inv = np.linalg.inv(self.affine)
        return points @ inv[:3, :3].T + inv[:3, 3]

    def vector_to_world(self, d):
        """Unit world directions from index-space directions."""
        w = d @ self.affine[:3, :3].T
        return w / np.linalg.norm(w, axis=-1, keepdims=True)

    def inside(self, vox):
        """Points in the volume and in the stopping mask (nearest voxel)."""
        idx = np.floor(vox + 0.5).astype(np.int64)
        shape = np.array(self.shape)
        ok = np.all((idx >= 0) & (idx < shape), axis=1)
        out = np.zeros(len(vox), dtype=bool)
        i = idx[ok]
        out[ok] = self.mask[i[:, 0], i[:, 1], i[:, 2]]
        return out

    def interpolate(self, vox):
        """Trilinear interpolation with edge clamping; ODFs are renormalized."""
        shape = np.array(self.shape)
        p = np.clip(vox, 0.0, shape - 1.0)
        i0 = np.minimum(np.floor(p).astype(np.int64), np.maximum(shape - 2, 0))
        t = p - i0
        i1 = np.minimum(i0 + 1, shape - 1)
        out = 0.0
        for cx in (0, 1):
            wx = t[:, 0] if cx else 1.0 - t[:, 0]
            ix = i1[:, 0] if cx else i0[:, 0]
            for cy in (0, 1):
                wy = t[:, 1] if cy else 1.0 - t[:, 1]
                iy = i1[:, 1] if cy else i0[:, 1]
                for cz in (0, 1):
                    wz = t[:, 2] if cz else 1.0 - t[:, 2]
                    iz = i1[:, 2] if cz else i0[:, 2]
                    out = out + (wx * wy * wz)[:, None] * self.data[ix, iy, iz]
        if self.kind == "odf":
            n = np.linalg.norm(out, axis=1, keepdims=True)
            out = out / np.where(n > 0, n, 1.0)
        return out


def _tensor_candidates(values):
    e = eig_sym3(sym6_to_mat(values))
    lam = e.eigenvalues
    valid = (lam[:, 0] - lam[:, 1]) > TIE_RTOL * np.maximum(np.abs(lam[:, 0]), 1e-300)
    return e.eigenvectors[:, :, 0], valid


def _odf_choice(field, c, prev, threshold):
    """Peak closest in angle to ``prev`` (strongest when ``prev`` is None)."""
    basis = field.basis
    # vertices along the first axis keep the neighbor gathers contiguous
    p = (basis.matrix @ c.T) ** 2
    nbrs = ring_neighbors(basis)
    nbr_max = p[nbrs[:, 0]]
    for col in nbrs[:, 1:].T:
        np.maximum(nbr_max, p[col], out=nbr_max)
    pmax, pmin = p.max(axis=0), p.min(axis=0)
    flat = pmax - pmin <= 1e-10 * np.maximum(pmax, 1e-300)
    peak = (p >= nbr_max) & (p >= threshold * pmax)
    if prev is not None:
        # closest in angle; ties broken by the larger ODF value
        cos = np.where(peak, np.abs(basis.grid.vertices @ prev.T), -1.0)
        peak &= cos >= cos.max(axis=0) - 1e-12
    best = np.argmax(np.where(peak, p, -np.inf), axis=0)
    d = refine_peaks(c, best, basis)
    return d, ~flat & peak.any(axis=0)


def _directions(field, vox, prev, params):
    """Unit world directions at index-space points, aligned with ``prev``."""
    values = field.interpolate(vox)
    prev_idx = None
    if prev is not None:
        inv = np.linalg.inv(field.affine[:3, :3])
        prev_idx = prev @ inv.T
        prev_idx = prev_idx / np.linalg.norm(prev_idx, axis=1, keepdims=True)
    if field.kind == "tensor":
        d, ok = _tensor_candidates(values)
    else:
        d, ok = _odf_choice(field, values, prev_idx, params.peak_threshold)
    d = field.vector_to_world(d)
    if prev is not None:
        dots = (d * prev).sum(axis=1)
        d = np.where((dots < 0)[:, None], -d, d)
        ok &= np.abs(dots) >= np.cos(np.deg2rad(params.max_angle)) - 1e-12
    return d, ok


def direction_at(field, point, prev_dir=None, params=None):
    """Tracking direction at a world point, or ``None`` to stop.

    Parameters
    ----------
    field : TrackingField or Volume
    point : array_like, shape (3,)
    prev_dir : array_like, shape (3,), optional
        Incoming direction; the result is sign-aligned with it and ``None``
        is returned when the turn exceeds ``params.max_angle``.
    """
    params = params or TrackingParams()
    if isinstance(field, Volume):
        field = TrackingField.from_volume(field)
    vox = field.to_voxel(np.asarray(point, dtype=float)[None])
    if not field.inside(vox)[0]:
        return None
    prev = None
    if prev_dir is not None:
        prev = np.asarray(prev_dir, dtype=float)[None]
        prev = prev / np.linalg.norm(prev)
    d, ok = _directions(field, vox, prev, params)
    return d[0] if ok[0] else None


def _propagate(field, start, direction, params):
    """Euler half-tracks from ``start`` along ``direction``; batched."""
    n = len(start)
    pts = np.full((params.max_steps + 1, n, 3), np.nan)
    pts[0] = start
    count = np.ones(n, dtype=np.int64)
    pos, d = start.copy(), direction.copy()
    active = np.arange(n)
    for k in range(1, params.max_steps + 1):
        if active.size == 0:
            break
        nxt = pos[active] + params.step * d[active]
        vox = field.to_voxel(nxt)
        inside = field.inside(vox)
        active, nxt, vox = active[inside], nxt[inside], vox[inside]
        pts[k, active] = nxt
        count[active] += 1
        pos[active] = nxt
        nd, ok = _directions(field, vox, d[active], params)
        d[active[ok]] = nd[ok]
        active = active[ok]
    return pts, count


def _track_chunk(field, seeds, params):
    vox = field.to_voxel(seeds)
    start_ok = field.inside(vox)
    d0, ok = np.zeros_like(seeds), np.zeros(len(seeds), dtype=bool)
    if start_ok.any():
        d, good = _directions(field, vox[start_ok], None, params)
        d0[start_ok], ok[start_ok] = d, good
    idx = np.flatnonzero(ok)
    s = seeds[idx]
    both = np.concatenate([d0[idx], -d0[idx]])
    pts, count = _propagate(field, np.concatenate([s, s]), both, params)
    m = len(idx)
    lines = []
    for j in range(m):
        fwd = pts[: count[j], j]
        bwd = pts[1 : count[m + j], m + j][::-1]
        line = np.concatenate([bwd, fwd])
        if len(line) < 2:
            continue
        length = streamline_length(line)
        if params.min_length <= length <= params.max_length:
            lines.append(line)
    return lines


def track(field, mask=None, params=None, rng_seed=0, seeds=None, n_threads=1):
    """Track streamlines from seeds in the mask.

    Parameters
    ----------
    field : Volume or TrackingField
        Tensor or ODF field.
    mask : array_like of bool, optional
        Seeding and stopping mask on the field's grid; the whole volume
        when omitted.
    params : TrackingParams, optional
    rng_seed : int
        Seed of the jittered seed positions.
    seeds : ndarray, shape (N, 3), optional
        World seed points, overriding mask seeding.
    n_threads : int
        Worker threads; the result is identical for any value.

    Returns
    -------
    list of ndarray, each (n_points, 3)
        World-space streamlines in seed order: the backward half reversed,
        then the seed, then the forward half.
    """
    params = params or TrackingParams()
    if isinstance(field, Volume):
        field = TrackingField.from_volume(field, mask)
    elif mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != field.shape:
            raise ValueError(f"grid mismatch: field {field.shape} vs mask {mask.shape}")
        field = replace(field, mask=mask)
    if seeds is None:
        seeds = seed_mask(field.mask, params.seeds_per_voxel, rng_seed, field.affine)
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    chunks = [seeds[i : i + SEED_CHUNK] for i in range(0, len(seeds), SEED_CHUNK)]
    if n_threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda c: _track_chunk(field, c, params), chunks))
    else:
        parts = [_track_chunk(field, c, params) for c in chunks]
    return [line for part in parts for line in part]
