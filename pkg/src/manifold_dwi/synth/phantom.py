"""Synthetic T1 / diffusion phantoms with known fiber geometry.

Diffusivities are in units of 1e-3 mm^2/s and the grid spacing is 1 mm.
Partial-volume boundaries are blended in the log domain, so every voxel
is a valid SPD tensor and a valid square-root ODF by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .._validation import check_random_state, mat_to_sym6
from ..odf import odf_coeffs_from_tensors
from ..spd import exp_id
from ..volume import Volume

GEOMETRIES = ("straight", "arc", "crossing")

WM_EIGENVALUES = (1.7, 0.2, 0.2)
GM_DIFFUSIVITY = 0.8
BG_DIFFUSIVITY = 3.0
T1_LEVELS = {"wm": 0.9, "gm": 0.5, "bg": 0.1}


@dataclass(frozen=True)
class PhantomSpec:
    """What to build.

    Parameters
    ----------
    geometry : {"straight", "arc", "crossing"}
    dims : tuple of 3 ints
    radius : float
        Bundle radius in voxels.
    length : float, optional
        Straight bundles only: extent along z in voxels, centred; the full
        axis when omitted.
    arc_radius : float, optional
        Arc bundles only: radius of the centre line in voxels.
    margin : int
        Width of an isotropic free-water border around the tissue block.
    noise : float
        Standard deviation of Gaussian noise added to the T1 image.
    gm_fa : float
        FA of the grey-matter tensor, elongated along ``gm_axis`` with the
        same determinant as the isotropic grey-matter tensor.
    gm_axis : tuple of 3 floats
    seed : int
    """

    geometry: str = "straight"
    dims: tuple = (64, 64, 64)
    radius: float = 8.0
    length: float = None
    arc_radius: float = None
    margin: int = 0
    noise: float = 0.02
    gm_fa: float = 0.15
    gm_axis: tuple = (1.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"unknown geometry {self.geometry!r}; expected one of {GEOMETRIES}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        if self.radius <= 0:
            raise ValueError("bundle radius must be positive")
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")
        if not 0.0 <= self.gm_fa < 1.0:
            raise ValueError(f"gm_fa must lie in [0, 1), got {self.gm_fa}")
        axis = np.asarray(self.gm_axis, dtype=float)
        if axis.shape != (3,) or not np.all(np.isfinite(axis)) or np.linalg.norm(axis) == 0:
            raise ValueError(f"gm_axis must be a nonzero 3-vector, got {self.gm_axis}")
        object.__setattr__(self, "gm_axis", tuple(float(v) for v in axis / np.linalg.norm(axis)))


@dataclass
class Phantom:
    """Ground-truth volumes of one phantom.

    Attributes
    ----------
    t1 : Volume
        T1-like scalar image in [0, 1], noise included.
    tensors : Volume
        SPD tensors, space ``tensor``.
    odf : Volume
        Square-root ODF coefficients (order 4), space ``sh``.
    wm_mask : ndarray of bool
        Voxels whose bundle membership is at least one half.
    directions : ndarray, shape (X, Y, Z, n_bundles, 3)
        Fiber direction of each bundle at every voxel.
    membership : ndarray, shape (X, Y, Z, n_bundles)
        Partial-volume fraction of each bundle.
    meta : dict
        Construction parameters and derived geometry.
    """

    t1: Volume
    tensors: Volume
    odf: Volume
    wm_mask: np.ndarray
    directions: np.ndarray
    membership: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def log_tensors(self):
        from ..spd import log_id
        from .._validation import sym6_to_mat

        return self.tensors.with_data(
            mat_to_sym6(log_id(sym6_to_mat(self.tensors.data))), space="tensor_log"
        )


def _ramp(signed_distance):
    """Partial-volume fraction: 1 inside, 0 outside, linear over one voxel."""
    return np.clip(0.5 - signed_distance, 0.0, 1.0)


def _grid(dims):
    return np.stack(np.meshgrid(*[np.arange(n, dtype=float) for n in dims], indexing="ij"), -1)


def _axial_ratio(fa_value):
    """Ratio ``r`` such that eigenvalues ``(r, 1, 1)`` have the given FA."""
    f2 = fa_value * fa_value
    return (1.0 + np.sqrt(1.0 - (1.0 - f2) * (1.0 - 2.0 * f2))) / (1.0 - f2)


def _fiber_tensor(direction):
    l1, l2, _ = WM_EIGENVALUES
    d = direction[..., :, None] * direction[..., None, :]
    return l2 * np.eye(3) + (l1 - l2) * d


def _straight(spec, p):
    X, Y, Z = spec.dims
    c = np.array([(X - 1) / 2, (Y - 1) / 2])
    r = np.linalg.norm(p[..., :2] - c, axis=-1)
    m = _ramp(r - spec.radius)
    meta = {"axis": (0.0, 0.0, 1.0), "center_xy": tuple(c)}
    if spec.length is not None:
        zc = (Z - 1) / 2
        half = spec.length / 2
        m = m * _ramp(np.abs(p[..., 2] - zc) - half)
        meta["z_range"] = (zc - half, zc + half)
    d = np.broadcast_to(np.array([0.0, 0.0, 1.0]), p.shape)
    return [m], [d], meta


def _arc(spec, p):
    X, Y, Z = spec.dims
    R = spec.arc_radius or 0.6 * min(X, Z)
    # quarter circle in the x-z plane centred on the (x=0, z=0) edge
    cx, cz = float(spec.margin), float(spec.margin)
    dx, dz = p[..., 0] - cx, p[..., 2] - cz
    rho = np.hypot(dx, dz)
    yc = (Y - 1) / 2
    dist = np.hypot(rho - R, p[..., 1] - yc)
    m = _ramp(dist - spec.radius)
    safe = np.where(rho > 0, rho, 1.0)
    d = np.stack([-dz / safe, np.zeros_like(rho), dx / safe], axis=-1)
    d[rho == 0] = (0.0, 0.0, 1.0)
    meta = {"arc_center_xz": (cx, cz), "arc_radius": R, "y_center": yc}
    return [m], [d], meta


def _crossing(spec, p):
    X, Y, Z = spec.dims
    zc = (Z - 1) / 2
    yc, xc = (Y - 1) / 2, (X - 1) / 2
    m1 = _ramp(np.hypot(p[..., 1] - yc, p[..., 2] - zc) - spec.radius)  # along x
    m2 = _ramp(np.hypot(p[..., 0] - xc, p[..., 2] - zc) - spec.radius)  # along y
    d1 = np.broadcast_to(np.array([1.0, 0.0, 0.0]), p.shape)
    d2 = np.broadcast_to(np.array([0.0, 1.0, 0.0]), p.shape)
    meta = {"center": (xc, yc, zc), "angle_deg": 90.0}
    return [m1, m2], [d1, d2], meta


_BUILDERS = {"straight": _straight, "arc": _arc, "crossing": _crossing}


def phantom_gen(spec=None, **kwargs):
    """Build a phantom.

    Parameters
    ----------
    spec : PhantomSpec, optional
        Built from ``kwargs`` when omitted.

    Returns
    -------
    Phantom
    """
    if spec is None:
        spec = PhantomSpec(**kwargs)
    elif kwargs:
        raise TypeError("pass either a PhantomSpec or keyword arguments, not both")
    rng = check_random_state(spec.seed)
    p = _grid(spec.dims)
    X, Y, Z = spec.dims
    mg = spec.margin
    # tissue block: everything at least `margin` voxels from the border
    edge = np.minimum.reduce([p[..., 0], X - 1 - p[..., 0], p[..., 1], Y - 1 - p[..., 1],
                              p[..., 2], Z - 1 - p[..., 2]])
    tissue = _ramp(mg - 0.5 - edge)

    ms, ds, meta = _BUILDERS[spec.geometry](spec, p)
    m = np.stack(ms, axis=-1) * tissue[..., None]
    total = m.sum(axis=-1, keepdims=True)
    m = np.where(total > 1.0, m / np.maximum(total, 1e-12), m)
    wm = m.sum(axis=-1)
    d = np.stack(ds, axis=-2)

    iso = GM_DIFFUSIVITY * tissue + BG_DIFFUSIVITY * (1.0 - tissue)
    # grey matter is mildly anisotropic with the isotropic tensor's determinant
    a = np.asarray(spec.gm_axis)
    shape = np.outer(a, a) - np.eye(3) / 3.0
    log_bg = (np.log(iso)[..., None, None] * np.eye(3)
              + (np.log(_axial_ratio(spec.gm_fa)) * tissue)[..., None, None] * shape)
    # log-domain blend of the non-fiber tensor with each bundle tensor
    l1, l2, _ = WM_EIGENVALUES
    log_fib = np.log(l2) * np.eye(3) + (np.log(l1) - np.log(l2)) * (d[..., :, None] * d[..., None, :])
    log_t = (1.0 - wm)[..., None, None] * log_bg + (m[..., :, None, None] * log_fib).sum(axis=-3)
    tensors = exp_id(log_t)

    # ODF: mixture of the non-fiber compartment and each bundle tensor
    bg_t = exp_id(log_bg)
    comp = np.concatenate([bg_t[..., None, :, :], _fiber_tensor(d)], axis=-3)
    frac = np.concatenate([(1.0 - wm)[..., None], m], axis=-1)
    coeffs = np.zeros(spec.dims + (15,))
    coeffs[..., 0] = 1.0  # isotropic voxels hold the uniform ODF
    pure_gm = (wm == 0) & (tissue == 1.0)
    if spec.gm_fa > 0 and pure_gm.any():
        i = np.argwhere(pure_gm)[0]
        coeffs[pure_gm] = odf_coeffs_from_tensors(bg_t[tuple(i)][None, None], np.ones((1, 1)))[0]
    mixed = (wm > 0) | ((tissue > 0) & (tissue < 1) & (spec.gm_fa > 0))
    coeffs[mixed] = odf_coeffs_from_tensors(comp[mixed], frac[mixed])

    t1 = T1_LEVELS["bg"] + (T1_LEVELS["gm"] - T1_LEVELS["bg"]) * tissue
    t1 = t1 + (T1_LEVELS["wm"] - T1_LEVELS["gm"]) * wm
    if spec.noise > 0:
        t1 = t1 + spec.noise * rng.standard_normal(t1.shape)
    t1 = np.clip(t1, 0.0, 1.0)

    meta.update(geometry=spec.geometry, dims=spec.dims, radius=spec.radius, seed=spec.seed,
                noise=spec.noise, margin=spec.margin, gm_fa=spec.gm_fa, gm_axis=spec.gm_axis)
    affine = np.eye(4)
    return Phantom(
        t1=Volume(t1, affine, "scalar"),
        tensors=Volume(mat_to_sym6(tensors), affine, "tensor"),
        odf=Volume(coeffs, affine, "sh"),
        wm_mask=wm >= 0.5,
        directions=d,
        membership=m,
        meta=meta,
    )
