"""Input validation helpers and shared error types."""

import numpy as np

# upper-triangle storage order: xx, xy, xz, yy, yz, zz
SYM6_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_ROWS = np.array([i for i, _ in SYM6_INDEX])
_COLS = np.array([j for _, j in SYM6_INDEX])


class NotOnManifoldError(ValueError):
    """Raised when a value is required to lie on a manifold and does not."""


class DegenerateError(ValueError):
    """Raised when a quantity is undefined for degenerate input."""


class UnsupportedFormatError(ValueError):
    """Raised by the file readers for anything outside the supported subset."""


def check_finite(x, name="input"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_sym_matrices(m, name="matrix"):
    """Return ``m`` as a float array of shape (..., 3, 3), finite and symmetric."""
    m = check_finite(m, name)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"{name} must have shape (..., 3, 3), got {m.shape}")
    scale = np.maximum(np.abs(m).max(axis=(-2, -1), initial=0.0), 1.0)
    asym = np.abs(m - np.swapaxes(m, -1, -2)).max(axis=(-2, -1), initial=0.0)
    if np.any(asym > 1e-8 * scale):
        raise ValueError(f"{name} is not symmetric")
    return m


def sym6_to_mat(s):
    """Expand (..., 6) upper-triangle components to (..., 3, 3) matrices."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != 6:
        raise ValueError(f"expected 6 components in last axis, got {s.shape[-1]}")
    m = np.empty(s.shape[:-1] + (3, 3))
    m[..., _ROWS, _COLS] = s
    m[..., _COLS, _ROWS] = s
    return m


def mat_to_sym6(m):
    """Pack (..., 3, 3) symmetric matrices to (..., 6), symmetrizing first."""
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    return m[..., _ROWS, _COLS]


def full9_to_mat(f):
    """Reshape (..., 9) row-major components to (..., 3, 3)."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != 9:
        raise ValueError(f"expected 9 components in last axis, got {f.shape[-1]}")
    return f.reshape(f.shape[:-1] + (3, 3))


def check_same_shape(*arrays, names=None):
    shapes = [np.shape(a) for a in arrays]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ValueError(f"shape mismatch between {label}: {shapes}")


def check_volume_array(data, name="volume"):
    """Return ``data`` as a float array of shape (X, Y, Z, C)."""
    data = np.asarray(data)
    if data.dtype.kind != "f":
        data = data.astype(float)
    if data.ndim == 3:
        data = data[..., None]
    if data.ndim != 4:
        raise ValueError(f"{name} must be 3D or 4D, got shape {data.shape}")
    if min(data.shape[:3]) < 1:
        raise ValueError(f"{name} has an empty spatial axis: {data.shape}")
    return data


def check_mask(mask, name="mask"):
    mask = np.asarray(mask)
    if mask.ndim == 4 and mask.shape[-1] == 1:
        mask = mask[..., 0]
    if mask.ndim != 3:
        raise ValueError(f"{name} must be a 3D array, got shape {mask.shape}")
    return mask.astype(bool)


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
