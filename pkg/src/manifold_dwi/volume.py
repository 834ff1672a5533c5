"""The voxel-grid container shared by I/O, resampling and metrics."""

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_volume_array

# space tag -> allowed channel counts (None: any even-order SH size)
SPACES = {
    "scalar": (1,),
    "tensor": (6,),
    "tensor_log": (6,),
    "tensor9": (9,),
    "sh": None,
    "sh_log": None,
}
TANGENT_SPACES = ("scalar", "tensor_log", "sh_log")


def _valid_sh_count(k):
    n = int(round((np.sqrt(8 * k + 1) - 3) / 2))
    return n >= 0 and n % 2 == 0 and (n + 1) * (n + 2) // 2 == k


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D grid of scalars, tensors or SH coefficients.

    Parameters
    ----------
    data : ndarray, shape (X, Y, Z, C)
        Voxel values; a 3D array is promoted to one channel.
    affine : ndarray, shape (4, 4)
        Voxel index to world (mm) transform.
    space : str
        What the channels hold: ``scalar``, ``tensor`` (6 upper-triangle
        components xx, xy, xz, yy, yz, zz of SPD tensors), ``tensor_log``
        (the same layout for matrix logarithms), ``tensor9`` (row-major
        full tensors), ``sh`` (unit-norm square-root ODF coefficients) or
        ``sh_log`` (their tangent vectors at the uniform ODF).
    """

    data: np.ndarray
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))
    space: str = "scalar"

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype.kind != "f":
            data = data.astype(float)
        data = check_volume_array(data) if data.ndim != 4 else data
        if min(data.shape[:3]) < 1:
            raise ValueError(f"volume has an empty spatial axis: {data.shape}")
        object.__setattr__(self, "data", data)
        affine = np.asarray(self.affine, dtype=float)
        if affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValueError("affine is not invertible")
        object.__setattr__(self, "affine", affine)
        if self.space not in SPACES:
            raise ValueError(f"unknown volume space {self.space!r}")
        allowed = SPACES[self.space]
        c = data.shape[-1]
        if allowed is None:
            if not _valid_sh_count(c):
                raise ValueError(f"{c} channels is not an even-order SH basis size")
        elif c not in allowed:
            raise ValueError(f"space {self.space!r} needs {allowed} channels, got {c}")

    @property
    def shape(self):
        return self.data.shape[:3]

    @property
    def channels(self):
        return self.data.shape[3]

    @property
    def spacing(self):
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def with_data(self, data, space=None):
        return replace(self, data=np.asarray(data), space=space or self.space)

    def scalar(self):
        """The single channel as a 3D array."""
        if self.channels != 1:
            raise ValueError(f"expected a scalar volume, got {self.channels} channels")
        return self.data[..., 0]
