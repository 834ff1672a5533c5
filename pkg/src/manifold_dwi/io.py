"""File I/O: a float32 NIfTI-1 subset, PGM/PPM slice export, streamlines.

Streamline binary layout (all little-endian)::

    8 bytes   magic  b"MDWISTR1"
    u32       number of streamlines N
    u32 * N   point count of each streamline (each >= 2)
    f32 * 3P  x, y, z of every point in world mm, streamlines concatenated

The file ends exactly after the last float; trailing or missing bytes are
rejected.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from ._validation import UnsupportedFormatError, mat_to_sym6, full9_to_mat
from .volume import SPACES, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
NIFTI_FLOAT32 = 16
INTENT_VECTOR = 1007
CHANNELS = (1, 6, 9, 15)

_HDR = struct.Struct("<i10s18sihcb8h3f4h8f3fhcb4f2i80s24s2h6f4f4f4f16s4s")
assert _HDR.size == HEADER_SIZE

STREAMLINE_MAGIC = b"MDWISTR1"

_DEFAULT_SPACE = {1: "scalar", 6: "tensor", 9: "tensor9", 15: "sh"}


@dataclass(frozen=True)
class VolumeHeader:
    """Geometry of a stored volume.

    ``spacing`` is derived from the affine column norms; the only dtype
    is float32.
    """

    dims: tuple
    channels: int
    affine: np.ndarray
    space: str = "scalar"
    dtype: str = "float32"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        if self.channels not in CHANNELS:
            raise ValueError(f"channels must be one of {CHANNELS}, got {self.channels}")
        affine = np.asarray(self.affine, dtype=float)
        if affine.shape != (4, 4) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise ValueError("affine must be an invertible 4x4 matrix")
        object.__setattr__(self, "affine", affine)
        if self.dtype != "float32":
            raise UnsupportedFormatError(f"unsupported format: dtype {self.dtype}")

    @property
    def spacing(self):
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    @classmethod
    def from_volume(cls, vol):
        return cls(vol.shape, vol.channels, vol.affine, vol.space)


def _pad(s, n):
    b = s.encode("ascii")[:n]
    return b + b"\0" * (n - len(b))


def _header_bytes(h):
    dim = [3, *h.dims, 1, 1, 1, 1]
    if h.channels > 1:
        dim[0] = 5
        dim[5] = h.channels
    pixdim = [1.0, *h.spacing, 1.0, 1.0, 1.0, 1.0]
    a = h.affine
    return _HDR.pack(
        HEADER_SIZE, b"", b"", 0, 0, b"r", 0, *dim,
        0.0, 0.0, 0.0,
        INTENT_VECTOR if h.channels > 1 else 0, NIFTI_FLOAT32, 32, 0,
        *pixdim,
        float(VOX_OFFSET), 1.0, 0.0,
        0, b"\0", 2,
        0.0, 0.0, 0.0, 0.0, 0, 0,
        _pad("manifold_dwi", 80), b"",
        0, 1,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        *a[0], *a[1], *a[2],
        _pad(h.space, 16), b"n+1\0",
    )


def write_volume(path, volume, header=None):
    """Write a volume as an uncompressed single-file float32 NIfTI-1.

    Parameters
    ----------
    path : str or path-like
    volume : Volume
    header : VolumeHeader, optional
        Must agree with the volume; derived from it when omitted.
    """
    if header is None:
        header = VolumeHeader.from_volume(volume)
    if tuple(volume.shape) != header.dims or volume.channels != header.channels:
        raise ValueError(
            f"header {header.dims}x{header.channels} does not match data "
            f"{volume.shape}x{volume.channels}"
        )
    data = np.asarray(volume.data)
    if not np.all(np.isfinite(data)):
        raise ValueError("volume contains non-finite values")
    payload = data.astype("<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(_header_bytes(header))
        fh.write(b"\0" * (VOX_OFFSET - HEADER_SIZE))
        fh.write(payload)


def _parse_header(raw):
    if raw[:2] == b"\x1f\x8b":
        raise UnsupportedFormatError("unsupported format: gzip-compressed NIfTI")
    if len(raw) < VOX_OFFSET:
        raise UnsupportedFormatError("unsupported format: file shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
            raise UnsupportedFormatError("unsupported format: big-endian NIfTI")
        raise UnsupportedFormatError("unsupported format: not a NIfTI-1 header")
    f = _HDR.unpack_from(raw, 0)
    if f[-1] != b"n+1\0":
        raise UnsupportedFormatError(f"unsupported format: magic {f[-1]!r}")
    dim = f[7:15]
    datatype, bitpix = f[19], f[20]
    if datatype != NIFTI_FLOAT32 or bitpix != 32:
        raise UnsupportedFormatError(f"unsupported format: datatype code {datatype}")
    vox_offset, slope, inter = f[30], f[31], f[32]
    if vox_offset != VOX_OFFSET or raw[HEADER_SIZE:VOX_OFFSET] != b"\0" * 4:
        raise UnsupportedFormatError("unsupported format: header extensions")
    if slope not in (0.0, 1.0) or inter != 0.0:
        raise UnsupportedFormatError("unsupported format: intensity scaling")
    ndim = dim[0]
    if ndim == 3:
        channels = 1
    elif ndim == 4:
        channels = dim[4]
    elif ndim == 5 and dim[4] == 1:
        channels = dim[5]
    else:
        raise UnsupportedFormatError(f"unsupported format: dim {dim}")
    dims = dim[1:4]
    if min(dims) < 1:
        raise ValueError(f"malformed header: dims {dims}")
    qform_code, sform_code = f[44], f[45]
    if sform_code > 0:
        affine = np.array([f[52:56], f[56:60], f[60:64], (0, 0, 0, 1)], dtype=float)
    else:
        affine = np.diag([*f[23:26], 1.0])
    space = f[64].split(b"\0", 1)[0].decode("ascii", "replace")
    if space not in SPACES:
        space = _DEFAULT_SPACE.get(channels, "scalar")
    return dims, channels, affine, space


def read_volume(path, symmetrize=True):
    """Read a float32 NIfTI-1 subset file.

    Parameters
    ----------
    path : str or path-like
    symmetrize : bool, default=True
        Convert 9-channel full tensors to the 6-channel symmetric layout.

    Returns
    -------
    header : VolumeHeader
    volume : Volume

    Raises
    ------
    UnsupportedFormatError
        For gzip, big-endian, non-float32, extended or multi-file NIfTI.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    dims, channels, affine, space = _parse_header(raw)
    n = int(np.prod(dims)) * channels
    payload = raw[VOX_OFFSET:]
    if len(payload) != 4 * n:
        raise ValueError(f"malformed file: payload has {len(payload)} bytes, expected {4 * n}")
    data = np.frombuffer(payload, dtype="<f4").reshape((*dims, channels), order="F")
    data = data.astype(np.float32)
    if channels == 9 and symmetrize:
        data = mat_to_sym6(full9_to_mat(data)).astype(np.float32)
        channels, space = 6, "tensor" if space == "tensor9" else space
    header = VolumeHeader(dims, channels, affine, space)
    return header, Volume(data, affine, space)


def _slice(volume, axis, index):
    data = volume.scalar() if isinstance(volume, Volume) else np.asarray(volume, dtype=float)
    if data.ndim == 4 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise ValueError(f"expected a scalar volume, got shape {data.shape}")
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    if not 0 <= index < data.shape[axis]:
        raise IndexError(f"slice index {index} out of range for axis of size {data.shape[axis]}")
    return np.take(data, index, axis=axis)


def slice_to_uint8(s):
    """Min-max scale a 2D slice to 0..255; a constant slice maps to 0."""
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("slice contains non-finite values")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.zeros(s.shape, dtype=np.uint8)
    return np.rint((s - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_slice_pgm(volume, axis, index, path):
    """Write one slice of a scalar volume as a binary (P5) PGM.

    Image columns follow the first remaining axis and rows the second, so
    ``pixel[row, col] = slice[col, row]``.
    """
    img = slice_to_uint8(_slice(volume, axis, index)).T
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def export_rgb_ppm(rgb, axis, index, path):
    """Write one slice of an RGB volume (values in [0, 1]) as a P6 PPM."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 4 or rgb.shape[-1] != 3:
        raise ValueError(f"expected an (X, Y, Z, 3) array, got {rgb.shape}")
    if not np.all(np.isfinite(rgb)):
        raise ValueError("RGB volume contains non-finite values")
    if not 0 <= index < rgb.shape[axis]:
        raise IndexError(f"slice index {index} out of range for axis of size {rgb.shape[axis]}")
    s = np.take(rgb, index, axis=axis)
    img = np.rint(np.clip(s, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 0, 2)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path):
    """Read a binary PGM written by :func:`export_slice_pgm`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P5":
        raise UnsupportedFormatError("unsupported format: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise UnsupportedFormatError("unsupported format: PGM maxval must be 255")
    pixels = raw[len(raw) - w * h :]
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def write_streamlines(path, streamlines):
    """Write polylines in the documented streamline binary.

    Parameters
    ----------
    streamlines : sequence of array_like, each shape (n_i, 3) with n_i >= 2
    """
    arrays = [np.asarray(s, dtype=float) for s in streamlines]
    for i, s in enumerate(arrays):
        if s.ndim != 2 or s.shape[1] != 3:
            raise ValueError(f"streamline {i} must have shape (n, 3), got {s.shape}")
        if len(s) < 2:
            raise ValueError(f"streamline {i} has fewer than 2 points")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"streamline {i} contains non-finite points")
    counts = np.array([len(s) for s in arrays], dtype="<u4")
    points = np.concatenate(arrays).astype("<f4") if arrays else np.zeros((0, 3), "<f4")
    with open(path, "wb") as fh:
        fh.write(STREAMLINE_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        fh.write(counts.tobytes())
        fh.write(points.tobytes())


def read_streamlines(path):
    """Read the streamline binary; returns a list of float32 (n_i, 3) arrays."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != STREAMLINE_MAGIC:
        raise UnsupportedFormatError("unsupported format: bad streamline magic")
    if len(raw) < 12:
        raise ValueError("truncated streamline file: missing count")
    (n,) = struct.unpack_from("<I", raw, 8)
    end_counts = 12 + 4 * n
    if len(raw) < end_counts:
        raise ValueError("truncated streamline file: point counts")
    counts = np.frombuffer(raw, dtype="<u4", count=n, offset=12).astype(np.int64)
    if np.any(counts < 2):
        raise ValueError("malformed streamline file: streamline with fewer than 2 points")
    total = int(counts.sum())
    if len(raw) != end_counts + 12 * total:
        raise ValueError(
            f"truncated streamline file: expected {end_counts + 12 * total} bytes, got {len(raw)}"
        )
    pts = np.frombuffer(raw, dtype="<f4", count=3 * total, offset=end_counts)
    pts = pts.reshape(total, 3).astype(np.float32)
    return np.split(pts, np.cumsum(counts)[:-1]) if n else []


def file_digest(path):
    """SHA-256 of a file's bytes, for determinism checks."""
    import hashlib

    h = hashlib.sha256()
    with open(os.fspath(path), "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
