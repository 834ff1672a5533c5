import struct

import numpy as np
import pytest

from manifold_dwi import UnsupportedFormatError, Volume
from manifold_dwi.io import (
    HEADER_SIZE,
    VOX_OFFSET,
    VolumeHeader,
    export_rgb_ppm,
    export_slice_pgm,
    file_digest,
    read_pgm,
    read_streamlines,
    read_volume,
    write_streamlines,
    write_volume,
)


def _affine():
    a = np.diag([2.0, 1.5, 1.0, 1.0])
    a[:3, 3] = (-10.0, 3.0, 7.25)
    return a


@pytest.mark.parametrize("channels,space", [(1, "scalar"), (6, "tensor"), (15, "sh")])
def test_volume_round_trip_is_bit_exact(tmp_path, rng, channels, space):
    data = rng.normal(size=(8, 8, 8, channels)).astype(np.float32)
    vol = Volume(data, _affine(), space)
    path = tmp_path / "v.nii"
    write_volume(path, vol)
    header, back = read_volume(path)
    assert header.dims == (8, 8, 8) and header.channels == channels
    assert back.space == space
    assert np.array_equal(back.data, data)
    assert np.array_equal(back.affine, _affine())
    # rewriting gives the same bytes: no timestamps or padding noise
    write_volume(tmp_path / "w.nii", back)
    assert file_digest(path) == file_digest(tmp_path / "w.nii")


def test_payload_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    path = tmp_path / "v.nii"
    write_volume(path, Volume(data))
    raw = path.read_bytes()[VOX_OFFSET:]
    first = np.frombuffer(raw, "<f4")[:3]
    assert np.array_equal(first, [data[0, 0, 0], data[1, 0, 0], data[0, 1, 0]])


def test_header_fields_parse_independently(tmp_path):
    vol = Volume(np.zeros((64, 64, 64, 6), np.float32), space="tensor")
    path = tmp_path / "t.nii"
    write_volume(path, vol)
    raw = path.read_bytes()
    assert struct.unpack_from("<i", raw, 0)[0] == HEADER_SIZE
    dim = struct.unpack_from("<8h", raw, 40)
    assert dim[1:4] == (64, 64, 64) and dim[5] == 6
    assert struct.unpack_from("<h", raw, 70)[0] == 16  # float32 code
    assert raw[344:348] == b"n+1\0"


def test_nine_channel_tensors_are_symmetrized(tmp_path, rng):
    m = rng.normal(size=(2, 2, 2, 3, 3)).astype(np.float32)
    vol = Volume(m.reshape(2, 2, 2, 9), space="tensor9")
    write_volume(tmp_path / "f.nii", vol)
    header, back = read_volume(tmp_path / "f.nii")
    assert header.channels == 6 and back.space == "tensor"
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    assert np.allclose(back.data[..., 1], sym[..., 0, 1], atol=1e-6)
    _, raw9 = read_volume(tmp_path / "f.nii", symmetrize=False)
    assert raw9.channels == 9


def _patch(path, offset, fmt, value):
    raw = bytearray(path.read_bytes())
    struct.pack_into(fmt, raw, offset, value)
    path.write_bytes(bytes(raw))


def test_rejects_unsupported_files(tmp_path):
    path = tmp_path / "v.nii"
    write_volume(path, Volume(np.zeros((2, 2, 2), np.float32)))
    _patch(path, 70, "<h", 4)  # int16 datatype
    with pytest.raises(UnsupportedFormatError, match="unsupported format"):
        read_volume(path)

    write_volume(path, Volume(np.zeros((2, 2, 2), np.float32)))
    raw = path.read_bytes()
    gz = tmp_path / "v.nii.gz"
    gz.write_bytes(b"\x1f\x8b" + raw[2:])
    with pytest.raises(UnsupportedFormatError, match="gzip"):
        read_volume(gz)

    big = tmp_path / "big.nii"
    big.write_bytes(struct.pack(">i", HEADER_SIZE) + raw[4:])
    with pytest.raises(UnsupportedFormatError, match="big-endian"):
        read_volume(big)

    short = tmp_path / "short.nii"
    short.write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="payload"):
        read_volume(short)

    with pytest.raises(FileNotFoundError):
        read_volume(tmp_path / "missing.nii")


def test_header_validation():
    with pytest.raises(ValueError):
        VolumeHeader((0, 2, 2), 1, np.eye(4))
    with pytest.raises(ValueError):
        VolumeHeader((2, 2, 2), 4, np.eye(4))
    with pytest.raises(UnsupportedFormatError):
        VolumeHeader((2, 2, 2), 1, np.eye(4), dtype="int16")
    h = VolumeHeader((2, 2, 2), 1, _affine())
    assert np.allclose(h.spacing, [2.0, 1.5, 1.0])


def test_write_rejects_mismatch(tmp_path):
    vol = Volume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError, match="does not match"):
        write_volume(tmp_path / "x.nii", vol, VolumeHeader((2, 2, 3), 1, np.eye(4)))


def test_pgm_zero_slice(tmp_path):
    path = tmp_path / "z.pgm"
    export_slice_pgm(Volume(np.zeros((4, 4, 4))), 2, 1, path)
    assert np.array_equal(read_pgm(path), np.zeros((4, 4), np.uint8))


def test_pgm_ramp_maps_to_column_index(tmp_path):
    ramp = np.broadcast_to(np.linspace(0, 1, 256)[:, None, None], (256, 3, 2)).copy()
    path = tmp_path / "r.pgm"
    export_slice_pgm(Volume(ramp), 2, 0, path)
    img = read_pgm(path)
    assert img.shape == (3, 256)
    assert np.array_equal(img[0], np.arange(256))


def test_pgm_rejects_bad_input(tmp_path):
    data = np.zeros((4, 4, 4))
    data[1, 1, 1] = np.nan
    path = tmp_path / "n.pgm"
    with pytest.raises(ValueError, match="non-finite"):
        export_slice_pgm(Volume(data), 0, 1, path)
    assert not path.exists()
    with pytest.raises(IndexError):
        export_slice_pgm(Volume(np.zeros((4, 4, 4))), 0, 4, path)
    with pytest.raises(ValueError):
        export_slice_pgm(Volume(np.zeros((4, 4, 4, 6)), space="tensor"), 0, 0, path)


def test_ppm_header(tmp_path):
    rgb = np.zeros((3, 4, 5, 3))
    rgb[..., 0] = 1.0
    export_rgb_ppm(rgb, 2, 0, tmp_path / "c.ppm")
    raw = (tmp_path / "c.ppm").read_bytes()
    assert raw.startswith(b"P6\n3 4\n255\n")
    px = np.frombuffer(raw[len(b"P6\n3 4\n255\n"):], np.uint8).reshape(4, 3, 3)
    assert np.all(px[..., 0] == 255) and np.all(px[..., 1:] == 0)


def test_streamlines_round_trip(tmp_path, rng):
    path = tmp_path / "s.bin"
    write_streamlines(path, [])
    assert read_streamlines(path) == []

    write_streamlines(path, [np.array([[0.0, 0, 0], [1, 2, 3]])])
    (one,) = read_streamlines(path)
    assert np.array_equal(one, [[0, 0, 0], [1, 2, 3]])

    lines = [rng.normal(size=(rng.integers(2, 40), 3)).astype(np.float32) for _ in range(1000)]
    write_streamlines(path, lines)
    back = read_streamlines(path)
    assert len(back) == 1000
    assert all(np.array_equal(a, b) for a, b in zip(lines, back))
    digest = file_digest(path)
    write_streamlines(tmp_path / "t.bin", back)
    assert file_digest(tmp_path / "t.bin") == digest


def test_streamlines_reject_bad_files(tmp_path):
    path = tmp_path / "s.bin"
    write_streamlines(path, [np.zeros((3, 3))])
    raw = path.read_bytes()
    path.write_bytes(raw[:-1])
    with pytest.raises(ValueError, match="truncated"):
        read_streamlines(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(ValueError, match="truncated"):
        read_streamlines(path)
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(UnsupportedFormatError):
        read_streamlines(path)
    with pytest.raises(ValueError, match="fewer than 2"):
        write_streamlines(path, [np.zeros((1, 3))])
