import numpy as np
import pytest

from manifold_dwi import Volume
from manifold_dwi._validation import mat_to_sym6
from manifold_dwi.metrics import streamline_length
from manifold_dwi.odf import odf_coeffs_from_tensors
from manifold_dwi.synth import phantom_gen
from manifold_dwi.tractography import (
    TrackingField,
    TrackingParams,
    direction_at,
    seed_mask,
    track,
)


def _fiber(d, l1=1.7, l2=0.2):
    d = np.asarray(d, float)
    d /= np.linalg.norm(d)
    return l2 * np.eye(3) + (l1 - l2) * np.outer(d, d)


def _uniform_tensor(direction, shape=(8, 8, 8)):
    t = mat_to_sym6(_fiber(direction))
    return Volume(np.broadcast_to(t, shape + (6,)).copy(), space="tensor")


def test_params_validation():
    p = TrackingParams()
    assert (p.step, p.max_angle, p.seeds_per_voxel, p.min_length, p.max_length) == \
        (0.5, 60.0, 2, 10.0, 300.0)
    for bad in (dict(step=0), dict(max_angle=90), dict(max_angle=0), dict(seeds_per_voxel=0),
                dict(min_length=20, max_length=10)):
        with pytest.raises(ValueError):
            TrackingParams(**bad)


def test_seed_mask_counts(rng):
    assert seed_mask(np.zeros((3, 3, 3), bool)).shape == (0, 3)
    m = np.zeros((3, 3, 3), bool)
    m[1, 2, 0] = True
    s = seed_mask(m, 2, 0)
    assert s.shape == (2, 3)
    assert np.all(np.floor(s + 0.5) == [1, 2, 0])
    m = rng.uniform(size=(6, 6, 6)) > 0.5
    assert len(seed_mask(m, 2, 1)) == 2 * m.sum()
    assert np.array_equal(seed_mask(m, 2, 1), seed_mask(m, 2, 1))
    affine = np.diag([2.0, 2.0, 2.0, 1.0])
    assert np.allclose(seed_mask(m, 2, 1, affine), 2 * seed_mask(m, 2, 1))


def test_direction_uniform_field():
    vol = _uniform_tensor([0, 0, 1])
    p = np.array([3.2, 4.1, 3.9])
    assert np.allclose(direction_at(vol, p, [0, 0, 1]), [0, 0, 1])
    assert np.allclose(direction_at(vol, p, [0, 0, -1]), [0, 0, -1])
    # a 70 degree turn is above the 60 degree limit
    assert direction_at(vol, p, [np.sin(np.radians(70)), 0, np.cos(np.radians(70))]) is None
    assert direction_at(vol, [-3.0, 0, 0]) is None


def test_direction_outside_mask():
    vol = _uniform_tensor([0, 0, 1])
    mask = np.zeros(vol.shape, bool)
    field = TrackingField.from_volume(vol, mask)
    assert direction_at(field, [3.0, 3.0, 3.0]) is None


def test_direction_crossing_odf_keeps_axis():
    t = np.stack([_fiber([1, 0, 0]), _fiber([0, 1, 0])])
    c = odf_coeffs_from_tensors(t[None])[0]
    vol = Volume(np.broadcast_to(c, (5, 5, 5, 15)).copy(), space="sh")
    p = np.array([2.0, 2.0, 2.0])
    for axis in ([1, 0, 0], [0, 1, 0], [0, -1, 0]):
        d = direction_at(vol, p, axis)
        assert np.degrees(np.arccos(min(np.dot(d, axis), 1.0))) < 2.0


def test_isotropic_field_gives_nothing():
    vol = Volume(np.tile([1.0, 0, 0, 1, 0, 1], (8, 8, 8, 1)), space="tensor")
    assert track(vol, params=TrackingParams(min_length=0.0)) == []


def _corridor(length):
    p = phantom_gen(geometry="straight", dims=(16, 16, 64), radius=3.0, length=length,
                    margin=2, seed=0)
    return p.tensors, p.wm_mask


def test_short_corridor_is_filtered():
    vol, mask = _corridor(5)
    assert track(vol, mask) == []


def test_straight_corridor_lengths_and_invariants():
    vol, mask = _corridor(30)
    params = TrackingParams()
    lines = track(vol, mask, params)
    assert len(lines) > 0
    lengths = np.array([streamline_length(s) for s in lines])
    assert lengths.min() >= 10 and lengths.max() <= 300
    assert abs(lengths.mean() - 30) < 1.0
    cos_max = np.cos(np.radians(params.max_angle))
    for s in lines[::50]:
        seg = np.diff(s, axis=0)
        assert np.allclose(np.linalg.norm(seg, axis=1), params.step, atol=1e-9)
        u = seg / np.linalg.norm(seg, axis=1, keepdims=True)
        assert np.all((u[1:] * u[:-1]).sum(1) >= cos_max - 1e-12)
        idx = np.floor(s + 0.5).astype(int)
        assert mask[tuple(idx.T)].all()


def test_track_is_deterministic_and_thread_independent():
    vol, mask = _corridor(20)
    a = track(vol, mask, rng_seed=3)
    b = track(vol, mask, rng_seed=3, n_threads=3)
    assert len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))
    c = track(vol, mask, rng_seed=4)
    assert len(c) != len(a) or not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_arc_length_close_to_analytic():
    p = phantom_gen(geometry="arc", dims=(48, 16, 48), radius=2.0, arc_radius=30.0, margin=2)
    R = p.meta["arc_radius"]
    cx, cz = p.meta["arc_center_xz"]
    seed = np.array([[cx + R * np.cos(np.pi / 4), p.meta["y_center"], cz + R * np.sin(np.pi / 4)]])
    (line,) = track(p.tensors, p.wm_mask, seeds=seed)
    # the quarter circle runs from the z = margin face to the x = margin face
    analytic = R * np.pi / 2
    assert abs(streamline_length(line) - analytic) / analytic < 0.02


def test_grid_mismatch():
    vol = _uniform_tensor([0, 0, 1])
    with pytest.raises(ValueError, match="grid mismatch"):
        track(vol, np.ones((2, 2, 2), bool))
    field = TrackingField.from_volume(vol)
    with pytest.raises(ValueError, match="grid mismatch"):
        track(field, np.ones((2, 2, 2), bool))
    with pytest.raises(TypeError):
        TrackingField.from_volume(np.zeros((2, 2, 2, 6)))
