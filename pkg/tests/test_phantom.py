import numpy as np
import pytest

from manifold_dwi._validation import sym6_to_mat
from manifold_dwi.odf import gfa, odf_maxima
from manifold_dwi.spd import eig_sym3, fa
from manifold_dwi.synth import PhantomSpec, phantom_gen
from manifold_dwi.synth.phantom import _axial_ratio
from manifold_dwi.volume_ops import audit_validity


def _fa_map(ph):
    return fa(eig_sym3(sym6_to_mat(ph.tensors.data)).eigenvalues)


def test_deterministic_per_seed():
    a = phantom_gen(geometry="straight", dims=(12, 12, 12), radius=3.0, seed=3)
    b = phantom_gen(geometry="straight", dims=(12, 12, 12), radius=3.0, seed=3)
    c = phantom_gen(geometry="straight", dims=(12, 12, 12), radius=3.0, seed=4)
    assert np.array_equal(a.t1.data, b.t1.data)
    assert np.array_equal(a.tensors.data, b.tensors.data)
    assert np.array_equal(a.odf.data, b.odf.data)
    assert not np.array_equal(a.t1.data, c.t1.data)


def test_straight_core_points_along_z(small_straight):
    ev = eig_sym3(sym6_to_mat(small_straight.tensors.data))
    core = _fa_map(small_straight) >= 0.5
    assert core.sum() > 0
    e1 = ev.eigenvectors[..., :, 0][core]
    assert np.allclose(np.abs(e1), [0.0, 0.0, 1.0], atol=1e-12)


def test_high_fa_core_exists(small_straight):
    assert _fa_map(small_straight).max() >= 0.5


def test_crossing_region_has_two_peaks(small_crossing):
    X, Y, Z = small_crossing.odf.shape
    centre = small_crossing.odf.data[X // 2, Y // 2, Z // 2]
    peaks = odf_maxima(centre)
    assert len(peaks) == 2
    axes = np.abs(peaks)
    assert {int(np.argmax(a)) for a in axes} == {0, 1}
    assert np.all(np.max(axes, axis=1) > np.cos(np.deg2rad(5.0)))


@pytest.mark.parametrize("geometry", ["straight", "arc", "crossing"])
def test_audit_finds_no_invalid_voxels(geometry):
    ph = phantom_gen(geometry=geometry, dims=(16, 16, 16), radius=3.0, margin=2,
                     arc_radius=10.0 if geometry == "arc" else None)
    assert audit_validity(ph.tensors).n_invalid == 0
    assert audit_validity(ph.odf).n_invalid == 0


def test_unknown_geometry_raises():
    with pytest.raises(ValueError, match="unknown geometry"):
        phantom_gen(geometry="helix")


@pytest.mark.parametrize("kwargs", [{"radius": 0.0}, {"noise": -1.0}, {"gm_fa": 1.0},
                                    {"gm_axis": (0.0, 0.0, 0.0)}, {"dims": (4, 4)}])
def test_invalid_spec_raises(kwargs):
    with pytest.raises(ValueError):
        PhantomSpec(**kwargs)


def test_spec_and_kwargs_are_exclusive():
    with pytest.raises(TypeError):
        phantom_gen(PhantomSpec(), radius=2.0)


@pytest.mark.parametrize("target", [0.0, 0.05, 0.15, 0.4, 0.9])
def test_axial_ratio_gives_requested_fa(target):
    r = _axial_ratio(target)
    assert fa(np.array([r, 1.0, 1.0])) == pytest.approx(target, abs=1e-12)


def test_grey_matter_fa_and_free_water_border():
    ph = phantom_gen(geometry="straight", dims=(16, 16, 16), radius=3.0, margin=2, gm_fa=0.15)
    f = _fa_map(ph)
    assert f[4, 4, 8] == pytest.approx(0.15, abs=1e-12)  # grey matter
    assert f[0, 0, 0] == pytest.approx(0.0, abs=1e-12)  # free-water border
    assert gfa(ph.odf.data[4, 4, 8]) > 0.0
    assert gfa(ph.odf.data[0, 0, 0]) == pytest.approx(0.0, abs=1e-12)


def test_t1_separates_tissue_classes(small_straight):
    t1 = small_straight.t1.data.reshape(small_straight.wm_mask.shape)
    wm = small_straight.wm_mask
    assert t1[wm].mean() > t1[~wm & (t1 > 0.3)].mean() + 0.3
    assert 0.0 <= t1.min() and t1.max() <= 1.0
