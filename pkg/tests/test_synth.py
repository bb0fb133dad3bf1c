"""Synthetic training-data generation tests."""

import numpy as np
import pytest

from qsmkit import dipole as dp
from qsmkit import synth
from qsmkit.errors import DataError
from qsmkit.volume import KGrid, Mask3D, Volume3D, erode_mask


def laplacian7(data, voxel_size=(1.0, 1.0, 1.0)):
    """7-point discrete Laplacian, the harmonicity oracle."""
    out = np.zeros_like(data)
    for a, d in enumerate(voxel_size):
        out += (np.roll(data, 1, axis=a) + np.roll(data, -1, axis=a)
                - 2 * data) / d**2
    return out


def harmonicity_ratio(field, mask):
    """Masked-Laplacian RMS relative to the field RMS inside the mask."""
    inner = erode_mask(mask, 2)
    lap = laplacian7(field.data, field.voxel_size)[inner.data]
    ref = field.data[inner.data]
    return float(np.sqrt((lap**2).mean()) / np.sqrt((ref**2).mean()))


# ---------------------------------------------------------------------------
# label phantoms


def test_phantom_two_classes():
    lv = synth.make_label_phantom((16, 16, 16), 2, seed=0)
    ids = np.unique(lv.data)
    assert list(ids) == [0, 1, 2]
    assert all((lv.data == c).sum() > 0 for c in (1, 2))


def test_phantom_determinism():
    a = synth.make_label_phantom((16, 16, 16), 5, seed=3)
    b = synth.make_label_phantom((16, 16, 16), 5, seed=3)
    assert np.array_equal(a.data, b.data)


def test_phantom_184_classes():
    lv = synth.make_label_phantom((64, 64, 64), 184, seed=1)
    counts = np.bincount(lv.data.ravel())
    assert len(counts) == 185
    assert np.all(counts[1:] > 0)


def test_phantom_rejects_tiny_grid():
    with pytest.raises(DataError):
        synth.make_label_phantom((4, 4, 4), 500, seed=0)


def test_phantom_needs_two_classes():
    with pytest.raises(DataError):
        synth.make_label_phantom((16, 16, 16), 1, seed=0)


# ---------------------------------------------------------------------------
# affine deformation


def test_affine_identity():
    lv = synth.make_label_phantom((16, 16, 16), 4, seed=2)
    out = synth.apply_affine_labels(lv, np.eye(3))
    assert np.array_equal(out.data, lv.data)


def test_affine_90deg_rotation_matches_permutation_oracle():
    lv = synth.make_label_phantom((17, 17, 17), 2, seed=4)
    # make it asymmetric so a wrong rotation cannot pass
    data = lv.data.copy()
    data[:6, :, :][data[:6, :, :] == 1] = 2
    lv = synth.LabelVolume(data)
    # pull-back with R maps output voxel o to input R(o - c) + c; for
    # R = rotation by 90 deg about z, (x, y) <- (y, -y-direction)
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    out = synth.apply_affine_labels(lv, rot)
    want = np.rot90(lv.data, k=1, axes=(1, 0))
    assert np.array_equal(out.data, want)


def test_affine_no_new_labels():
    lv = synth.make_label_phantom((16, 16, 16), 6, seed=5)
    for seed in range(5):
        out = synth.random_affine_deform(lv, seed)
        assert set(np.unique(out.data)) <= set(np.unique(lv.data))


def test_affine_deform_determinism():
    lv = synth.make_label_phantom((16, 16, 16), 6, seed=5)
    a = synth.random_affine_deform(lv, 9)
    b = synth.random_affine_deform(lv, 9)
    assert np.array_equal(a.data, b.data)


# ---------------------------------------------------------------------------
# GMM intensities and quartile scaling


def test_gmm_sigma_zero_piecewise_constant():
    lv = synth.make_label_phantom((16, 16, 16), 2, seed=6)
    out = synth.gmm_sample_intensities(lv, seed=0, sigma_range=(0.0, 0.0))
    for c in (1, 2):
        vals = out.data[lv.data == c]
        assert np.ptp(vals) == 0.0


def test_gmm_class_means():
    lv = synth.make_label_phantom((32, 32, 32), 4, seed=7)
    out = synth.gmm_sample_intensities(lv, seed=1)
    # re-derive the per-class draws with the same generator contract
    rng = np.random.default_rng(1)
    mu = rng.uniform(-1.0, 1.0, size=4)
    sigma = rng.uniform(0.005, 0.05, size=4)
    for c in range(1, 5):
        vals = out.data[lv.data == c]
        assert abs(vals.mean() - mu[c - 1]) < 3 * sigma[c - 1] / np.sqrt(len(vals))


def test_gmm_background_zero():
    lv = synth.make_label_phantom((16, 16, 16), 3, seed=8)
    out = synth.gmm_sample_intensities(lv, seed=2)
    assert np.all(out.data[lv.data == 0] == 0)


def test_scale_quartiles_fixed_point():
    rng = np.random.default_rng(9)
    mask = Mask3D(np.ones((12, 12, 12), dtype=bool))
    vals = rng.standard_normal((12, 12, 12))
    vals -= vals.mean()
    q1, q3 = np.percentile(vals, [25, 75])
    vals /= (q3 - q1)
    vals -= vals.mean()
    out = synth.scale_quartiles(Volume3D(vals), mask)
    assert np.abs(out.data - vals).max() < 1e-12


def test_scale_quartiles_normalizes():
    rng = np.random.default_rng(10)
    mask = Mask3D(rng.random((16, 16, 16)) > 0.4)
    chi = Volume3D(rng.normal(5.0, 2.0, size=(16, 16, 16)))
    out = synth.scale_quartiles(chi, mask)
    vals = out.data[mask.data]
    q1, q3 = np.percentile(vals, [25, 75])
    assert abs(vals.mean()) < 1e-9
    assert abs((q3 - q1) - 1.0) < 1e-9
    assert np.all(out.data[~mask.data] == 0)


def test_scale_quartiles_constant_rejected():
    mask = Mask3D(np.ones((8, 8, 8), dtype=bool))
    with pytest.raises(DataError):
        synth.scale_quartiles(Volume3D(np.full((8, 8, 8), 2.0)), mask)


# ---------------------------------------------------------------------------
# background simulation


def brain_and_chi(dims=(16, 16, 16), seed=0):
    lv = synth.make_label_phantom(dims, 5, seed=seed)
    chi = synth.scale_quartiles(synth.gmm_sample_intensities(lv, seed + 1),
                                lv.brain_mask())
    return chi, lv.brain_mask()


def test_background_zero_amplitude_sources():
    chi, mask = brain_and_chi()
    spec = synth.BackgroundSourceSpec(count_range=(5, 10), chi_value=0.0,
                                      chi_spread=0.0)
    tf, lf = synth.simulate_background(chi, mask, spec, seed=0)
    assert np.abs(tf.data - lf.data * mask.data).max() < 1e-12


def test_background_local_field_is_forward_model():
    chi, mask = brain_and_chi(seed=3)
    spec = synth.BackgroundSourceSpec(count_range=(5, 10))
    _, lf = synth.simulate_background(chi, mask, spec, seed=1)
    op = dp.build_dipole(KGrid(chi.dims, chi.voxel_size))
    assert np.abs(lf.data - dp.forward(op, chi).data).max() < 1e-12


def test_background_single_source_harmonic():
    chi, mask = brain_and_chi(seed=5)
    spec = synth.BackgroundSourceSpec(count_range=(1, 1), volume_frac=0.02)
    tf, lf = synth.simulate_background(chi, mask, spec, seed=2)
    bg = tf.like((tf.data - lf.data) * mask.data)
    assert np.sqrt((bg.data[mask.data] ** 2).mean()) > 0
    assert harmonicity_ratio(bg, mask) < 1e-2


def test_background_dominates_local_field():
    chi, mask = brain_and_chi(seed=7)
    spec = synth.BackgroundSourceSpec()  # ~100 sources at ~9.2
    tf, lf = synth.simulate_background(chi, mask, spec, seed=3)
    m = mask.data
    assert np.linalg.norm((tf.data - lf.data)[m]) > np.linalg.norm(lf.data[m])


def test_background_sources_respect_margin():
    # impossible placement: margin larger than the padded grid
    chi, mask = brain_and_chi()
    spec = synth.BackgroundSourceSpec(count_range=(50, 50), margin=30,
                                      pad_frac=0.1, max_retries=10)
    with pytest.raises(DataError):
        synth.simulate_background(chi, mask, spec, seed=4)


# ---------------------------------------------------------------------------
# dataset generation


def test_generate_dataset_composition():
    spec = synth.BackgroundSourceSpec(count_range=(5, 10))
    samples = list(synth.generate_dataset(2, 3, (16, 16, 16), spec, seed=11))
    assert len(samples) == 6
    for s in samples:
        op = dp.build_dipole(KGrid(s.chi.dims, s.chi.voxel_size))
        assert np.abs(s.local_field.data - dp.forward(op, s.chi).data).max() < 1e-12
        vals = s.chi.data[s.mask.data]
        q1, q3 = np.percentile(vals, [25, 75])
        assert abs(vals.mean()) < 1e-6 * (q3 - q1)
        assert abs((q3 - q1) - 1.0) < 1e-6
        bg = s.total_field.like((s.total_field.data - s.local_field.data)
                                * s.mask.data)
        assert harmonicity_ratio(bg, s.mask) < 1e-2


def test_generate_dataset_paper_scale_count():
    spec = synth.BackgroundSourceSpec(count_range=(1, 2), volume_frac=0.02)
    n = sum(1 for _ in synth.generate_dataset(28, 30, (8, 8, 8), spec, seed=12))
    assert n == 840


def test_generate_dataset_determinism():
    spec = synth.BackgroundSourceSpec(count_range=(5, 10))
    a = next(iter(synth.generate_dataset(2, 2, (16, 16, 16), spec, seed=13)))
    b = next(iter(synth.generate_dataset(2, 2, (16, 16, 16), spec, seed=13)))
    for fa, fb in ((a.chi, b.chi), (a.local_field, b.local_field),
                   (a.total_field, b.total_field)):
        assert np.array_equal(fa.data, fb.data)
    assert np.array_equal(a.mask.data, b.mask.data)
