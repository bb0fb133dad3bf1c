"""NRMSE / ddNRMSE / SSIM tests."""

import numpy as np
import pytest

from qsmkit.errors import DataError
from qsmkit.metrics import MetricReport, ddnrmse, evaluate, nrmse, ssim
from qsmkit.volume import Mask3D, Volume3D

DIMS = (16, 16, 16)


def rand_pair(seed, dims=DIMS):
    rng = np.random.default_rng(seed)
    gt = Volume3D(rng.standard_normal(dims))
    x = Volume3D(rng.standard_normal(dims))
    mask = Mask3D(rng.random(dims) > 0.3)
    return x, gt, mask


def test_nrmse_exact_match():
    x, gt, mask = rand_pair(0)
    assert nrmse(gt, gt, mask) == 0.0


def test_nrmse_zero_prediction():
    _, gt, mask = rand_pair(1)
    zero = gt.like(np.zeros(DIMS))
    assert abs(nrmse(zero, gt, mask) - 100.0) < 1e-12


def test_nrmse_double_prediction():
    _, gt, mask = rand_pair(2)
    assert abs(nrmse(gt.like(2 * gt.data), gt, mask) - 100.0) < 1e-12


def test_nrmse_scale_behavior():
    _, gt, mask = rand_pair(3)
    for c in (0.25, 1.5, -1.0):
        got = nrmse(gt.like(c * gt.data), gt, mask)
        assert abs(got - 100.0 * abs(c - 1.0)) < 1e-9


def test_nrmse_zero_ground_truth_rejected():
    mask = Mask3D(np.ones(DIMS, dtype=bool))
    zero = Volume3D(np.zeros(DIMS))
    with pytest.raises(DataError):
        nrmse(zero, zero, mask)


def test_ddnrmse_affine_invariance():
    _, gt, mask = rand_pair(4)
    # x = 0.5*gt + 0.3 in-mask: the affine fit removes it exactly
    x = gt.like((0.5 * gt.data + 0.3) * mask.data)
    assert ddnrmse(x, gt, mask) < 1e-9
    assert ddnrmse(gt, gt, mask) < 1e-12


def test_ddnrmse_matches_normal_equations_oracle():
    x, gt, mask = rand_pair(5)
    got = ddnrmse(x, gt, mask)
    xv, gv = x.data[mask.data], gt.data[mask.data]
    A = np.stack([xv, np.ones_like(xv)], axis=1)
    coef = np.linalg.solve(A.T @ A, A.T @ gv)
    fit = coef[0] * xv + coef[1]
    want = 100.0 * np.linalg.norm(fit - gv) / np.linalg.norm(gv)
    assert abs(got - want) < 1e-9


def test_ddnrmse_constant_prediction_rejected():
    _, gt, mask = rand_pair(6)
    with pytest.raises(DataError):
        ddnrmse(gt.like(np.full(DIMS, 3.0)), gt, mask)


def test_ddnrmse_never_exceeds_nrmse():
    for seed in range(50):
        x, gt, mask = rand_pair(100 + seed)
        assert ddnrmse(x, gt, mask) <= nrmse(x, gt, mask) + 1e-9


def test_ssim_identical_volumes():
    _, gt, mask = rand_pair(7)
    assert ssim(gt, gt, mask) == 1.0


def test_ssim_sign_flip_negative():
    rng = np.random.default_rng(8)
    data = rng.standard_normal(DIMS)
    data -= data.mean()
    gt = Volume3D(data)
    mask = Mask3D(np.ones(DIMS, dtype=bool))
    assert ssim(gt.like(-data), gt, mask) < 0.0


def test_ssim_uncorrelated_volumes():
    rng = np.random.default_rng(9)
    gt = Volume3D(rng.standard_normal((32, 32, 32)))
    x = Volume3D(rng.standard_normal((32, 32, 32)))
    mask = Mask3D(np.ones((32, 32, 32), dtype=bool))
    assert abs(ssim(x, gt, mask)) < 0.2


def test_ssim_zero_dynamic_range_rejected():
    mask = Mask3D(np.ones(DIMS, dtype=bool))
    with pytest.raises(DataError):
        ssim(Volume3D(np.zeros(DIMS)), Volume3D(np.ones(DIMS)), mask)


def test_metrics_ignore_out_of_mask_values():
    x, gt, mask = rand_pair(10)
    x2 = x.like(x.data + 100.0 * ~mask.data)
    gt2 = gt.like(gt.data - 7.0 * ~mask.data)
    assert nrmse(x, gt, mask) == nrmse(x2, gt2, mask)
    assert ddnrmse(x, gt, mask) == ddnrmse(x2, gt2, mask)
    assert ssim(x, gt, mask) == ssim(x2, gt2, mask)


def test_evaluate_report():
    x, gt, mask = rand_pair(11)
    rep = evaluate("toy", x, gt, mask)
    assert isinstance(rep, MetricReport)
    assert rep.method == "toy"
    assert rep.nrmse >= 0 and rep.ssim <= 1
    assert rep.mask_voxels == mask.count
