"""Evaluation metrics computed inside a brain mask: NRMSE, ddNRMSE, SSIM."""

from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from .errors import DataError
from .volume import Mask3D, Volume3D

__all__ = ["MetricReport", "nrmse", "ddnrmse", "ssim", "evaluate"]


@dataclass(frozen=True)
class MetricReport:
    method: str
    nrmse: float       # percent
    ddnrmse: float     # percent
    ssim: float
    mask_voxels: int

    def as_dict(self):
        return asdict(self)


def _in_mask(x: Volume3D, gt: Volume3D, mask: Mask3D):
    if x.dims != gt.dims or x.dims != mask.dims:
        raise DataError(f"dims mismatch: {x.dims}/{gt.dims}/{mask.dims}")
    return x.data[mask.data], gt.data[mask.data]


def nrmse(x: Volume3D, gt: Volume3D, mask: Mask3D) -> float:
    """100 * ||x - gt||_2 / ||gt||_2 over in-mask voxels."""
    xv, gv = _in_mask(x, gt, mask)
    denom = np.linalg.norm(gv)
    if denom == 0:
        raise DataError("ground truth has zero in-mask norm")
    return 100.0 * np.linalg.norm(xv - gv) / denom


def ddnrmse(x: Volume3D, gt: Volume3D, mask: Mask3D) -> float:
    """NRMSE after removing the best in-mask affine fit a*x + b -> gt.

    Tolerant to global under/over-estimation: any exact affine relation
    between x and gt yields 0.
    """
    xv, gv = _in_mask(x, gt, mask)
    if xv.std() == 0:
        raise DataError("prediction is constant in-mask; affine fit degenerate")
    A = np.stack([xv, np.ones_like(xv)], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, gv, rcond=None)
    fitted = Volume3D(np.where(mask.data, a * x.data + b, 0.0), x.voxel_size)
    return nrmse(fitted, gt, mask)


def ssim(x: Volume3D, gt: Volume3D, mask: Mask3D,
         k1: float = 0.01, k2: float = 0.03, sigma: float = 1.5,
         win_halfwidth: int = 5) -> float:
    """Mean local SSIM over in-mask window centers.

    3D Gaussian window (sigma=1.5, truncated to 11^3 by default); dynamic
    range taken as the in-mask range of the ground truth.
    """
    xv, gv = _in_mask(x, gt, mask)
    dyn = gv.max() - gv.min()
    if dyn == 0:
        raise DataError("ground truth has zero in-mask dynamic range")
    c1 = (k1 * dyn) ** 2
    c2 = (k2 * dyn) ** 2
    truncate = win_halfwidth / sigma

    def blur(a):
        return ndimage.gaussian_filter(a, sigma, truncate=truncate, mode="constant")

    # zero outside the mask so out-of-mask values cannot leak into windows
    xd = x.data * mask.data
    gd = gt.data * mask.data
    mu_x = blur(xd)
    mu_g = blur(gd)
    var_x = blur(xd * xd) - mu_x**2
    var_g = blur(gd * gd) - mu_g**2
    cov = blur(xd * gd) - mu_x * mu_g
    num = (2 * mu_x * mu_g + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_g**2 + c1) * (var_x + var_g + c2)
    return float(np.mean(num[mask.data] / den[mask.data]))


def evaluate(method: str, x: Volume3D, gt: Volume3D, mask: Mask3D) -> MetricReport:
    """All three metrics for one reconstruction."""
    return MetricReport(
        method=method,
        nrmse=float(nrmse(x, gt, mask)),
        ddnrmse=float(ddnrmse(x, gt, mask)),
        ssim=ssim(x, gt, mask),
        mask_voxels=mask.count,
    )
