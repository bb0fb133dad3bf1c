"""Dense 3D volumes, masks, k-space grids and the FFT contract.

Conventions used everywhere in the package:

* arrays are indexed ``(x, y, z)`` and stored C-contiguous, so z is the
  fastest-varying axis in memory and on disk;
* the forward DFT is unnormalized, the inverse carries the 1/N factor
  (``numpy.fft`` default), which makes Parseval read
  ``N * ||v||^2 == ||F v||^2``;
* frequencies are physical, in cycles/mm, with frequency 0 at index 0 and
  negative frequencies in the upper half of each axis.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError, NumericalError

__all__ = [
    "Volume3D",
    "Mask3D",
    "Spectrum3D",
    "KGrid",
    "fft3_forward",
    "fft3_inverse",
    "erode_mask",
    "dilate_mask",
]

# Residual imaginary energy allowed when collapsing a spectrum back to a
# real volume (relative to the real part's magnitude).
IMAG_TOL = 1e-8


def _check_voxel_size(voxel_size):
    vs = tuple(float(s) for s in voxel_size)
    if len(vs) != 3 or any(s <= 0 for s in vs):
        raise DataError(f"voxel_size must be 3 positive reals, got {voxel_size}")
    return vs


@dataclass(frozen=True)
class Volume3D:
    """Real scalar field on a regular 3D grid with voxel-size metadata."""

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise DataError(f"volume must be 3D with positive dims, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("volume contains NaN/Inf")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", _check_voxel_size(self.voxel_size))

    @property
    def dims(self):
        return self.data.shape

    def like(self, data):
        """New volume with the same voxel size."""
        return Volume3D(data, self.voxel_size)


@dataclass(frozen=True)
class Mask3D:
    """Boolean companion to Volume3D."""

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=bool)
        if arr.ndim != 3:
            raise DataError(f"mask must be 3D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", _check_voxel_size(self.voxel_size))

    @property
    def dims(self):
        return self.data.shape

    @property
    def count(self):
        return int(self.data.sum())


@dataclass(frozen=True)
class Spectrum3D:
    """Complex DFT of a Volume3D (same grid, same axis order)."""

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.complex128)
        if arr.ndim != 3:
            raise DataError(f"spectrum must be 3D, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", _check_voxel_size(self.voxel_size))

    @property
    def dims(self):
        return self.data.shape


@dataclass(frozen=True)
class KGrid:
    """Per-axis DFT frequencies in cycles/mm for a given grid."""

    dims: tuple
    voxel_size: tuple = (1.0, 1.0, 1.0)
    kx: np.ndarray = field(init=False)
    ky: np.ndarray = field(init=False)
    kz: np.ndarray = field(init=False)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DataError(f"dims must be 3 positive integers, got {self.dims}")
        vs = _check_voxel_size(self.voxel_size)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", vs)
        for name, n, d in zip(("kx", "ky", "kz"), dims, vs):
            object.__setattr__(self, name, np.fft.fftfreq(n, d=d))

    def broadcast(self):
        """kx, ky, kz shaped for mutual broadcasting over the full grid."""
        return (
            self.kx[:, None, None],
            self.ky[None, :, None],
            self.kz[None, None, :],
        )


def fft3_forward(v: Volume3D) -> Spectrum3D:
    """Unnormalized forward 3D DFT of a real volume."""
    if min(v.dims) < 2:
        raise DataError(f"FFT needs dims >= 2 per axis, got {v.dims}")
    return Spectrum3D(np.fft.fftn(v.data), v.voxel_size)


def fft3_inverse(s: Spectrum3D, imag_tol: float = IMAG_TOL) -> Volume3D:
    """Inverse 3D DFT (1/N normalization), collapsing to a real volume.

    Raises NumericalError if the residual imaginary part exceeds
    ``imag_tol`` relative to the real magnitude, which indicates the
    spectrum did not come from a real volume.
    """
    full = np.fft.ifftn(s.data)
    re = np.abs(full.real).max()
    im = np.abs(full.imag).max()
    if im > imag_tol * max(re, 1e-300) and im > imag_tol:
        raise NumericalError(
            f"inverse FFT has residual imaginary magnitude {im:.3e} "
            f"(real magnitude {re:.3e}); spectrum is not conjugate-symmetric"
        )
    return Volume3D(full.real, s.voxel_size)


_STRUCT6 = ndimage.generate_binary_structure(3, 1)  # 6-neighborhood


def erode_mask(m: Mask3D, radius: int) -> Mask3D:
    """Binary erosion with the 6-neighborhood, `radius` iterations."""
    if radius < 0:
        raise DataError(f"erosion radius must be >= 0, got {radius}")
    if radius == 0:
        return m
    out = ndimage.binary_erosion(m.data, _STRUCT6, iterations=radius, border_value=0)
    return Mask3D(out, m.voxel_size)


def dilate_mask(m: Mask3D, radius: int) -> Mask3D:
    """Binary dilation with the 6-neighborhood, `radius` iterations."""
    if radius < 0:
        raise DataError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0:
        return m
    out = ndimage.binary_dilation(m.data, _STRUCT6, iterations=radius)
    return Mask3D(out, m.voxel_size)
