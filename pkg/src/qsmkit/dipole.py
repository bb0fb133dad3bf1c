"""Dipole physics: Fourier-domain kernel, forward/adjoint operators, noise.

The kernel is ``D = 1/3 - (k . b0)^2 / |k|^2`` on the discrete frequency
grid, with the undefined k=0 bin set to 0 so a constant susceptibility
maps to zero field. D is real, even and bounded in [-2/3, 1/3]; the
forward operator is therefore self-adjoint.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .volume import KGrid, Volume3D

__all__ = [
    "DipoleOperator",
    "build_dipole",
    "forward",
    "adjoint",
    "forward_padded",
    "add_gaussian_noise",
]


@dataclass(frozen=True)
class DipoleOperator:
    """Precomputed Fourier-domain dipole kernel on a fixed grid."""

    kernel: np.ndarray  # real, same shape as the grid
    dims: tuple
    voxel_size: tuple
    b0_axis: tuple

    def __post_init__(self):
        object.__setattr__(self, "kernel", np.ascontiguousarray(self.kernel, np.float64))

    def apply_spectrum(self, spec: np.ndarray) -> np.ndarray:
        return self.kernel * spec


def build_dipole(grid: KGrid, b0_axis=(0.0, 0.0, 1.0)) -> DipoleOperator:
    """Dipole kernel for a main-field direction `b0_axis` (unit vector)."""
    b0 = np.asarray(b0_axis, dtype=np.float64)
    if b0.shape != (3,) or abs(np.linalg.norm(b0) - 1.0) > 1e-9:
        raise DataError(f"b0_axis must be a 3D unit vector, got {b0_axis}")
    kx, ky, kz = grid.broadcast()
    k2 = kx**2 + ky**2 + kz**2
    kpar = kx * b0[0] + ky * b0[1] + kz * b0[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        kern = 1.0 / 3.0 - kpar**2 / k2
    kern[0, 0, 0] = 0.0  # 0/0 bin: constant chi -> zero field
    return DipoleOperator(kern, grid.dims, grid.voxel_size, tuple(float(c) for c in b0))


def _check_dims(op: DipoleOperator, v: Volume3D):
    if v.dims != op.dims:
        raise DataError(f"dims mismatch: operator {op.dims} vs volume {v.dims}")


def forward(op: DipoleOperator, chi: Volume3D) -> Volume3D:
    """Field produced by a susceptibility map: F^-1 D F chi (circular)."""
    _check_dims(op, chi)
    out = np.fft.ifftn(op.kernel * np.fft.fftn(chi.data)).real
    return chi.like(out)


def adjoint(op: DipoleOperator, fieldv: Volume3D) -> Volume3D:
    """Adjoint of `forward`; equals `forward` since D is real and even."""
    return forward(op, fieldv)


def forward_padded(chi: Volume3D, b0_axis=(0.0, 0.0, 1.0), pad_frac: float = 0.5) -> Volume3D:
    """Forward model with zero-padding by `pad_frac` per side, then crop.

    Suppresses circular wrap-around for sources near the boundary; the
    plain `forward` is the pure pointwise-multiplication model.
    """
    if pad_frac < 0:
        raise DataError(f"pad_frac must be >= 0, got {pad_frac}")
    pads = [int(round(n * pad_frac)) for n in chi.dims]
    padded = np.pad(chi.data, [(p, p) for p in pads])
    grid = KGrid(padded.shape, chi.voxel_size)
    op = build_dipole(grid, b0_axis)
    full = forward(op, Volume3D(padded, chi.voxel_size))
    sl = tuple(slice(p, p + n) for p, n in zip(pads, chi.dims))
    return chi.like(full.data[sl])


def add_gaussian_noise(v: Volume3D, mean: float, variance: float, seed: int) -> Volume3D:
    """Add i.i.d. Gaussian noise; deterministic for a fixed seed."""
    if variance < 0:
        raise DataError(f"variance must be >= 0, got {variance}")
    if variance == 0 and mean == 0:
        return v
    rng = np.random.default_rng(seed)
    noise = rng.normal(mean, np.sqrt(variance), size=v.dims)
    return v.like(v.data + noise)
