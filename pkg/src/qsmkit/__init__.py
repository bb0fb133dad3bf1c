"""qsmkit: desk-scale quantitative susceptibility mapping pipeline.

Synthetic hybrid training data, a learned background-field remover and a
data-consistent unrolled variational dipole inversion, with classical
baselines (TKD, CG-Tikhonov) and challenge-style metrics.
"""

from .errors import ConfigError, DataError, NumericalError, QsmError
from .volume import KGrid, Mask3D, Spectrum3D, Volume3D, erode_mask, fft3_forward, fft3_inverse
from .dipole import DipoleOperator, add_gaussian_noise, adjoint, build_dipole, forward

__version__ = "0.1.0"

__all__ = [
    "QsmError", "ConfigError", "DataError", "NumericalError",
    "Volume3D", "Mask3D", "Spectrum3D", "KGrid",
    "fft3_forward", "fft3_inverse", "erode_mask",
    "DipoleOperator", "build_dipole", "forward", "adjoint", "add_gaussian_noise",
    "__version__",
]
