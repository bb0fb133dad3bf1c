"""Dipole field physics on a synthetic sphere.

Builds the k-space dipole kernel, verifies its analytic landmarks, and
computes the field of a uniform susceptibility sphere.
"""

import numpy as np

from qsmkit import dipole as dp
from qsmkit.volume import KGrid, Volume3D

dims = (64, 64, 64)
op = dp.build_dipole(KGrid(dims, (1.0, 1.0, 1.0)))

print("kernel range:", op.kernel.min(), "to", op.kernel.max())
print("on-axis value (expect -2/3):", op.kernel[0, 0, 5])
print("in-plane value (expect 1/3):", op.kernel[3, 4, 0])
print("dc value (expect 0):", op.kernel[0, 0, 0])

# sphere of susceptibility 1 ppm, radius 8 voxels, centered
z, y, x = np.ogrid[:64, :64, :64]
r2 = (z - 32.0) ** 2 + (y - 32.0) ** 2 + (x - 32.0) ** 2
chi = Volume3D((r2 <= 64.0).astype(np.float64))

field = dp.forward(op, chi)
print("field at center (expect ~0, Lorentz-corrected interior):",
      round(field.data[32, 32, 32], 4))
print("field just above pole (b0 is the last axis):",
      round(field.data[32, 32, 42], 4))
print("field beside equator:", round(field.data[32, 42, 32], 4))

# adjointness spot check
rng = np.random.default_rng(0)
a = Volume3D(rng.standard_normal(dims))
b = Volume3D(rng.standard_normal(dims))
lhs = np.vdot(dp.forward(op, a).data, b.data)
rhs = np.vdot(a.data, dp.adjoint(op, b).data)
print("adjointness gap:", abs(lhs - rhs) / abs(lhs))
