"""Non-learning reference inversions: truncated k-space division and
matrix-free conjugate-gradient Tikhonov least squares."""

from dataclasses import dataclass

import numpy as np

from . import dipole as dp
from .errors import DataError
from .volume import Volume3D

__all__ = ["TkdConfig", "CgConfig", "CgResult", "tkd_invert", "cg_tikhonov_invert"]


@dataclass(frozen=True)
class TkdConfig:
    threshold: float = 0.2  # on |D|, dimensionless

    def __post_init__(self):
        if self.threshold <= 0:
            raise DataError(f"TKD threshold must be > 0, got {self.threshold}")


@dataclass(frozen=True)
class CgConfig:
    mu: float = 0.1          # Tikhonov weight
    max_iters: int = 200
    tol: float = 1e-10       # relative residual

    def __post_init__(self):
        if self.mu < 0 or self.tol <= 0 or self.max_iters < 1:
            raise DataError(f"invalid CG config: {self}")


@dataclass(frozen=True)
class CgResult:
    x: Volume3D
    iterations: int
    relative_residual: float
    converged: bool


def tkd_invert(op: dp.DipoleOperator, fieldv: Volume3D, cfg: TkdConfig = TkdConfig()) -> Volume3D:
    """Spectral division with the kernel clamped away from zero:
    bins with |D| < t divide by t*sign(D) instead (sign(0) := +1)."""
    if fieldv.dims != op.dims:
        raise DataError(f"dims mismatch: {fieldv.dims} vs operator {op.dims}")
    t = cfg.threshold
    d = op.kernel
    sgn = np.where(d >= 0, 1.0, -1.0)
    denom = np.where(np.abs(d) >= t, d, t * sgn)
    chi = np.fft.ifftn(np.fft.fftn(fieldv.data) / denom).real
    return fieldv.like(chi)


def cg_tikhonov_invert(op: dp.DipoleOperator, fieldv: Volume3D,
                       cfg: CgConfig = CgConfig()) -> CgResult:
    """Solve (Phi^T Phi + mu I) x = Phi^T y matrix-free by conjugate gradient.

    The normal operator is applied through forward/adjoint composition;
    the Fourier-diagonal closed form is kept out of this path on purpose
    (it serves as an independent test oracle).
    """
    if fieldv.dims != op.dims:
        raise DataError(f"dims mismatch: {fieldv.dims} vs operator {op.dims}")

    def normal_op(v: np.ndarray) -> np.ndarray:
        w = fieldv.like(v)
        return dp.adjoint(op, dp.forward(op, w)).data + cfg.mu * v

    b = dp.adjoint(op, fieldv).data
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return CgResult(fieldv.like(np.zeros_like(b)), 0, 0.0, True)

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        ap = normal_op(p)
        alpha = rs / float(np.vdot(p, ap).real)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r).real)
        if np.sqrt(rs_new) / bnorm < cfg.tol:
            rs = rs_new
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    rel = float(np.sqrt(rs) / bnorm)
    return CgResult(fieldv.like(x), it, rel, rel < cfg.tol)
