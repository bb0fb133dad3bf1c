"""Unrolled variational network for data-consistent dipole inversion.

Each of the S unrolled steps descends on a quadratic data term
``lambda_i ||lf_pred - Phi x||^2`` plus a learned regularizer: a shallow
per-step CNN whose output is used directly as the regularizer's gradient
field. Trade-offs lambda_i are stored unconstrained and mapped through
softplus. Initialization is x_0 = lf_pred.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dipole as dp
from .errors import DataError
from .volume import Volume3D

__all__ = [
    "VarNetConfig",
    "init_varnet_params",
    "data_term_grad",
    "varnet_step",
    "varnet_reconstruct",
    "varnet_reconstruct_volume",
]


@dataclass(frozen=True)
class VarNetConfig:
    steps: int = 8
    reg_channels: int = 8
    kernel_size: int = 3
    alpha: float = 0.1
    lambda_init: float = 1.0  # softplus output at initialization

    def __post_init__(self):
        if self.steps < 1:
            raise DataError(f"steps must be >= 1, got {self.steps}")


def init_varnet_params(cfg: VarNetConfig, seed: int = 0, prefix: str = "vn") -> dict:
    """Per-step regularizer CNNs (last layer zero-init) and trade-offs."""
    rng = np.random.default_rng(seed)
    k = cfg.kernel_size
    c = cfg.reg_channels
    lam_raw = float(np.log(np.expm1(cfg.lambda_init)))  # softplus inverse
    params = {}
    for i in range(cfg.steps):
        for name, c_out, c_in, zero in (
            ("c1", c, 1, False),
            ("c2", c, c, False),
            ("c3", 1, c, True),
        ):
            if zero:
                w = np.zeros((c_out, c_in, k, k, k))
            else:
                fan_in = c_in * k**3
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k, k))
            params[f"{prefix}.s{i}.{name}.w"] = ad.Tensor(w)
            params[f"{prefix}.s{i}.{name}.b"] = ad.Tensor(np.zeros(c_out))
        params[f"{prefix}.s{i}.lam"] = ad.Tensor(lam_raw)
    return params


def data_term_grad(op: dp.DipoleOperator, x: Volume3D, lf_pred: Volume3D,
                   lambda_i: float) -> Volume3D:
    """Analytic gradient 2*lambda*Phi^T(Phi x - lf_pred) of the data term."""
    if x.dims != op.dims or lf_pred.dims != op.dims:
        raise DataError(f"dims mismatch: {x.dims}/{lf_pred.dims} vs operator {op.dims}")
    resid = dp.forward(op, x).data - lf_pred.data
    return x.like(2.0 * lambda_i * dp.forward(op, x.like(resid)).data)


def _dipole_tensor_op(op: dp.DipoleOperator):
    def apply(d):
        return np.fft.ifftn(op.kernel * np.fft.fftn(d[0, 0])).real[None, None]

    return apply


def _regularizer(x, params, prefix, i, cfg):
    h = ad.conv3d(x, params[f"{prefix}.s{i}.c1.w"], params[f"{prefix}.s{i}.c1.b"])
    h = ad.leaky_relu(h, cfg.alpha)
    h = ad.conv3d(h, params[f"{prefix}.s{i}.c2.w"], params[f"{prefix}.s{i}.c2.b"])
    h = ad.leaky_relu(h, cfg.alpha)
    return ad.conv3d(h, params[f"{prefix}.s{i}.c3.w"], params[f"{prefix}.s{i}.c3.b"])


def varnet_step(params: dict, cfg: VarNetConfig, i: int, op: dp.DipoleOperator,
                x: ad.Tensor, lf_pred: ad.Tensor, prefix: str = "vn") -> ad.Tensor:
    """x_{i+1} = x_i - (data-term gradient + regularizer output)."""
    if not 0 <= i < cfg.steps:
        raise DataError(f"step index {i} out of range for S={cfg.steps}")
    phi = _dipole_tensor_op(op)
    resid = ad.sub(ad.linear_op(x, phi, phi), lf_pred)
    lam = ad.softplus(params[f"{prefix}.s{i}.lam"])
    data_grad = ad.mul(ad.scale(lam, 2.0), ad.linear_op(resid, phi, phi))
    reg = _regularizer(x, params, prefix, i, cfg)
    return ad.sub(x, ad.add(data_grad, reg))


def varnet_reconstruct(params: dict, cfg: VarNetConfig, op: dp.DipoleOperator,
                       lf_pred: ad.Tensor, x0: ad.Tensor = None,
                       return_intermediates: bool = False, prefix: str = "vn"):
    """Run all S steps from x_0 = lf_pred (or a caller-supplied x0)."""
    x = lf_pred if x0 is None else x0
    inter = [x]
    for i in range(cfg.steps):
        x = varnet_step(params, cfg, i, op, x, lf_pred, prefix)
        inter.append(x)
    return (x, inter) if return_intermediates else x


def varnet_reconstruct_volume(params: dict, cfg: VarNetConfig, op: dp.DipoleOperator,
                              lf_pred: Volume3D, prefix: str = "vn") -> Volume3D:
    """Inference-mode wrapper on Volume3D."""
    t = ad.Tensor(lf_pred.data[None, None])
    out = varnet_reconstruct(params, cfg, op, t, prefix=prefix)
    return lf_pred.like(out.data[0, 0])
