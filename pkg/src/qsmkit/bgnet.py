"""Background-field-removal network: U-Net mapping total field -> local field.

The network operates on brain-masked volumes. Input is normalized by its
in-mask standard deviation and the output rescaled back, so the weights
see a unit-scale problem regardless of field amplitude. The final conv
is zero-initialized: an untrained network predicts exactly zero.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DataError
from .volume import Mask3D, Volume3D

__all__ = ["BgNetConfig", "init_bgnet_params", "bgnet_forward", "bgnet_predict"]


@dataclass(frozen=True)
class BgNetConfig:
    depth: int = 2
    base_channels: int = 8
    kernel_size: int = 3
    alpha: float = 0.1  # leaky ReLU slope

    def __post_init__(self):
        if self.depth < 1:
            raise DataError(f"depth must be >= 1, got {self.depth}")


def _conv_init(rng, c_out, c_in, k):
    fan_in = c_in * k**3
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k, k))
    return ad.Tensor(w), ad.Tensor(np.zeros(c_out))


def init_bgnet_params(cfg: BgNetConfig, seed: int = 0, prefix: str = "bg") -> dict:
    """He-initialized U-Net weights; final projection zero-initialized."""
    rng = np.random.default_rng(seed)
    k = cfg.kernel_size
    params = {}

    def put(name, c_out, c_in):
        w, b = _conv_init(rng, c_out, c_in, k)
        params[f"{prefix}.{name}.w"] = w
        params[f"{prefix}.{name}.b"] = b

    c = cfg.base_channels
    c_in = 1
    for lvl in range(cfg.depth):
        ch = c * 2**lvl
        put(f"enc{lvl}a", ch, c_in)
        put(f"enc{lvl}b", ch, ch)
        c_in = ch
    ch_bot = c * 2**cfg.depth
    put("bota", ch_bot, c_in)
    put("botb", ch_bot, ch_bot)
    up_in = ch_bot
    for lvl in reversed(range(cfg.depth)):
        ch = c * 2**lvl
        put(f"dec{lvl}a", ch, up_in + ch)  # concat with the skip connection
        put(f"dec{lvl}b", ch, ch)
        up_in = ch
    params[f"{prefix}.out.w"] = ad.Tensor(np.zeros((1, c, k, k, k)))
    params[f"{prefix}.out.b"] = ad.Tensor(np.zeros(1))
    return params


def _block(x, params, prefix, name, alpha):
    x = ad.conv3d(x, params[f"{prefix}.{name}a.w"], params[f"{prefix}.{name}a.b"])
    x = ad.leaky_relu(x, alpha)
    x = ad.conv3d(x, params[f"{prefix}.{name}b.w"], params[f"{prefix}.{name}b.b"])
    return ad.leaky_relu(x, alpha)


def unet_apply(x: ad.Tensor, params: dict, cfg: BgNetConfig, prefix: str = "bg") -> ad.Tensor:
    """Run the U-Net on a (1, 1, X, Y, Z) tensor, handling odd shapes by
    symmetric zero-padding to the next multiple of 2**depth."""
    mult = 2**cfg.depth
    dims = x.shape[2:]
    pads = []
    for n in dims:
        extra = (-n) % mult
        pads.append((extra // 2, extra - extra // 2))
    if any(l or r for l, r in pads):
        x = ad.pad_spatial(x, pads)

    skips = []
    for lvl in range(cfg.depth):
        x = _block(x, params, prefix, f"enc{lvl}", cfg.alpha)
        skips.append(x)
        x = ad.downsample2(x)
    x = _block(x, params, prefix, "bot", cfg.alpha)
    for lvl in reversed(range(cfg.depth)):
        x = ad.upsample2(x)
        x = ad.concat_channels(skips[lvl], x)
        x = _block(x, params, prefix, f"dec{lvl}", cfg.alpha)
    x = ad.conv3d(x, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])

    if any(l or r for l, r in pads):
        x = ad.crop_spatial(x, pads)
    return x


def bgnet_forward(params: dict, cfg: BgNetConfig, tf: Volume3D, mask: Mask3D) -> ad.Tensor:
    """Predicted local field as a (1, 1, X, Y, Z) tensor, masked to brain."""
    if tf.dims != mask.dims:
        raise DataError(f"dims mismatch: field {tf.dims} vs mask {mask.dims}")
    s = float(tf.data[mask.data].std()) if mask.count else 0.0
    if s <= 1e-30:
        s = 1.0
    x = ad.Tensor(tf.data[None, None] / s)
    out = unet_apply(x, params, cfg)
    # rescale back to absolute field units, then restrict to the brain
    out = ad.scale(out, s * mask.data[None, None].astype(np.float64))
    return out


def bgnet_predict(params: dict, cfg: BgNetConfig, tf: Volume3D, mask: Mask3D) -> Volume3D:
    """Inference-mode wrapper returning a Volume3D."""
    out = bgnet_forward(params, cfg, tf, mask)
    return tf.like(out.data[0, 0])
