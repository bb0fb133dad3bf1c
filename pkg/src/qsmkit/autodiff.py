"""Minimal reverse-mode autodiff on numpy arrays.

A `Tape` records every primitive applied while it is active; `backward`
replays the records in reverse (forward evaluation order is topological,
so reversing it is a valid reverse sweep) and accumulates gradients
additively into `Tensor.grad`. Ops called with no active tape just
compute, which doubles as inference mode.

The op set is intentionally small: exactly what a 3D U-Net and an
unrolled variational scheme need. Everything is float64.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "conv3d",
    "leaky_relu",
    "downsample2",
    "upsample2",
    "concat_channels",
    "pad_spatial",
    "crop_spatial",
    "add",
    "sub",
    "mul",
    "scale",
    "abs_",
    "sum_",
    "mean_",
    "softplus",
    "linear_op",
    "AdamState",
    "adam_step",
]


class Tensor:
    """Array value with an optional gradient buffer."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"


_ACTIVE: list["Tape"] = []


@dataclass
class Tape:
    """Ordered record of primitives for one forward pass."""

    records: list = field(default_factory=list)

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def record(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss: Tensor):
        backward(self, loss)


def _record(out, inputs, backward_fn):
    if _ACTIVE:
        _ACTIVE[-1].record(out, inputs, backward_fn)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(tape: Tape, loss: Tensor):
    """Reverse sweep: populate `.grad` for every tensor reachable from `loss`."""
    if loss.data.size != 1:
        raise ConfigError(f"loss must be scalar, got shape {loss.data.shape}")
    for out, inputs, _ in tape.records:
        out.grad = None
        for t in inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape.records):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for t, g in zip(inputs, grads):
            if g is not None:
                _accum(t, g)


# ---------------------------------------------------------------------------
# elementwise / reduction primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting (scalar * field etc.)."""
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    _record(out, (a, b), bwd)
    return out


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or array (not differentiated w.r.t. c)."""
    c = np.asarray(c, dtype=np.float64)
    out = Tensor(x.data * c)
    _record(out, (x,), lambda g: (_unbroadcast(g * c, x.shape),))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def abs_(x: Tensor) -> Tensor:
    """|x| with subgradient sign(x) (0 at 0)."""
    out = Tensor(np.abs(x.data))
    sgn = np.sign(x.data)
    _record(out, (x,), lambda g: (g * sgn,))
    return out


def sum_(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum())
    _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    return out


def mean_(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean())
    _record(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).copy(),))
    return out


def leaky_relu(x: Tensor, alpha: float = 0.1) -> Tensor:
    slope = np.where(x.data > 0, 1.0, alpha)
    out = Tensor(x.data * slope)
    _record(out, (x,), lambda g: (g * slope,))
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), numerically stable; used for positivity constraints."""
    d = np.logaddexp(0.0, x.data)
    out = Tensor(d)
    sig = special.expit(x.data)
    _record(out, (x,), lambda g: (g * sig,))
    return out


def linear_op(x: Tensor, fwd, adj) -> Tensor:
    """Apply a fixed linear operator (ndarray -> ndarray) differentiably.

    `adj` must be the true adjoint of `fwd`; for the self-adjoint dipole
    operator both are the same function.
    """
    out = Tensor(fwd(x.data))
    _record(out, (x,), lambda g: (adj(g),))
    return out


# ---------------------------------------------------------------------------
# shape / structure primitives; tensors are (batch, channels, x, y, z)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    ca = a.shape[1]

    def bwd(g):
        return (g[:, :ca], g[:, ca:])

    _record(out, (a, b), bwd)
    return out


def pad_spatial(x: Tensor, pads) -> Tensor:
    """Zero-pad spatial axes; `pads` is ((xl,xr),(yl,yr),(zl,zr))."""
    width = [(0, 0), (0, 0)] + [tuple(p) for p in pads]
    out = Tensor(np.pad(x.data, width))
    sl = (slice(None), slice(None)) + tuple(
        slice(l, l + n) for (l, _), n in zip(pads, x.shape[2:])
    )
    _record(out, (x,), lambda g: (g[sl],))
    return out


def crop_spatial(x: Tensor, pads) -> Tensor:
    """Inverse of pad_spatial: crop `pads` voxels off the spatial axes."""
    sl = (slice(None), slice(None)) + tuple(
        slice(l, x.shape[2 + i] - r) for i, (l, r) in enumerate(pads)
    )
    out = Tensor(x.data[sl])
    width = [(0, 0), (0, 0)] + [tuple(p) for p in pads]

    def bwd(g):
        return (np.pad(g, width),)

    _record(out, (x,), bwd)
    return out


def downsample2(x: Tensor) -> Tensor:
    """Stride-2 average pooling over 2x2x2 blocks."""
    n, c, X, Y, Z = x.shape
    if X % 2 or Y % 2 or Z % 2:
        raise DataError(f"downsample2 needs even spatial dims, got {(X, Y, Z)}")
    blocks = x.data.reshape(n, c, X // 2, 2, Y // 2, 2, Z // 2, 2)
    out = Tensor(blocks.mean(axis=(3, 5, 7)))

    def bwd(g):
        gx = np.repeat(np.repeat(np.repeat(g, 2, 2), 2, 3), 2, 4) / 8.0
        return (gx,)

    _record(out, (x,), bwd)
    return out


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsampling on the spatial axes."""
    d = np.repeat(np.repeat(np.repeat(x.data, 2, 2), 2, 3), 2, 4)
    out = Tensor(d)
    n, c, X, Y, Z = x.shape

    def bwd(g):
        return (g.reshape(n, c, X, 2, Y, 2, Z, 2).sum(axis=(3, 5, 7)),)

    _record(out, (x,), bwd)
    return out


# ---------------------------------------------------------------------------
# 3D convolution (cross-correlation semantics)


def _conv3d_raw(xp: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    """Correlate padded input (n,c,X,Y,Z) with kernels (o,c,kx,ky,kz)."""
    win = sliding_window_view(xp, w.shape[2:], axis=(2, 3, 4))
    if stride > 1:
        win = win[:, :, ::stride, ::stride, ::stride]
    return np.einsum("ncxyzijk,ocijk->noxyz", win, w, optimize=True)


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: str = "same") -> Tensor:
    """3D cross-correlation with bias.

    x: (n, c_in, X, Y, Z); w: (c_out, c_in, kx, ky, kz); b: (c_out,).
    `pad` is "same" (odd kernels, stride 1 preserves shape) or "valid".
    """
    if x.data.ndim != 5 or w.data.ndim != 5:
        raise DataError(f"conv3d expects 5D input/kernel, got {x.shape}/{w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DataError(f"channel mismatch: input {x.shape[1]} vs kernel {w.shape[1]}")
    if b.data.shape != (w.shape[0],):
        raise DataError(f"bias shape {b.data.shape} != ({w.shape[0]},)")
    ks = w.shape[2:]
    if pad == "same":
        if any(k % 2 == 0 for k in ks):
            raise DataError(f"'same' padding needs odd kernels, got {ks}")
        pads = tuple((k // 2, k // 2) for k in ks)
    elif pad == "valid":
        pads = ((0, 0),) * 3
    else:
        raise ConfigError(f"pad must be 'same' or 'valid', got {pad!r}")

    xp = np.pad(x.data, [(0, 0), (0, 0), *pads])
    out = Tensor(_conv3d_raw(xp, w.data, stride) + b.data[None, :, None, None, None])

    def bwd(g):
        gb = g.sum(axis=(0, 2, 3, 4))
        if stride > 1:
            # scatter the output grad onto the stride-1 lattice
            full = [xp.shape[2 + i] - ks[i] + 1 for i in range(3)]
            gd = np.zeros((*g.shape[:2], *full))
            gd[:, :, ::stride, ::stride, ::stride] = g
        else:
            gd = g
        win = sliding_window_view(xp, ks, axis=(2, 3, 4))
        gw = np.einsum("ncxyzijk,noxyz->ocijk", win, gd, optimize=True)
        # grad wrt x: full correlation of gd with the flipped kernel
        wid = [(k - 1 - pl, k - 1 - pr) for k, (pl, pr) in zip(ks, pads)]
        gp = np.pad(gd, [(0, 0), (0, 0), *wid])
        wflip = w.data[:, :, ::-1, ::-1, ::-1]
        gwin = sliding_window_view(gp, ks, axis=(2, 3, 4))
        gx = np.einsum("noxyzijk,ocijk->ncxyz", gwin, wflip, optimize=True)
        return gx, gw, gb

    _record(out, (x, w, b), bwd)
    return out


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters."""

    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update, in place on `params` tensors."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m += (1 - b1) * (g - m)
        v += (1 - b2) * (g * g - v)
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
