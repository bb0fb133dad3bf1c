"""Bit-exact persistence: volume files, model checkpoints, dataset manifests.

Volume file layout (little-endian throughout):

    magic   4 bytes  b"NXQV"
    version u16      (currently 1)
    dims    3 x u32  (nx, ny, nz)
    voxel   3 x f32  millimeters
    dtype   u8       0 = f32, 1 = f64, 2 = u8 boolean mask
    payload          nx*ny*nz elements, C order with z fastest

Checkpoints (magic b"NXQC") carry a JSON header describing every named
array (parameters and Adam moments) followed by raw f64 payloads.
"""

import json
import os
import struct

import numpy as np

from .autodiff import AdamState, Tensor
from .errors import DataError
from .volume import Mask3D, Volume3D

__all__ = [
    "write_volume",
    "read_volume",
    "write_checkpoint",
    "read_checkpoint",
    "write_manifest",
    "read_manifest",
]

VOL_MAGIC = b"NXQV"
VOL_VERSION = 1
CKPT_MAGIC = b"NXQC"
CKPT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}


def write_volume(path, v):
    """Write a Volume3D (f64) or Mask3D (u8) to `path`."""
    if isinstance(v, Mask3D):
        code, payload = 2, np.ascontiguousarray(v.data, dtype="u1")
    elif isinstance(v, Volume3D):
        code, payload = 1, np.ascontiguousarray(v.data, dtype="<f8")
    else:
        raise DataError(f"cannot serialize {type(v).__name__}")
    header = struct.pack(
        "<4sH3I3fB", VOL_MAGIC, VOL_VERSION, *v.dims,
        *(float(s) for s in v.voxel_size), code,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_volume(path):
    """Read a volume file; returns Volume3D or Mask3D depending on dtype."""
    hdr_size = struct.calcsize("<4sH3I3fB")
    with open(path, "rb") as f:
        hdr = f.read(hdr_size)
        if len(hdr) < hdr_size:
            raise DataError(f"{path}: truncated header ({len(hdr)} < {hdr_size} bytes)")
        magic, version, nx, ny, nz, dx, dy, dz, code = struct.unpack("<4sH3I3fB", hdr)
        if magic != VOL_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {VOL_MAGIC!r}")
        if version != VOL_VERSION:
            raise DataError(f"{path}: unsupported volume format version {version}")
        if code not in _DTYPES:
            raise DataError(f"{path}: unknown dtype code {code}")
        dt = _DTYPES[code]
        expected = nx * ny * nz * dt.itemsize
        payload = f.read()
    if len(payload) != expected:
        raise DataError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(nx, ny, nz)
    vs = (float(dx), float(dy), float(dz))
    if code == 2:
        return Mask3D(arr.astype(bool), vs)
    return Volume3D(arr.astype(np.float64), vs)


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path, params: dict, adam_state: AdamState = None, meta: dict = None):
    """Persist named parameter tensors plus optimizer state, bit-exact."""
    arrays = {}
    for name, t in params.items():
        arrays[f"p/{name}"] = np.asarray(t.data, dtype="<f8")
    if adam_state is not None:
        for name, a in adam_state.m.items():
            arrays[f"m/{name}"] = np.asarray(a, dtype="<f8")
        for name, a in adam_state.v.items():
            arrays[f"v/{name}"] = np.asarray(a, dtype="<f8")
    header = {
        "entries": [{"key": k, "shape": list(arrays[k].shape)} for k in sorted(arrays)],
        "adam": None if adam_state is None else {
            "lr": adam_state.lr, "beta1": adam_state.beta1,
            "beta2": adam_state.beta2, "eps": adam_state.eps,
            "step": adam_state.step,
        },
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(blob)))
        f.write(blob)
        for k in sorted(arrays):
            f.write(np.ascontiguousarray(arrays[k]).tobytes())


def read_checkpoint(path, expect_shapes: dict = None):
    """Load (params, adam_state, meta).

    With `expect_shapes` (name -> shape) the stored topology is validated:
    missing names or shape mismatches raise DataError naming the tensors.
    """
    pre = struct.calcsize("<4sHI")
    with open(path, "rb") as f:
        hdr = f.read(pre)
        if len(hdr) < pre:
            raise DataError(f"{path}: truncated checkpoint header")
        magic, version, blob_len = struct.unpack("<4sHI", hdr)
        if magic != CKPT_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
        if version != CKPT_VERSION:
            raise DataError(
                f"{path}: checkpoint version {version} != {CKPT_VERSION}; migration needed"
            )
        header = json.loads(f.read(blob_len).decode())
        arrays = {}
        shapes = {e["key"]: tuple(e["shape"]) for e in header["entries"]}
        for k in sorted(shapes):
            shape = shapes[k]
            n = int(np.prod(shape)) if shape else 1
            raw = f.read(n * 8)
            if len(raw) != n * 8:
                raise DataError(f"{path}: truncated payload for entry {k!r}")
            arrays[k] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    params = {k[2:]: Tensor(a) for k, a in arrays.items() if k.startswith("p/")}
    if expect_shapes is not None:
        missing = sorted(set(expect_shapes) - set(params))
        if missing:
            raise DataError(f"{path}: checkpoint missing parameters {missing}")
        bad = sorted(
            n for n, s in expect_shapes.items() if params[n].data.shape != tuple(s)
        )
        if bad:
            detail = ", ".join(
                f"{n}: stored {params[n].data.shape} != expected {tuple(expect_shapes[n])}"
                for n in bad
            )
            raise DataError(f"{path}: shape mismatch for {detail}")

    state = None
    if header.get("adam"):
        h = header["adam"]
        state = AdamState(lr=h["lr"], beta1=h["beta1"], beta2=h["beta2"],
                          eps=h["eps"], step=h["step"])
        state.m = {k[2:]: a for k, a in arrays.items() if k.startswith("m/")}
        state.v = {k[2:]: a for k, a in arrays.items() if k.startswith("v/")}
    return params, state, header.get("meta", {})


# ---------------------------------------------------------------------------
# dataset manifests


MANIFEST_VERSION = 1


def write_manifest(path, seed, generator_config: dict, entries: list):
    """JSON manifest describing a generated dataset on disk.

    `entries` is a list of dicts with keys seed/chi/local_field/
    total_field/mask, the file paths relative to the manifest.
    """
    doc = {
        "format_version": MANIFEST_VERSION,
        "seed": int(seed),
        "generator": generator_config,
        "samples": entries,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path):
    """Load and validate a manifest; all referenced files must exist."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format_version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {doc.get('format_version')}")
    base = os.path.dirname(os.path.abspath(path))
    for entry in doc["samples"]:
        for key in ("chi", "local_field", "total_field", "mask"):
            p = os.path.join(base, entry[key])
            if not os.path.exists(p):
                raise DataError(f"{path}: referenced file missing: {entry[key]}")
    return doc
