"""Hybrid training-data generation.

A procedural labeled "brain" (ellipsoidal envelope partitioned into
nested shells and Voronoi cells) stands in for segmented anatomy. Each
sample is: random affine deformation of the labels, per-class Gaussian
intensity sampling, quartile normalization of the susceptibility map,
then the physical forward model with and without simulated external
ellipsoidal sources to produce local and total fields.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import dipole as dp
from .errors import DataError
from .volume import Mask3D, Volume3D

__all__ = [
    "LabelVolume",
    "TrainingSample",
    "BackgroundSourceSpec",
    "make_label_phantom",
    "apply_affine_labels",
    "random_affine_deform",
    "gmm_sample_intensities",
    "scale_quartiles",
    "simulate_background",
    "generate_dataset",
]


@dataclass(frozen=True)
class LabelVolume:
    """Integer class labels per voxel; 0 means outside the brain."""

    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.int32)
        if arr.ndim != 3:
            raise DataError(f"label volume must be 3D, got shape {arr.shape}")
        if arr.min() < 0:
            raise DataError("label ids must be >= 0")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self):
        return self.data.shape

    @property
    def n_classes(self):
        return int(self.data.max())

    def brain_mask(self) -> Mask3D:
        return Mask3D(self.data > 0, self.voxel_size)


@dataclass(frozen=True)
class TrainingSample:
    """One hybrid brain: ground-truth chi plus its local and total fields."""

    chi: Volume3D
    local_field: Volume3D
    total_field: Volume3D
    mask: Mask3D
    seed: int


@dataclass(frozen=True)
class BackgroundSourceSpec:
    """Distributional knobs for the simulated external sources."""

    count_range: tuple = (80, 120)          # uniform integer, inclusive
    chi_value: float = 9.2                  # mean source susceptibility (ppm-like)
    chi_spread: float = 0.2                 # relative uniform spread
    volume_frac: float = 0.1                # mean source volume / brain volume
    axis_ratio_range: tuple = (0.6, 1.4)    # per-semi-axis multiplier
    margin: int = 4                         # voxel gap between brain and sources
    pad_frac: float = 0.25                  # per-side grid padding for placement
    max_retries: int = 200


# ---------------------------------------------------------------------------
# label phantoms


def make_label_phantom(dims, n_classes: int, seed: int,
                       voxel_size=(1.0, 1.0, 1.0)) -> LabelVolume:
    """Ellipsoidal envelope split into `n_classes` contiguous regions.

    The envelope is partitioned into up to 3 nested elliptical shells;
    classes are allocated to shells proportionally to shell volume and
    realized as Voronoi cells of random in-shell seed voxels, so every
    class is nonempty and spatially contiguous-ish.
    """
    dims = tuple(int(n) for n in dims)
    if n_classes < 2:
        raise DataError(f"need n_classes >= 2, got {n_classes}")
    rng = np.random.default_rng(seed)
    center = (np.array(dims) - 1) / 2.0
    semi = (np.array(dims) / 2.0) * rng.uniform(0.70, 0.80, size=3)
    ix = np.indices(dims).astype(np.float64)
    rho = np.sqrt(sum(((ix[a] - center[a]) / semi[a]) ** 2 for a in range(3)))
    envelope = rho <= 1.0
    if envelope.sum() < n_classes:
        raise DataError(
            f"n_classes={n_classes} exceeds envelope voxel count {int(envelope.sum())}"
        )

    n_shells = min(3, n_classes)
    bounds = np.linspace(0.0, 1.0, n_shells + 1) ** (1.0 / 3.0)  # ~equal volume
    labels = np.zeros(dims, dtype=np.int32)
    shells = [
        envelope & (rho >= bounds[s]) & (rho <= bounds[s + 1] if s == n_shells - 1
                                         else rho < bounds[s + 1])
        for s in range(n_shells)
    ]
    counts = np.array([m.sum() for m in shells], dtype=np.int64)
    # proportional allocation, at least 1 class per shell
    alloc = np.maximum(1, np.round(n_classes * counts / counts.sum()).astype(int))
    while alloc.sum() > n_classes:
        alloc[np.argmax(alloc)] -= 1
    while alloc.sum() < n_classes:
        alloc[np.argmax(counts / alloc)] += 1

    next_label = 1
    for m, k in zip(shells, alloc):
        coords = np.argwhere(m)
        k = min(k, len(coords))
        pick = coords[rng.choice(len(coords), size=k, replace=False)]
        tree = cKDTree(pick.astype(np.float64))
        _, nearest = tree.query(coords.astype(np.float64))
        labels[tuple(coords.T)] = next_label + nearest
        next_label += k
    return LabelVolume(labels, voxel_size)


def apply_affine_labels(lv: LabelVolume, matrix: np.ndarray,
                        translation=(0.0, 0.0, 0.0)) -> LabelVolume:
    """Pull-back resampling of labels: output voxel o reads the input at
    ``matrix @ (o - c) + c - translation`` (c = grid center), nearest
    neighbor, 0 outside."""
    matrix = np.asarray(matrix, dtype=np.float64)
    c = (np.array(lv.dims) - 1) / 2.0
    offset = c - matrix @ c - matrix @ np.asarray(translation, dtype=np.float64)
    out = ndimage.affine_transform(
        lv.data, matrix, offset=offset, order=0, mode="constant", cval=0,
        output=np.int32,
    )
    return LabelVolume(out, lv.voxel_size)


def random_affine_deform(lv: LabelVolume, seed: int) -> LabelVolume:
    """Random small affine: rotations <= 15 deg, scale 0.85-1.15, shear
    <= 0.1, translation <= 5% of the field of view."""
    rng = np.random.default_rng(seed)
    ang = np.deg2rad(rng.uniform(-15, 15, size=3))
    cx, sx = np.cos(ang[0]), np.sin(ang[0])
    cy, sy = np.cos(ang[1]), np.sin(ang[1])
    cz, sz = np.cos(ang[2]), np.sin(ang[2])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    scales = np.diag(rng.uniform(0.85, 1.15, size=3))
    shear = np.eye(3)
    shear[0, 1], shear[0, 2], shear[1, 2] = rng.uniform(-0.1, 0.1, size=3)
    fwd = rz @ ry @ rx @ shear @ scales
    trans = rng.uniform(-0.05, 0.05, size=3) * np.array(lv.dims)
    return apply_affine_labels(lv, np.linalg.inv(fwd), trans)


# ---------------------------------------------------------------------------
# intensities and scaling


def gmm_sample_intensities(lv: LabelVolume, seed: int,
                           mu_range=(-1.0, 1.0),
                           sigma_range=(0.005, 0.05)) -> Volume3D:
    """Replace each class with draws from its own Gaussian N(mu_c, sigma_c^2);
    class means/stds are themselves sampled per call. Background stays 0."""
    n = lv.n_classes
    if n < 1:
        raise DataError("label volume has no nonzero classes")
    rng = np.random.default_rng(seed)
    mu = np.concatenate([[0.0], rng.uniform(*mu_range, size=n)])
    sigma = np.concatenate([[0.0], rng.uniform(*sigma_range, size=n)])
    noise = rng.standard_normal(lv.dims)
    out = mu[lv.data] + sigma[lv.data] * noise
    out[lv.data == 0] = 0.0
    return Volume3D(out, lv.voxel_size)


def scale_quartiles(chi: Volume3D, mask: Mask3D) -> Volume3D:
    """Shift in-mask values to mean 0 and scale them to unit interquartile
    range (Q1 = -0.5, Q3 = +0.5 for symmetric data); zeros outside."""
    if chi.dims != mask.dims:
        raise DataError(f"dims mismatch: {chi.dims} vs {mask.dims}")
    vals = chi.data[mask.data]
    if vals.size == 0:
        raise DataError("empty mask")
    q1, q3 = np.percentile(vals, [25, 75])
    if q3 <= q1:
        raise DataError("degenerate in-mask distribution (IQR == 0)")
    out = np.zeros_like(chi.data)
    out[mask.data] = (vals - vals.mean()) / (q3 - q1)
    return chi.like(out)


# ---------------------------------------------------------------------------
# background sources


def _discrete_dipole_kernel(dims, voxel_size, b0_axis):
    """Dipole kernel with discrete-Laplacian symbols, 1/3 - l_b0(k)/l_3(k).

    Fields of sources generated through this kernel are exactly harmonic
    under the 7-point stencil away from the source support, which is the
    property background fields must satisfy inside the brain. Requires an
    axis-aligned b0; returns None otherwise (caller falls back to the
    continuous-k kernel).
    """
    b0 = np.asarray(b0_axis, dtype=np.float64)
    axis = int(np.argmax(np.abs(b0)))
    if abs(abs(b0[axis]) - 1.0) > 1e-12:
        return None
    from .volume import KGrid

    grid = KGrid(dims, voxel_size)
    lams = []
    for freqs, d in zip((grid.kx, grid.ky, grid.kz), voxel_size):
        lams.append((2.0 * np.cos(2.0 * np.pi * freqs * d) - 2.0) / d**2)
    lx, ly, lz = (
        lams[0][:, None, None],
        lams[1][None, :, None],
        lams[2][None, None, :],
    )
    l3 = lx + ly + lz
    lpar = (lx, ly, lz)[axis]
    with np.errstate(invalid="ignore", divide="ignore"):
        kern = 1.0 / 3.0 - lpar / l3
    kern[0, 0, 0] = 0.0
    return kern


def _place_sources(dims_pad, exclusion, brain_volume, spec, rng):
    """Sum of random axis-aligned ellipsoids avoiding `exclusion`."""
    chi_ext = np.zeros(dims_pad)
    rbar = (3.0 * brain_volume * spec.volume_frac / (4.0 * np.pi)) ** (1.0 / 3.0)
    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    count = max(count, 1)
    grid = np.array(dims_pad)
    placed = 0
    for _ in range(count):
        ok = False
        for _ in range(spec.max_retries):
            cen = rng.uniform(0, 1, size=3) * (grid - 1)
            axes = rbar * rng.uniform(*spec.axis_ratio_range, size=3)
            lo = np.maximum(0, np.floor(cen - axes).astype(int))
            hi = np.minimum(grid, np.ceil(cen + axes).astype(int) + 1)
            if np.any(hi <= lo):
                continue
            sl = tuple(slice(l, h) for l, h in zip(lo, hi))
            sub = np.indices(tuple(h - l for l, h in zip(lo, hi))).astype(np.float64)
            r2 = sum(((sub[a] + lo[a] - cen[a]) / axes[a]) ** 2 for a in range(3))
            inside = r2 <= 1.0
            if not inside.any() or (exclusion[sl] & inside).any():
                continue
            amp = spec.chi_value * rng.uniform(1 - spec.chi_spread, 1 + spec.chi_spread)
            chi_ext[sl][inside] += amp
            ok = True
            placed += 1
            break
        if not ok and placed == 0:
            raise DataError("could not place any background source without overlap")
    return chi_ext


def simulate_background(chi: Volume3D, mask: Mask3D, spec: BackgroundSourceSpec,
                        seed: int, b0_axis=(0.0, 0.0, 1.0)):
    """Local field and total field for one hybrid brain.

    local_field is the circular forward model of chi (bin-exact, the same
    operator later used for data consistency). The background component is
    the field of external ellipsoids computed on a padded grid and cropped,
    so that total_field = mask * (local_field + background). By linearity a
    zero-amplitude spec gives total_field == mask * local_field exactly.
    """
    if chi.dims != mask.dims:
        raise DataError(f"dims mismatch: {chi.dims} vs {mask.dims}")
    if mask.count == 0:
        raise DataError("empty brain mask")
    rng = np.random.default_rng(seed)

    from .volume import KGrid  # local import to avoid cycle at module load

    grid = KGrid(chi.dims, chi.voxel_size)
    op = dp.build_dipole(grid, b0_axis)
    lf = dp.forward(op, chi)

    pads = [max(1, int(round(n * spec.pad_frac))) for n in chi.dims]
    dims_pad = tuple(n + 2 * p for n, p in zip(chi.dims, pads))
    embedded = np.zeros(dims_pad, dtype=bool)
    sl = tuple(slice(p, p + n) for p, n in zip(pads, chi.dims))
    embedded[sl] = mask.data
    # Euclidean margin: keeps the source-to-brain gap isotropic, which the
    # harmonicity of the in-mask background field is sensitive to
    exclusion = ndimage.distance_transform_edt(~embedded) < spec.margin

    chi_ext = _place_sources(dims_pad, exclusion, mask.count, spec, rng)
    kern = _discrete_dipole_kernel(dims_pad, chi.voxel_size, b0_axis)
    if kern is None:
        kern = dp.build_dipole(KGrid(dims_pad, chi.voxel_size), b0_axis).kernel
    bg = np.fft.ifftn(kern * np.fft.fftn(chi_ext)).real[sl]
    tf = chi.like((lf.data + bg) * mask.data)
    return tf, lf


# ---------------------------------------------------------------------------
# dataset generation


def _sample_seed(base_seed: int, subject: int, deform: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(subject, deform))
    return int(ss.generate_state(1)[0])


def generate_dataset(n_subjects: int, n_deformations_per_subject: int, dims,
                     spec: BackgroundSourceSpec, seed: int,
                     n_classes: int = 16, voxel_size=(1.0, 1.0, 1.0),
                     b0_axis=(0.0, 0.0, 1.0)):
    """Stream of TrainingSamples, deterministic in `seed`, bounded memory.

    Per subject one label phantom is built and `n_deformations_per_subject`
    deformed/intensity-sampled variants are emitted.
    """
    if n_subjects < 1 or n_deformations_per_subject < 1:
        raise DataError("counts must be >= 1")
    for i in range(n_subjects):
        subj_seed = _sample_seed(seed, i, 0)
        labels = make_label_phantom(dims, n_classes, subj_seed, voxel_size)
        for j in range(n_deformations_per_subject):
            s = _sample_seed(seed, i, j + 1)
            lv = random_affine_deform(labels, s)
            if lv.data.max() == 0:
                lv = labels  # deformation pushed everything out; keep original
            mask = lv.brain_mask()
            raw = gmm_sample_intensities(lv, s + 1)
            chi = scale_quartiles(raw, mask)
            tf, lf = simulate_background(chi, mask, spec, s + 2, b0_axis)
            yield TrainingSample(chi, lf, tf, mask, s)
