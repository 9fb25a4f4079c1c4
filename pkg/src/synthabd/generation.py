"""Domain-randomized synthesis of image/label training pairs from label maps.

Each sample draws a random spatial transform (affine + smooth displacement),
deforms the generation label map, renders intensities by sampling a Gaussian
per generation label, then corrupts the image with a multiplicative bias
field, a resolution simulation (blur, downsample, upsample), and a gamma
contrast stretch. Every stage is a pure function of (inputs, seed, config),
with per-stage seed streams so stages never perturb each other's draws.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .clustering import Variant
from .errors import ContractError, DegenerateNormalizationError
from .labels import LabelMapping, apply_mapping
from .volume import IMAGE, LABEL, Geometry, Volume

# Fixed per-stage seed-stream tags; deterministic and mutually independent.
_TAG_TRANSFORM = 1
_TAG_INTENSITY = 2
_TAG_BIAS = 3
_TAG_RESOLUTION = 4
_TAG_GAMMA = 5
_TAG_SHUFFLE = 6


def _seed_entropy(seed, tag: int) -> np.random.SeedSequence:
    base = [int(seed)] if np.isscalar(seed) else [int(v) for v in seed]
    return np.random.SeedSequence(base + [tag])


def _stage_rng(seed, tag: int) -> np.random.Generator:
    return np.random.default_rng(_seed_entropy(seed, tag))


def _pair(value, name: str) -> tuple[float, float]:
    lo, hi = float(value[0]), float(value[1])
    if lo > hi:
        raise ContractError(f"{name} must satisfy lo <= hi, got ({lo}, {hi})")
    return lo, hi


@dataclass(frozen=True)
class GenerationConfig:
    """All randomization hyperparameters of the synthesis pipeline.

    Ranges are inclusive; symmetric ranges (rotation, shear, translation) are
    half-widths around zero. The enable flags switch whole corruption stages
    off, which zero-width ranges alone cannot do for the resolution and
    normalization stages.
    """

    mean_range: tuple[float, float] = (0.0, 255.0)
    std_range: tuple[float, float] = (1.0, 35.0)
    rotation_range: float = 15.0  # degrees, +/-
    scale_range: tuple[float, float] = (0.85, 1.15)
    shear_range: float = 0.012  # +/-
    translation_range: float = 10.0  # mm, +/-
    deform_grid: int = 6
    deform_std: float = 4.0  # mm
    bias_grid: int = 4
    bias_std: float = 0.5  # log units
    spacing_range: tuple[float, float] = (1.5, 9.0)  # mm, drawn per axis
    gamma_std: float = 0.4
    output_shape: tuple[int, int, int] = (160, 160, 128)
    output_spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    bias_enabled: bool = True
    resolution_enabled: bool = True
    gamma_enabled: bool = True
    resolution_blur_factor: float = 0.42  # blur std in voxels per unit spacing ratio

    def __post_init__(self):
        object.__setattr__(self, "mean_range", _pair(self.mean_range, "mean_range"))
        object.__setattr__(self, "std_range", _pair(self.std_range, "std_range"))
        object.__setattr__(self, "scale_range", _pair(self.scale_range, "scale_range"))
        object.__setattr__(self, "spacing_range", _pair(self.spacing_range, "spacing_range"))
        object.__setattr__(self, "output_shape", tuple(int(n) for n in self.output_shape))
        object.__setattr__(self, "output_spacing", tuple(float(s) for s in self.output_spacing))
        if self.std_range[0] <= 0:
            raise ContractError("std_range lower bound must be > 0")
        if self.scale_range[0] <= 0 or self.spacing_range[0] <= 0:
            raise ContractError("scale_range and spacing_range must be positive")
        for name in ("rotation_range", "shear_range", "translation_range",
                     "deform_std", "bias_std", "gamma_std", "resolution_blur_factor"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if self.deform_grid < 2 or self.bias_grid < 2:
            raise ContractError("deform_grid and bias_grid must be >= 2")
        if len(self.output_shape) != 3 or any(n < 1 for n in self.output_shape):
            raise ContractError("output_shape must be three values >= 1")
        if len(self.output_spacing) != 3 or any(s <= 0 for s in self.output_spacing):
            raise ContractError("output_spacing must be three positive values")

    def to_json_dict(self) -> dict:
        return {
            "mean_range": list(self.mean_range),
            "std_range": list(self.std_range),
            "rotation_range": self.rotation_range,
            "scale_range": list(self.scale_range),
            "shear_range": self.shear_range,
            "translation_range": self.translation_range,
            "deform_grid": self.deform_grid,
            "deform_std": self.deform_std,
            "bias_grid": self.bias_grid,
            "bias_std": self.bias_std,
            "spacing_range": list(self.spacing_range),
            "gamma_std": self.gamma_std,
            "output_shape": list(self.output_shape),
            "output_spacing": list(self.output_spacing),
            "bias_enabled": self.bias_enabled,
            "resolution_enabled": self.resolution_enabled,
            "gamma_enabled": self.gamma_enabled,
            "resolution_blur_factor": self.resolution_blur_factor,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GenerationConfig":
        keys = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in keys})


@dataclass(frozen=True)
class SpatialTransform:
    """An affine plus a dense displacement field, both in output-grid mm."""

    affine: np.ndarray  # 4x4
    displacement: np.ndarray  # (nx, ny, nz, 3), mm

    def __post_init__(self):
        affine = np.asarray(self.affine, dtype=np.float64)
        disp = np.asarray(self.displacement, dtype=np.float32)
        if affine.shape != (4, 4):
            raise ContractError("affine must be 4x4")
        if abs(np.linalg.det(affine[:3, :3])) <= 1e-9:
            raise ContractError("affine is not invertible")
        if disp.ndim != 4 or disp.shape[-1] != 3:
            raise ContractError("displacement must have shape (nx, ny, nz, 3)")
        if not np.all(np.isfinite(disp)):
            raise ContractError("displacement contains non-finite values")
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "displacement", disp)


def _lerp_axis(arr: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Linearly resample one axis onto n_out corner-aligned positions."""
    n_in = arr.shape[axis]
    if n_out == n_in:
        return arr
    if n_in == 1:
        return np.repeat(arr, n_out, axis=axis)
    if n_out > 1:
        pos = np.arange(n_out, dtype=np.float32) * np.float32((n_in - 1) / (n_out - 1))
    else:
        pos = np.zeros(1, dtype=np.float32)
    i0 = np.minimum(pos.astype(np.int64), n_in - 2)
    w = pos - i0.astype(np.float32)
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = n_out
    return a0 + (a1 - a0) * w.reshape(shape).astype(arr.dtype)


def _upsample_lattice(lattice: np.ndarray, out_shape: tuple[int, int, int]) -> np.ndarray:
    """Trilinearly stretch a small control lattice over the full output grid.

    Separable axis-by-axis linear interpolation; lattice corners map to grid
    corners. Works for (g,g,g) scalars and (g,g,g,c) vector lattices.
    """
    out = lattice.astype(np.float32, copy=False)
    for axis in range(3):
        out = _lerp_axis(out, int(out_shape[axis]), axis)
    return np.ascontiguousarray(out)


def _local_center(shape: Sequence[int], spacing: Sequence[float]) -> np.ndarray:
    return (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0 * np.asarray(spacing)


def sample_transform(seed, cfg: GenerationConfig) -> SpatialTransform:
    """Draw a random affine and control-lattice displacement field.

    Rotation, scale, shear, and translation are uniform per axis; the affine
    acts about the center of the output grid (in its local mm frame, voxel
    position = index x spacing). The displacement lattice holds iid Gaussian
    mm offsets upsampled trilinearly to the output shape.
    """
    rng = _stage_rng(seed, _TAG_TRANSFORM)
    rot = np.deg2rad(rng.uniform(-cfg.rotation_range, cfg.rotation_range, 3))
    scales = rng.uniform(cfg.scale_range[0], cfg.scale_range[1], 3)
    shears = rng.uniform(-cfg.shear_range, cfg.shear_range, 3)
    trans = rng.uniform(-cfg.translation_range, cfg.translation_range, 3)
    g = cfg.deform_grid
    lattice = rng.normal(0.0, cfg.deform_std, size=(g, g, g, 3)).astype(np.float32)

    (sx, sy, sz), (cx, cy, cz) = np.sin(rot), np.cos(rot)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    rotation = rz @ ry @ rx
    shear = np.array([[1, shears[0], shears[1]], [0, 1, shears[2]], [0, 0, 1]])
    m = rotation @ np.diag(scales) @ shear

    center = _local_center(cfg.output_shape, cfg.output_spacing)
    affine = np.eye(4)
    affine[:3, :3] = m
    affine[:3, 3] = center - m @ center + trans

    if cfg.deform_std == 0:
        displacement = np.zeros(tuple(cfg.output_shape) + (3,), dtype=np.float32)
    else:
        displacement = _upsample_lattice(lattice, cfg.output_shape)
    return SpatialTransform(affine, displacement)


def apply_transform_label(lv: Volume, t: SpatialTransform, out_geometry: Geometry) -> Volume:
    """Deform a label map onto the output grid by backward nearest sampling.

    Each output voxel at local position x = index x spacing pulls the input
    label at affine^-1(x + displacement(x)); the input grid is positioned
    with its center coincident with the output center. Pulls outside the
    input extent produce 0.
    """
    if not lv.is_label:
        raise ContractError("apply_transform_label expects a label volume")
    out_shape = tuple(out_geometry.shape)
    if t.displacement.shape[:3] != out_shape:
        raise ContractError("displacement field shape does not match output geometry")

    inv = np.linalg.inv(t.affine).astype(np.float32)
    out_spacing = np.asarray(out_geometry.spacing)
    in_spacing = np.asarray(lv.spacing)
    offset = _local_center(out_shape, out_spacing) - _local_center(lv.shape, in_spacing)

    axes = [
        np.arange(n, dtype=np.float32) * np.float32(s)
        for n, s in zip(out_shape, out_spacing)
    ]
    y0 = axes[0][:, None, None] + t.displacement[..., 0]
    y1 = axes[1][None, :, None] + t.displacement[..., 1]
    y2 = axes[2][None, None, :] + t.displacement[..., 2]
    coords = [
        (inv[i, 0] * y0 + inv[i, 1] * y1 + inv[i, 2] * y2
         + np.float32(inv[i, 3] - offset[i])) / np.float32(in_spacing[i])
        for i in range(3)
    ]
    del y0, y1, y2

    data = ndimage.map_coordinates(lv.data, coords, order=0, mode="constant", cval=0)
    return Volume(data, out_geometry.spacing, out_geometry.origin, out_geometry.direction, LABEL)


def _draw_params(rng: np.random.Generator, labels: Sequence[int],
                 cfg: GenerationConfig) -> dict[int, tuple[float, float]]:
    params: dict[int, tuple[float, float]] = {}
    for k in sorted(int(v) for v in labels):
        mu = float(rng.uniform(cfg.mean_range[0], cfg.mean_range[1]))
        sd = float(rng.uniform(cfg.std_range[0], cfg.std_range[1]))
        params[k] = (mu, sd)
    return params


def draw_intensity_params(labels: Sequence[int], seed, cfg: GenerationConfig) -> dict[int, tuple[float, float]]:
    """The per-label (mean, std) draws used by sample_intensities.

    Labels are processed in ascending order; for each, a mean is drawn from
    mean_range and a std from std_range. Exposing the draw makes per-region
    statistics reproducible without re-running the renderer.
    """
    return _draw_params(_stage_rng(seed, _TAG_INTENSITY), labels, cfg)


def sample_intensities(gen_lv: Volume, seed, cfg: GenerationConfig) -> Volume:
    """Render an intensity volume by sampling one Gaussian per label.

    Every generation label present draws (mu, std) once; every voxel then
    draws independently from its label's Gaussian.
    """
    if not gen_lv.is_label:
        raise ContractError("sample_intensities expects a label volume")
    labels = [int(v) for v in np.unique(gen_lv.data)]
    rng = _stage_rng(seed, _TAG_INTENSITY)
    params = _draw_params(rng, labels, cfg)

    top = max(labels)
    mu_lut = np.zeros(top + 1, dtype=np.float32)
    sd_lut = np.zeros(top + 1, dtype=np.float32)
    for k, (mu, sd) in params.items():
        mu_lut[k] = mu
        sd_lut[k] = sd

    noise = rng.standard_normal(gen_lv.shape, dtype=np.float32)
    data = mu_lut[gen_lv.data] + sd_lut[gen_lv.data] * noise
    return Volume(data, gen_lv.spacing, gen_lv.origin, gen_lv.direction, IMAGE)


def apply_bias_field(img: Volume, seed, cfg: GenerationConfig) -> Volume:
    """Multiply in a smooth positive field exp(G), G trilinear from a lattice."""
    if img.is_label:
        raise ContractError("apply_bias_field expects an image volume")
    if cfg.bias_std == 0:
        return img
    rng = _stage_rng(seed, _TAG_BIAS)
    b = cfg.bias_grid
    lattice = rng.normal(0.0, cfg.bias_std, size=(b, b, b)).astype(np.float32)
    field = np.exp(_upsample_lattice(lattice, img.shape))
    return img.with_data(img.data * field)


def _resample_grid(data: np.ndarray, in_step: Sequence[float], out_step: Sequence[float],
                   out_shape: Sequence[int]) -> np.ndarray:
    """Trilinear resample between corner-anchored grids sharing an origin."""
    coords = np.meshgrid(
        *(
            np.arange(n, dtype=np.float32) * (o / i)
            for n, i, o in zip(out_shape, in_step, out_step)
        ),
        indexing="ij",
    )
    return ndimage.map_coordinates(data, coords, order=1, mode="nearest")


def simulate_resolution(img: Volume, seed, cfg: GenerationConfig) -> Volume:
    """Mimic a coarse acquisition: blur, downsample, upsample back.

    A per-axis acquisition spacing is drawn from spacing_range; the blur std
    is resolution_blur_factor x (drawn / output spacing) voxels per axis.
    The output grid is unchanged.
    """
    if img.is_label:
        raise ContractError("simulate_resolution expects an image volume")
    rng = _stage_rng(seed, _TAG_RESOLUTION)
    drawn = rng.uniform(cfg.spacing_range[0], cfg.spacing_range[1], 3)
    ratio = drawn / np.asarray(img.spacing)
    sigma = cfg.resolution_blur_factor * ratio

    data = ndimage.gaussian_filter(img.data, sigma=sigma, mode="nearest")
    down_shape = [max(1, int(round(n * s / t))) for n, s, t in zip(img.shape, img.spacing, drawn)]
    down = _resample_grid(data, img.spacing, drawn, down_shape)
    up = _resample_grid(down, drawn, img.spacing, img.shape)
    return img.with_data(up)


def normalize_gamma(img: Volume, seed, cfg: GenerationConfig) -> Volume:
    """Min-max normalize to [0,1], then apply the x^exp(gamma) stretch."""
    if img.is_label:
        raise ContractError("normalize_gamma expects an image volume")
    rng = _stage_rng(seed, _TAG_GAMMA)
    gamma = float(rng.normal(0.0, cfg.gamma_std)) if cfg.gamma_std > 0 else 0.0

    data = img.data
    lo, hi = float(data.min()), float(data.max())
    if hi - lo <= 0:
        raise DegenerateNormalizationError("image is constant, cannot min-max normalize")
    data = (data - lo) / np.float32(hi - lo)
    if gamma != 0.0:
        data = np.power(data, np.exp(gamma), dtype=np.float32)
    return img.with_data(data)


def _output_geometry(gen_lv: Volume, cfg: GenerationConfig) -> Geometry:
    """Output grid with the input's axes, centered on the input volume."""
    c_out = _local_center(cfg.output_shape, cfg.output_spacing)
    origin = gen_lv.geometry.center - gen_lv.direction @ c_out
    return Geometry(tuple(cfg.output_shape), tuple(cfg.output_spacing),
                    tuple(origin), gen_lv.direction)


def generate_sample(gen_lv: Volume, mapping: LabelMapping, seed,
                    cfg: GenerationConfig) -> tuple[Volume, Volume]:
    """Synthesize one aligned (image, target label map) pair.

    Pipeline: draw transform, deform labels, render per-label Gaussian
    intensities, bias field, resolution simulation, gamma normalization.
    The returned label map is the deformed generation map collapsed through
    the mapping, so it contains only target ids on the same grid as the
    image. Deterministic in (gen_lv, mapping, seed, cfg).
    """
    present = set(int(v) for v in np.unique(gen_lv.data))
    missing = present - set(mapping.generation_to_target)
    if missing:
        raise ContractError(f"mapping does not cover generation labels {sorted(missing)}")

    out_geom = _output_geometry(gen_lv, cfg)
    t = sample_transform(seed, cfg)
    deformed = apply_transform_label(gen_lv, t, out_geom)

    img = sample_intensities(deformed, seed, cfg)
    if cfg.bias_enabled:
        img = apply_bias_field(img, seed, cfg)
    if cfg.resolution_enabled:
        img = simulate_resolution(img, seed, cfg)
    if cfg.gamma_enabled:
        img = normalize_gamma(img, seed, cfg)

    target = apply_mapping(deformed, mapping)
    return img, target


@dataclass(frozen=True)
class SampleStream:
    """Restartable, index-addressed infinite stream of synthetic samples.

    Sample i uses variant perm[i mod n] (perm is a seeded shuffle) and the
    per-sample seed (base_seed, i), so any index can be produced on any
    worker at any time with identical results.
    """

    variants: tuple[Variant, ...]
    cfg: GenerationConfig
    base_seed: int

    def __post_init__(self):
        if not self.variants:
            raise ContractError("sample stream needs at least one variant")
        object.__setattr__(self, "variants", tuple(self.variants))

    @property
    def permutation(self) -> np.ndarray:
        rng = _stage_rng(self.base_seed, _TAG_SHUFFLE)
        return rng.permutation(len(self.variants))

    def variant_for(self, index: int) -> Variant:
        return self.variants[int(self.permutation[index % len(self.variants)])]

    def sample(self, index: int) -> tuple[Volume, Volume]:
        if index < 0:
            raise ContractError("sample index must be >= 0")
        v = self.variant_for(index)
        return generate_sample(v.volume, v.mapping, [int(self.base_seed), int(index)], self.cfg)

    def __iter__(self) -> Iterator[tuple[Volume, Volume]]:
        i = 0
        while True:
            yield self.sample(i)
            i += 1


def sample_stream(variants: Sequence[Variant], cfg: GenerationConfig, base_seed: int) -> SampleStream:
    """Build the deterministic sample stream over a variant set."""
    return SampleStream(tuple(variants), cfg, int(base_seed))


_WORKER_STREAM: SampleStream | None = None


def _init_worker(stream: SampleStream) -> None:
    global _WORKER_STREAM
    _WORKER_STREAM = stream


def _worker_sample(index: int) -> tuple[Volume, Volume]:
    return _WORKER_STREAM.sample(index)


def generate_many(stream: SampleStream, start: int, count: int,
                  workers: int = 1) -> list[tuple[Volume, Volume]]:
    """Produce samples [start, start+count) with an optional process pool.

    Results are ordered by index and identical for any worker count.
    """
    indices = range(start, start + count)
    if workers <= 1:
        return [stream.sample(i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(stream,)) as pool:
        return list(pool.map(_worker_sample, indices))
