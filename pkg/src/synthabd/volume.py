"""3D volumes with physical geometry, plus resampling and fixed-size crop/pad.

A :class:`Volume` couples a voxel grid with its world-space placement
(spacing in mm/voxel, origin of the first voxel center, and an orthonormal
direction matrix whose columns are the voxel axes in RAS coordinates).
Volumes are treated as immutable: every operation returns a new instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ContractError, ValidationError

IMAGE = "image"
LABEL = "label"

_ORTHO_TOL = 1e-6


class Geometry(NamedTuple):
    """World-space placement of a voxel grid."""

    shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    direction: np.ndarray  # 3x3, columns are voxel axes (unit vectors)

    @property
    def affine(self) -> np.ndarray:
        """4x4 voxel-index -> physical (mm) transform."""
        a = np.eye(4)
        a[:3, :3] = self.direction @ np.diag(self.spacing)
        a[:3, 3] = self.origin
        return a

    @property
    def center(self) -> np.ndarray:
        """Physical coordinates of the grid center."""
        c = (np.asarray(self.shape, dtype=float) - 1.0) / 2.0
        return np.asarray(self.origin) + self.direction @ (c * np.asarray(self.spacing))

    def voxel_to_physical(self, idx: np.ndarray) -> np.ndarray:
        """Map voxel indices (..., 3) to physical mm coordinates (..., 3)."""
        idx = np.asarray(idx, dtype=float)
        return idx * np.asarray(self.spacing) @ self.direction.T + np.asarray(self.origin)

    def physical_to_voxel(self, pts: np.ndarray) -> np.ndarray:
        """Map physical mm coordinates (..., 3) to fractional voxel indices."""
        pts = np.asarray(pts, dtype=float)
        local = (pts - np.asarray(self.origin)) @ self.direction
        return local / np.asarray(self.spacing)

    def close_to(self, other: "Geometry", tol: float = 1e-6) -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, atol=tol)
            and np.allclose(self.origin, other.origin, atol=tol)
            and np.allclose(self.direction, other.direction, atol=tol)
        )


def _check_direction(direction: np.ndarray) -> np.ndarray:
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (3, 3):
        raise ContractError(f"direction must be 3x3, got {direction.shape}")
    if not np.allclose(direction.T @ direction, np.eye(3), atol=_ORTHO_TOL):
        raise ValidationError("direction matrix is not orthonormal")
    return direction


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid (image) or non-negative integer grid (label map).

    Image data is stored as float32, label data as int32. The constructor
    validates spacing/shape positivity, direction orthonormality, and label
    integrality; instances should be treated as read-only.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))
    kind: str = IMAGE

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ContractError(f"expected a 3D grid, got {data.ndim}D data")
        if min(data.shape) < 1:
            raise ContractError(f"shape components must be >= 1, got {data.shape}")
        if self.kind not in (IMAGE, LABEL):
            raise ContractError(f"kind must be 'image' or 'label', got {self.kind!r}")

        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ContractError(f"spacing must be three positive values, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin)
        if len(origin) != 3:
            raise ContractError(f"origin must have three components, got {self.origin}")
        direction = _check_direction(self.direction)

        if self.kind == LABEL:
            if np.issubdtype(data.dtype, np.floating):
                if not np.all(np.isfinite(data)) or np.any(data != np.floor(data)):
                    raise ValidationError("label volume contains non-integer values")
                data = data.astype(np.int32)
            elif not np.issubdtype(data.dtype, np.integer):
                raise ValidationError(f"label volume has non-numeric dtype {data.dtype}")
            if data.min(initial=0) < 0:
                raise ValidationError("label volume contains negative values")
            data = np.ascontiguousarray(data, dtype=np.int32)
        else:
            data = np.ascontiguousarray(data, dtype=np.float32)

        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.shape, self.spacing, self.origin, self.direction)

    @property
    def is_label(self) -> bool:
        return self.kind == LABEL

    def with_data(self, data: np.ndarray, kind: str | None = None) -> "Volume":
        """New volume with the same geometry and different voxel values."""
        return Volume(data, self.spacing, self.origin, self.direction, kind or self.kind)

    def with_geometry(self, geometry: Geometry) -> "Volume":
        if tuple(geometry.shape) != self.shape:
            raise ContractError("geometry shape does not match data shape")
        return Volume(self.data, geometry.spacing, geometry.origin, geometry.direction, self.kind)

    def labels_present(self) -> np.ndarray:
        """Sorted distinct values; only meaningful for label volumes."""
        return np.unique(self.data)

    def same_geometry_as(self, other: "Volume", tol: float = 1e-6) -> bool:
        return self.geometry.close_to(other.geometry, tol=tol)


def _require_same_geometry(a: Volume, b: Volume, what: str) -> None:
    if not a.same_geometry_as(b):
        raise ContractError(f"{what}: volume geometries do not match")


def resample(v: Volume, target_spacing: Iterable[float], interp: str = "trilinear") -> Volume:
    """Resample onto a grid with the requested spacing.

    The output shape per axis is round(n * s / t) with a minimum of 1, so the
    physical extent is preserved to within one voxel. The origin (center of
    voxel 0) is unchanged. Trilinear sampling clamps out-of-bounds reads to
    the edge voxel; label volumes must use nearest-neighbor.
    """
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or any(t <= 0 for t in target):
        raise ContractError(f"target_spacing must be three positive values, got {target_spacing}")
    if interp not in ("nearest", "trilinear"):
        raise ContractError(f"interp must be 'nearest' or 'trilinear', got {interp!r}")
    if v.is_label and interp != "nearest":
        raise ContractError("label volumes must be resampled with interp='nearest'")

    out_shape = tuple(
        max(1, int(round(n * s / t))) for n, s, t in zip(v.shape, v.spacing, target)
    )
    # Output voxel j sits at physical j*t along each axis, i.e. input index j*t/s.
    scale = [t / s for s, t in zip(v.spacing, target)]
    grids = np.meshgrid(
        *(np.arange(n, dtype=np.float64) * f for n, f in zip(out_shape, scale)),
        indexing="ij",
    )
    order = 0 if interp == "nearest" else 1
    out = ndimage.map_coordinates(v.data, grids, order=order, mode="nearest")
    return Volume(out, target, v.origin, v.direction, v.kind)


def crop_or_pad(v: Volume, target_shape: Iterable[int], fill: float = 0) -> Volume:
    """Center-crop and/or pad each axis to the target shape.

    Odd remainders put the extra cropped/padded voxel on the high side.
    Padded voxels take the fill value; retained voxels keep their physical
    coordinates (the origin shifts accordingly).
    """
    target = tuple(int(t) for t in target_shape)
    if len(target) != 3 or any(t < 1 for t in target):
        raise ContractError(f"target_shape must be three values >= 1, got {target_shape}")

    slices = []
    pads = []
    origin_shift_vox = np.zeros(3)
    for n, t in zip(v.shape, target):
        if n >= t:
            lo = (n - t) // 2
            slices.append(slice(lo, lo + t))
            pads.append((0, 0))
            origin_shift_vox[len(slices) - 1] = lo
        else:
            p = t - n
            slices.append(slice(0, n))
            pads.append((p // 2, p - p // 2))
            origin_shift_vox[len(slices) - 1] = -(p // 2)

    out = v.data[tuple(slices)]
    if any(p != (0, 0) for p in pads):
        value = int(fill) if v.is_label else float(fill)
        out = np.pad(out, pads, mode="constant", constant_values=value)
    origin = np.asarray(v.origin) + v.direction @ (origin_shift_vox * np.asarray(v.spacing))
    return Volume(out, v.spacing, tuple(origin), v.direction, v.kind)
