"""Segmentation metrics: Dice overlap, 95th-percentile Hausdorff distance,
per-label aggregation, and the Kruskal-Wallis rank test.

Boundary extraction uses 6-connectivity face neighbors with the volume
border counting as boundary. HD95 takes the nearest-rank 95th percentile of
each directed boundary-to-boundary distance set and returns the maximum of
the two directions (a pooled variant is available). Cases where a segment is
empty yield undefined values with an explicit reason instead of an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import chi2, rankdata

from .errors import ContractError, DegenerateRankingError
from .volume import Volume

REASON_NONE = "none"
REASON_EMPTY_PRED = "empty_pred"
REASON_EMPTY_GT = "empty_gt"
REASON_BOTH_EMPTY = "both_empty"

_FACE_NEIGHBORS = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class MetricRecord:
    """Dice / HD95 for one (case, label); None marks an undefined value."""

    case_id: str
    label_id: int
    dice: float | None
    hd95: float | None
    undefined_reason: str = REASON_NONE

    def __post_init__(self):
        if self.dice is not None and not 0.0 <= self.dice <= 1.0:
            raise ContractError(f"dice out of [0,1]: {self.dice}")
        if self.hd95 is not None and self.hd95 < 0:
            raise ContractError(f"hd95 must be >= 0: {self.hd95}")
        defined = self.dice is not None and self.hd95 is not None
        if (self.undefined_reason == REASON_NONE) != defined:
            raise ContractError("undefined_reason must be 'none' exactly when both metrics are defined")


def _masks(pred: Volume, gt: Volume, label: int) -> tuple[np.ndarray, np.ndarray]:
    if pred.shape != gt.shape:
        raise ContractError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.data == label, gt.data == label


def dice(pred: Volume, gt: Volume, label: int) -> float | None:
    """Overlap 2|A&B| / (|A|+|B|); None when the label is absent from both."""
    a, b = _masks(pred, gt, label)
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return None
    return 2.0 * int((a & b).sum()) / (na + nb)


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of the mask with a face neighbor outside it (or off-volume)."""
    if not mask.any():
        return np.zeros_like(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=_FACE_NEIGHBORS, border_value=0)
    return mask & ~eroded


def _nearest_rank_p95(values: np.ndarray) -> float:
    idx = math.ceil(0.95 * values.size) - 1
    return float(np.sort(values)[idx])


def hd95(pred: Volume, gt: Volume, label: int,
         spacing: Sequence[float] | None = None, pooled: bool = False) -> float | None:
    """95th-percentile symmetric boundary distance in mm.

    Directed distances run from each boundary voxel to the nearest voxel of
    the other boundary (exact Euclidean transform under the given spacing).
    Default combines directions as max of the two 95th percentiles; pooled
    concatenates both sets first. None when either segment is empty.
    """
    a, b = _masks(pred, gt, label)
    if spacing is None:
        spacing = gt.spacing
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ContractError(f"spacing must be three positive values, got {spacing}")
    if not a.any() or not b.any():
        return None

    ba, bb = boundary_mask(a), boundary_mask(b)
    dist_to_b = ndimage.distance_transform_edt(~bb, sampling=spacing)
    dist_to_a = ndimage.distance_transform_edt(~ba, sampling=spacing)
    d_ab = dist_to_b[ba]
    d_ba = dist_to_a[bb]
    if pooled:
        return _nearest_rank_p95(np.concatenate([d_ab, d_ba]))
    return max(_nearest_rank_p95(d_ab), _nearest_rank_p95(d_ba))


def evaluate_case(pred: Volume, gt: Volume, labels: Sequence[int],
                  spacing: Sequence[float] | None = None, case_id: str = "",
                  pooled: bool = False) -> list[MetricRecord]:
    """One MetricRecord per requested label; empty segments never raise."""
    if not pred.same_geometry_as(gt):
        raise ContractError("evaluate_case: volume geometries differ")
    records = []
    for label in labels:
        label = int(label)
        a, b = _masks(pred, gt, label)
        na, nb = bool(a.any()), bool(b.any())
        if not na and not nb:
            records.append(MetricRecord(case_id, label, None, None, REASON_BOTH_EMPTY))
            continue
        d = dice(pred, gt, label)
        if not na or not nb:
            reason = REASON_EMPTY_PRED if not na else REASON_EMPTY_GT
            records.append(MetricRecord(case_id, label, d, None, reason))
            continue
        h = hd95(pred, gt, label, spacing, pooled=pooled)
        records.append(MetricRecord(case_id, label, d, h, REASON_NONE))
    return records


@dataclass(frozen=True)
class Aggregate:
    """Summary of one (label, metric) group over defined values only."""

    mean: float | None
    std: float | None
    n: int
    n_undefined: int


def aggregate(records: Sequence[MetricRecord]) -> dict[tuple[int, str], Aggregate]:
    """Per-(label, metric) mean and population std, excluding undefined values."""
    groups: dict[tuple[int, str], list[float]] = {}
    undef: dict[tuple[int, str], int] = {}
    for r in records:
        for metric, value in (("dice", r.dice), ("hd95", r.hd95)):
            key = (r.label_id, metric)
            groups.setdefault(key, [])
            undef.setdefault(key, 0)
            if value is None:
                undef[key] += 1
            else:
                groups[key].append(float(value))
    out = {}
    for key, values in groups.items():
        if values:
            arr = np.asarray(values)
            out[key] = Aggregate(float(arr.mean()), float(arr.std()), len(values), undef[key])
        else:
            out[key] = Aggregate(None, None, 0, undef[key])
    return out


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Kruskal-Wallis H with average-rank tie correction, and its chi2 p-value.

    H = 12/(N(N+1)) * sum n_i (rbar_i - (N+1)/2)^2, divided by
    1 - sum(t^3 - t)/(N^3 - N) over tie groups of size t.
    """
    if len(groups) < 2:
        raise ContractError("kruskal_wallis needs at least two groups")
    sizes = [len(g) for g in groups]
    if any(s == 0 for s in sizes):
        raise ContractError("kruskal_wallis groups must be non-empty")
    pooled = np.concatenate([np.asarray(g, dtype=np.float64) for g in groups])
    n = pooled.size
    if n < 3:
        raise ContractError("kruskal_wallis needs at least 3 values in total")

    ranks = rankdata(pooled, method="average")
    h = 0.0
    start = 0
    for size in sizes:
        rbar = ranks[start : start + size].mean()
        h += size * (rbar - (n + 1) / 2.0) ** 2
        start += size
    h *= 12.0 / (n * (n + 1))

    _, counts = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(((counts**3) - counts).sum()) / (n**3 - n)
    if correction <= 0:
        raise DegenerateRankingError("all values identical, ranks carry no information")
    h /= correction
    p = float(chi2.sf(h, len(groups) - 1))
    return float(h), p
