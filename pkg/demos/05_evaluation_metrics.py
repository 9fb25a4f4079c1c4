"""Scoring segmentations: Dice, 95th-percentile Hausdorff distance,
aggregation, and rank-based comparison of result sets.

Run with: python3 demos/05_evaluation_metrics.py
"""

import numpy as np

from synthabd import (
    Volume,
    aggregate,
    dice,
    evaluate_case,
    hd95,
    kruskal_wallis,
)

rng = np.random.default_rng(5)


def ball(center, radius, shape=(32, 32, 32)) -> np.ndarray:
    idx = np.indices(shape)
    d2 = sum((idx[i] - center[i]) ** 2 for i in range(3))
    return d2 <= radius**2


spacing = (1.0, 1.0, 1.0)
gt = Volume(ball((16, 16, 16), 8).astype(np.int32), spacing, kind="label")

# A prediction shifted by two voxels: high overlap, small surface error.
pred = Volume(ball((18, 16, 16), 8).astype(np.int32), spacing, kind="label")
print("shifted ball: dice =", round(dice(pred, gt, 1), 4),
      " hd95 =", round(hd95(pred, gt, 1), 3), "mm")

# The same masks on a coarser grid: distances are physical, so hd95 scales
# with the spacing while dice does not.
gt2 = Volume(gt.data, (2.0, 2.0, 2.0), kind="label")
pred2 = Volume(pred.data, (2.0, 2.0, 2.0), kind="label")
print("same masks at 2mm: dice =", round(dice(pred2, gt2, 1), 4),
      " hd95 =", round(hd95(pred2, gt2, 1), 3), "mm")

# Empty segments never raise; they produce undefined values with a reason.
empty = Volume(np.zeros((32, 32, 32), np.int32), spacing, kind="label")
records = evaluate_case(empty, gt, labels=[1, 2], case_id="case0")
for r in records:
    print(f"label {r.label_id}: dice={r.dice} hd95={r.hd95} reason={r.undefined_reason}")

# Aggregation over many cases: mean and population std per label and
# metric, with undefined values excluded but counted.
cases = []
for i in range(10):
    jitter = tuple(int(v) for v in rng.integers(-2, 3, 3))
    moved = Volume(ball((16 + jitter[0], 16 + jitter[1], 16 + jitter[2]), 8).astype(np.int32),
                   spacing, kind="label")
    cases.extend(evaluate_case(moved, gt, labels=[1], case_id=f"case{i}"))
stats = aggregate(cases)
d = stats[(1, "dice")]
h = stats[(1, "hd95")]
print(f"\n10 jittered cases: dice {d.mean:.3f} +/- {d.std:.3f}, "
      f"hd95 {h.mean:.2f} +/- {h.std:.2f} mm (n={d.n})")

# Kruskal-Wallis asks whether several result sets come from one
# distribution. Clearly separated groups give a large H and a small p.
a = list(rng.normal(0.85, 0.03, 12))
b = list(rng.normal(0.78, 0.03, 12))
h_stat, p = kruskal_wallis([a, b])
print(f"\nseparated dice sets: H={h_stat:.3f}, p={p:.4g}")

# Identical groups carry no rank signal at all.
h_stat, p = kruskal_wallis([a, a])
print(f"identical dice sets: H={h_stat:.3g}, p={p:.3g}")
