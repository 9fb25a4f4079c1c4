"""From a 104-structure segmentation scheme to the 26 abdominal targets.

Run with: python3 demos/02_target_label_mapping.py
"""

import numpy as np

from synthabd import (
    DEFAULT_SOURCE_LABELS,
    DEFAULT_TARGET_SPEC,
    Volume,
    apply_mapping,
    apply_table_mask,
    build_target_mapping,
    preprocess_ct_for_clustering,
)

# The target scheme keeps 26 abdominal structures. Most map one to one,
# but the individual vertebrae T10..L5 merge into a single target.
mapping = build_target_mapping()
print("targets:", mapping.n_targets)
for tid in list(mapping.target_names)[:6]:
    print(f"  {tid:2d} -> {mapping.target_names[tid]}")
print("  ...")

vert_sources = DEFAULT_TARGET_SPEC["vertebrae"]
print("\nvertebrae target merges", len(vert_sources), "source structures:")
print(" ", ", ".join(vert_sources))

# Every source structure not claimed by a target collapses to background.
n_sources = len(DEFAULT_SOURCE_LABELS)
kept = sum(1 for sid in DEFAULT_SOURCE_LABELS.values() if mapping.target_of(sid) > 0)
print(f"\nsource structures: {n_sources}, kept by targets: {kept}, "
      f"dropped to background: {n_sources - kept}")

# Apply the mapping to a toy source-id label map.
rng = np.random.default_rng(1)
src = np.zeros((24, 24, 24), np.int32)
src[4:12, 4:12, 4:12] = DEFAULT_SOURCE_LABELS["liver"]
src[14:20, 14:20, 4:12] = DEFAULT_SOURCE_LABELS["vertebrae_L3"]
src[14:20, 4:10, 14:20] = DEFAULT_SOURCE_LABELS["aorta"]  # not a target
source_volume = Volume(src, (1.5, 1.5, 1.5), kind="label")

target_volume = apply_mapping(source_volume, mapping)
print("\nsource ids present:", np.unique(src).tolist())
print("target ids present:", np.unique(target_volume.data).tolist())
print("(aorta fell into background, L3 became the shared vertebrae id)")

# CT preconditioning for clustering: a small physical blur, min-max
# normalization, then a contrast stretch with exponent gamma.
ct = Volume(rng.normal(0.0, 50.0, (24, 24, 24)).astype(np.float32), (1.5, 1.5, 1.5))
for gamma in (0.6, 1.0, 1.67):
    prep = preprocess_ct_for_clustering(ct, blur_sigma=1.0, gamma=gamma)
    print(f"gamma {gamma:4.2f}: range [{prep.data.min():.3f}, {prep.data.max():.3f}],"
          f" mean {prep.data.mean():.3f}")

# Scanner tables are zeroed out of label maps through a binary mask; the
# remove flag lets half the variant replicates keep the table. Here the
# mask slab overlaps the vertebrae box, so those label voxels vanish.
mask = np.zeros((24, 24, 24), np.int32)
mask[:, :, 4:6] = 1
mask_volume = Volume(mask, (1.5, 1.5, 1.5), kind="label")
masked = apply_table_mask(target_volume, mask_volume, remove=True)
kept = apply_table_mask(target_volume, mask_volume, remove=False)
print("\nvoxels removed by table mask:",
      int((target_volume.data != masked.data).sum()))
print("with remove off, nothing changes:",
      np.array_equal(kept.data, target_volume.data))
