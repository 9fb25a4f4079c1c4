"""Target-label selection and CT intensity preconditioning.

Maps a source segmentation scheme (the 104-structure whole-body naming used
by public CT label releases) down to the 26 abdominal target labels the
segmenter predicts, with the abdominal vertebrae merged into one segment.
Also holds the image preconditioning (blur + gamma contrast stretch) applied
to CT volumes before intensity clustering, and the CT-table mask application.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ContractError, DegenerateNormalizationError
from .volume import LABEL, Volume

# Source scheme: whole-body CT segmentation structure names, id 1..104.
_SOURCE_NAMES = [
    "spleen", "kidney_right", "kidney_left", "gallbladder", "liver", "stomach",
    "aorta", "inferior_vena_cava", "portal_vein_and_splenic_vein", "pancreas",
    "adrenal_gland_right", "adrenal_gland_left",
    "lung_upper_lobe_left", "lung_lower_lobe_left", "lung_upper_lobe_right",
    "lung_middle_lobe_right", "lung_lower_lobe_right",
    "vertebrae_L5", "vertebrae_L4", "vertebrae_L3", "vertebrae_L2", "vertebrae_L1",
    "vertebrae_T12", "vertebrae_T11", "vertebrae_T10", "vertebrae_T9",
    "vertebrae_T8", "vertebrae_T7", "vertebrae_T6", "vertebrae_T5",
    "vertebrae_T4", "vertebrae_T3", "vertebrae_T2", "vertebrae_T1",
    "vertebrae_C7", "vertebrae_C6", "vertebrae_C5", "vertebrae_C4",
    "vertebrae_C3", "vertebrae_C2", "vertebrae_C1",
    "esophagus", "trachea", "heart_myocardium", "heart_atrium_left",
    "heart_ventricle_left", "heart_atrium_right", "heart_ventricle_right",
    "pulmonary_artery", "brain",
    "iliac_artery_left", "iliac_artery_right", "iliac_vena_left", "iliac_vena_right",
    "small_bowel", "duodenum", "colon",
    "rib_left_1", "rib_left_2", "rib_left_3", "rib_left_4", "rib_left_5",
    "rib_left_6", "rib_left_7", "rib_left_8", "rib_left_9", "rib_left_10",
    "rib_left_11", "rib_left_12",
    "rib_right_1", "rib_right_2", "rib_right_3", "rib_right_4", "rib_right_5",
    "rib_right_6", "rib_right_7", "rib_right_8", "rib_right_9", "rib_right_10",
    "rib_right_11", "rib_right_12",
    "humerus_left", "humerus_right", "scapula_left", "scapula_right",
    "clavicula_left", "clavicula_right", "femur_left", "femur_right",
    "hip_left", "hip_right", "sacrum", "face",
    "gluteus_maximus_left", "gluteus_maximus_right",
    "gluteus_medius_left", "gluteus_medius_right",
    "gluteus_minimus_left", "gluteus_minimus_right",
    "autochthon_left", "autochthon_right",
    "iliopsoas_left", "iliopsoas_right", "urinary_bladder",
]
DEFAULT_SOURCE_LABELS: dict[str, int] = {n: i + 1 for i, n in enumerate(_SOURCE_NAMES)}

#: Vertebrae merged into the single "vertebrae" target (abdominal region).
ABDOMINAL_VERTEBRAE: tuple[str, ...] = (
    "vertebrae_T10", "vertebrae_T11", "vertebrae_T12",
    "vertebrae_L1", "vertebrae_L2", "vertebrae_L3", "vertebrae_L4", "vertebrae_L5",
)

#: Target name -> list of source structure names absorbed into it.
DEFAULT_TARGET_SPEC: dict[str, list[str]] = {
    "liver": ["liver"],
    "spleen": ["spleen"],
    "kidney_left": ["kidney_left"],
    "kidney_right": ["kidney_right"],
    "stomach": ["stomach"],
    "duodenum": ["duodenum"],
    "pancreas": ["pancreas"],
    "gallbladder": ["gallbladder"],
    "small_bowel": ["small_bowel"],
    "colon": ["colon"],
    "adrenal_gland_left": ["adrenal_gland_left"],
    "adrenal_gland_right": ["adrenal_gland_right"],
    "vertebrae": list(ABDOMINAL_VERTEBRAE),
    "sacrum": ["sacrum"],
    "hip_left": ["hip_left"],
    "hip_right": ["hip_right"],
    "gluteus_maximus_left": ["gluteus_maximus_left"],
    "gluteus_maximus_right": ["gluteus_maximus_right"],
    "gluteus_medius_left": ["gluteus_medius_left"],
    "gluteus_medius_right": ["gluteus_medius_right"],
    "gluteus_minimus_left": ["gluteus_minimus_left"],
    "gluteus_minimus_right": ["gluteus_minimus_right"],
    "autochthon_left": ["autochthon_left"],
    "autochthon_right": ["autochthon_right"],
    "iliopsoas_left": ["iliopsoas_left"],
    "iliopsoas_right": ["iliopsoas_right"],
}

N_TARGETS = len(DEFAULT_TARGET_SPEC)  # 26

# Preconditioning defaults; the contrast exponent is drawn per subject.
DEFAULT_BLUR_SIGMA_MM = 1.0
GAMMA_CHOICES: tuple[float, ...] = (0.6, 0.8, 1.0, 1.25, 1.67)
DEFAULT_TABLE_REMOVAL_FRACTION = 0.5


@dataclass(frozen=True)
class LabelMapping:
    """Many-to-one map from the labels of some volume onto the target scheme.

    generation_to_target sends each label id (source structures, or minted
    cluster ids after augmentation) to a target id; 0 is background. Target
    ids are contiguous 1..n_targets with canonical names.
    """

    generation_to_target: dict[int, int]
    target_names: dict[int, str]
    n_targets: int

    def __post_init__(self):
        if self.n_targets < 1:
            raise ContractError("n_targets must be >= 1")
        expected = set(range(1, self.n_targets + 1))
        if set(self.target_names) != expected:
            raise ContractError("target_names keys must be contiguous 1..n_targets")
        bad = {t for t in self.generation_to_target.values() if not 0 <= t <= self.n_targets}
        if bad:
            raise ContractError(f"mapped target ids out of range: {sorted(bad)}")
        if any(g < 0 for g in self.generation_to_target):
            raise ContractError("generation label ids must be >= 0")

    @property
    def max_generation_id(self) -> int:
        return max(self.generation_to_target, default=0)

    def target_of(self, generation_id: int) -> int:
        return self.generation_to_target.get(int(generation_id), 0)

    def to_json_dict(self) -> dict:
        return {
            "generation_to_target": {str(k): v for k, v in self.generation_to_target.items()},
            "target_names": {str(k): v for k, v in self.target_names.items()},
            "n_targets": self.n_targets,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LabelMapping":
        return cls(
            generation_to_target={int(k): int(v) for k, v in d["generation_to_target"].items()},
            target_names={int(k): str(v) for k, v in d["target_names"].items()},
            n_targets=int(d["n_targets"]),
        )


def load_target_spec(path: str | Path) -> dict[str, list[str]]:
    """Load a target spec JSON file: {target name: [source structure names]}."""
    with open(path) as f:
        spec = json.load(f)
    if not isinstance(spec, dict) or not all(
        isinstance(v, list) and all(isinstance(s, str) for s in v) for v in spec.values()
    ):
        raise ConfigurationError("target spec must map names to lists of source names")
    return spec


def build_target_mapping(
    source_label_names: Mapping[str, int] = DEFAULT_SOURCE_LABELS,
    target_spec: Mapping[str, Sequence[str]] = DEFAULT_TARGET_SPEC,
) -> LabelMapping:
    """Build the source-id -> target-id mapping for the 26-label scheme.

    Every source structure named by the spec becomes (part of) a target;
    every other source id maps to background. Raises if a required structure
    is missing from the source scheme.
    """
    generation_to_target = {0: 0}
    target_names: dict[int, str] = {}
    claimed: dict[int, str] = {}
    for tid, (tname, sources) in enumerate(target_spec.items(), start=1):
        target_names[tid] = tname
        if not sources:
            raise ConfigurationError(f"target {tname!r} lists no source structures")
        for sname in sources:
            if sname not in source_label_names:
                raise ConfigurationError(f"source scheme is missing structure {sname!r}")
            sid = int(source_label_names[sname])
            if sid in claimed:
                raise ConfigurationError(
                    f"source {sname!r} claimed by both {claimed[sid]!r} and {tname!r}"
                )
            claimed[sid] = tname
            generation_to_target[sid] = tid
    for sid in source_label_names.values():
        generation_to_target.setdefault(int(sid), 0)
    return LabelMapping(generation_to_target, target_names, len(target_names))


def apply_mapping(lv: Volume, m: LabelMapping) -> Volume:
    """Replace each voxel label by its target id; unmapped values become 0."""
    if not lv.is_label:
        raise ContractError("apply_mapping expects a label volume")
    top = max(int(lv.data.max(initial=0)), m.max_generation_id)
    lut = np.zeros(top + 1, dtype=np.int32)
    for g, t in m.generation_to_target.items():
        if g <= top:
            lut[g] = t
    return lv.with_data(lut[lv.data])


def preprocess_ct_for_clustering(img: Volume, blur_sigma: float = DEFAULT_BLUR_SIGMA_MM,
                                 gamma: float = 1.0) -> Volume:
    """Blur, min-max normalize, and contrast-stretch a CT image.

    blur_sigma is a physical standard deviation in mm (0 disables the blur);
    after normalization to [0,1] the values are raised to the gamma exponent.
    """
    if img.is_label:
        raise ContractError("preprocess_ct_for_clustering expects an image volume")
    if blur_sigma < 0:
        raise ContractError(f"blur_sigma must be >= 0, got {blur_sigma}")
    if gamma <= 0:
        raise ContractError(f"gamma must be > 0, got {gamma}")

    data = img.data.astype(np.float64)
    if blur_sigma > 0:
        sigma_vox = [blur_sigma / s for s in img.spacing]
        data = ndimage.gaussian_filter(data, sigma=sigma_vox, mode="reflect")

    lo, hi = float(data.min()), float(data.max())
    if hi - lo <= 0:
        raise DegenerateNormalizationError("image is constant, cannot min-max normalize")
    data = (data - lo) / (hi - lo)
    if gamma != 1.0:
        data = np.power(data, gamma)
    return img.with_data(data.astype(np.float32))


def apply_table_mask(lv: Volume, table_mask: Volume, remove: bool) -> Volume:
    """Zero out the voxels under a (binary) CT-table mask when remove is set."""
    if not lv.is_label or not table_mask.is_label:
        raise ContractError("apply_table_mask expects label volumes")
    if not lv.same_geometry_as(table_mask):
        raise ContractError("apply_table_mask: mask geometry does not match volume")
    if not np.all((table_mask.data == 0) | (table_mask.data == 1)):
        raise ContractError("table_mask must be binary")
    if not remove:
        return lv
    out = lv.data.copy()
    out[table_mask.data == 1] = 0
    return lv.with_data(out)
