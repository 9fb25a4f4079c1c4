"""Synthetic abdominal training volumes from expert CT label maps.

The pipeline: preprocess CT/label pairs onto a common grid, cluster
intensities to enrich the label maps (background and per-organ Gaussian
mixtures fitted with EM), then synthesize unlimited domain-randomized
image/label training pairs on the fly, with Dice/HD95 evaluation and
Kruskal-Wallis comparison utilities alongside.
"""

__version__ = "0.1.0"

from .clustering import (
    AugmentResult,
    ClusteringConfig,
    GmmModel,
    Subject,
    Variant,
    assign_clusters,
    augment_label_map,
    fit_gmm_em,
    generate_variants,
    select_table_removal,
)
from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateFitError,
    DegenerateNormalizationError,
    DegenerateRankingError,
    FormatError,
    SynthAbdError,
    UnsupportedFormatError,
    ValidationError,
)
from .generation import (
    GenerationConfig,
    SampleStream,
    SpatialTransform,
    apply_bias_field,
    apply_transform_label,
    draw_intensity_params,
    generate_many,
    generate_sample,
    normalize_gamma,
    sample_intensities,
    sample_stream,
    sample_transform,
    simulate_resolution,
)
from .labels import (
    ABDOMINAL_VERTEBRAE,
    DEFAULT_SOURCE_LABELS,
    DEFAULT_TARGET_SPEC,
    GAMMA_CHOICES,
    N_TARGETS,
    LabelMapping,
    apply_mapping,
    apply_table_mask,
    build_target_mapping,
    load_target_spec,
    preprocess_ct_for_clustering,
)
from .metrics import (
    REASON_BOTH_EMPTY,
    REASON_EMPTY_GT,
    REASON_EMPTY_PRED,
    REASON_NONE,
    Aggregate,
    MetricRecord,
    aggregate,
    boundary_mask,
    dice,
    evaluate_case,
    hd95,
    kruskal_wallis,
)
from .nifti import read_volume, write_volume
from .pipeline import (
    EvaluationConfig,
    LabelPrepConfig,
    PipelineConfig,
    RunResult,
    load_variants,
    run_cluster_variants,
    run_compare,
    run_evaluate,
    run_preprocess,
    run_synth,
)
from .volume import IMAGE, LABEL, Geometry, Volume, crop_or_pad, resample

__all__ = [
    "ABDOMINAL_VERTEBRAE",
    "Aggregate",
    "AugmentResult",
    "ClusteringConfig",
    "ConfigurationError",
    "ContractError",
    "DEFAULT_SOURCE_LABELS",
    "DEFAULT_TARGET_SPEC",
    "DegenerateFitError",
    "DegenerateNormalizationError",
    "DegenerateRankingError",
    "EvaluationConfig",
    "FormatError",
    "GAMMA_CHOICES",
    "GenerationConfig",
    "Geometry",
    "GmmModel",
    "IMAGE",
    "LABEL",
    "LabelMapping",
    "LabelPrepConfig",
    "MetricRecord",
    "N_TARGETS",
    "PipelineConfig",
    "REASON_BOTH_EMPTY",
    "REASON_EMPTY_GT",
    "REASON_EMPTY_PRED",
    "REASON_NONE",
    "RunResult",
    "SampleStream",
    "SpatialTransform",
    "Subject",
    "SynthAbdError",
    "UnsupportedFormatError",
    "ValidationError",
    "Variant",
    "Volume",
    "aggregate",
    "apply_bias_field",
    "apply_mapping",
    "apply_table_mask",
    "apply_transform_label",
    "assign_clusters",
    "augment_label_map",
    "boundary_mask",
    "build_target_mapping",
    "crop_or_pad",
    "dice",
    "draw_intensity_params",
    "evaluate_case",
    "fit_gmm_em",
    "generate_many",
    "generate_sample",
    "generate_variants",
    "hd95",
    "kruskal_wallis",
    "load_target_spec",
    "load_variants",
    "normalize_gamma",
    "preprocess_ct_for_clustering",
    "read_volume",
    "resample",
    "run_cluster_variants",
    "run_compare",
    "run_evaluate",
    "run_preprocess",
    "run_synth",
    "sample_intensities",
    "sample_stream",
    "sample_transform",
    "select_table_removal",
    "simulate_resolution",
    "write_volume",
]
