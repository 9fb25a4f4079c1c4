"""Intensity clustering that expands organ label maps into generation label maps.

A univariate Gaussian mixture is fitted with EM to the background voxels of a
preconditioned CT (K_bg components) and to each organ segment independently
(K_fg components). Cluster assignments mint new generation-only labels above
the target-id range, so one expert label map becomes many richer variants for
the synthesis stage. The returned LabelMapping collapses everything back to
the target scheme.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, DegenerateFitError
from .labels import DEFAULT_TARGET_SPEC, LabelMapping, build_target_mapping
from .volume import Volume

_ASSIGN_CHUNK = 1 << 22  # voxels per posterior-evaluation block


@dataclass(frozen=True)
class GmmModel:
    """K-component univariate Gaussian mixture with its EM likelihood trace."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    log_likelihood_trace: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        trace = np.asarray(self.log_likelihood_trace, dtype=np.float64)
        if not (means.shape == variances.shape == weights.shape) or means.ndim != 1:
            raise ContractError("means, variances, weights must be equal-length 1D arrays")
        if means.size < 1:
            raise ContractError("model needs at least one component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ContractError("weights must be non-negative and sum to 1")
        if np.any(variances <= 0):
            raise ContractError("variances must be positive")
        if trace.size:
            drop = np.diff(trace) < -1e-9 * np.abs(trace[:-1])
            if np.any(drop):
                raise ContractError("log-likelihood trace decreases")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "log_likelihood_trace", trace)

    @property
    def k(self) -> int:
        return self.means.size

    def log_responsibilities(self, x: np.ndarray) -> np.ndarray:
        """Per-component log joint density log π_k + log N(x | μ_k, σ²_k)."""
        x = np.asarray(x, dtype=np.float64)[..., None]
        return (
            -0.5 * (x - self.means) ** 2 / self.variances
            - 0.5 * np.log(2.0 * np.pi * self.variances)
            + np.log(self.weights)
        )

    def to_json_dict(self) -> dict:
        return {
            "k": int(self.k),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "weights": self.weights.tolist(),
            "log_likelihood": float(self.log_likelihood_trace[-1]),
            "n_iterations": int(self.log_likelihood_trace.size),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GmmModel":
        return cls(
            np.asarray(d["means"], dtype=np.float64),
            np.asarray(d["variances"], dtype=np.float64),
            np.asarray(d["weights"], dtype=np.float64),
            np.asarray([d["log_likelihood"]], dtype=np.float64),
        )


@dataclass(frozen=True)
class ClusteringConfig:
    """Options for the clustering/variant-expansion stage."""

    k_background_options: tuple[int, ...] = (3, 4, 5)
    k_foreground_options: tuple[int, ...] = (1, 2, 3)
    max_iter: int = 100
    rel_tol: float = 1e-6
    variance_floor: float = 1e-6  # relative to the squared sample range
    max_fit_samples: int = 1_000_000
    min_segment_voxels: int = 50
    variant_multiplier: int = 2
    table_removal_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k_background_options", tuple(int(k) for k in self.k_background_options))
        object.__setattr__(self, "k_foreground_options", tuple(int(k) for k in self.k_foreground_options))
        for name in ("k_background_options", "k_foreground_options"):
            opts = getattr(self, name)
            if not opts or any(k < 1 for k in opts):
                raise ContractError(f"{name} must be a non-empty list of K >= 1")
        if self.max_iter < 1:
            raise ContractError("max_iter must be >= 1")
        if self.rel_tol <= 0 or self.variance_floor <= 0:
            raise ContractError("rel_tol and variance_floor must be > 0")
        if self.max_fit_samples < 1 or self.min_segment_voxels < 1:
            raise ContractError("max_fit_samples and min_segment_voxels must be >= 1")
        if self.variant_multiplier < 1:
            raise ContractError("variant_multiplier must be >= 1")
        if not 0.0 <= self.table_removal_fraction <= 1.0:
            raise ContractError("table_removal_fraction must be in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "k_background_options": list(self.k_background_options),
            "k_foreground_options": list(self.k_foreground_options),
            "max_iter": self.max_iter,
            "rel_tol": self.rel_tol,
            "variance_floor": self.variance_floor,
            "max_fit_samples": self.max_fit_samples,
            "min_segment_voxels": self.min_segment_voxels,
            "variant_multiplier": self.variant_multiplier,
            "table_removal_fraction": self.table_removal_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ClusteringConfig":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})


def fit_gmm_em(
    samples: Iterable[float],
    k: int,
    cfg: ClusteringConfig,
    rng: np.random.Generator | None = None,
) -> GmmModel:
    """Fit a K-component univariate Gaussian mixture by EM.

    Components are initialized at evenly spread intensity quantiles with
    uniform weights. Variances are floored at variance_floor x range^2 so EM
    cannot collapse onto repeated values; with that constraint the likelihood
    trace is non-decreasing. Fits subsample to max_fit_samples voxels.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractError("cannot fit a mixture to an empty sample")
    if not np.all(np.isfinite(x)):
        raise ContractError("samples contain non-finite values")
    if k < 1:
        raise ContractError(f"component count must be >= 1, got {k}")
    n_distinct = np.unique(x).size
    if k > n_distinct:
        raise DegenerateFitError(
            f"cannot fit {k} components to {n_distinct} distinct value(s)"
        )

    fit = x
    if x.size > cfg.max_fit_samples:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        fit = x[rng.choice(x.size, size=cfg.max_fit_samples, replace=False)]
        if np.unique(fit).size < k:
            fit = x

    lo, hi = float(fit.min()), float(fit.max())
    span = hi - lo
    floor = cfg.variance_floor * span * span if span > 0 else cfg.variance_floor

    means = np.quantile(fit, (np.arange(k) + 0.5) / k)
    variances = np.full(k, max((span / k) ** 2 / 12.0, floor))
    weights = np.full(k, 1.0 / k)

    col = fit[:, None]
    trace = []
    prev = None
    for _ in range(cfg.max_iter):
        log_joint = (
            -0.5 * (col - means) ** 2 / variances
            - 0.5 * np.log(2.0 * np.pi * variances)
            + np.log(weights)
        )
        log_total = logsumexp(log_joint, axis=1)
        ll = float(log_total.sum())
        trace.append(ll)
        if prev is not None and ll - prev < cfg.rel_tol * max(abs(prev), 1e-12):
            break
        prev = ll

        resp = np.exp(log_joint - log_total[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        means = resp.T @ fit / nk
        variances = np.maximum((resp * (col - means) ** 2).sum(axis=0) / nk, floor)
        weights = nk / fit.size

    return GmmModel(means, variances, weights, np.asarray(trace))


def assign_clusters(img: Volume, region_mask: Volume, model: GmmModel) -> Volume:
    """Label each masked voxel with its most responsible mixture component.

    Output values are 1..K inside the mask (ties go to the lowest component)
    and 0 outside.
    """
    if img.is_label or not region_mask.is_label:
        raise ContractError("assign_clusters expects (image, label-mask) volumes")
    if not img.same_geometry_as(region_mask):
        raise ContractError("assign_clusters: image and mask geometries differ")

    inside = region_mask.data != 0
    out = np.zeros(img.shape, dtype=np.int32)
    vals = img.data[inside].astype(np.float64)
    assigned = np.empty(vals.size, dtype=np.int32)
    for start in range(0, vals.size, _ASSIGN_CHUNK):
        chunk = vals[start : start + _ASSIGN_CHUNK]
        assigned[start : start + chunk.size] = (
            np.argmax(model.log_responsibilities(chunk), axis=1) + 1
        )
    out[inside] = assigned
    return region_mask.with_data(out)


@dataclass(frozen=True)
class AugmentResult:
    """Augmented label map plus the fit provenance behind it."""

    volume: Volume
    mapping: LabelMapping
    background_model: GmmModel | None
    foreground_models: dict[int, GmmModel]
    unsplit_segments: tuple[int, ...]


def _augment_label_map_full(
    ct: Volume,
    lv: Volume,
    k_bg: int,
    k_fg: int,
    cfg: ClusteringConfig,
    target_mapping: LabelMapping | None = None,
    seed=None,
) -> AugmentResult:
    if ct.is_label or not lv.is_label:
        raise ContractError("augment_label_map expects (image, label) volumes")
    if not ct.same_geometry_as(lv):
        raise ContractError("augment_label_map: ct and label geometries differ")
    if k_bg < 1 or k_fg < 1:
        raise ContractError("k_bg and k_fg must be >= 1")

    if target_mapping is None:
        target_mapping = build_target_mapping()
    n_targets = target_mapping.n_targets

    organ_ids = [int(v) for v in np.unique(lv.data) if v != 0]
    too_big = [s for s in organ_ids if s > n_targets]
    if too_big:
        raise ContractError(
            f"label ids {too_big} exceed the target range 1..{n_targets}; "
            "remap the volume to target ids first"
        )

    ss = np.random.SeedSequence(cfg.seed if seed is None else seed)
    streams = iter(ss.spawn(1 + len(organ_ids)))

    out = np.zeros(lv.shape, dtype=np.int32)
    generation_to_target = {0: 0}
    next_id = n_targets + 1
    bg_model: GmmModel | None = None
    fg_models: dict[int, GmmModel] = {}
    unsplit: list[int] = []

    # Background: one mixture over all unlabelled voxels.
    bg_rng = np.random.default_rng(next(streams))
    bg_inside = lv.data == 0
    bg_vals = ct.data[bg_inside]
    if bg_vals.size >= cfg.min_segment_voxels and np.unique(bg_vals).size >= k_bg:
        bg_model = fit_gmm_em(bg_vals, k_bg, cfg, rng=bg_rng)
        mask = lv.with_data(bg_inside.astype(np.int32))
        clusters = assign_clusters(ct, mask, bg_model).data
        out[bg_inside] = clusters[bg_inside] + (next_id - 1)
        for c in range(k_bg):
            generation_to_target[next_id + c] = 0
        next_id += k_bg

    # Foreground: an independent mixture per segment. Input labels are
    # already target ids, so a segment's parent target is its own id.
    for s in organ_ids:
        rng = np.random.default_rng(next(streams))
        inside = lv.data == s
        vals = ct.data[inside]
        target = s
        if vals.size < cfg.min_segment_voxels or np.unique(vals).size < k_fg:
            out[inside] = s
            generation_to_target[s] = target
            unsplit.append(s)
            continue
        try:
            model = fit_gmm_em(vals, k_fg, cfg, rng=rng)
        except DegenerateFitError:
            out[inside] = s
            generation_to_target[s] = target
            unsplit.append(s)
            continue
        mask = lv.with_data(inside.astype(np.int32))
        clusters = assign_clusters(ct, mask, model).data
        out[inside] = clusters[inside] + (next_id - 1)
        for c in range(k_fg):
            generation_to_target[next_id + c] = target
        fg_models[s] = model
        next_id += k_fg

    mapping = LabelMapping(generation_to_target, dict(target_mapping.target_names), n_targets)
    return AugmentResult(lv.with_data(out), mapping, bg_model, fg_models, tuple(unsplit))


def augment_label_map(
    ct: Volume,
    lv: Volume,
    k_bg: int,
    k_fg: int,
    cfg: ClusteringConfig,
    target_mapping: LabelMapping | None = None,
    seed=None,
) -> tuple[Volume, LabelMapping]:
    """Split background into k_bg clusters and each organ into k_fg sub-labels.

    ct must be the preconditioned intensity volume and lv a label volume in
    target ids. Minted cluster ids start above the target range. Segments too
    small (or without enough distinct intensities) keep their original id.
    Returns the augmented map and the mapping that collapses it back.
    """
    r = _augment_label_map_full(ct, lv, k_bg, k_fg, cfg, target_mapping, seed)
    return r.volume, r.mapping


@dataclass(frozen=True)
class Subject:
    """One preprocessed training subject."""

    subject_id: str
    ct: Volume
    labels: Volume
    table_mask: Volume | None = None


@dataclass(frozen=True)
class Variant:
    """One augmented label map with its provenance."""

    subject_id: str
    k_bg: int
    k_fg: int
    replicate: int
    table_removed: bool
    volume: Volume
    mapping: LabelMapping
    background_model: GmmModel | None = field(repr=False, default=None)
    foreground_models: dict[int, GmmModel] = field(repr=False, default_factory=dict)

    @property
    def name(self) -> str:
        flag = "notable" if self.table_removed else "table"
        return f"{self.subject_id}_bg{self.k_bg}_fg{self.k_fg}_r{self.replicate}_{flag}"

    def sidecar_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "k_bg": self.k_bg,
            "k_fg": self.k_fg,
            "replicate": self.replicate,
            "table_removed": self.table_removed,
            "mapping": self.mapping.to_json_dict(),
            "background_model": None
            if self.background_model is None
            else self.background_model.to_json_dict(),
            "foreground_models": {
                str(s): m.to_json_dict() for s, m in self.foreground_models.items()
            },
        }


def _stable_id_hash(subject_id: str) -> int:
    return int.from_bytes(hashlib.sha256(subject_id.encode()).digest()[:8], "little")


def select_table_removal(subject_ids: Sequence[str], fraction: float, seed: int) -> set[str]:
    """Pick round(fraction x n) subjects by a seeded shuffle of sorted ids."""
    ids = sorted(subject_ids)
    n_pick = int(round(fraction * len(ids)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7AB1E]))
    order = rng.permutation(len(ids))
    return {ids[i] for i in order[:n_pick]}


def _masked_ct(ct: Volume, mask: Volume) -> Volume:
    """Paste the unmasked minimum (air-like) intensity over masked voxels."""
    m = mask.data != 0
    if not m.any():
        return ct
    data = ct.data.copy()
    fill = float(data[~m].min()) if (~m).any() else 0.0
    data[m] = fill
    return ct.with_data(data)


def generate_variants(
    subjects: Sequence[Subject],
    cfg: ClusteringConfig,
    target_mapping: LabelMapping | None = None,
) -> list[Variant]:
    """Expand subjects into the (k_bg x k_fg x multiplier) variant set.

    Odd replicates drop the CT table for the seeded-shuffle-selected fraction
    of subjects that carry a mask: table voxels are zeroed in the label map
    and overwritten with an air intensity before clustering. Per-variant RNG
    is derived from (seed, subject id, k_bg, k_fg, replicate) so results are
    independent of execution order.
    """
    if not subjects:
        raise ContractError("generate_variants needs at least one subject")
    if target_mapping is None:
        target_mapping = build_target_mapping()
    removal = select_table_removal(
        [s.subject_id for s in subjects], cfg.table_removal_fraction, cfg.seed
    )

    from .labels import apply_table_mask  # local import to avoid cycle at module load

    variants: list[Variant] = []
    for subject in subjects:
        for k_bg in cfg.k_background_options:
            for k_fg in cfg.k_foreground_options:
                for rep in range(cfg.variant_multiplier):
                    remove = (
                        rep % 2 == 1
                        and subject.table_mask is not None
                        and subject.subject_id in removal
                    )
                    ct, lv = subject.ct, subject.labels
                    if remove:
                        lv = apply_table_mask(lv, subject.table_mask, True)
                        ct = _masked_ct(ct, subject.table_mask)
                    job_seed = [cfg.seed, _stable_id_hash(subject.subject_id), k_bg, k_fg, rep]
                    res = _augment_label_map_full(
                        ct, lv, k_bg, k_fg, cfg, target_mapping, seed=job_seed
                    )
                    variants.append(
                        Variant(
                            subject.subject_id, k_bg, k_fg, rep, remove,
                            res.volume, res.mapping,
                            res.background_model, res.foreground_models,
                        )
                    )
    return variants
