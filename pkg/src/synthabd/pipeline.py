"""Pipeline orchestration: preprocess, cluster-variants, synth, evaluate, compare.

Each run is a pure function of (input files, config, seed) and writes a
manifest recording the effective config hash, the seed, library versions,
and a content hash per output file, so a rerun can be verified byte for
byte. Nothing here consults the wall clock.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import labels as labelmod
from .clustering import ClusteringConfig, Subject, Variant, generate_variants
from .errors import ConfigurationError, SynthAbdError
from .generation import GenerationConfig, generate_many, sample_stream
from .labels import (
    GAMMA_CHOICES,
    LabelMapping,
    apply_mapping,
    build_target_mapping,
    preprocess_ct_for_clustering,
)
from .metrics import aggregate, evaluate_case, kruskal_wallis
from .nifti import read_volume, write_volume
from .volume import IMAGE, LABEL, Volume, crop_or_pad, resample

log = logging.getLogger("synthabd")

_GAMMA_TAG = 0xCA77A


@dataclass(frozen=True)
class LabelPrepConfig:
    """Preprocessing stage options."""

    output_spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    output_shape: tuple[int, int, int] = (300, 300, 250)
    blur_sigma: float = labelmod.DEFAULT_BLUR_SIGMA_MM
    gamma_choices: tuple[float, ...] = GAMMA_CHOICES
    image_interp: str = "trilinear"

    def __post_init__(self):
        object.__setattr__(self, "output_spacing", tuple(float(s) for s in self.output_spacing))
        object.__setattr__(self, "output_shape", tuple(int(n) for n in self.output_shape))
        object.__setattr__(self, "gamma_choices", tuple(float(g) for g in self.gamma_choices))
        if any(s <= 0 for s in self.output_spacing) or any(n < 1 for n in self.output_shape):
            raise ConfigurationError("output_spacing must be > 0 and output_shape >= 1")
        if not self.gamma_choices or any(g <= 0 for g in self.gamma_choices):
            raise ConfigurationError("gamma_choices must be positive")
        if self.image_interp not in ("trilinear", "nearest"):
            raise ConfigurationError("image_interp must be 'trilinear' or 'nearest'")

    def to_json_dict(self) -> dict:
        return {
            "output_spacing": list(self.output_spacing),
            "output_shape": list(self.output_shape),
            "blur_sigma": self.blur_sigma,
            "gamma_choices": list(self.gamma_choices),
            "image_interp": self.image_interp,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "LabelPrepConfig":
        keys = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in keys})


@dataclass(frozen=True)
class EvaluationConfig:
    """Which labels to score and how to combine HD95 directions."""

    labels: dict[int, str] = field(default_factory=dict)
    pooled_hd95: bool = False

    def resolved_labels(self) -> dict[int, str]:
        if self.labels:
            return dict(self.labels)
        return dict(build_target_mapping().target_names)

    def to_json_dict(self) -> dict:
        return {
            "labels": {str(k): v for k, v in self.labels.items()},
            "pooled_hd95": self.pooled_hd95,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvaluationConfig":
        raw = d.get("labels", {})
        if isinstance(raw, list):
            labels = {int(k): str(k) for k in raw}
        else:
            labels = {int(k): str(v) for k, v in raw.items()}
        return cls(labels=labels, pooled_hd95=bool(d.get("pooled_hd95", False)))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs: paths, stage configs, and the global seed."""

    paths: dict[str, str] = field(default_factory=dict)
    labelprep: LabelPrepConfig = field(default_factory=LabelPrepConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seed: int | None = None

    def __post_init__(self):
        values = [v for v in self.paths.values() if v]
        if len(set(values)) != len(values):
            raise ConfigurationError("configured paths must be pairwise distinct")

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigurationError("no seed given: pass --seed or set 'seed' in the config")
        return int(self.seed)

    def path(self, key: str, override: str | None = None) -> Path:
        if override:
            return Path(override)
        if key not in self.paths:
            raise ConfigurationError(f"config paths section is missing {key!r}")
        return Path(self.paths[key])

    def to_json_dict(self) -> dict:
        return {
            "paths": dict(self.paths),
            "labelprep": self.labelprep.to_json_dict(),
            "clustering": self.clustering.to_json_dict(),
            "generation": self.generation.to_json_dict(),
            "evaluation": self.evaluation.to_json_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            paths={str(k): str(v) for k, v in d.get("paths", {}).items()},
            labelprep=LabelPrepConfig.from_json_dict(d.get("labelprep", {})),
            clustering=ClusteringConfig.from_json_dict(d.get("clustering", {})),
            generation=GenerationConfig.from_json_dict(d.get("generation", {})),
            evaluation=EvaluationConfig.from_json_dict(d.get("evaluation", {})),
            seed=d.get("seed"),
        )

    @classmethod
    def from_json_file(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as f:
            try:
                d = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_json_dict(d)

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        if seed is None:
            return self
        return PipelineConfig(self.paths, self.labelprep,
                              ClusteringConfig.from_json_dict({**self.clustering.to_json_dict(), "seed": int(seed)}),
                              self.generation, self.evaluation, int(seed))


@dataclass
class RunResult:
    """What a subcommand produced and how much of it failed."""

    manifest: dict
    n_failures: int

    @property
    def exit_code(self) -> int:
        return 0 if self.n_failures == 0 else 1


def _config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(cfg.to_json_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    from . import __version__

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "synthabd": __version__,
    }


def _base_manifest(command: str, cfg: PipelineConfig) -> dict:
    return {
        "command": command,
        "config_sha256": _config_hash(cfg),
        "seed": cfg.seed,
        "versions": _versions(),
        "outputs": {},
        "failures": [],
    }


def _write_manifest(manifest: dict, out_dir: Path) -> Path:
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _record_output(manifest: dict, path: Path) -> None:
    manifest["outputs"][path.name] = _file_hash(path)


def _find_one(directory: Path, stem: str) -> Path | None:
    for suffix in (".nii.gz", ".nii"):
        p = directory / (stem + suffix)
        if p.exists():
            return p
    return None


def discover_subjects(input_dir: Path) -> list[str]:
    """Subject ids from <id>_ct.nii[.gz] files, sorted."""
    ids = set()
    for p in input_dir.glob("*_ct.nii*"):
        name = p.name
        for suffix in ("_ct.nii.gz", "_ct.nii"):
            if name.endswith(suffix):
                ids.add(name[: -len(suffix)])
    return sorted(ids)


def _subject_gamma(seed: int, subject_id: str, choices: Sequence[float]) -> float:
    sid = int.from_bytes(hashlib.sha256(subject_id.encode()).digest()[:8], "little")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _GAMMA_TAG, sid]))
    return float(choices[rng.integers(len(choices))])


def run_preprocess(cfg: PipelineConfig, input_dir: str | None = None,
                   out_dir: str | None = None) -> RunResult:
    """Resample, crop/pad, remap labels to target ids, precondition CT.

    Writes per subject: <id>_ct (preconditioned, [0,1]), <id>_labels (target
    ids), and <id>_tablemask when present, plus a manifest. Subjects failing
    individually are recorded and skipped.
    """
    seed = cfg.require_seed()
    src = cfg.path("input_dir", input_dir)
    dst = cfg.path("preprocessed_dir", out_dir)
    dst.mkdir(parents=True, exist_ok=True)
    prep = cfg.labelprep
    mapping = build_target_mapping()

    manifest = _base_manifest("preprocess", cfg)
    manifest["subjects"] = {}

    subject_ids = discover_subjects(src)
    if not subject_ids:
        raise ConfigurationError(f"no subjects found in {src} (expected <id>_ct.nii[.gz])")

    for sid in subject_ids:
        try:
            ct_path = _find_one(src, f"{sid}_ct")
            lbl_path = _find_one(src, f"{sid}_labels")
            if lbl_path is None:
                raise ConfigurationError(f"subject {sid}: label file missing")
            mask_path = _find_one(src, f"{sid}_tablemask")

            ct = read_volume(ct_path, IMAGE)
            lv = read_volume(lbl_path, LABEL)

            ct = resample(ct, prep.output_spacing, prep.image_interp)
            lv = resample(lv, prep.output_spacing, "nearest")
            ct = crop_or_pad(ct, prep.output_shape, fill=float(ct.data.min()))
            lv = crop_or_pad(lv, prep.output_shape, fill=0)

            lv = apply_mapping(lv, mapping)
            gamma = _subject_gamma(seed, sid, prep.gamma_choices)
            ct = preprocess_ct_for_clustering(ct, prep.blur_sigma, gamma)

            out_ct = dst / f"{sid}_ct.nii.gz"
            out_lbl = dst / f"{sid}_labels.nii.gz"
            write_volume(ct, out_ct)
            write_volume(lv, out_lbl)
            _record_output(manifest, out_ct)
            _record_output(manifest, out_lbl)
            entry = {"gamma": gamma}

            if mask_path is not None:
                mask = read_volume(mask_path, LABEL)
                mask = resample(mask, prep.output_spacing, "nearest")
                mask = crop_or_pad(mask, prep.output_shape, fill=0)
                out_mask = dst / f"{sid}_tablemask.nii.gz"
                write_volume(mask, out_mask)
                _record_output(manifest, out_mask)
                entry["table_mask"] = True
            manifest["subjects"][sid] = entry
            log.info("preprocessed %s (gamma=%.3g)", sid, gamma)
        except (SynthAbdError, OSError) as e:
            log.error("subject %s failed: %s", sid, e)
            manifest["failures"].append({"subject": sid, "error": str(e)})

    _write_manifest(manifest, dst)
    return RunResult(manifest, len(manifest["failures"]))


def _load_subjects(directory: Path) -> list[Subject]:
    subjects = []
    for sid in discover_subjects(directory):
        ct = read_volume(_find_one(directory, f"{sid}_ct"), IMAGE)
        lv = read_volume(_find_one(directory, f"{sid}_labels"), LABEL)
        mask_path = _find_one(directory, f"{sid}_tablemask")
        mask = read_volume(mask_path, LABEL) if mask_path else None
        subjects.append(Subject(sid, ct, lv, mask))
    return subjects


def run_cluster_variants(cfg: PipelineConfig, in_dir: str | None = None,
                         out_dir: str | None = None) -> RunResult:
    """Expand preprocessed subjects into the augmented variant set on disk."""
    seed = cfg.require_seed()
    src = cfg.path("preprocessed_dir", in_dir)
    dst = cfg.path("variants_dir", out_dir)
    dst.mkdir(parents=True, exist_ok=True)

    ccfg = ClusteringConfig.from_json_dict({**cfg.clustering.to_json_dict(), "seed": seed})
    subjects = _load_subjects(src)
    if not subjects:
        raise ConfigurationError(f"no preprocessed subjects found in {src}")

    manifest = _base_manifest("cluster-variants", cfg)
    variants = generate_variants(subjects, ccfg)
    for v in variants:
        vol_path = dst / f"{v.name}_genlabels.nii.gz"
        side_path = dst / f"{v.name}.json"
        write_volume(v.volume, vol_path)
        side_path.write_text(json.dumps(v.sidecar_dict(), sort_keys=True, indent=2) + "\n")
        _record_output(manifest, vol_path)
        _record_output(manifest, side_path)
    manifest["n_variants"] = len(variants)

    _write_manifest(manifest, dst)
    log.info("wrote %d variants to %s", len(variants), dst)
    print(f"variants: {len(variants)}")
    return RunResult(manifest, 0)


def load_variants(variants_dir: Path) -> list[Variant]:
    """Read variant label maps + sidecars back, ordered by name."""
    variants = []
    for vol_path in sorted(variants_dir.glob("*_genlabels.nii.gz")):
        name = vol_path.name[: -len("_genlabels.nii.gz")]
        side_path = variants_dir / f"{name}.json"
        if not side_path.exists():
            raise ConfigurationError(f"variant {name}: sidecar JSON missing")
        side = json.loads(side_path.read_text())
        variants.append(
            Variant(
                subject_id=side["subject_id"],
                k_bg=int(side["k_bg"]),
                k_fg=int(side["k_fg"]),
                replicate=int(side["replicate"]),
                table_removed=bool(side["table_removed"]),
                volume=read_volume(vol_path, LABEL),
                mapping=LabelMapping.from_json_dict(side["mapping"]),
            )
        )
    if not variants:
        raise ConfigurationError(f"no variants found in {variants_dir}")
    return variants


def run_synth(cfg: PipelineConfig, count: int, workers: int = 1,
              variants_dir: str | None = None, out_dir: str | None = None,
              stdout_manifest: bool = False, start: int = 0) -> RunResult:
    """Generate `count` synthetic image/label pairs from the variant set.

    Samples are addressed by absolute index: a run with `start` > 0 writes
    exactly the bytes a longer run from zero would have written for the
    same indices, so consumers can pull the stream in windows.
    """
    seed = cfg.require_seed()
    if count < 1:
        raise ConfigurationError("--count must be >= 1")
    if start < 0:
        raise ConfigurationError("--start must be >= 0")
    src = cfg.path("variants_dir", variants_dir)
    dst = cfg.path("samples_dir", out_dir)
    dst.mkdir(parents=True, exist_ok=True)

    variants = load_variants(src)
    stream = sample_stream(variants, cfg.generation, seed)
    manifest = _base_manifest("synth", cfg)
    manifest["count"] = count
    manifest["start"] = start
    manifest["samples"] = {}

    pairs = generate_many(stream, start, count, workers=workers)
    for off, (img, lbl) in enumerate(pairs):
        i = start + off
        img_path = dst / f"sample_{i:05d}_img.nii.gz"
        lbl_path = dst / f"sample_{i:05d}_lbl.nii.gz"
        write_volume(img, img_path)
        write_volume(lbl, lbl_path)
        _record_output(manifest, img_path)
        _record_output(manifest, lbl_path)
        manifest["samples"][f"{i:05d}"] = {"variant": stream.variant_for(i).name}

    _write_manifest(manifest, dst)
    if stdout_manifest:
        print(json.dumps(manifest, sort_keys=True))
    else:
        print(f"samples: {count}")
    return RunResult(manifest, 0)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def run_evaluate(cfg: PipelineConfig, pred_dir: str | None = None,
                 gt_dir: str | None = None, out: str | None = None) -> RunResult:
    """Score matching prediction/ground-truth label files; write CSV + summary."""
    pred_root = cfg.path("pred_dir", pred_dir)
    gt_root = cfg.path("gt_dir", gt_dir)
    report_path = Path(out) if out else cfg.path("report_dir") / "report.csv"
    report_path.parent.mkdir(parents=True, exist_ok=True)

    labels = cfg.evaluation.resolved_labels()
    label_ids = sorted(labels)

    pred_files = {p.name: p for p in sorted(pred_root.glob("*.nii*"))}
    gt_files = {p.name: p for p in sorted(gt_root.glob("*.nii*"))}
    common = sorted(set(pred_files) & set(gt_files))
    if not common:
        raise ConfigurationError(f"no matching label files between {pred_root} and {gt_root}")

    manifest = _base_manifest("evaluate", cfg)
    records = []
    for name in common:
        case_id = name.split(".nii")[0]
        try:
            pred = read_volume(pred_files[name], LABEL)
            gt = read_volume(gt_files[name], LABEL)
            records.extend(
                evaluate_case(pred, gt, label_ids, gt.spacing, case_id=case_id,
                              pooled=cfg.evaluation.pooled_hd95)
            )
        except (SynthAbdError, OSError) as e:
            log.error("case %s failed: %s", case_id, e)
            manifest["failures"].append({"case": case_id, "error": str(e)})

    with open(report_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case_id", "label", "dice", "hd95", "undefined_reason"])
        for r in records:
            w.writerow([r.case_id, r.label_id, _fmt(r.dice), _fmt(r.hd95), r.undefined_reason])
    _record_output(manifest, report_path)

    stats = aggregate(records)
    summary = {"n_cases": len(common), "per_label": {}}
    for lid in label_ids:
        entry = {"name": labels[lid]}
        for metric in ("dice", "hd95"):
            a = stats.get((lid, metric))
            if a is None:
                continue
            entry[metric] = {"mean": a.mean, "std": a.std, "n": a.n, "n_undefined": a.n_undefined}
        summary["per_label"][str(lid)] = entry
    summary_path = report_path.parent / "summary.json"
    summary_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _record_output(manifest, summary_path)

    _write_manifest(manifest, report_path.parent)
    print(f"cases: {len(common)}, records: {len(records)}")
    return RunResult(manifest, len(manifest["failures"]))


def _read_report(path: Path) -> dict[tuple[int, str], list[float]]:
    groups: dict[tuple[int, str], list[float]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            lid = int(row["label"])
            for metric in ("dice", "hd95"):
                if row[metric] != "":
                    groups.setdefault((lid, metric), []).append(float(row[metric]))
    return groups


def run_compare(cfg: PipelineConfig, reports: Sequence[str], out: str | None = None) -> RunResult:
    """Kruskal-Wallis across >= 2 metric reports, per (label, metric)."""
    if len(reports) < 2:
        raise ConfigurationError("compare needs at least two report files")
    out_path = Path(out) if out else cfg.path("report_dir") / "compare.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)

    per_report = [_read_report(Path(r)) for r in reports]
    keys = sorted(set().union(*per_report))

    manifest = _base_manifest("compare", cfg)
    manifest["reports"] = [str(r) for r in reports]
    rows = []
    for key in keys:
        groups = [rep.get(key, []) for rep in per_report]
        lid, metric = key
        if any(not g for g in groups):
            rows.append([lid, metric, "", "", "missing group"])
            continue
        try:
            h, p = kruskal_wallis(groups)
            rows.append([lid, metric, repr(h), repr(p), ""])
        except SynthAbdError as e:
            rows.append([lid, metric, "", "", str(e)])

    with open(out_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "metric", "h", "p", "note"])
        w.writerows(rows)
    _record_output(manifest, out_path)

    _write_manifest(manifest, out_path.parent)
    print(f"comparisons: {len(rows)}")
    return RunResult(manifest, 0)
