"""The whole pipeline through the command-line interface, end to end, in a
temporary directory: preprocess -> cluster-variants -> synth -> evaluate ->
compare.

Run with: python3 demos/06_full_pipeline_cli.py
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from synthabd import DEFAULT_SOURCE_LABELS, Volume, write_volume


def cli(*args: str) -> str:
    cmd = [sys.executable, "-m", "synthabd.cli", *args]
    print("$ synthabd", " ".join(args))
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise SystemExit(f"command failed ({proc.returncode}):\n{proc.stderr}")
    out = proc.stdout.strip()
    if out:
        print(" ", out.replace("\n", "\n  "))
    return out


root = Path(tempfile.mkdtemp(prefix="synthabd_demo_"))
print("working in", root, "\n")

# Two input subjects: CT plus expert label map in the source id scheme,
# one of them with a scanner-table mask.
rng = np.random.default_rng(2024)
liver, spleen = DEFAULT_SOURCE_LABELS["liver"], DEFAULT_SOURCE_LABELS["spleen"]
input_dir = root / "input"
input_dir.mkdir()
for i, sid in enumerate(("case_a", "case_b")):
    labels = np.zeros((24, 24, 24), np.int32)
    labels[4 + i:13 + i, 4:13, 4:18] = liver
    labels[15:22, 15:22, 4:18] = spleen
    ct = rng.normal(-950.0, 25.0, (24, 24, 24)).astype(np.float32)
    ct[labels == liver] = rng.normal(60.0, 12.0, int((labels == liver).sum()))
    ct[labels == spleen] = rng.normal(-70.0, 12.0, int((labels == spleen).sum()))
    write_volume(Volume(ct, (3.0, 3.0, 3.0)), input_dir / f"{sid}_ct.nii.gz")
    write_volume(Volume(labels, (3.0, 3.0, 3.0), kind="label"),
                 input_dir / f"{sid}_labels.nii.gz")
mask = np.zeros((24, 24, 24), np.int32)
mask[:, :, 0] = 1
write_volume(Volume(mask, (3.0, 3.0, 3.0), kind="label"),
             input_dir / "case_a_tablemask.nii.gz")

# One JSON config drives every stage; the seed makes the whole run
# reproducible down to the output bytes.
config = {
    "paths": {
        "input_dir": str(input_dir),
        "preprocessed_dir": str(root / "prep"),
        "variants_dir": str(root / "variants"),
        "samples_dir": str(root / "samples"),
        "pred_dir": str(root / "pred"),
        "gt_dir": str(root / "gt"),
        "report_dir": str(root / "report"),
    },
    "labelprep": {"output_spacing": [3.0, 3.0, 3.0], "output_shape": [28, 28, 28]},
    "clustering": {"k_background_options": [3], "k_foreground_options": [1, 2],
                   "variant_multiplier": 1},
    "generation": {"output_shape": [28, 28, 28], "output_spacing": [3.0, 3.0, 3.0],
                   "rotation_range": 8.0, "translation_range": 5.0,
                   "deform_grid": 2, "deform_std": 1.0, "bias_grid": 2,
                   "spacing_range": [3.0, 5.0]},
    "seed": 7,
}
config_path = root / "config.json"
config_path.write_text(json.dumps(config, indent=2))

cli("preprocess", "--config", str(config_path))
cli("cluster-variants", "--config", str(config_path))
cli("synth", "--config", str(config_path), "--count", "4")

# Score the generated label maps against themselves: a perfect prediction,
# so every defined dice is 1 and every defined hd95 is 0.
(root / "pred").mkdir()
(root / "gt").mkdir()
for p in sorted((root / "samples").glob("*_lbl.nii.gz")):
    shutil.copy(p, root / "pred" / p.name)
    shutil.copy(p, root / "gt" / p.name)
cli("evaluate", "--config", str(config_path))

report = root / "report" / "report.csv"
lines = report.read_text().splitlines()
defined = [l for l in lines[1:] if l.endswith(",none")]
print(f"\nreport.csv: {len(lines) - 1} rows, {len(defined)} with both metrics defined")
print("first defined rows:")
for line in defined[:3]:
    print(" ", line)

# Compare two result sets; here they are the same file, so the rank test
# finds nothing (constant values are flagged instead of faked).
cli("compare", "--config", str(config_path),
    "--reports", str(report), str(report),
    "--out", str(root / "report" / "compare.csv"))
print("\ncompare.csv head:")
for line in (root / "report" / "compare.csv").read_text().splitlines()[:4]:
    print(" ", line)

# Every stage wrote a manifest with a config hash and per-file checksums.
manifest = json.loads((root / "samples" / "manifest.json").read_text())
print("\nsynth manifest: seed", manifest["seed"],
      "config", manifest["config_sha256"][:12] + "...",
      f"({len(manifest['outputs'])} files hashed)")

shutil.rmtree(root)
print("\ndone (temporary directory removed)")
