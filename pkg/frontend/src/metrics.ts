/**
 * Segmentation metrics through the pipeline's evaluate stage.
 *
 * Arrays go out as label volumes, the pipeline scores them, and the rows
 * of its report come back typed. Results are therefore identical to what
 * a command-line evaluation of the same data would print, down to the
 * formatting of the CSV.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { ContractError } from "./errors.js";
import { writeNifti } from "./nifti.js";
import { parseReportCsv, type UndefinedReason } from "./report.js";
import { runSynthabd } from "./runner.js";

export interface LabelVolume {
  /** Label ids, x fastest (see nifti.flatIndex). */
  data: Int32Array;
  dims: [number, number, number];
}

export interface LabelScore {
  dice: number | null;
  hd95: number | null;
  undefinedReason: UndefinedReason;
}

export interface MetricsResult {
  /** label id -> scores, one entry per requested label. */
  scores: Map<number, LabelScore>;
  /** Raw text of the report the evaluation produced. */
  reportCsv: string;
}

/**
 * Score a prediction against a ground truth, per label.
 *
 * `spacing` is the voxel size in mm used for surface distances. Shape or
 * argument problems raise before any process is spawned.
 */
export async function computeMetrics(
  pred: LabelVolume,
  gt: LabelVolume,
  labels: number[],
  spacing: [number, number, number],
): Promise<MetricsResult> {
  if (pred.dims.some((d, i) => d !== gt.dims[i])) {
    throw new ContractError(
      `prediction grid [${pred.dims.join(", ")}] does not match ground truth [${gt.dims.join(", ")}]`,
    );
  }
  if (labels.length === 0 || labels.some((l) => !Number.isInteger(l) || l < 1)) {
    throw new ContractError(`labels must be positive integers, got [${labels.join(", ")}]`);
  }
  if (spacing.some((s) => !(s > 0))) {
    throw new ContractError(`spacing must be positive, got [${spacing.join(", ")}]`);
  }

  const root = fs.mkdtempSync(path.join(os.tmpdir(), "synthabd-eval-"));
  try {
    const predDir = path.join(root, "pred");
    const gtDir = path.join(root, "gt");
    const reportDir = path.join(root, "report");
    fs.mkdirSync(predDir);
    fs.mkdirSync(gtDir);
    const origin: [number, number, number] = [0, 0, 0];
    writeNifti(path.join(predDir, "case.nii"), { dims: pred.dims, spacing, origin, data: pred.data });
    writeNifti(path.join(gtDir, "case.nii"), { dims: gt.dims, spacing, origin, data: gt.data });

    const configPath = path.join(root, "config.json");
    fs.writeFileSync(
      configPath,
      JSON.stringify({
        paths: { pred_dir: predDir, gt_dir: gtDir, report_dir: reportDir },
        evaluation: { labels },
        seed: 0,
      }),
    );
    await runSynthabd(["evaluate", "--config", configPath]);

    const reportCsv = fs.readFileSync(path.join(reportDir, "report.csv"), "utf8");
    const scores = new Map<number, LabelScore>();
    for (const row of parseReportCsv(reportCsv)) {
      scores.set(row.label, { dice: row.dice, hd95: row.hd95, undefinedReason: row.undefinedReason });
    }
    return { scores, reportCsv };
  } finally {
    fs.rmSync(root, { recursive: true, force: true });
  }
}
