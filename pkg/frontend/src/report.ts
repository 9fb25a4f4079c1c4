/**
 * Parsers for the pipeline's CSV reports.
 *
 * `report.csv` holds one row per (case, label) with empty strings where a
 * metric is undefined and a reason column saying why.
 */

import Papa from "papaparse";

import { FormatError } from "./errors.js";

export type UndefinedReason = "none" | "empty_pred" | "empty_gt" | "both_empty";

export interface ReportRow {
  caseId: string;
  label: number;
  dice: number | null;
  hd95: number | null;
  undefinedReason: UndefinedReason;
}

const REASONS: ReadonlySet<string> = new Set(["none", "empty_pred", "empty_gt", "both_empty"]);

function parseMetric(raw: string | undefined, column: string): number | null {
  if (raw === undefined) {
    throw new FormatError(`report is missing the ${column} column`);
  }
  if (raw === "") {
    return null;
  }
  const value = Number(raw);
  if (!Number.isFinite(value)) {
    throw new FormatError(`report has a non-numeric ${column} value: ${raw}`);
  }
  return value;
}

/** Parse the text of a report.csv into typed rows. */
export function parseReportCsv(text: string): ReportRow[] {
  const parsed = Papa.parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0]!;
    throw new FormatError(`report CSV is malformed: ${first.message} (row ${first.row})`);
  }
  return parsed.data.map((row) => {
    const reason = row["undefined_reason"];
    if (reason === undefined || !REASONS.has(reason)) {
      throw new FormatError(`report has an unknown undefined_reason: ${reason}`);
    }
    if (row["case_id"] === undefined || row["label"] === undefined) {
      throw new FormatError("report is missing the case_id or label column");
    }
    return {
      caseId: row["case_id"],
      label: Number(row["label"]),
      dice: parseMetric(row["dice"], "dice"),
      hd95: parseMetric(row["hd95"], "hd95"),
      undefinedReason: reason as UndefinedReason,
    };
  });
}
