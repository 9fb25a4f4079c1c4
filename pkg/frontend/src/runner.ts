/**
 * Process runner for the pipeline executable.
 *
 * The command defaults to `synthabd` on PATH; set SYNTHABD_BIN to override
 * (whitespace-separated, so interpreter launches like `python3 -m
 * synthabd.cli` work too).
 */

import { execFile } from "node:child_process";

import { CliError } from "./errors.js";

export interface CliResult {
  stdout: string;
  stderr: string;
}

function command(): string[] {
  const bin = process.env["SYNTHABD_BIN"] ?? "synthabd";
  const parts = bin.split(/\s+/).filter((p) => p.length > 0);
  if (parts.length === 0) {
    throw new CliError("SYNTHABD_BIN is set but empty", null, "");
  }
  return parts;
}

/** Run one subcommand; resolves on exit 0, rejects with CliError otherwise. */
export function runSynthabd(args: string[]): Promise<CliResult> {
  const [exe, ...pre] = command();
  return new Promise((resolve, reject) => {
    execFile(
      exe!,
      [...pre, ...args],
      { maxBuffer: 64 * 1024 * 1024 },
      (err, stdout, stderr) => {
        if (err) {
          const code = typeof err.code === "number" ? err.code : null;
          reject(new CliError(`synthabd ${args[0]} failed (exit ${code ?? err.code}): ${stderr.trim()}`, code, stderr));
          return;
        }
        resolve({ stdout, stderr });
      },
    );
  });
}
