/**
 * Deterministic sample stream for trainers.
 *
 * A GeneratorHandle wraps (variant set, pipeline config, base seed) and
 * serves batches of synthetic image/label pairs. Sample i of a handle is
 * the same bytes as sample i of a `synth` run with the same seed, whatever
 * the batch boundaries: the handle pulls index windows from the pipeline
 * and assembles them in memory.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { CliError, ContractError, GenerationError, InitializationError } from "./errors.js";
import { flatIndex, readNifti } from "./nifti.js";
import { runSynthabd } from "./runner.js";

/** Fallback grid when the config does not pin generation.output_shape. */
const DEFAULT_OUTPUT_SHAPE: readonly [number, number, number] = [160, 160, 128];

const MAX_LABEL = 26;

export interface SampleBatch {
  /** Batch image voxels in [0, 1], one contiguous buffer. */
  images: Float32Array;
  /** Batch label voxels in {0..26}, one contiguous buffer. */
  labels: Int32Array;
  /** Logical shape [batch, x, y, z]. */
  shape: readonly [number, number, number, number];
  /**
   * Element strides for `shape`: within a sample the x axis is fastest
   * (the on-disk order), so strides are [x*y*z, 1, x, x*y].
   */
  strides: readonly [number, number, number, number];
  /** Absolute index of the first sample in the batch. */
  start: number;
}

/** Flat offset of voxel (b, x, y, z) in a batch buffer. */
export function batchIndex(batch: SampleBatch, b: number, x: number, y: number, z: number): number {
  const [, nx, ny, nz] = batch.shape;
  return b * nx * ny * nz + flatIndex([nx, ny, nz], x, y, z);
}

export interface GeneratorOptions {
  /** Worker processes for the underlying generator (default 1). */
  workers?: number;
  /** Keep the decoded sample files on disk instead of pruning them. */
  keepFiles?: boolean;
}

interface PipelineConfigFile {
  generation?: { output_shape?: number[] };
}

function readShape(configPath: string): [number, number, number] {
  let text: string;
  try {
    text = fs.readFileSync(configPath, "utf8");
  } catch (e) {
    throw new InitializationError(`cannot read config ${configPath}: ${(e as Error).message}`);
  }
  let cfg: PipelineConfigFile;
  try {
    cfg = JSON.parse(text) as PipelineConfigFile;
  } catch (e) {
    throw new InitializationError(`config ${configPath} is not valid JSON: ${(e as Error).message}`);
  }
  const shape = cfg.generation?.output_shape;
  if (shape === undefined) {
    return [...DEFAULT_OUTPUT_SHAPE];
  }
  if (!Array.isArray(shape) || shape.length !== 3 || shape.some((n) => !Number.isInteger(n) || n < 1)) {
    throw new InitializationError(`config ${configPath} has a bad generation.output_shape`);
  }
  return [shape[0]!, shape[1]!, shape[2]!];
}

/**
 * Open a generator over a directory of augmented label variants.
 *
 * Fails fast on a missing or unparsable config and on a variants directory
 * with no label files, so a bad path never surfaces later as a mid-training
 * generation error.
 */
export function openGenerator(
  variantsDir: string,
  configPath: string,
  seed: number,
  opts: GeneratorOptions = {},
): GeneratorHandle {
  if (!Number.isInteger(seed) || seed < 0) {
    throw new ContractError(`seed must be a non-negative integer, got ${seed}`);
  }
  const shape = readShape(configPath);
  let entries: string[];
  try {
    entries = fs.readdirSync(variantsDir);
  } catch (e) {
    throw new InitializationError(`cannot list variants in ${variantsDir}: ${(e as Error).message}`);
  }
  if (!entries.some((name) => /_genlabels\.nii(\.gz)?$/.test(name))) {
    throw new InitializationError(`${variantsDir} contains no *_genlabels.nii[.gz] files`);
  }
  return new GeneratorHandle(variantsDir, configPath, seed, shape, opts);
}

export class GeneratorHandle {
  readonly shape: readonly [number, number, number];
  private cursorValue = 0;
  private readonly poolDir: string;
  private readonly workers: number;
  private readonly keepFiles: boolean;
  private closed = false;

  constructor(
    private readonly variantsDir: string,
    private readonly configPath: string,
    readonly seed: number,
    shape: [number, number, number],
    opts: GeneratorOptions,
  ) {
    this.shape = shape;
    this.workers = opts.workers ?? 1;
    this.keepFiles = opts.keepFiles ?? false;
    this.poolDir = fs.mkdtempSync(path.join(os.tmpdir(), "synthabd-pool-"));
  }

  /** Index of the next sample a pull will produce. */
  get cursor(): number {
    return this.cursorValue;
  }

  /** Directory where pulled sample files land (pruned unless keepFiles). */
  get sampleDir(): string {
    return this.poolDir;
  }

  /**
   * Produce the next `batchSize` samples as one image and one label buffer.
   *
   * The window [cursor, cursor + batchSize) is reserved synchronously, so
   * the cursor increases per pull even when pulls overlap; each decoded
   * sample is copied exactly once, into the batch buffer.
   */
  async nextBatch(batchSize: number): Promise<SampleBatch> {
    if (this.closed) {
      throw new ContractError("the handle is closed");
    }
    if (!Number.isInteger(batchSize) || batchSize < 1) {
      throw new ContractError(`batchSize must be an integer >= 1, got ${batchSize}`);
    }
    const start = this.cursorValue;
    this.cursorValue += batchSize;

    const args = [
      "synth",
      "--config", this.configPath,
      "--seed", String(this.seed),
      "--count", String(batchSize),
      "--start", String(start),
      "--variants-dir", this.variantsDir,
      "--out-dir", this.poolDir,
    ];
    if (this.workers > 1) {
      args.push("--workers", String(this.workers));
    }
    try {
      await runSynthabd(args);
    } catch (e) {
      const detail = e instanceof CliError ? e.message : String(e);
      throw new GenerationError(
        `generation of samples ${start}..${start + batchSize - 1} failed: ${detail}`,
        start, batchSize,
      );
    }

    const [nx, ny, nz] = this.shape;
    const voxels = nx * ny * nz;
    const images = new Float32Array(batchSize * voxels);
    const labels = new Int32Array(batchSize * voxels);
    for (let b = 0; b < batchSize; b++) {
      const tag = String(start + b).padStart(5, "0");
      const imgPath = path.join(this.poolDir, `sample_${tag}_img.nii.gz`);
      const lblPath = path.join(this.poolDir, `sample_${tag}_lbl.nii.gz`);
      const img = readNifti(imgPath);
      const lbl = readNifti(lblPath);
      this.checkSample(img.dims, img.data instanceof Float32Array, start + b, "image");
      this.checkSample(lbl.dims, lbl.data instanceof Int32Array, start + b, "label");
      images.set(img.data as Float32Array, b * voxels);
      labels.set(lbl.data as Int32Array, b * voxels);
      if (!this.keepFiles) {
        fs.rmSync(imgPath);
        fs.rmSync(lblPath);
      }
    }
    return {
      images,
      labels,
      shape: [batchSize, nx, ny, nz],
      strides: [voxels, 1, nx, nx * ny],
      start,
    };
  }

  private checkSample(dims: [number, number, number], dtypeOk: boolean, index: number, what: string): void {
    const [nx, ny, nz] = this.shape;
    if (dims[0] !== nx || dims[1] !== ny || dims[2] !== nz) {
      throw new GenerationError(
        `sample ${index} ${what} has grid [${dims.join(", ")}], expected [${nx}, ${ny}, ${nz}]`,
        index, 1,
      );
    }
    if (!dtypeOk) {
      throw new GenerationError(`sample ${index} ${what} has an unexpected datatype`, index, 1);
    }
  }

  /** Delete the pool directory; the handle refuses further pulls. */
  close(): void {
    if (!this.closed) {
      this.closed = true;
      fs.rmSync(this.poolDir, { recursive: true, force: true });
    }
  }
}

export { MAX_LABEL };
