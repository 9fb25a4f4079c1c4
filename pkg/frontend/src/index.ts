/**
 * synthabd-client: typed access to the synthabd pipeline.
 *
 * The client talks to the pipeline exclusively through its command line
 * and file formats, so everything it returns is reproducible with the
 * same commands by hand.
 */

export {
  CliError,
  ContractError,
  FormatError,
  GenerationError,
  InitializationError,
  SynthabdClientError,
} from "./errors.js";
export { flatIndex, readNifti, writeNifti, type NiftiVolume, type VoxelData } from "./nifti.js";
export { runSynthabd, type CliResult } from "./runner.js";
export { parseReportCsv, type ReportRow, type UndefinedReason } from "./report.js";
export {
  GeneratorHandle,
  MAX_LABEL,
  batchIndex,
  openGenerator,
  type GeneratorOptions,
  type SampleBatch,
} from "./generator.js";
export { computeMetrics, type LabelScore, type LabelVolume, type MetricsResult } from "./metrics.js";
