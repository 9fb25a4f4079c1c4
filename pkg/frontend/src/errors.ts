/**
 * Error taxonomy for the client.
 *
 * ContractError marks a bad argument caught before any process is spawned,
 * InitializationError a handle that could not be opened, FormatError a file
 * the codec refuses, and GenerationError a failed pull that carries the
 * index range of the samples it was producing.
 */

export class SynthabdClientError extends Error {
  constructor(message: string) {
    super(message);
    this.name = new.target.name;
  }
}

export class ContractError extends SynthabdClientError {}

export class InitializationError extends SynthabdClientError {}

export class FormatError extends SynthabdClientError {}

export class GenerationError extends SynthabdClientError {
  constructor(
    message: string,
    public readonly sampleStart: number,
    public readonly sampleCount: number,
  ) {
    super(message);
  }
}

export class CliError extends SynthabdClientError {
  constructor(
    message: string,
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(message);
  }
}
