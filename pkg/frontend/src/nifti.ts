/**
 * Minimal NIfTI-1 single-file codec.
 *
 * Reads and writes little-endian `.nii` / `.nii.gz` volumes holding the
 * scalar datatypes the pipeline emits (uint8, int16, int32, float32).
 * Voxel data is kept in file order, x fastest, so a round trip through
 * this module never shuffles memory; see `flatIndex` for addressing.
 */

import * as fs from "node:fs";
import * as os from "node:os";
import * as zlib from "node:zlib";

import { FormatError } from "./errors.js";

const HDR_SIZE = 348;
const VOX_OFFSET = 352;
const MAGIC = "n+1\x00";

export type VoxelData = Float32Array | Int32Array | Int16Array | Uint8Array;

/** datatype code -> constructor, per the format's scalar type table. */
const DECODERS: Record<number, { ctor: new (b: ArrayBufferLike, o: number, n: number) => VoxelData; bytes: number }> = {
  2: { ctor: Uint8Array, bytes: 1 },
  4: { ctor: Int16Array, bytes: 2 },
  8: { ctor: Int32Array, bytes: 4 },
  16: { ctor: Float32Array, bytes: 4 },
};

function datatypeCode(data: VoxelData): number {
  if (data instanceof Float32Array) return 16;
  if (data instanceof Int32Array) return 8;
  if (data instanceof Int16Array) return 4;
  return 2;
}

export interface NiftiVolume {
  /** Grid size [x, y, z]. */
  dims: [number, number, number];
  /** Voxel spacing in mm [x, y, z]. */
  spacing: [number, number, number];
  /** World position of voxel (0, 0, 0) in mm. */
  origin: [number, number, number];
  /** Voxels in file order: x fastest, then y, then z. */
  data: VoxelData;
}

/** Flat offset of voxel (x, y, z) within `data`. */
export function flatIndex(dims: readonly [number, number, number], x: number, y: number, z: number): number {
  return x + dims[0] * (y + dims[1] * z);
}

function assertLittleEndianHost(): void {
  if (os.endianness() !== "LE") {
    throw new FormatError("big-endian hosts are not supported by this codec");
  }
}

/**
 * Typed-array view over a region of a Buffer, zero-copy when the region is
 * aligned for the element type and copied out otherwise (Buffers may sit at
 * arbitrary offsets inside pooled backing storage).
 */
function viewRegion(
  buf: Buffer,
  offset: number,
  count: number,
  dec: { ctor: new (b: ArrayBufferLike, o: number, n: number) => VoxelData; bytes: number },
): VoxelData {
  const byteOffset = buf.byteOffset + offset;
  if (byteOffset % dec.bytes === 0) {
    return new dec.ctor(buf.buffer, byteOffset, count);
  }
  const copy = Buffer.alloc(count * dec.bytes);
  buf.copy(copy, 0, offset, offset + count * dec.bytes);
  return new dec.ctor(copy.buffer, copy.byteOffset, count);
}

/** Read a .nii or .nii.gz file. */
export function readNifti(path: string): NiftiVolume {
  assertLittleEndianHost();
  let raw = fs.readFileSync(path);
  if (raw.length >= 2 && raw[0] === 0x1f && raw[1] === 0x8b) {
    raw = zlib.gunzipSync(raw);
  }
  if (raw.length < HDR_SIZE) {
    throw new FormatError(`${path}: file too short for a header (${raw.length} bytes)`);
  }
  if (raw.readInt32LE(0) !== HDR_SIZE) {
    throw new FormatError(`${path}: sizeof_hdr is not ${HDR_SIZE}, only little-endian volumes are supported`);
  }
  if (raw.toString("latin1", 344, 348) !== MAGIC) {
    throw new FormatError(`${path}: unrecognized magic`);
  }

  const ndim = raw.readInt16LE(40);
  if (ndim < 1 || ndim > 7) {
    throw new FormatError(`${path}: dim[0] = ${ndim} out of range`);
  }
  const dim: number[] = [];
  for (let i = 1; i <= ndim; i++) {
    dim.push(Math.max(1, raw.readInt16LE(40 + 2 * i)));
  }
  if (dim.slice(3).some((d) => d !== 1)) {
    throw new FormatError(`${path}: volume has non-singleton extra dimensions [${dim.join(", ")}]`);
  }
  const dims: [number, number, number] = [dim[0] ?? 1, dim[1] ?? 1, dim[2] ?? 1];

  const datatype = raw.readInt16LE(70);
  const dec = DECODERS[datatype];
  if (!dec) {
    throw new FormatError(`${path}: datatype code ${datatype} not supported`);
  }

  const slope = raw.readFloatLE(112);
  const inter = raw.readFloatLE(116);
  if (slope !== 0 && (slope !== 1 || inter !== 0)) {
    throw new FormatError(`${path}: intensity-scaled volumes are not supported`);
  }

  const voxOffset = Math.round(raw.readFloatLE(108));
  if (voxOffset < HDR_SIZE) {
    throw new FormatError(`${path}: vox_offset ${voxOffset} overlaps the header`);
  }
  const count = dims[0] * dims[1] * dims[2];
  if (raw.length < voxOffset + count * dec.bytes) {
    throw new FormatError(`${path}: file truncated, need ${voxOffset + count * dec.bytes} bytes, have ${raw.length}`);
  }

  let spacing: [number, number, number];
  let origin: [number, number, number];
  const sformCode = raw.readInt16LE(254);
  const qformCode = raw.readInt16LE(252);
  if (sformCode > 0) {
    const row = (at: number) => [raw.readFloatLE(at), raw.readFloatLE(at + 4), raw.readFloatLE(at + 8), raw.readFloatLE(at + 12)];
    const sx = row(280);
    const sy = row(296);
    const sz = row(312);
    const norm = (j: number) => Math.hypot(sx[j] ?? 0, sy[j] ?? 0, sz[j] ?? 0);
    spacing = [norm(0), norm(1), norm(2)];
    if (spacing.some((s) => s <= 0)) {
      throw new FormatError(`${path}: sform has a zero-length column`);
    }
    origin = [sx[3] ?? 0, sy[3] ?? 0, sz[3] ?? 0];
  } else {
    const pix = (i: number) => Math.abs(raw.readFloatLE(76 + 4 * i)) || 1;
    spacing = [pix(1), pix(2), pix(3)];
    origin = qformCode > 0 ? [raw.readFloatLE(268), raw.readFloatLE(272), raw.readFloatLE(276)] : [0, 0, 0];
  }

  return { dims, spacing, origin, data: viewRegion(raw, voxOffset, count, dec) };
}

/**
 * Write a volume as single-file NIfTI-1, gzipped when the path ends in .gz.
 *
 * The grid is written axis-aligned: the sform encodes spacing on the
 * diagonal with the origin in the last column. Data goes out in the
 * array's own order, which this module defines as x fastest.
 */
export function writeNifti(path: string, v: NiftiVolume): void {
  assertLittleEndianHost();
  const [nx, ny, nz] = v.dims;
  const count = nx * ny * nz;
  if (v.data.length !== count) {
    throw new FormatError(`data length ${v.data.length} does not match dims [${v.dims.join(", ")}]`);
  }
  if (v.spacing.some((s) => !(s > 0))) {
    throw new FormatError(`spacing must be positive, got [${v.spacing.join(", ")}]`);
  }

  const code = datatypeCode(v.data);
  const bytes = DECODERS[code]!.bytes;

  const hdr = Buffer.alloc(HDR_SIZE);
  hdr.writeInt32LE(HDR_SIZE, 0);
  hdr.writeInt8("r".charCodeAt(0), 38);
  const dim = [3, nx, ny, nz, 1, 1, 1, 1];
  dim.forEach((d, i) => hdr.writeInt16LE(d, 40 + 2 * i));
  hdr.writeInt16LE(code, 70);
  hdr.writeInt16LE(bytes * 8, 72);
  const pixdim = [1, v.spacing[0], v.spacing[1], v.spacing[2], 0, 0, 0, 0];
  pixdim.forEach((p, i) => hdr.writeFloatLE(p, 76 + 4 * i));
  hdr.writeFloatLE(VOX_OFFSET, 108);
  hdr.writeFloatLE(1, 112); // scl_slope
  hdr.writeFloatLE(0, 116); // scl_inter
  hdr.writeInt8(2, 123); // spatial units: mm
  hdr.writeInt16LE(0, 252); // qform_code
  hdr.writeInt16LE(1, 254); // sform_code
  const srow = [
    [v.spacing[0], 0, 0, v.origin[0]],
    [0, v.spacing[1], 0, v.origin[1]],
    [0, 0, v.spacing[2], v.origin[2]],
  ];
  srow.forEach((r, i) => r.forEach((x, j) => hdr.writeFloatLE(x, 280 + 16 * i + 4 * j)));
  hdr.write(MAGIC, 344, "latin1");

  const body = Buffer.from(v.data.buffer, v.data.byteOffset, v.data.byteLength);
  let payload = Buffer.concat([hdr, Buffer.alloc(4), body]);
  if (path.endsWith(".gz")) {
    payload = zlib.gzipSync(payload, { level: 1 });
  }
  fs.writeFileSync(path, payload);
}
