/**
 * Embedding interchange file: magic "GPLE", little-endian u32 version (1),
 * u32 grid side, u32 vector dimension, then grid^2 x dim float32 values in
 * row-major patch order.
 */
import * as fs from "node:fs";

export const GPLE_MAGIC = "GPLE";
export const GPLE_VERSION = 1;

export function encodeGple(gridD: number, dim: number,
                           vectors: Float64Array | Float32Array): Buffer {
  const count = gridD * gridD * dim;
  if (vectors.length !== count) {
    throw new Error(`expected ${count} values, got ${vectors.length}`);
  }
  const buf = Buffer.alloc(16 + 4 * count);
  buf.write(GPLE_MAGIC, 0, "latin1");
  buf.writeUInt32LE(GPLE_VERSION, 4);
  buf.writeUInt32LE(gridD, 8);
  buf.writeUInt32LE(dim, 12);
  for (let i = 0; i < count; i++) buf.writeFloatLE(vectors[i], 16 + 4 * i);
  return buf;
}

export function writeGple(path: string, gridD: number, dim: number,
                          vectors: Float64Array | Float32Array): void {
  fs.writeFileSync(path, encodeGple(gridD, dim, vectors));
}

export interface GpleContent {
  gridD: number;
  dim: number;
  vectors: Float32Array;
}

export function decodeGple(buf: Buffer): GpleContent {
  if (buf.length < 16) throw new Error("embedding file truncated");
  if (buf.toString("latin1", 0, 4) !== GPLE_MAGIC) {
    throw new Error("bad embedding file magic");
  }
  const version = buf.readUInt32LE(4);
  if (version !== GPLE_VERSION) {
    throw new Error(`unsupported embedding file version ${version}`);
  }
  const gridD = buf.readUInt32LE(8);
  const dim = buf.readUInt32LE(12);
  const count = gridD * gridD * dim;
  if (buf.length !== 16 + 4 * count) {
    throw new Error("embedding payload size mismatch");
  }
  const vectors = new Float32Array(count);
  for (let i = 0; i < count; i++) vectors[i] = buf.readFloatLE(16 + 4 * i);
  return { gridD, dim, vectors };
}
