/**
 * Reader for Level-5 MAT files, covering what segmentation ground-truth
 * archives actually contain: possibly-compressed data elements holding
 * numeric matrices, cell arrays, structs, and logicals (little-endian).
 */
import * as zlib from "node:zlib";

export type MatValue =
  | { kind: "numeric"; dims: number[]; data: Float64Array }
  | { kind: "char"; dims: number[]; text: string }
  | { kind: "cell"; dims: number[]; items: MatValue[] }
  | { kind: "struct"; dims: number[]; fields: Map<string, MatValue[]> };

const MI_INT8 = 1, MI_UINT8 = 2, MI_INT16 = 3, MI_UINT16 = 4;
const MI_INT32 = 5, MI_UINT32 = 6, MI_SINGLE = 7, MI_DOUBLE = 9;
const MI_INT64 = 12, MI_UINT64 = 13, MI_MATRIX = 14, MI_COMPRESSED = 15;
const MI_UTF8 = 16, MI_UTF16 = 17;

const CLS_CELL = 1, CLS_STRUCT = 2, CLS_CHAR = 4;

interface Cursor { buf: Buffer; off: number; }

function readTag(c: Cursor): { type: number; size: number; small: boolean } {
  const word = c.buf.readUInt32LE(c.off);
  if ((word & 0xffff0000) !== 0) {
    // small data element: size in the upper half, payload inline
    return { type: word & 0xffff, size: word >>> 16, small: true };
  }
  const size = c.buf.readUInt32LE(c.off + 4);
  return { type: word, size, small: false };
}

function numericData(type: number, body: Buffer): Float64Array {
  let step: number;
  let get: (o: number) => number;
  switch (type) {
    case MI_INT8: step = 1; get = (o) => body.readInt8(o); break;
    case MI_UINT8: step = 1; get = (o) => body.readUInt8(o); break;
    case MI_INT16: step = 2; get = (o) => body.readInt16LE(o); break;
    case MI_UINT16: step = 2; get = (o) => body.readUInt16LE(o); break;
    case MI_INT32: step = 4; get = (o) => body.readInt32LE(o); break;
    case MI_UINT32: step = 4; get = (o) => body.readUInt32LE(o); break;
    case MI_SINGLE: step = 4; get = (o) => body.readFloatLE(o); break;
    case MI_DOUBLE: step = 8; get = (o) => body.readDoubleLE(o); break;
    case MI_INT64: step = 8; get = (o) => Number(body.readBigInt64LE(o)); break;
    case MI_UINT64: step = 8; get = (o) => Number(body.readBigUInt64LE(o)); break;
    default:
      throw new Error(`unsupported numeric storage type ${type}`);
  }
  const out = new Float64Array(body.length / step);
  for (let i = 0; i < out.length; i++) out[i] = get(i * step);
  return out;
}

function readElementBody(c: Cursor): { type: number; body: Buffer } {
  const tag = readTag(c);
  let body: Buffer;
  if (tag.small) {
    body = c.buf.subarray(c.off + 4, c.off + 4 + tag.size);
    c.off += 8;
  } else {
    body = c.buf.subarray(c.off + 8, c.off + 8 + tag.size);
    c.off += 8 + tag.size;
    c.off += (8 - (tag.size % 8)) % 8; // elements are 8-byte aligned
  }
  return { type: tag.type, body };
}

function parseMatrix(body: Buffer): { name: string; value: MatValue } {
  const c: Cursor = { buf: body, off: 0 };
  const flagsEl = readElementBody(c);
  const flags = flagsEl.body.readUInt32LE(0);
  const cls = flags & 0xff;
  const dimsEl = readElementBody(c);
  const dims: number[] = [];
  for (let i = 0; i < dimsEl.body.length / 4; i++) {
    dims.push(dimsEl.body.readInt32LE(i * 4));
  }
  const nameEl = readElementBody(c);
  const name = nameEl.body.toString("latin1");
  const count = dims.reduce((a, b) => a * b, 1);

  if (cls === CLS_CELL) {
    const items: MatValue[] = [];
    for (let i = 0; i < count; i++) {
      const el = readElementBody(c);
      if (el.type !== MI_MATRIX) throw new Error("cell item is not a matrix");
      items.push(parseMatrix(el.body).value);
    }
    return { name, value: { kind: "cell", dims, items } };
  }
  if (cls === CLS_STRUCT) {
    const lenEl = readElementBody(c);
    const nameLen = lenEl.body.readInt32LE(0);
    const namesEl = readElementBody(c);
    const nFields = namesEl.body.length / nameLen;
    const fieldNames: string[] = [];
    for (let i = 0; i < nFields; i++) {
      const raw = namesEl.body.subarray(i * nameLen, (i + 1) * nameLen);
      fieldNames.push(raw.toString("latin1").replace(/\0+$/, ""));
    }
    const fields = new Map<string, MatValue[]>();
    fieldNames.forEach((f) => fields.set(f, []));
    for (let e = 0; e < count; e++) {
      for (const f of fieldNames) {
        const el = readElementBody(c);
        if (el.type !== MI_MATRIX) throw new Error("field value is not a matrix");
        fields.get(f)!.push(parseMatrix(el.body).value);
      }
    }
    return { name, value: { kind: "struct", dims, fields } };
  }
  if (cls === CLS_CHAR) {
    const el = readElementBody(c);
    let text: string;
    if (el.type === MI_UTF8) text = el.body.toString("utf8");
    else if (el.type === MI_UTF16) text = el.body.toString("utf16le");
    else text = Array.from(numericData(el.type, el.body),
                           (v) => String.fromCharCode(v)).join("");
    return { name, value: { kind: "char", dims, text } };
  }
  // numeric (possibly logical-flagged) array: real part only
  const dataEl = readElementBody(c);
  const data = numericData(dataEl.type, dataEl.body);
  return { name, value: { kind: "numeric", dims, data } };
}

/** Parse all top-level variables of a little-endian Level-5 MAT file. */
export function parseMat(buf: Buffer): Map<string, MatValue> {
  if (buf.length < 128) throw new Error("file too short for a MAT header");
  const endian = buf.toString("latin1", 126, 128);
  if (endian !== "IM") {
    throw new Error(`unsupported MAT endianness marker ${JSON.stringify(endian)}`);
  }
  const version = buf.readUInt16LE(124);
  if (version !== 0x0100) throw new Error(`unsupported MAT version 0x${version.toString(16)}`);

  const vars = new Map<string, MatValue>();
  const c: Cursor = { buf, off: 128 };
  while (c.off + 8 <= buf.length) {
    const el = readElementBody(c);
    let type = el.type;
    let body = el.body;
    if (type === MI_COMPRESSED) {
      const inflated = zlib.inflateSync(body);
      const inner: Cursor = { buf: inflated, off: 0 };
      const innerEl = readElementBody(inner);
      type = innerEl.type;
      body = innerEl.body;
    }
    if (type !== MI_MATRIX) continue; // skip anything exotic
    const { name, value } = parseMatrix(body);
    vars.set(name, value);
  }
  return vars;
}

/** Column-major flat data to a row-major matrix of 2D dims. */
export function toRowMajor(value: MatValue & { kind: "numeric" }): {
  height: number; width: number; data: Float64Array;
} {
  if (value.dims.length !== 2) {
    throw new Error(`expected a 2-D matrix, got dims ${value.dims}`);
  }
  const [height, width] = value.dims;
  const out = new Float64Array(height * width);
  for (let col = 0; col < width; col++) {
    for (let row = 0; row < height; row++) {
      out[row * width + col] = value.data[col * height + row];
    }
  }
  return { height, width, data: out };
}

/** Extract every annotation's segment map from a ground-truth archive:
 * a 1xN cell of structs, each carrying a 2-D "Segmentation" matrix. */
export function extractSegmentations(vars: Map<string, MatValue>): {
  height: number; width: number; data: Float64Array;
}[] {
  const gt = vars.get("groundTruth");
  if (!gt || gt.kind !== "cell") {
    throw new Error("no groundTruth cell array in file");
  }
  const maps = [];
  for (const item of gt.items) {
    if (item.kind !== "struct") throw new Error("annotation is not a struct");
    const seg = item.fields.get("Segmentation")?.[0];
    if (!seg || seg.kind !== "numeric") {
      throw new Error("annotation lacks a Segmentation matrix");
    }
    maps.push(toRowMajor(seg));
  }
  if (maps.length === 0) throw new Error("groundTruth cell array is empty");
  return maps;
}
