/**
 * Minimal PNG codec: enough to read 8-bit grayscale/RGB/indexed images
 * (non-interlaced) and to write indexed label maps with a fixed palette.
 * Built on node's zlib; no third-party image dependency.
 */
import * as zlib from "node:zlib";

import { Raster, makeRaster } from "./image.js";

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

function crc32(buf: Buffer): number {
  return zlib.crc32(buf) >>> 0;
}

function chunk(type: string, body: Buffer): Buffer {
  const head = Buffer.alloc(8);
  head.writeUInt32BE(body.length, 0);
  head.write(type, 4, "latin1");
  const crcBuf = Buffer.alloc(4);
  crcBuf.writeUInt32BE(crc32(Buffer.concat([head.subarray(4), body])), 0);
  return Buffer.concat([head, body, crcBuf]);
}

/** Fixed 256-entry palette: entry 0 black, then golden-ratio hue steps.
 * Matches the label renderer on the consuming side. */
export function labelPalette(): Uint8Array {
  const pal = new Uint8Array(256 * 3);
  for (let k = 1; k < 256; k++) {
    const h = (k * 0.61803398875) % 1.0;
    const s = 0.65;
    const v = 0.95;
    const i = Math.floor(h * 6);
    const f = h * 6 - i;
    const p = v * (1 - s);
    const q = v * (1 - f * s);
    const t = v * (1 - (1 - f) * s);
    let r = 0, g = 0, b = 0;
    switch (i % 6) {
      case 0: r = v; g = t; b = p; break;
      case 1: r = q; g = v; b = p; break;
      case 2: r = p; g = v; b = t; break;
      case 3: r = p; g = q; b = v; break;
      case 4: r = t; g = p; b = v; break;
      case 5: r = v; g = p; b = q; break;
    }
    pal[k * 3] = Math.trunc(r * 255);
    pal[k * 3 + 1] = Math.trunc(g * 255);
    pal[k * 3 + 2] = Math.trunc(b * 255);
  }
  return pal;
}

/** Encode a label image (values 0..255) as an indexed 8-bit PNG. */
export function encodeIndexedPng(labels: Uint8Array, width: number,
                                 height: number): Buffer {
  if (labels.length !== width * height) {
    throw new Error("label buffer does not match dimensions");
  }
  const ihdr = Buffer.alloc(13);
  ihdr.writeUInt32BE(width, 0);
  ihdr.writeUInt32BE(height, 4);
  ihdr.writeUInt8(8, 8);   // bit depth
  ihdr.writeUInt8(3, 9);   // indexed color
  ihdr.writeUInt8(0, 10);  // deflate
  ihdr.writeUInt8(0, 11);  // adaptive filtering
  ihdr.writeUInt8(0, 12);  // no interlace

  const raw = Buffer.alloc(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter type none
    raw.set(labels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  return Buffer.concat([
    SIGNATURE,
    chunk("IHDR", ihdr),
    chunk("PLTE", Buffer.from(labelPalette())),
    chunk("IDAT", zlib.deflateSync(raw)),
    chunk("IEND", Buffer.alloc(0)),
  ]);
}

export interface DecodedPng {
  width: number;
  height: number;
  channels: number;     // 1 for gray/indexed, 3 for RGB
  /** Raw 8-bit samples; for indexed images these are palette indices. */
  samples: Uint8Array;
  indexed: boolean;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

/** Decode 8-bit grayscale / RGB / indexed, non-interlaced PNGs. */
export function decodePng(buf: Buffer): DecodedPng {
  if (!buf.subarray(0, 8).equals(SIGNATURE)) {
    throw new Error("not a PNG file");
  }
  let off = 8;
  let width = 0, height = 0, colorType = -1;
  const idat: Buffer[] = [];
  while (off < buf.length) {
    const len = buf.readUInt32BE(off);
    const type = buf.toString("latin1", off + 4, off + 8);
    const body = buf.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      width = body.readUInt32BE(0);
      height = body.readUInt32BE(4);
      const depth = body.readUInt8(8);
      colorType = body.readUInt8(9);
      if (depth !== 8) throw new Error(`unsupported bit depth ${depth}`);
      if (body.readUInt8(12) !== 0) throw new Error("interlacing unsupported");
      if (![0, 2, 3].includes(colorType)) {
        throw new Error(`unsupported color type ${colorType}`);
      }
    } else if (type === "IDAT") {
      idat.push(body);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + len;
  }
  if (width === 0 || height === 0) throw new Error("missing image header");
  const channels = colorType === 2 ? 3 : 1;
  const stride = width * channels;
  const raw = zlib.inflateSync(Buffer.concat(idat));
  if (raw.length < height * (stride + 1)) throw new Error("truncated image data");
  const out = new Uint8Array(height * stride);
  let prev = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const cur = new Uint8Array(stride);
    for (let x = 0; x < stride; x++) {
      const a = x >= channels ? cur[x - channels] : 0;
      const b = prev[x];
      const c = x >= channels ? prev[x - channels] : 0;
      let v = line[x];
      switch (filter) {
        case 0: break;
        case 1: v = (v + a) & 0xff; break;
        case 2: v = (v + b) & 0xff; break;
        case 3: v = (v + ((a + b) >> 1)) & 0xff; break;
        case 4: v = (v + paeth(a, b, c)) & 0xff; break;
        default: throw new Error(`unknown filter ${filter}`);
      }
      cur[x] = v;
    }
    out.set(cur, y * stride);
    prev = cur;
  }
  return { width, height, channels, samples: out, indexed: colorType === 3 };
}

/** PNG or binary PPM (P6) to a unit-scaled raster. */
export function loadRaster(buf: Buffer): Raster {
  if (buf.length >= 2 && buf[0] === 0x50 && buf[1] === 0x36) {
    return decodePpm(buf);
  }
  const png = decodePng(buf);
  if (png.indexed) throw new Error("indexed PNG is a label map, not an image");
  const out = makeRaster(png.width, png.height, png.channels);
  for (let i = 0; i < png.samples.length; i++) out.data[i] = png.samples[i] / 255;
  return out;
}

function decodePpm(buf: Buffer): Raster {
  let off = 0;
  const token = () => {
    while (off < buf.length) {
      while (off < buf.length && /\s/.test(String.fromCharCode(buf[off]))) off++;
      if (buf[off] === 0x23) { // comment
        while (off < buf.length && buf[off] !== 0x0a) off++;
      } else break;
    }
    const start = off;
    while (off < buf.length && !/\s/.test(String.fromCharCode(buf[off]))) off++;
    return buf.toString("latin1", start, off);
  };
  if (token() !== "P6") throw new Error("not a binary PPM");
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (maxval !== 255) throw new Error("only 8-bit PPM supported");
  off++; // single whitespace after maxval
  const need = width * height * 3;
  if (buf.length - off < need) throw new Error("truncated PPM payload");
  const out = makeRaster(width, height, 3);
  for (let i = 0; i < need; i++) out.data[i] = buf[off + i] / 255;
  return out;
}
