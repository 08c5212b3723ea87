/**
 * Per-token feature extraction on the d x d token grid of an image resized
 * to 14d x 14d (one 14 x 14 token per grid patch).
 *
 * Two encoders:
 *  - "dinov2": pretrained vision-transformer patch embeddings, loaded
 *    through transformers.js when the model is available locally or via
 *    cache; errors out clearly otherwise.
 *  - "local": deterministic hand-built token statistics (channel moments,
 *    quadrant means, gradient energies). No downloads; the default for
 *    tests and offline runs.
 */
import { Raster, resizeBilinear, toRgb } from "./image.js";

export const TOKEN = 14;

export interface TokenFeatures {
  gridD: number;
  dim: number;
  /** gridD^2 x dim, row-major token order. */
  rows: Float64Array;
}

export interface Encoder {
  name: string;
  encode(image: Raster, gridD: number): Promise<TokenFeatures>;
}

/** Channel moments plus coarse spatial structure of each 14 x 14 token. */
export class LocalEncoder implements Encoder {
  name = "local";

  async encode(image: Raster, gridD: number): Promise<TokenFeatures> {
    const rgb = toRgb(image);
    const side = TOKEN * gridD;
    const resized = resizeBilinear(rgb, side, side);
    const dim = 3 + 3 + 12 + 6;
    const rows = new Float64Array(gridD * gridD * dim);
    for (let ty = 0; ty < gridD; ty++) {
      for (let tx = 0; tx < gridD; tx++) {
        const row = (ty * gridD + tx) * dim;
        this.tokenFeatures(resized, tx * TOKEN, ty * TOKEN, rows, row);
      }
    }
    return { gridD, dim, rows };
  }

  private tokenFeatures(img: Raster, x0: number, y0: number,
                        out: Float64Array, base: number): void {
    const { width, channels } = img;
    const n = TOKEN * TOKEN;
    for (let c = 0; c < 3; c++) {
      let sum = 0, sumSq = 0, gx = 0, gy = 0;
      const quad = [0, 0, 0, 0];
      for (let dy = 0; dy < TOKEN; dy++) {
        for (let dx = 0; dx < TOKEN; dx++) {
          const idx = ((y0 + dy) * width + (x0 + dx)) * channels + c;
          const v = img.data[idx];
          sum += v;
          sumSq += v * v;
          quad[(dy >= TOKEN / 2 ? 2 : 0) + (dx >= TOKEN / 2 ? 1 : 0)] += v;
          if (dx + 1 < TOKEN) {
            const r = img.data[((y0 + dy) * width + (x0 + dx + 1)) * channels + c];
            gx += (r - v) * (r - v);
          }
          if (dy + 1 < TOKEN) {
            const d = img.data[((y0 + dy + 1) * width + (x0 + dx)) * channels + c];
            gy += (d - v) * (d - v);
          }
        }
      }
      const mean = sum / n;
      out[base + c] = mean;
      out[base + 3 + c] = Math.sqrt(Math.max(sumSq / n - mean * mean, 0));
      for (let qi = 0; qi < 4; qi++) {
        out[base + 6 + c * 4 + qi] = quad[qi] / (n / 4);
      }
      out[base + 18 + c] = Math.sqrt(gx / n);
      out[base + 21 + c] = Math.sqrt(gy / n);
    }
  }
}

/** Pretrained transformer patch embeddings via transformers.js. */
export class DinoV2Encoder implements Encoder {
  name = "dinov2";

  constructor(private modelId = "Xenova/dinov2-large") {}

  async encode(image: Raster, gridD: number): Promise<TokenFeatures> {
    let transformers: any;
    try {
      transformers = await import("@huggingface/transformers" as string);
    } catch (err) {
      throw new Error(
        "model unavailable: transformers.js is not installed "
        + "(npm install @huggingface/transformers) and no local cache exists; "
        + "use --model local for the built-in encoder");
    }
    const rgb = toRgb(image);
    const side = TOKEN * gridD;
    const resized = resizeBilinear(rgb, side, side);
    let extractor: any;
    try {
      extractor = await transformers.pipeline("image-feature-extraction",
                                              this.modelId);
    } catch (err) {
      throw new Error(
        `model unavailable: could not load ${this.modelId} `
        + `(${(err as Error).message}); use --model local`);
    }
    const rawImage = new transformers.RawImage(
      Uint8ClampedArray.from(Array.from(resized.data,
                                        (v: number) => Math.round(v * 255))),
      side, side, 3);
    const output = await extractor(rawImage);
    // token sequence: [CLS, patch_0, ..., patch_{d*d-1}]
    const dims: number[] = output.dims;
    const tokens = dims[dims.length - 2];
    const dim = dims[dims.length - 1];
    const expected = gridD * gridD;
    if (tokens < expected + 1) {
      throw new Error(`model returned ${tokens} tokens, need ${expected + 1}`);
    }
    const data: Float32Array = output.data;
    const rows = new Float64Array(expected * dim);
    for (let t = 0; t < expected; t++) {
      for (let c = 0; c < dim; c++) {
        rows[t * dim + c] = data[(t + 1) * dim + c];
      }
    }
    return { gridD, dim, rows };
  }
}

export function makeEncoder(name: string, modelId?: string): Encoder {
  if (name === "local") return new LocalEncoder();
  if (name === "dinov2") return new DinoV2Encoder(modelId);
  throw new Error(`unknown encoder ${name} (expected "dinov2" or "local")`);
}
