/** Core jobs: embedding export and ground-truth conversion. */
import * as fs from "node:fs";
import * as path from "node:path";

import { makeEncoder } from "./encoder.js";
import { writeGple } from "./gple.js";
import { extractSegmentations, parseMat } from "./mat.js";
import { polyKernelPca, polyPca } from "./pca.js";
import { encodeIndexedPng, loadRaster } from "./png.js";

export interface ExportJob {
  imagePath: string;
  d: number;
  k0: number;
  outPath: string;
  model: string;       // "dinov2" (default) or "local"
  modelId?: string;
  pca: string;         // "poly-expand" (default) or "poly-kernel"
  seed: number;
  cap: number;         // expanded-dimension cap before random subsampling
}

export interface ExportResult {
  gridD: number;
  dim: number;
  variances: Float64Array;
  capped: boolean;
  encoder: string;
}

export async function exportEmbeddings(job: ExportJob): Promise<ExportResult> {
  if (job.d < 1) throw new Error("grid side must be >= 1");
  if (job.k0 < 2) throw new Error("output dimension must be >= 2");
  const image = loadRaster(fs.readFileSync(job.imagePath));
  const encoder = makeEncoder(job.model, job.modelId);
  const tokens = await encoder.encode(image, job.d);
  const n = job.d * job.d;

  const reducer = job.pca === "poly-kernel"
    ? () => polyKernelPca(tokens.rows, n, tokens.dim, job.k0, job.seed)
    : () => polyPca(tokens.rows, n, tokens.dim, job.k0,
                    { cap: job.cap, seed: job.seed });
  const result = reducer();
  if (result.capped) {
    console.error(`note: polynomial expansion exceeded ${job.cap} terms; `
                  + "randomly subsampled (seeded)");
  }
  writeGple(job.outPath, job.d, job.k0, result.scores);
  return {
    gridD: job.d,
    dim: job.k0,
    variances: result.variances,
    capped: result.capped,
    encoder: encoder.name,
  };
}

export interface ConvertResult {
  files: string[];
  segmentCounts: number[];
}

/** Each human annotation in the archive becomes one indexed PNG. */
export function convertGroundTruth(matPath: string, outDir: string): ConvertResult {
  const vars = parseMat(fs.readFileSync(matPath));
  const maps = extractSegmentations(vars);
  fs.mkdirSync(outDir, { recursive: true });
  const stem = path.basename(matPath).replace(/\.mat$/i, "");
  const files: string[] = [];
  const segmentCounts: number[] = [];
  maps.forEach((seg, idx) => {
    const labels = new Uint8Array(seg.height * seg.width);
    const seen = new Set<number>();
    for (let i = 0; i < seg.data.length; i++) {
      const v = seg.data[i];
      if (!Number.isInteger(v) || v < 1 || v > 255) {
        throw new Error(
          `annotation ${idx + 1} has label ${v}; need integers in 1..255`);
      }
      labels[i] = v;
      seen.add(v);
    }
    const file = path.join(outDir, `${stem}_gt${idx + 1}.png`);
    fs.writeFileSync(file, encodeIndexedPng(labels, seg.width, seg.height));
    files.push(file);
    segmentCounts.push(seen.size);
  });
  return { files, segmentCounts };
}
