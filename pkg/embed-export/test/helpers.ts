import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

export function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "embed-export-test-"));
}

export function python(code: string): string {
  return execFileSync("python3", ["-c", code], { encoding: "utf8" });
}

/** Deterministic little test image: two flat color regions plus noise. */
export function writeTestPng(file: string, size = 64, seed = 0): void {
  python(`
import numpy as np
from PIL import Image
rng = np.random.default_rng(${seed})
s = ${size}
img = np.zeros((s, s, 3))
img[:, :s//2] = (0.2, 0.3, 0.8)
img[:, s//2:] = (0.8, 0.7, 0.2)
img = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1)
Image.fromarray((img*255).round().astype(np.uint8)).save(${JSON.stringify(file)})
`);
}

/** Synthetic ground-truth archive in the benchmark's layout: a 1xN cell of
 * structs with integer Segmentation matrices. */
export function writeTestMat(file: string, height: number, width: number,
                             segmentCounts: number[], seed = 0): void {
  python(`
import numpy as np
import scipy.io
rng = np.random.default_rng(${seed})
annos = np.empty((1, ${segmentCounts.length}), dtype=object)
for i, k in enumerate(${JSON.stringify(segmentCounts)}):
    h, w = ${height}, ${width}
    ys = rng.uniform(0, h, k); xs = rng.uniform(0, w, k)
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[..., None] - ys)**2 + (xx[..., None] - xs)**2
    seg = d.argmin(axis=2).astype(np.uint16) + 1
    # ensure every segment id appears
    for lab in range(k):
        seg.flat[lab] = lab + 1
    annos[0, i] = {"Segmentation": seg, "Boundaries": (seg != np.roll(seg, 1, 0)).astype(np.uint8)}
scipy.io.savemat(${JSON.stringify(file)}, {"groundTruth": annos}, do_compression=True)
`);
}

export function pngLabelHistogram(file: string): Record<string, number> {
  const out = python(`
import json
import numpy as np
from PIL import Image
arr = np.asarray(Image.open(${JSON.stringify(file)}))
vals, counts = np.unique(arr, return_counts=True)
print(json.dumps({str(int(v)): int(c) for v, c in zip(vals, counts)}))
`);
  return JSON.parse(out.trim());
}
