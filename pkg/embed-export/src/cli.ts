#!/usr/bin/env node
/**
 * Command line for the exporter:
 *
 *   export-embeddings --image <p> --d 32 --k0 14 --out <p.gple>
 *                     [--model dinov2|local] [--pca poly-expand|poly-kernel]
 *                     [--seed N] [--cap N]
 *   convert-gt --mat <p> --out <dir>
 */
import { convertGroundTruth, exportEmbeddings } from "./exporter.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const value = argv[i + 1];
    if (value === undefined) throw new Error(`flag ${arg} needs a value`);
    flags.set(arg.slice(2), value);
    i++;
  }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

async function main(): Promise<number> {
  const [verb, ...rest] = process.argv.slice(2);
  try {
    if (verb === "export-embeddings") {
      const flags = parseFlags(rest);
      const result = await exportEmbeddings({
        imagePath: need(flags, "image"),
        d: parseInt(flags.get("d") ?? "32", 10),
        k0: parseInt(flags.get("k0") ?? "14", 10),
        outPath: need(flags, "out"),
        model: flags.get("model") ?? "dinov2",
        modelId: flags.get("model-id"),
        pca: flags.get("pca") ?? "poly-expand",
        seed: parseInt(flags.get("seed") ?? "0", 10),
        cap: parseInt(flags.get("cap") ?? "4096", 10),
      });
      const vars = Array.from(result.variances, (v) => v.toExponential(3));
      console.log(`wrote ${need(flags, "out")} `
                  + `(${result.gridD}x${result.gridD} x ${result.dim}, `
                  + `encoder ${result.encoder})`);
      console.log(`component variances: ${vars.join(" ")}`);
      return 0;
    }
    if (verb === "convert-gt") {
      const flags = parseFlags(rest);
      const result = convertGroundTruth(need(flags, "mat"), need(flags, "out"));
      result.files.forEach((f, i) => {
        console.log(`wrote ${f} (${result.segmentCounts[i]} segments)`);
      });
      return 0;
    }
    console.error("usage: grapl-export <export-embeddings|convert-gt> [flags]");
    return 1;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
}

main().then((code) => process.exit(code));
