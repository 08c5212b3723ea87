/**
 * Dimensionality reduction for per-patch token features: degree-2
 * polynomial feature expansion followed by principal component projection.
 *
 * PCA runs through the sample-side Gram matrix, so the cost depends on the
 * number of patches rather than the (possibly huge) expanded feature
 * dimension; the expansion itself is capped by seeded random term
 * subsampling when it would explode. A polynomial-kernel variant is
 * available as an alternative reading of the same reduction.
 */

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** All degree-1 and degree-2 monomial indices over d base features. */
function allPolyTerms(d: number): Array<[number, number]> {
  const terms: Array<[number, number]> = [];
  for (let i = 0; i < d; i++) terms.push([i, -1]);
  for (let i = 0; i < d; i++) {
    for (let j = i; j < d; j++) terms.push([i, j]);
  }
  return terms;
}

export interface PolyExpansion {
  terms: Array<[number, number]>;
  capped: boolean;
}

export function choosePolyTerms(d: number, cap: number,
                                seed: number): PolyExpansion {
  const total = d + (d * (d + 1)) / 2;
  if (total <= cap) return { terms: allPolyTerms(d), capped: false };
  // reservoir-free subsample: draw distinct term ranks with a seeded rng
  const rng = mulberry32(seed ^ 0x9e3779b9);
  const picked = new Set<number>();
  while (picked.size < cap) {
    picked.add(Math.floor(rng() * total));
  }
  const all = allPolyTerms(d);
  const terms = [...picked].sort((a, b) => a - b).map((i) => all[i]);
  return { terms, capped: true };
}

/** Expand rows (n x d) into the selected monomials (n x terms). */
export function polyExpand(rows: Float64Array, n: number, d: number,
                           exp: PolyExpansion): Float64Array {
  const m = exp.terms.length;
  const out = new Float64Array(n * m);
  for (let r = 0; r < n; r++) {
    const base = r * d;
    const dst = r * m;
    for (let t = 0; t < m; t++) {
      const [i, j] = exp.terms[t];
      out[dst + t] = j < 0 ? rows[base + i] : rows[base + i] * rows[base + j];
    }
  }
  return out;
}

/** Top-k eigenpairs of a symmetric positive semidefinite matrix via
 * subspace iteration with Gram-Schmidt re-orthogonalization. */
export function topEigen(g: Float64Array, n: number, k: number, seed = 0,
                         iters = 300, tol = 1e-10):
  { values: Float64Array; vectors: Float64Array } {
  k = Math.min(k, n);
  const rng = mulberry32(seed ^ 0x51ed270b);
  let q = new Float64Array(n * k);
  for (let i = 0; i < q.length; i++) q[i] = rng() - 0.5;
  orthonormalize(q, n, k);

  let prev = new Float64Array(k);
  const values = new Float64Array(k);
  for (let it = 0; it < iters; it++) {
    const z = new Float64Array(n * k);
    // z = G q   (column blocks stored column-major: q[col * n + row])
    for (let col = 0; col < k; col++) {
      for (let row = 0; row < n; row++) {
        let acc = 0;
        const grow = row * n;
        const qcol = col * n;
        for (let s = 0; s < n; s++) acc += g[grow + s] * q[qcol + s];
        z[qcol + row] = acc;
      }
    }
    for (let col = 0; col < k; col++) {
      let norm = 0;
      for (let row = 0; row < n; row++) norm += z[col * n + row] ** 2;
      values[col] = Math.sqrt(norm); // Rayleigh-like magnitude of G q
    }
    orthonormalize(z, n, k);
    q = z;
    let drift = 0;
    for (let col = 0; col < k; col++) {
      drift = Math.max(drift, Math.abs(values[col] - prev[col]));
    }
    prev = values.slice();
    if (it > 10 && drift < tol * Math.max(1, values[0])) break;
  }
  // refine eigenvalues with Rayleigh quotients and sort descending
  for (let col = 0; col < k; col++) {
    let num = 0;
    for (let row = 0; row < n; row++) {
      let acc = 0;
      for (let s = 0; s < n; s++) acc += g[row * n + s] * q[col * n + s];
      num += q[col * n + row] * acc;
    }
    values[col] = num;
  }
  const order = [...values.keys()].sort((a, b) => values[b] - values[a]);
  const sortedValues = new Float64Array(k);
  const sortedVectors = new Float64Array(n * k);
  order.forEach((src, dst) => {
    sortedValues[dst] = values[src];
    sortedVectors.set(q.subarray(src * n, (src + 1) * n), dst * n);
  });
  return { values: sortedValues, vectors: sortedVectors };
}

function orthonormalize(q: Float64Array, n: number, k: number): void {
  for (let col = 0; col < k; col++) {
    for (let prev = 0; prev < col; prev++) {
      let dot = 0;
      for (let row = 0; row < n; row++) dot += q[col * n + row] * q[prev * n + row];
      for (let row = 0; row < n; row++) q[col * n + row] -= dot * q[prev * n + row];
    }
    let norm = 0;
    for (let row = 0; row < n; row++) norm += q[col * n + row] ** 2;
    norm = Math.sqrt(norm);
    if (norm < 1e-300) {
      // degenerate direction: reseed deterministically
      for (let row = 0; row < n; row++) q[col * n + row] = row === col ? 1 : 0;
      norm = 1;
    }
    for (let row = 0; row < n; row++) q[col * n + row] /= norm;
  }
}

export interface PcaResult {
  /** n x k projection scores, row-major. */
  scores: Float64Array;
  /** Per-component variances, non-increasing. */
  variances: Float64Array;
  capped: boolean;
}

/** Project expanded features onto their top-k principal components via the
 * n x n Gram route; components with eigenvalue lambda give scores
 * sqrt(lambda) * u along the unit sample-space eigenvector u. */
function gramPca(x: Float64Array, n: number, d: number, k: number,
                 seed: number): { scores: Float64Array; variances: Float64Array } {
  // center columns
  const mean = new Float64Array(d);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < d; c++) mean[c] += x[r * d + c];
  }
  for (let c = 0; c < d; c++) mean[c] /= n;
  const xc = new Float64Array(n * d);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < d; c++) xc[r * d + c] = x[r * d + c] - mean[c];
  }
  const g = new Float64Array(n * n);
  for (let a = 0; a < n; a++) {
    for (let b = a; b < n; b++) {
      let acc = 0;
      for (let c = 0; c < d; c++) acc += xc[a * d + c] * xc[b * d + c];
      g[a * n + b] = acc;
      g[b * n + a] = acc;
    }
  }
  return projectFromGram(g, n, k, seed);
}

/** Shared tail: eigen-decompose a centered Gram matrix and scale the
 * sample-space eigenvectors into projection scores. */
function projectFromGram(g: Float64Array, n: number, k: number,
                         seed: number): { scores: Float64Array; variances: Float64Array } {
  const { values, vectors } = topEigen(g, n, k, seed);
  const scores = new Float64Array(n * k);
  const variances = new Float64Array(k);
  for (let col = 0; col < k; col++) {
    const lam = Math.max(values[col], 0);
    const scale = Math.sqrt(lam);
    variances[col] = lam / Math.max(n - 1, 1);
    for (let row = 0; row < n; row++) {
      scores[row * k + col] = scale * vectors[col * n + row];
    }
  }
  return { scores, variances };
}

export function polyPca(rows: Float64Array, n: number, d: number, k: number,
                        opts: { cap?: number; seed?: number } = {}): PcaResult {
  const cap = opts.cap ?? 4096;
  const seed = opts.seed ?? 0;
  const exp = choosePolyTerms(d, cap, seed);
  const expanded = polyExpand(rows, n, d, exp);
  const { scores, variances } = gramPca(expanded, n, exp.terms.length, k, seed);
  return { scores, variances, capped: exp.capped };
}

/** Alternative reading: kernel PCA with the inhomogeneous quadratic kernel
 * (x . y + 1)^2, double-centered in feature space. */
export function polyKernelPca(rows: Float64Array, n: number, d: number,
                              k: number, seed = 0): PcaResult {
  const g = new Float64Array(n * n);
  for (let a = 0; a < n; a++) {
    for (let b = a; b < n; b++) {
      let dot = 0;
      for (let c = 0; c < d; c++) dot += rows[a * d + c] * rows[b * d + c];
      const v = (dot + 1) ** 2;
      g[a * n + b] = v;
      g[b * n + a] = v;
    }
  }
  // double centering: Gc = G - 1G/n - G1/n + 1G1/n^2
  const rowMean = new Float64Array(n);
  let total = 0;
  for (let a = 0; a < n; a++) {
    let acc = 0;
    for (let b = 0; b < n; b++) acc += g[a * n + b];
    rowMean[a] = acc / n;
    total += acc;
  }
  total /= n * n;
  for (let a = 0; a < n; a++) {
    for (let b = 0; b < n; b++) {
      g[a * n + b] += total - rowMean[a] - rowMean[b];
    }
  }
  const { scores, variances } = projectFromGram(g, n, k, seed);
  return { scores, variances, capped: false };
}
