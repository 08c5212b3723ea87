#!/usr/bin/env python3
"""Benchmark the compiled max-flow kernel against the pure-Python fallback.

Generates expansion-style graphs (patch nodes with source/sink links plus
auxiliary nodes on disagreeing pairs), which mirror the solver's production
workload, and random sparse networks for a second data point.

Usage: python benchmarks/bench_maxflow.py [--quick]
"""
import argparse
import time

import sys

import numpy as np

from grapl import _maxflow_py
from grapl.maxflow import BACKEND

try:
    from grapl import _maxflow_cy as _compiled
except ImportError:
    _compiled = None


def expansion_style_graph(rng, n_patches, n_pairs):
    """Source/sink links on every patch plus auxiliary gadgets on pairs."""
    n_aux = n_pairs
    source = n_patches + n_aux
    sink = source + 1
    pa = rng.integers(0, n_patches, n_pairs).astype(np.int32)
    qa = rng.integers(0, n_patches, n_pairs).astype(np.int32)
    aux = np.arange(n_patches, n_patches + n_aux, dtype=np.int32)
    w = rng.random(n_pairs)
    nodes = np.arange(n_patches, dtype=np.int32)
    tails = np.concatenate([np.full(n_patches, source, np.int32), nodes,
                            pa, aux, aux])
    heads = np.concatenate([nodes, np.full(n_patches, sink, np.int32),
                            aux, qa, np.full(n_aux, sink, np.int32)])
    cap_fwd = np.concatenate([rng.random(n_patches) * 3,
                              rng.random(n_patches) * 3, w, w, w])
    cap_rev = np.concatenate([np.zeros(2 * n_patches), w, w, np.zeros(n_aux)])
    return sink + 1, tails, heads, cap_fwd, cap_rev, source, sink


def random_sparse_graph(rng, n_nodes, n_edges):
    tails = rng.integers(0, n_nodes, n_edges).astype(np.int32)
    heads = rng.integers(0, n_nodes, n_edges).astype(np.int32)
    keep = tails != heads
    tails, heads = tails[keep], heads[keep]
    caps = rng.random(len(tails)) * 5
    return (n_nodes, tails, heads, caps, np.zeros_like(caps),
            0, n_nodes - 1)


def run(case, impl):
    n, tails, heads, cf, cr, s, t = case
    start = time.perf_counter()
    flow, _ = impl.solve_edges(n, tails, heads, cf.copy(), cr.copy(), s, t)
    return flow, time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true",
                        help="smaller sizes (CI-friendly)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    if args.quick:
        sizes = [(64, 500), (256, 5_000), (1024, 40_000)]
        sparse = [(200, 2_000), (2_000, 20_000)]
    else:
        sizes = [(64, 2_000), (256, 32_000), (1024, 130_000),
                 (1024, 523_776)]
        sparse = [(1_000, 10_000), (10_000, 100_000), (100_000, 1_000_000)]

    print(f"selected backend at import: {BACKEND}")
    if _compiled is None:
        print("compiled extension unavailable; nothing to compare against")
        sys.exit(1)
    rows = []
    for n_patches, n_pairs in sizes:
        case = expansion_style_graph(rng, n_patches, n_pairs)
        f_c, t_c = run(case, _compiled)
        f_p, t_p = run(case, _maxflow_py)
        assert abs(f_c - f_p) < 1e-6 * max(1.0, abs(f_c)), (f_c, f_p)
        rows.append((f"expansion {n_patches}p/{n_pairs}e",
                     case[0], t_c, t_p))
    for n_nodes, n_edges in sparse:
        case = random_sparse_graph(rng, n_nodes, n_edges)
        f_c, t_c = run(case, _compiled)
        f_p, t_p = run(case, _maxflow_py)
        assert abs(f_c - f_p) < 1e-6 * max(1.0, abs(f_c)), (f_c, f_p)
        rows.append((f"sparse {n_nodes}n/{n_edges}e", case[0], t_c, t_p))

    print(f"\n{'graph':<28}{'nodes':>9}{'compiled':>12}{'python':>12}{'speedup':>9}")
    for name, n, t_c, t_p in rows:
        print(f"{name:<28}{n:>9}{t_c * 1000:>10.1f}ms{t_p * 1000:>10.1f}ms"
              f"{t_p / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
