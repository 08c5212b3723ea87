"""Pure-Python max-flow kernel (Dinic-style BFS shortest augmenting paths).

Fallback implementation used when the compiled extension is unavailable.
Same interface as the extension: paired-arc edge lists in, flow and
min-cut side out.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-12


def solve_edges(n_nodes, tails, heads, cap_fwd, cap_rev, source, sink):
    """Assemble CSR residual arcs with numpy, then run the solver."""
    m = len(tails)
    arc_tail = np.empty(2 * m, dtype=np.int64)
    arc_head = np.empty(2 * m, dtype=np.int64)
    arc_cap = np.empty(2 * m, dtype=np.float64)
    arc_tail[0::2] = tails
    arc_tail[1::2] = heads
    arc_head[0::2] = heads
    arc_head[1::2] = tails
    arc_cap[0::2] = cap_fwd
    arc_cap[1::2] = cap_rev

    order = np.argsort(arc_tail, kind="stable")
    inv = np.empty(2 * m, dtype=np.int64)
    inv[order] = np.arange(2 * m)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(arc_tail, minlength=n_nodes), out=indptr[1:])
    return solve(indptr, arc_head[order].astype(np.int32), inv[order ^ 1],
                 arc_cap[order].copy(), source, sink, n_nodes)


def solve(indptr, heads, pairs, caps, source, sink, n_nodes):
    """Run max-flow on a prebuilt residual arc structure.

    `caps` is modified in place and ends up holding residual capacities.
    Returns (flow_value, source_side) with source_side a bool array over nodes.
    """
    indptr = indptr.tolist()
    heads = heads.tolist()
    pairs = pairs.tolist()
    caps = caps.tolist()
    level = [-1] * n_nodes
    queue = [0] * n_nodes
    flow = 0.0

    while True:
        # BFS level graph over residual arcs
        for i in range(n_nodes):
            level[i] = -1
        level[source] = 0
        queue[0] = source
        head_q, tail_q = 0, 1
        while head_q < tail_q:
            u = queue[head_q]
            head_q += 1
            for a in range(indptr[u], indptr[u + 1]):
                v = heads[a]
                if level[v] < 0 and caps[a] > EPS:
                    level[v] = level[u] + 1
                    queue[tail_q] = v
                    tail_q += 1
        if level[sink] < 0:
            break

        # blocking flow via iterative DFS with a current-arc pointer
        it = list(indptr[:n_nodes])
        path = [source]
        arc_path = []
        while path:
            u = path[-1]
            if u == sink:
                bottleneck = min(caps[a] for a in arc_path)
                flow += bottleneck
                cut_at = 0
                for i, a in enumerate(arc_path):
                    caps[a] -= bottleneck
                    caps[pairs[a]] += bottleneck
                    if caps[a] <= EPS and cut_at == 0:
                        cut_at = i
                del path[cut_at + 1:]
                del arc_path[cut_at:]
                continue
            advanced = False
            while it[u] < indptr[u + 1]:
                a = it[u]
                v = heads[a]
                if caps[a] > EPS and level[v] == level[u] + 1:
                    path.append(v)
                    arc_path.append(a)
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                level[u] = -1  # dead end for this phase
                path.pop()
                if arc_path:
                    arc_path.pop()

    # residual reachability from the source gives the minimum cut
    side = np.zeros(n_nodes, dtype=bool)
    side[source] = True
    stack = [source]
    while stack:
        u = stack.pop()
        for a in range(indptr[u], indptr[u + 1]):
            v = heads[a]
            if not side[v] and caps[a] > EPS:
                side[v] = True
                stack.append(v)
    return flow, side
