# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled max-flow kernel: CSR assembly (counting sort) plus a Dinic-style
BFS shortest-augmenting-path solver."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

DEF EPS = 1e-12


def solve_edges(int n_nodes, tails_arr, heads_arr, cap_fwd_arr, cap_rev_arr,
                int source, int sink):
    """Max-flow over paired-arc edges; returns (flow_value, source_side)."""
    cdef int[::1] tails = np.ascontiguousarray(tails_arr, dtype=np.int32)
    cdef int[::1] heads = np.ascontiguousarray(heads_arr, dtype=np.int32)
    cdef double[::1] cap_fwd = np.ascontiguousarray(cap_fwd_arr, dtype=np.float64)
    cdef double[::1] cap_rev = np.ascontiguousarray(cap_rev_arr, dtype=np.float64)
    cdef long long m = tails.shape[0]
    cdef long long n_arcs = 2 * m

    indptr_arr = np.zeros(n_nodes + 1, dtype=np.int64)
    cdef long long[::1] indptr = indptr_arr
    arc_head_arr = np.empty(n_arcs, dtype=np.int32)
    cdef int[::1] arc_head = arc_head_arr
    arc_pair_arr = np.empty(n_arcs, dtype=np.int64)
    cdef long long[::1] arc_pair = arc_pair_arr
    caps_arr = np.empty(n_arcs, dtype=np.float64)
    cdef double[::1] caps = caps_arr

    cdef long long i, pos_f, pos_r
    cdef int u, v
    # counting sort by tail node: count, prefix-sum, place
    for i in range(m):
        indptr[tails[i] + 1] += 1
        indptr[heads[i] + 1] += 1
    for i in range(n_nodes):
        indptr[i + 1] += indptr[i]
    fill_arr = np.empty(n_nodes, dtype=np.int64)
    cdef long long[::1] fill = fill_arr
    for i in range(n_nodes):
        fill[i] = indptr[i]
    for i in range(m):
        u = tails[i]
        v = heads[i]
        pos_f = fill[u]
        fill[u] += 1
        pos_r = fill[v]
        fill[v] += 1
        arc_head[pos_f] = v
        caps[pos_f] = cap_fwd[i]
        arc_head[pos_r] = u
        caps[pos_r] = cap_rev[i]
        arc_pair[pos_f] = pos_r
        arc_pair[pos_r] = pos_f

    return _dinic(n_nodes, indptr, arc_head, arc_pair, caps, source, sink)


def solve(indptr_arr, heads_arr, pairs_arr, caps_arr, int source, int sink,
          int n_nodes):
    """Solver entry for a prebuilt CSR residual structure."""
    cdef long long[::1] indptr = np.ascontiguousarray(indptr_arr, dtype=np.int64)
    cdef int[::1] heads = np.ascontiguousarray(heads_arr, dtype=np.int32)
    cdef long long[::1] pairs = np.ascontiguousarray(pairs_arr, dtype=np.int64)
    cdef double[::1] caps = np.ascontiguousarray(caps_arr, dtype=np.float64)
    return _dinic(n_nodes, indptr, heads, pairs, caps, source, sink)


cdef _dinic(int n_nodes, long long[::1] indptr, int[::1] heads,
            long long[::1] pairs, double[::1] caps, int source, int sink):
    cdef int[::1] level = np.empty(n_nodes, dtype=np.int32)
    cdef int[::1] queue = np.empty(n_nodes, dtype=np.int32)
    cdef long long[::1] it = np.empty(n_nodes, dtype=np.int64)
    cdef int[::1] path = np.empty(n_nodes + 1, dtype=np.int32)
    cdef long long[::1] arc_path = np.empty(n_nodes + 1, dtype=np.int64)

    cdef double flow = 0.0, bottleneck
    cdef int u, v, i, head_q, tail_q, path_len, cut_at, advanced
    cdef long long a

    while True:
        for i in range(n_nodes):
            level[i] = -1
        level[source] = 0
        queue[0] = source
        head_q = 0
        tail_q = 1
        while head_q < tail_q:
            u = queue[head_q]
            head_q += 1
            a = indptr[u]
            while a < indptr[u + 1]:
                v = heads[a]
                if level[v] < 0 and caps[a] > EPS:
                    level[v] = level[u] + 1
                    queue[tail_q] = v
                    tail_q += 1
                a += 1
        if level[sink] < 0:
            break

        for i in range(n_nodes):
            it[i] = indptr[i]
        path[0] = source
        path_len = 1
        while path_len > 0:
            u = path[path_len - 1]
            if u == sink:
                bottleneck = caps[arc_path[0]]
                for i in range(1, path_len - 1):
                    if caps[arc_path[i]] < bottleneck:
                        bottleneck = caps[arc_path[i]]
                flow += bottleneck
                cut_at = 0
                for i in range(path_len - 1):
                    a = arc_path[i]
                    caps[a] -= bottleneck
                    caps[pairs[a]] += bottleneck
                    if caps[a] <= EPS and cut_at == 0:
                        cut_at = i
                path_len = cut_at + 1
                continue
            advanced = 0
            while it[u] < indptr[u + 1]:
                a = it[u]
                v = heads[a]
                if caps[a] > EPS and level[v] == level[u] + 1:
                    path[path_len] = v
                    arc_path[path_len - 1] = a
                    path_len += 1
                    advanced = 1
                    break
                it[u] += 1
            if advanced == 0:
                level[u] = -1
                path_len -= 1

    side_arr = np.zeros(n_nodes, dtype=np.uint8)
    cdef unsigned char[::1] side = side_arr
    side[source] = 1
    queue[0] = source
    head_q = 0
    tail_q = 1
    while head_q < tail_q:
        u = queue[head_q]
        head_q += 1
        a = indptr[u]
        while a < indptr[u + 1]:
            v = heads[a]
            if side[v] == 0 and caps[a] > EPS:
                side[v] = 1
                queue[tail_q] = v
                tail_q += 1
            a += 1
    return flow, side_arr.astype(bool)
