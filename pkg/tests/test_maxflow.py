import itertools

import numpy as np
import pytest

from grapl import _maxflow_py
from grapl.maxflow import BACKEND, max_flow


def brute_force_min_cut(n, tails, heads, cap_fwd, cap_rev, s, t):
    """Enumerate all 2^(n-2) source/sink partitions."""
    others = [v for v in range(n) if v not in (s, t)]
    best = np.inf
    for bits in itertools.product((0, 1), repeat=len(others)):
        side = {s: 0, t: 1, **dict(zip(others, bits))}
        cut = 0.0
        for u, v, f, r in zip(tails, heads, cap_fwd, cap_rev):
            if side[u] == 0 and side[v] == 1:
                cut += f
            if side[v] == 0 and side[u] == 1:
                cut += r
        best = min(best, cut)
    return best


def random_network(rng, max_nodes=10, max_cap=20):
    n = int(rng.integers(2, max_nodes + 1))
    m = int(rng.integers(0, 2 * n * n))
    tails = rng.integers(0, n, m)
    heads = rng.integers(0, n, m)
    keep = tails != heads
    tails, heads = tails[keep], heads[keep]
    cap_fwd = rng.integers(0, max_cap + 1, len(tails)).astype(float)
    cap_rev = rng.integers(0, max_cap + 1, len(tails)).astype(float)
    return n, tails, heads, cap_fwd, cap_rev


class TestMaxFlow:
    def test_single_edge(self):
        flow, side = max_flow(2, [0], [1], [5.0], [0.0], 0, 1)
        assert flow == 5.0
        assert side[0] and not side[1]

    def test_disconnected(self):
        flow, _ = max_flow(3, [0], [1], [4.0], [0.0], 0, 2)
        assert flow == 0.0

    def test_source_equals_sink_rejected(self):
        with pytest.raises(ValueError):
            max_flow(2, [0], [1], [1.0], [0.0], 1, 1)

    def test_negative_capacity_rejected(self):
        with pytest.raises(ValueError):
            max_flow(2, [0], [1], [-1.0], [0.0], 0, 1)

    def test_matches_brute_force_on_random_networks(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            n, tails, heads, cf, cr = random_network(rng)
            flow, side = max_flow(n, tails, heads, cf, cr, 0, n - 1)
            expect = brute_force_min_cut(n, tails, heads, cf, cr, 0, n - 1)
            assert flow == expect
            # returned partition realizes the flow value (duality)
            cut = sum(f for u, v, f in zip(tails, heads, cf)
                      if side[u] and not side[v])
            cut += sum(r for u, v, r in zip(tails, heads, cr)
                       if side[v] and not side[u])
            assert abs(cut - flow) < 1e-9
            assert side[0] and not side[n - 1]

    def test_backends_agree(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            n, tails, heads, cf, cr = random_network(rng)
            flow, _ = max_flow(n, tails, heads, cf, cr, 0, n - 1)
            # run the pure-Python twin on the same CSR arrays
            m = len(tails)
            arc_tail = np.empty(2 * m, dtype=np.int64)
            arc_head = np.empty(2 * m, dtype=np.int64)
            arc_cap = np.empty(2 * m)
            arc_tail[0::2], arc_tail[1::2] = tails, heads
            arc_head[0::2], arc_head[1::2] = heads, tails
            arc_cap[0::2], arc_cap[1::2] = cf, cr
            order = np.argsort(arc_tail, kind="stable")
            inv = np.empty(2 * m, dtype=np.int64)
            inv[order] = np.arange(2 * m)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(np.bincount(arc_tail, minlength=n), out=indptr[1:])
            flow_py, _ = _maxflow_py.solve(
                indptr, arc_head[order].astype(np.int32),
                inv[order ^ 1].astype(np.int32), arc_cap[order].copy(),
                0, n - 1, n)
            assert abs(flow - flow_py) < 1e-9

    def test_backend_reports_something(self):
        assert BACKEND in ("cython", "python")

    def test_float_capacities(self):
        # classic diamond with fractional capacities
        tails = [0, 0, 1, 2, 1, 2]
        heads = [1, 2, 3, 3, 2, 1]
        cf = [3.5, 2.25, 2.0, 3.0, 1.0, 1.0]
        cr = [0.0] * 6
        flow, _ = max_flow(4, tails, heads, cf, cr, 0, 3)
        expect = brute_force_min_cut(4, tails, heads, cf, cr, 0, 3)
        assert abs(flow - expect) < 1e-9
