"""Max-flow / min-cut on a source-sink network.

The solver proper lives in a compiled extension when available; a pure-Python
twin with the same interface is selected at import otherwise (or when the
GRAPL_FORCE_PY_MAXFLOW environment variable is set). Both operate on CSR arc
arrays built here.
"""
from __future__ import annotations

import os

import numpy as np

if os.environ.get("GRAPL_FORCE_PY_MAXFLOW"):
    from . import _maxflow_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _maxflow_cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _maxflow_py as _impl

        BACKEND = "python"


def max_flow(n_nodes, tails, heads, cap_fwd, cap_rev, source, sink):
    """Compute the maximum source-sink flow and the minimum-cut partition.

    Each input edge i contributes a forward arc tails[i]->heads[i] with
    capacity cap_fwd[i] and a paired reverse arc with capacity cap_rev[i]
    (pass 0 for directed edges, the same weight for undirected ones).

    Returns (flow_value, source_side); source_side[v] is True when v stays
    on the source side of the minimum cut. By max-flow/min-cut duality the
    flow value equals the cut capacity.
    """
    tails = np.asarray(tails, dtype=np.int32)
    heads = np.asarray(heads, dtype=np.int32)
    cap_fwd = np.asarray(cap_fwd, dtype=np.float64)
    cap_rev = np.asarray(cap_rev, dtype=np.float64)
    if not (len(tails) == len(heads) == len(cap_fwd) == len(cap_rev)):
        raise ValueError("edge arrays must have equal length")
    if source == sink:
        raise ValueError("source and sink must differ")
    for node in (source, sink):
        if not 0 <= node < n_nodes:
            raise ValueError("source/sink out of range")
    if len(tails) and (tails.min() < 0 or tails.max() >= n_nodes
                       or heads.min() < 0 or heads.max() >= n_nodes):
        raise ValueError("edge endpoint out of range")
    if not (np.isfinite(cap_fwd).all() and np.isfinite(cap_rev).all()):
        raise ValueError("capacities must be finite")
    if (cap_fwd < 0).any() or (cap_rev < 0).any():
        raise ValueError("capacities must be nonnegative")

    flow, side = _impl.solve_edges(int(n_nodes), tails, heads, cap_fwd,
                                   cap_rev, int(source), int(sink))
    return float(flow), np.asarray(side, dtype=bool)
