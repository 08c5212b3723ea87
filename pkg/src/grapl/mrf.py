"""Patch-level Potts MRF: affinity kernel, energy, and expansion moves.

The energy of a hard patch labeling decomposes into per-patch unary costs
(negative log classifier probabilities) plus Potts pairwise costs: every
edge whose endpoints disagree pays its weight

    w_pq = lambda * phi(p, q),    phi(p, q) = exp(-aff(p,q)^2 / (2 sigma)) / dist(p, q)

where dist is the Euclidean pixel distance between patch centers, aff is the
Euclidean distance between per-patch descriptors, and sigma is the population
standard deviation of aff over all unordered patch pairs.

Labeling updates are expansion moves: for each label alpha in turn, the best
relabeling in which patches may only switch to alpha is found exactly by a
minimum st-cut (auxiliary node per disagreeing edge); a move is kept only if
it strictly lowers the energy, so the energy never increases.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError
from .imagegrid import PatchGrid
from .initializers import PatchLabeling
from .maxflow import max_flow

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
MOVE_TOL = 1e-9
MAX_CYCLES = 5

AFFINITY_VARIANTS = ("uniform_lattice", "position", "mean_color", "embedding")


@dataclass(frozen=True)
class AffinityMetric:
    """Selects the per-patch descriptor m(p) behind the affinity kernel."""

    variant: str
    vectors: np.ndarray | None = None  # (n_patches, dim) for "embedding"

    def __post_init__(self):
        if self.variant not in AFFINITY_VARIANTS:
            raise ValueError(f"unknown affinity variant {self.variant!r}")
        if self.variant == "embedding":
            if self.vectors is None or self.vectors.ndim != 2:
                raise ValueError("embedding metric needs one vector per patch")


@dataclass(frozen=True)
class PairwiseGraph:
    """Weighted unordered patch pairs plus the kernel parameters behind them."""

    p: np.ndarray        # (n_edges,) int32
    q: np.ndarray        # (n_edges,) int32
    w: np.ndarray        # (n_edges,) float64, nonnegative
    sigma: float
    lam: float
    topology: str        # "full" or "lattice"
    n_patches: int

    def __post_init__(self):
        if not np.isfinite(self.w).all() or (self.w < 0).any():
            raise ValueError("edge weights must be finite and nonnegative")
        if (self.p == self.q).any():
            raise ValueError("self edges are not allowed")

    @property
    def n_edges(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class UnaryCosts:
    costs: np.ndarray  # (n_patches, k0) float64, finite nonnegative

    def __post_init__(self):
        if not np.isfinite(self.costs).all():
            raise ValueError("unary costs must be finite")
        if (self.costs < 0).any():
            raise ValueError("unary costs must be nonnegative")


class EnergyBreakdown(NamedTuple):
    total: float
    unary: float
    pairwise: float


def patch_descriptors(grid: PatchGrid, metric: AffinityMetric) -> np.ndarray:
    """Per-patch descriptor matrix m(p) for the chosen metric."""
    if metric.variant == "mean_color":
        return grid.patches.mean(axis=(1, 2))
    if metric.variant == "position":
        return grid.centers
    if metric.variant == "embedding":
        if len(metric.vectors) != grid.n_patches:
            raise ValueError(
                f"embedding count {len(metric.vectors)} does not match "
                f"{grid.n_patches} patches"
            )
        return np.asarray(metric.vectors, dtype=np.float64)
    # uniform_lattice: descriptors coincide, so aff vanishes identically
    return np.zeros((grid.n_patches, 1))


def compute_affinities(grid: PatchGrid, metric: AffinityMetric) -> np.ndarray:
    """Symmetric matrix of Euclidean descriptor distances, zero diagonal."""
    m = patch_descriptors(grid, metric)
    n = len(m)
    aff = np.empty((n, n))
    chunk = max(1, 2_000_000 // max(1, m.shape[1] * n))
    for i0 in range(0, n, chunk):
        diff = m[i0:i0 + chunk, None, :] - m[None, :, :]
        aff[i0:i0 + chunk] = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(aff, 0.0)
    return aff


def compute_sigma(affinities: np.ndarray) -> float:
    """Population standard deviation over all unordered off-diagonal pairs."""
    n = affinities.shape[0]
    if n < 2:
        raise ValueError("need at least two patches")
    iu = np.triu_indices(n, k=1)
    vals = affinities[iu]
    return float(np.sqrt(np.mean(vals * vals) - np.mean(vals) ** 2))


def full_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    iu = np.triu_indices(n, k=1)
    return iu[0].astype(np.int32), iu[1].astype(np.int32)


def lattice_pairs(d: int) -> tuple[np.ndarray, np.ndarray]:
    """4-neighborhood pairs of the d x d grid: 2 d (d - 1) edges."""
    idx = np.arange(d * d, dtype=np.int32).reshape(d, d)
    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return p, q


def build_pairwise_graph(grid: PatchGrid, affinities: np.ndarray, sigma: float,
                         lam: float, topology: str = "full",
                         uniform: bool = False) -> PairwiseGraph:
    """Assemble edge weights w_pq = lam * phi(p, q).

    With uniform=True the affinity kernel is dropped (aff taken as 0 on the
    4-neighborhood), which is also the documented fallback when sigma
    degenerates to 0 on a constant-affinity image.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if topology not in ("full", "lattice"):
        raise ValueError("topology must be 'full' or 'lattice'")
    if uniform:
        topology = "lattice"
    if topology == "lattice":
        p, q = lattice_pairs(grid.d)
    else:
        p, q = full_pairs(grid.n_patches)
    delta = grid.centers[p] - grid.centers[q]
    dist = np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2)
    if uniform:
        kernel = np.ones_like(dist)
    else:
        if sigma <= 0:
            raise ValueError("sigma must be positive for a non-uniform metric")
        aff = affinities[p, q]
        kernel = np.exp(-(aff * aff) / (2.0 * sigma))
    w = lam * kernel / dist
    return PairwiseGraph(p=p, q=q, w=w, sigma=float(sigma), lam=float(lam),
                         topology=topology, n_patches=grid.n_patches)


def make_graph(grid: PatchGrid, metric: AffinityMetric, lam: float,
               topology: str = "full") -> PairwiseGraph:
    """Affinities, sigma, and graph in one step, with the degenerate-sigma
    fallback (constant affinities collapse the kernel to 1/dist)."""
    if metric.variant == "uniform_lattice":
        return build_pairwise_graph(grid, np.zeros(0), 0.0, lam,
                                    topology="lattice", uniform=True)
    aff = compute_affinities(grid, metric)
    sigma = compute_sigma(aff)
    if sigma <= 0:
        log.warning("degenerate affinity kernel (sigma = 0); "
                    "falling back to pure inverse-distance weights")
        return build_pairwise_graph(grid, aff, 0.0, lam, topology=topology,
                                    uniform=True)
    return build_pairwise_graph(grid, aff, sigma, lam, topology=topology)


def unary_costs(probs: np.ndarray) -> UnaryCosts:
    """Clamped negative log probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be (n_patches, k0)")
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-5):
        raise ValueError("each row of probs must sum to 1")
    return UnaryCosts(-np.log(np.maximum(probs, LOG_CLAMP)))


def energy(labeling: PatchLabeling, unary: UnaryCosts,
           graph: PairwiseGraph) -> EnergyBreakdown:
    """Total labeling energy and its unary/pairwise decomposition."""
    f = labeling.labels
    if len(f) != unary.costs.shape[0] or len(f) != graph.n_patches:
        raise ValueError("labeling, unary costs, and graph sizes disagree")
    u = float(unary.costs[np.arange(len(f)), f - 1].sum())
    v = float(graph.w[f[graph.p] != f[graph.q]].sum())
    return EnergyBreakdown(u + v, u, v)


def _energy_total(f: np.ndarray, costs: np.ndarray, p, q, w) -> float:
    u = costs[np.arange(len(f)), f - 1].sum()
    return float(u + w[f[p] != f[q]].sum())


def _expansion_move(f: np.ndarray, alpha: int, costs: np.ndarray,
                    p: np.ndarray, q: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exact best move in which any patch may switch to alpha.

    Graph layout: patch nodes, one auxiliary node per currently-disagreeing
    edge, then source (keep side) and sink (alpha side). A patch ends on the
    sink side of the minimum cut iff it takes alpha.
    """
    n = len(f)
    same = f[p] == f[q]
    cp, cq, cw = p[~same], q[~same], w[~same]
    sp, sq, sw = p[same], q[same], w[same]
    n_aux = len(cp)
    aux = np.arange(n, n + n_aux, dtype=np.int32)
    source = n + n_aux
    sink = source + 1

    keep_cost = costs[np.arange(n), f - 1].copy()
    inf_cap = 2.0 * (costs.max() * n + w.sum()) + 1.0
    keep_cost[f == alpha] = inf_cap  # keeping is switching for these
    take_cost = costs[:, alpha - 1]

    nodes = np.arange(n, dtype=np.int32)
    w_pa = np.where(f[cp] == alpha, 0.0, cw)
    w_aq = np.where(f[cq] == alpha, 0.0, cw)

    tails = np.concatenate([
        np.full(n, source, dtype=np.int32),  # source -> patch: cost of taking alpha
        nodes,                               # patch -> sink: cost of keeping
        sp,                                  # agreeing edges: plain n-link
        cp, aux,                             # disagreeing edges: via auxiliary
        aux,
    ])
    heads = np.concatenate([
        nodes,
        np.full(n, sink, dtype=np.int32),
        sq,
        aux, cq,
        np.full(n_aux, sink, dtype=np.int32),
    ])
    cap_fwd = np.concatenate([take_cost, keep_cost, sw, w_pa, w_aq, cw])
    cap_rev = np.concatenate([np.zeros(2 * n), sw, w_pa, w_aq, np.zeros(n_aux)])

    live = (cap_fwd > 0) | (cap_rev > 0)
    _, side = max_flow(sink + 1, tails[live], heads[live],
                       cap_fwd[live], cap_rev[live], source, sink)
    return np.where(side[:n], f, alpha).astype(np.int32)


def alpha_expansion(unary: UnaryCosts, graph: PairwiseGraph,
                    init: PatchLabeling, k0: int,
                    max_cycles: int = MAX_CYCLES,
                    trace: list | None = None) -> PatchLabeling:
    """Cycle expansion moves over labels 1..k0 until no move improves.

    Each accepted move strictly decreases the energy (tolerance guards
    against cycling on ties), so termination is guaranteed; for two labels
    the result attains the global minimum. When `trace` is a list it
    receives one (alpha, energy_before, energy_after) tuple per accepted
    move.
    """
    costs = unary.costs
    if costs.shape[1] < k0:
        raise ValueError("unary costs cover fewer labels than k0")
    f = init.labels.astype(np.int32).copy()
    keep = graph.w > 0
    p, q, w = graph.p[keep], graph.q[keep], graph.w[keep]
    current = _energy_total(f, costs, p, q, w)
    for _ in range(max_cycles):
        improved = False
        for alpha in range(1, k0 + 1):
            cand = _expansion_move(f, alpha, costs, p, q, w)
            cand_e = _energy_total(cand, costs, p, q, w)
            if current - cand_e > MOVE_TOL:
                if trace is not None:
                    trace.append((alpha, current, cand_e))
                f = cand
                current = cand_e
                improved = True
        if not improved:
            break
    return PatchLabeling(f, k0)


# ---------------------------------------------------------------------------
# Embedding ingestion ("GPLE": magic, u32 version, u32 grid_d, u32 dim,
# then grid_d^2 * dim little-endian f32 values in row-major patch order).

GPLE_MAGIC = b"GPLE"
GPLE_VERSION = 1


def load_gple(path, expected_d: int | None = None) -> tuple[int, np.ndarray]:
    """Read and validate an embedding file; returns (grid_d, vectors)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"embedding file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16:
        raise FormatError(f"embedding file truncated: {path}")
    magic, version, grid_d, dim = struct.unpack_from("<4sIII", raw, 0)
    if magic != GPLE_MAGIC:
        raise FormatError(f"bad magic {magic!r} in embedding file: {path}")
    if version != GPLE_VERSION:
        raise FormatError(f"unsupported embedding file version {version}: {path}")
    if grid_d < 1 or dim < 1:
        raise FormatError(f"invalid embedding header ({grid_d=}, {dim=}): {path}")
    if expected_d is not None and grid_d != expected_d:
        raise FormatError(
            f"embedding grid side {grid_d} does not match configured d={expected_d}"
        )
    count = grid_d * grid_d * dim
    payload = raw[16:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"embedding payload holds {len(payload) // 4} floats, expected {count}"
        )
    vectors = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return int(grid_d), vectors.reshape(grid_d * grid_d, dim)


def save_gple(path, grid_d: int, vectors: np.ndarray) -> None:
    """Write embeddings in the interchange format the loader validates."""
    vectors = np.asarray(vectors)
    if vectors.shape[0] != grid_d * grid_d:
        raise ValueError("need one vector per grid cell")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", GPLE_MAGIC, GPLE_VERSION, grid_d,
                             vectors.shape[1]))
        fh.write(vectors.astype("<f4").tobytes())
