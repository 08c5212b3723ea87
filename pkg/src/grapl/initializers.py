"""Initial pseudo-labels for the patch grid.

Four strategies: per-patch uniform random labels, nearest-seed assignment
from random seed patches, k-means on patch centers, and soft labels from a
from-scratch SLIC superpixel segmentation. Hard labelings are wrapped as
one-hot soft labels so the training loop consumes a single type.

All strategies are deterministic given (image, seed); ties break toward the
lowest index everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagegrid import Image, PatchGrid, SegmentationMap


@dataclass(frozen=True)
class PatchLabeling:
    """Hard per-patch labels in {1..k0}."""

    labels: np.ndarray  # (n_patches,) int32
    k0: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 1:
            raise ValueError("labels must be a flat array")
        if labels.size and (labels.min() < 1 or labels.max() > self.k0):
            raise ValueError(f"labels must lie in [1, {self.k0}]")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def n_patches(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SoftPatchLabels:
    """Per-patch probability vectors over the k0 label space."""

    dist: np.ndarray  # (n_patches, k0) float64

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=np.float64)
        if dist.ndim != 2:
            raise ValueError("dist must be (n_patches, k0)")
        if (dist < 0).any():
            raise ValueError("soft labels must be nonnegative")
        if not np.allclose(dist.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("each soft label must sum to 1")
        dist.flags.writeable = False
        object.__setattr__(self, "dist", dist)

    @property
    def k0(self) -> int:
        return self.dist.shape[1]

    @property
    def n_patches(self) -> int:
        return self.dist.shape[0]


@dataclass(frozen=True)
class SlicParams:
    k: int
    compactness: float = 1.0
    iterations: int = 10
    colorspace: str = "lab"  # "lab" or "rgb"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.compactness <= 0:
            raise ValueError("compactness must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.colorspace not in ("lab", "rgb"):
            raise ValueError("colorspace must be 'lab' or 'rgb'")


def one_hot(labeling: PatchLabeling) -> SoftPatchLabels:
    dist = np.zeros((labeling.n_patches, labeling.k0))
    dist[np.arange(labeling.n_patches), labeling.labels - 1] = 1.0
    return SoftPatchLabels(dist)


def argmax_labels(soft: SoftPatchLabels) -> PatchLabeling:
    """Hard labels by per-patch argmax (first maximum wins)."""
    return PatchLabeling(np.argmax(soft.dist, axis=1).astype(np.int32) + 1, soft.k0)


def rgb_to_lab(data: np.ndarray) -> np.ndarray:
    """sRGB in [0,1] to CIELAB (D65). Grayscale maps to L with a=b=0."""
    if data.shape[2] == 1:
        rgb = np.repeat(data, 3, axis=2)
    else:
        rgb = data
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    m = np.array([
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ])
    xyz = linear @ m.T
    xyz /= np.array([0.95047, 1.0, 1.08883])
    f = np.where(xyz > 0.008856, np.cbrt(xyz), 7.787 * xyz + 16.0 / 116.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _seed_grid(h: int, w: int, k: int) -> np.ndarray:
    """Near-uniform seed centers, (row, col) int array of length ~k."""
    ny = max(1, int(round(np.sqrt(k * h / w))))
    nx = int(np.ceil(k / ny))
    ys = ((np.arange(ny) + 0.5) * h / ny).astype(int).clip(0, h - 1)
    xs = ((np.arange(nx) + 0.5) * w / nx).astype(int).clip(0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _perturb_to_low_gradient(features: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Move each seed to the lowest-gradient pixel in its 3x3 neighborhood."""
    h, w = features.shape[:2]
    gy, gx = np.gradient(features.sum(axis=2))
    grad = gy * gy + gx * gx
    out = seeds.copy()
    for i, (r, c) in enumerate(seeds):
        r0, r1 = max(0, r - 1), min(h, r + 2)
        c0, c1 = max(0, c - 1), min(w, c + 2)
        win = grad[r0:r1, c0:c1]
        dr, dc = np.unravel_index(np.argmin(win), win.shape)
        out[i] = (r0 + dr, c0 + dc)
    return out


def slic_partition(features: np.ndarray, k: int, compactness: float,
                   iterations: int) -> np.ndarray:
    """Local k-means in joint feature+position space over a pixel feature map.

    Returns a 0-based (h, w) assignment with every pixel labeled. Works for
    any per-pixel feature vector, which also serves the embedding-space
    baseline segmenter.
    """
    h, w, nf = features.shape
    n = h * w
    k = min(k, n)
    step = np.sqrt(n / k)
    seeds = _perturb_to_low_gradient(features, _seed_grid(h, w, k))
    nc = len(seeds)

    centers_f = features[seeds[:, 0], seeds[:, 1]].astype(np.float64)
    centers_p = seeds.astype(np.float64)
    ratio = (compactness / step) ** 2

    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    half = max(1, int(round(step)))
    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        labels = np.full((h, w), -1, dtype=np.int32)
        for ci in range(nc):
            cy, cx = centers_p[ci]
            r0, r1 = max(0, int(cy - half)), min(h, int(cy + half) + 1)
            c0, c1 = max(0, int(cx - half)), min(w, int(cx + half) + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            df = features[r0:r1, c0:c1] - centers_f[ci]
            dist = np.einsum("ijk,ijk->ij", df, df)
            dist += ratio * ((ys[r0:r1, c0:c1] - cy) ** 2 + (xs[r0:r1, c0:c1] - cx) ** 2)
            win_best = best[r0:r1, c0:c1]
            better = dist < win_best
            win_best[better] = dist[better]
            labels[r0:r1, c0:c1][better] = ci
        # orphans outside every search window: nearest center by full distance
        orphans = labels < 0
        if orphans.any():
            oy, ox = np.nonzero(orphans)
            d = (oy[:, None] - centers_p[:, 0]) ** 2 + (ox[:, None] - centers_p[:, 1]) ** 2
            labels[oy, ox] = np.argmin(d, axis=1)

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=nc).astype(np.float64)
        counts[counts == 0] = 1.0
        for j in range(nf):
            centers_f[:, j] = np.bincount(flat, weights=features[..., j].ravel(),
                                          minlength=nc) / counts
        centers_p[:, 0] = np.bincount(flat, weights=ys.ravel(), minlength=nc) / counts
        centers_p[:, 1] = np.bincount(flat, weights=xs.ravel(), minlength=nc) / counts
    return labels


def _connected_components(labels: np.ndarray) -> np.ndarray:
    """4-connected components of a label image, 0-based."""
    from scipy import ndimage

    comp = np.full(labels.shape, -1, dtype=np.int32)
    nxt = 0
    for lab in np.unique(labels):
        mask = labels == lab
        cc, ncc = ndimage.label(mask)
        comp[mask] = cc[mask] - 1 + nxt
        nxt += ncc
    return comp


def _component_adjacency(comp: np.ndarray, n_comp: int):
    """Shared-boundary lengths between 4-adjacent components."""
    lo_parts, hi_parts = [], []
    for u, v in ((comp[:-1, :].ravel(), comp[1:, :].ravel()),
                 (comp[:, :-1].ravel(), comp[:, 1:].ravel())):
        diff = u != v
        lo_parts.append(np.minimum(u[diff], v[diff]))
        hi_parts.append(np.maximum(u[diff], v[diff]))
    lo = np.concatenate(lo_parts).astype(np.int64)
    hi = np.concatenate(hi_parts).astype(np.int64)
    keys, counts = np.unique(lo * n_comp + hi, return_counts=True)
    adj = [dict() for _ in range(n_comp)]
    for key, cnt in zip(keys.tolist(), counts.tolist()):
        x, y = divmod(key, n_comp)
        adj[x][y] = cnt
        adj[y][x] = cnt
    return adj


def enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Split stray fragments into their own segments, then absorb fragments
    smaller than a quarter of the mean segment area into their most adjacent
    neighbor. Every output label covers one 4-connected region."""
    comp = _connected_components(labels)
    n_comp = comp.max() + 1
    sizes = np.bincount(comp.ravel(), minlength=n_comp)
    n_segments = len(np.unique(labels))
    min_size = max(1, labels.size // (n_segments * 4))
    adj = _component_adjacency(comp, n_comp)

    target = np.arange(n_comp, dtype=np.int32)
    merged = sizes.copy()
    # absorb small fragments, smallest first, into the neighbor sharing the
    # longest boundary (lowest component id on ties)
    for ci in sorted(range(n_comp), key=lambda i: (sizes[i], i)):
        if merged[ci] >= min_size or not adj[ci]:
            continue
        best = min(adj[ci].items(), key=lambda kv: (-kv[1], kv[0]))[0]
        root = best
        while target[root] != root:
            root = target[root]
        if root == ci:
            continue
        target[ci] = root
        merged[root] += merged[ci]
        for nb, cnt in adj[ci].items():
            if nb != root:
                adj[root][nb] = adj[root].get(nb, 0) + cnt
                adj[nb][root] = adj[nb].get(root, 0) + cnt
            adj[nb].pop(ci, None)
        adj[ci] = {}

    roots = target.copy()
    for i in range(n_comp):
        r = i
        while target[r] != r:
            r = target[r]
        roots[i] = r
    out = roots[comp]
    # compact to 1..L in raster first-appearance order
    _, first = np.unique(out.ravel(), return_index=True)
    order = out.ravel()[np.sort(first)]
    remap = np.zeros(n_comp, dtype=np.int32)
    remap[order] = np.arange(1, len(order) + 1)
    return remap[out]


def slic_segment(image: Image, params: SlicParams, seed: int = 0) -> SegmentationMap:
    """Superpixel segmentation: grid-seeded local k-means in color+position
    space, followed by connectivity enforcement."""
    n = image.height * image.width
    if params.k > n:
        raise ValueError("k exceeds pixel count")
    del seed  # deterministic; accepted for interface uniformity
    feats = rgb_to_lab(image.data) if params.colorspace == "lab" else np.asarray(image.data)
    labels0 = slic_partition(feats, params.k, params.compactness, params.iterations)
    return SegmentationMap(enforce_connectivity(labels0))


def merge_smallest_segments(smap: SegmentationMap, max_segments: int) -> SegmentationMap:
    """Merge the smallest segment into its most adjacent neighbor until at
    most max_segments remain."""
    labels = smap.labels.copy()
    while True:
        present = np.unique(labels)
        if len(present) <= max_segments:
            break
        comp = labels  # segments are connected already; treat labels as nodes
        sizes = {int(p): int((comp == p).sum()) for p in present}
        smallest = min(sizes, key=lambda p: (sizes[p], p))
        border = {}
        mask = comp == smallest
        for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rolled = np.roll(comp, shift, axis=(0, 1))
            valid = np.ones_like(mask)
            if shift[0] == 1:
                valid[0, :] = False
            if shift[0] == -1:
                valid[-1, :] = False
            if shift[1] == 1:
                valid[:, 0] = False
            if shift[1] == -1:
                valid[:, -1] = False
            touching = mask & valid & (rolled != smallest)
            for lab, cnt in zip(*np.unique(rolled[touching], return_counts=True)):
                border[int(lab)] = border.get(int(lab), 0) + int(cnt)
        if not border:
            break
        best = min(border.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        labels[mask] = best
    # compact to 1..L keeping raster first-appearance order
    _, first = np.unique(labels.ravel(), return_index=True)
    order = labels.ravel()[np.sort(first)]
    remap = np.zeros(int(labels.max()) + 1, dtype=np.int32)
    remap[order] = np.arange(1, len(order) + 1)
    return SegmentationMap(remap[labels])


def init_slic_soft(image: Image, grid: PatchGrid, k0: int, seed: int = 0,
                   params: SlicParams | None = None) -> SoftPatchLabels:
    """Soft labels: per-patch normalized histogram of superpixel membership."""
    if params is None:
        params = SlicParams(k=k0)
    smap = slic_segment(image, params, seed)
    smap = merge_smallest_segments(smap, k0)
    d, ph, pw = grid.d, grid.patch_h, grid.patch_w
    lab = smap.labels[: d * ph, : d * pw]
    per_patch = (
        lab.reshape(d, ph, d, pw).transpose(0, 2, 1, 3).reshape(d * d, ph * pw)
    )
    dist = np.zeros((d * d, k0))
    for p in range(d * d):
        counts = np.bincount(per_patch[p], minlength=k0 + 1)[1: k0 + 1]
        dist[p] = counts / counts.sum()
    return SoftPatchLabels(dist)


def init_patchwise_random(grid: PatchGrid, k0: int, seed: int = 0) -> PatchLabeling:
    """Independent uniform label per patch."""
    rng = np.random.default_rng(seed)
    return PatchLabeling(rng.integers(1, k0 + 1, size=grid.n_patches,
                                      dtype=np.int32), k0)


def init_seedwise_random(grid: PatchGrid, k0: int, seed: int = 0) -> PatchLabeling:
    """k0 random seed patches take distinct labels; the rest copy their
    nearest seed (ties to the lowest seed patch index)."""
    n = grid.n_patches
    if k0 > n:
        raise ValueError("k0 exceeds patch count")
    rng = np.random.default_rng(seed)
    seed_ids = np.sort(rng.choice(n, size=k0, replace=False))
    d2 = ((grid.centers[:, None, :] - grid.centers[seed_ids][None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1).astype(np.int32) + 1  # argmin picks lowest seed on ties
    labels[seed_ids] = np.arange(1, k0 + 1)
    return PatchLabeling(labels, k0)


def init_spatial_kmeans(grid: PatchGrid, k0: int, seed: int = 0,
                        max_iter: int = 100) -> PatchLabeling:
    """Lloyd k-means with k-means++ seeding on patch center coordinates."""
    pts = grid.centers
    n = len(pts)
    if k0 > n:
        raise ValueError("k0 exceeds patch count")
    rng = np.random.default_rng(seed)

    centers = np.empty((k0, 2))
    centers[0] = pts[rng.integers(n)]
    closest = ((pts - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k0):
        total = closest.sum()
        if total <= 0:
            centers[j] = pts[int(np.argmax(closest))]
        else:
            centers[j] = pts[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, ((pts - centers[j]) ** 2).sum(axis=1))

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        for j in range(k0):
            members = new_assign == j
            if members.any():
                centers[j] = pts[members].mean(axis=0)
            else:
                # revive an empty cluster at the farthest point
                far = int(np.argmax(d2[np.arange(n), new_assign]))
                centers[j] = pts[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return PatchLabeling(assign.astype(np.int32) + 1, k0)


def kmeans_cost(points: np.ndarray, labels0: np.ndarray) -> float:
    """Within-cluster sum of squared distances for a 0-based assignment."""
    cost = 0.0
    for j in np.unique(labels0):
        members = points[labels0 == j]
        cost += ((members - members.mean(axis=0)) ** 2).sum()
    return float(cost)


INITIALIZERS = ("slic", "patchwise", "seedwise", "spatial")


def make_initial_labels(image: Image, grid: PatchGrid, k0: int, method: str,
                        seed: int = 0, slic_params: SlicParams | None = None
                        ) -> SoftPatchLabels:
    """Dispatch on initializer name; hard strategies come back one-hot."""
    if method == "slic":
        return init_slic_soft(image, grid, k0, seed, slic_params)
    if method == "patchwise":
        return one_hot(init_patchwise_random(grid, k0, seed))
    if method == "seedwise":
        return one_hot(init_seedwise_random(grid, k0, seed))
    if method == "spatial":
        return one_hot(init_spatial_kmeans(grid, k0, seed))
    raise ValueError(f"unknown initializer {method!r}; expected one of {INITIALIZERS}")
