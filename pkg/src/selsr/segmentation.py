"""Graph-based over-segmentation via greedy union-find merging.

Pixels form an 8-connected grid graph weighted by Euclidean color distance
after Gaussian smoothing; edges are processed in ascending weight order
(ties broken by construction order) and two components merge when the edge
weight does not exceed either component's internal difference plus k/size.
A post-pass splits results back into 4-connected pieces and absorbs
components below the minimum size into their most similar neighbor.

Segments are the task-grouping unit for figure-ground separation, so the
defaults aim to over-segment rather than find object-level regions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import imagecore
from .errors import FormatError
from .imagecore import RasterImage

_SEG_MAGIC = b"SSRSEG01"


@dataclass
class SegmentationParams:
    smoothing_sigma: float = 0.8
    threshold_k: float = 100.0 / 255.0
    min_segment_size: int | None = None  # None -> (H*W)//1000, at least 1

    def __post_init__(self):
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be >= 0")
        if self.threshold_k <= 0:
            raise ValueError("threshold_k must be > 0")
        if self.min_segment_size is not None and self.min_segment_size < 1:
            raise ValueError("min_segment_size must be >= 1")


@dataclass
class SegmentMap:
    """Per-pixel labels 0..count-1; every segment is 4-connected."""

    labels: np.ndarray  # (H, W) int32
    count: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 2:
            raise ValueError("labels must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)

    def segment_pixels(self, g: int) -> np.ndarray:
        """(N, 2) array of (row, col) coordinates of segment g's pixels."""
        if not 0 <= g < self.count:
            raise ValueError(f"segment id {g} out of range 0..{self.count - 1}")
        return np.argwhere(self.labels == g)


class _DisjointSet:
    """Array-backed union-find with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x: int) -> int:
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, a: int, b: int) -> int:
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


def _grid_edges(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """8-connected edge endpoints in fixed construction order.

    Four row-major blocks: right, down, down-right, down-left. The stable
    weight sort later preserves this order for equal weights.
    """
    idx = np.arange(h * w).reshape(h, w)
    pairs = [
        (idx[:, :-1], idx[:, 1:]),
        (idx[:-1, :], idx[1:, :]),
        (idx[:-1, :-1], idx[1:, 1:]),
        (idx[:-1, 1:], idx[1:, :-1]),
    ]
    a = np.concatenate([p[0].ravel() for p in pairs])
    b = np.concatenate([p[1].ravel() for p in pairs])
    return a, b


def _smooth(img: RasterImage, sigma: float) -> np.ndarray:
    a = img.data
    if sigma > 0:
        a = gaussian_filter1d(a, sigma, axis=0, mode="nearest")
        a = gaussian_filter1d(a, sigma, axis=1, mode="nearest")
    return a


def _split_4connected(labels8: np.ndarray) -> np.ndarray:
    """Relabel so every component is 4-connected (diagonal-only links cut)."""
    h, w = labels8.shape
    ds = _DisjointSet(h * w)
    idx = np.arange(h * w).reshape(h, w)
    same_r = labels8[:, :-1] == labels8[:, 1:]
    same_d = labels8[:-1, :] == labels8[1:, :]
    for a, b in zip(idx[:, :-1][same_r].ravel(), idx[:, 1:][same_r].ravel()):
        ra, rb = ds.find(a), ds.find(b)
        if ra != rb:
            ds.union(ra, rb)
    for a, b in zip(idx[:-1, :][same_d].ravel(), idx[1:, :][same_d].ravel()):
        ra, rb = ds.find(a), ds.find(b)
        if ra != rb:
            ds.union(ra, rb)
    roots = np.array([ds.find(i) for i in range(h * w)])
    _, out = np.unique(roots, return_inverse=True)
    return out.reshape(h, w)


def _merge_small(labels: np.ndarray, color: np.ndarray, min_size: int) -> np.ndarray:
    """Absorb components smaller than min_size into the 4-adjacent neighbor
    with the closest mean color; smallest components first.

    Uses a lazy min-heap keyed by (size, id) so stale entries are skipped
    and re-pushed after growth; the merge order is identical to repeatedly
    scanning for the globally smallest undersized component.
    """
    import heapq

    h, w = labels.shape
    flat = labels.ravel()
    count = int(flat.max()) + 1
    sizes = np.bincount(flat, minlength=count).astype(np.int64)
    csum = np.zeros((count, color.shape[2]))
    np.add.at(csum, flat, color.reshape(-1, color.shape[2]))

    neighbors: list[set[int]] = [set() for _ in range(count)]
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], axis=1), axis=0) if diff.any() else []
        for x, y in pairs:
            neighbors[int(x)].add(int(y))
            neighbors[int(y)].add(int(x))

    merged_into = np.arange(count)

    def resolve(g):
        while merged_into[g] != g:
            g = merged_into[g]
        return g

    heap = [(int(sizes[g]), g) for g in range(count) if sizes[g] < min_size]
    heapq.heapify(heap)
    while heap:
        size_key, g = heapq.heappop(heap)
        if merged_into[g] != g or sizes[g] != size_key or sizes[g] >= min_size:
            continue  # stale entry
        if not neighbors[g]:
            continue  # isolated undersized component: nothing to merge into
        mean_g = csum[g] / sizes[g]
        best, best_d = -1, np.inf
        for nb in sorted(neighbors[g]):
            d = float(np.linalg.norm(mean_g - csum[nb] / sizes[nb]))
            if d < best_d:
                best, best_d = nb, d
        merged_into[g] = best
        sizes[best] += sizes[g]
        csum[best] += csum[g]
        neighbors[best] |= neighbors[g]
        neighbors[best].discard(best)
        neighbors[best].discard(g)
        for nb in neighbors[g]:
            if nb != best:
                neighbors[nb].discard(g)
                neighbors[nb].add(best)
        neighbors[g] = set()
        if sizes[best] < min_size:
            heapq.heappush(heap, (int(sizes[best]), int(best)))

    final = np.array([resolve(g) for g in range(count)])
    return final[labels]


def _relabel_scan_order(labels: np.ndarray) -> tuple[np.ndarray, int]:
    flat = labels.ravel()
    vals, first_idx = np.unique(flat, return_index=True)
    lut = np.zeros(int(vals.max()) + 1, dtype=np.int32)
    lut[vals[np.argsort(first_idx)]] = np.arange(len(vals), dtype=np.int32)
    return lut[labels], len(vals)


def oversegment(img: RasterImage, params: SegmentationParams | None = None) -> SegmentMap:
    """Greedy graph-based over-segmentation of one image.

    Deterministic for fixed input and parameters: edges are sorted with a
    stable sort over a fixed construction order, and the small-component
    pass processes components smallest-first.
    """
    params = params or SegmentationParams()
    h, w = img.height, img.width
    min_size = params.min_segment_size
    if min_size is None:
        min_size = max(1, (h * w) // 1000)

    smooth = _smooth(img, params.smoothing_sigma)
    ea, eb = _grid_edges(h, w)
    cflat = smooth.reshape(-1, img.channels)
    weights = np.sqrt(((cflat[ea] - cflat[eb]) ** 2).sum(axis=1))
    order = np.argsort(weights, kind="stable")

    ds = _DisjointSet(h * w)
    internal = np.zeros(h * w)
    k = params.threshold_k
    for e in order:
        a, b = ds.find(int(ea[e])), ds.find(int(eb[e]))
        if a == b:
            continue
        wgt = weights[e]
        if wgt <= min(internal[a] + k / ds.size[a], internal[b] + k / ds.size[b]):
            root = ds.union(a, b)
            internal[root] = wgt

    roots = np.array([ds.find(i) for i in range(h * w)], dtype=np.int64)
    labels = _split_4connected(roots.reshape(h, w))
    labels = _merge_small(labels, smooth, min_size)
    labels, count = _relabel_scan_order(labels)
    return SegmentMap(labels, count)


def segment_adjacency(seg: SegmentMap) -> list[list[int]]:
    """Symmetric adjacency: segments sharing a 4-neighbor pixel pair."""
    lab = seg.labels
    adj: list[set[int]] = [set() for _ in range(seg.count)]
    for a, b in ((lab[:, :-1], lab[:, 1:]), (lab[:-1, :], lab[1:, :])):
        diff = a != b
        pairs = np.unique(np.stack([a[diff], b[diff]], axis=1), axis=0) if diff.any() else []
        for x, y in pairs:
            adj[int(x)].add(int(y))
            adj[int(y)].add(int(x))
    return [sorted(s) for s in adj]


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def save_segment_labels(seg: SegmentMap, path) -> None:
    """Flat int32 label file: magic SSRSEG01, then H, W (LE 32-bit), then
    row-major labels."""
    h, w = seg.shape
    with open(path, "wb") as fh:
        fh.write(_SEG_MAGIC)
        fh.write(struct.pack("<ii", h, w))
        fh.write(seg.labels.astype("<i4").tobytes())


def load_segment_labels(path) -> SegmentMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _SEG_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {_SEG_MAGIC.decode()}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    h, w = struct.unpack("<ii", blob[8:16])
    need = 16 + 4 * h * w
    if h <= 0 or w <= 0 or len(blob) != need:
        raise FormatError(f"{path}: size mismatch (expected {need} bytes)")
    labels = np.frombuffer(blob[16:], dtype="<i4").reshape(h, w)
    return SegmentMap(labels.copy(), int(labels.max()) + 1)


def save_segment_png(seg: SegmentMap, path) -> None:
    """False-color rendering with a seeded palette."""
    rng = np.random.default_rng(12345)
    palette = rng.uniform(0.15, 1.0, size=(seg.count, 3))
    imagecore.save_image(RasterImage(palette[seg.labels]), path)
