"""SLIC-style superpixels over a learned feature field.

The distance between a pixel and a cluster center is
``D = (m / s) * D_s + D_h`` with ``D_s`` the Euclidean pixel distance and
``D_h`` the Euclidean distance between feature vectors. Centers only compete
for pixels within ``+-s`` of themselves (a 2s x 2s window). Every tie (in
assignment, seeding and merging) resolves to the lowest index.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import load_raster, save_raster
from .errors import DimensionMismatch, IoFailure, KTooLarge


@dataclass(frozen=True)
class SlicParams:
    n_segments: int
    compactness: float = 10.0
    max_iters: int = 10
    min_segment_frac: float = 0.25

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if not self.compactness > 0:
            raise ValueError("compactness must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.min_segment_frac < 1.0:
            raise ValueError("min_segment_frac must lie in (0, 1)")

    @classmethod
    def default_for(cls, height, width, **kw):
        """Roughly 16x16-pixel segments."""
        return cls(n_segments=max(1, math.ceil(height * width / 256)), **kw)


@dataclass(eq=False)
class SuperpixelMap:
    labels: np.ndarray        # (H, W) int32, 0..K'-1
    center_y: np.ndarray      # (K',) mean row
    center_x: np.ndarray      # (K',) mean column
    features: np.ndarray      # (K', U) feature centroids c_j
    counts: np.ndarray        # (K',) pixels per segment
    s: float = 0.0
    iterations: int = 0
    converged: bool = False
    # assignment state before connectivity enforcement, kept for inspection
    raw_labels: np.ndarray | None = field(default=None, repr=False)
    raw_centers: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_segments(self) -> int:
        return len(self.counts)


def slic_distance(pi, pj, hi, hj, m: float, s: float) -> float:
    """``(m/s) * ||pi - pj|| + ||hi - hj||`` for positions ``(x, y)`` and feature vectors."""
    if not s > 0:
        raise ValueError("s must be > 0")
    ds = math.hypot(pi[0] - pj[0], pi[1] - pj[1])
    dh = float(np.linalg.norm(np.asarray(hi, dtype=float) - np.asarray(hj, dtype=float)))
    return (m / s) * ds + dh


def grid_interval(height: int, width: int, k: int) -> float:
    return math.sqrt(height * width / k)


def feature_gradient(field_: np.ndarray) -> np.ndarray:
    """Squared central-difference gradient magnitude, edges replicated."""
    p = np.pad(field_, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return np.sum(gx * gx, axis=-1) + np.sum(gy * gy, axis=-1)


@dataclass(frozen=True)
class GridSeeds:
    rows: np.ndarray
    cols: np.ndarray
    s: float

    @property
    def count(self) -> int:
        return len(self.rows)


def init_centers(field_: np.ndarray, k: int) -> GridSeeds:
    """Regular-grid seeds with interval ``s = sqrt(H W / k)``.

    When ``s >= 3`` each seed moves to the lowest-gradient pixel of its 3x3
    neighbourhood (the seed itself wins ties, then raster order).
    """
    h, w = field_.shape[:2]
    if k > h * w:
        raise KTooLarge(f"requested {k} superpixels for {h * w} pixels")
    if k < 1:
        raise ValueError("k must be >= 1")
    s = grid_interval(h, w, k)
    ny = min(h, max(1, round(h / s)))
    nx = min(w, max(1, round(w / s)))
    ys = np.array([int((i + 0.5) * h / ny) for i in range(ny)])
    xs = np.array([int((j + 0.5) * w / nx) for j in range(nx)])
    rows, cols = (a.ravel() for a in np.meshgrid(ys, xs, indexing="ij"))
    if s >= 3:
        grad = feature_gradient(field_)
        offsets = [(0, 0)] + [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
        for i in range(len(rows)):
            best, by, bx = np.inf, rows[i], cols[i]
            for dy, dx in offsets:
                y, x = rows[i] + dy, cols[i] + dx
                if 0 <= y < h and 0 <= x < w and grad[y, x] < best:
                    best, by, bx = grad[y, x], y, x
            rows[i], cols[i] = by, bx
    return GridSeeds(rows.astype(np.int64), cols.astype(np.int64), s)


def segment_centroids(field_: np.ndarray, labels: np.ndarray, n: int | None = None):
    """Per-segment ``(counts, mean_row, mean_col, mean_features)``; sums run in pixel order."""
    h, w, u = field_.shape
    lab = labels.ravel()
    n = int(lab.max()) + 1 if n is None else n
    counts = np.bincount(lab, minlength=n).astype(np.int64)
    yy, xx = np.divmod(np.arange(h * w), w)
    denom = np.maximum(counts, 1)
    my = np.bincount(lab, weights=yy.astype(np.float64), minlength=n) / denom
    mx = np.bincount(lab, weights=xx.astype(np.float64), minlength=n) / denom
    flat = field_.reshape(-1, u)
    feats = np.stack([np.bincount(lab, weights=flat[:, j], minlength=n) for j in range(u)], axis=-1)
    return counts, my, mx, feats / denom[:, None]


def _nearest_center_everywhere(field_, cy, cx, cfeat, s, m, mask):
    """Full-search fallback for pixels outside every center window."""
    ys, xs = np.nonzero(mask)
    out = np.empty(len(ys), dtype=np.int32)
    for i, (y, x) in enumerate(zip(ys, xs)):
        ds = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
        dh = np.sqrt(np.sum((field_[y, x] - cfeat) ** 2, axis=1))
        out[i] = int(np.argmin((m / s) * ds + dh))
    return ys, xs, out


def slic_segment(field_: np.ndarray, params: SlicParams) -> SuperpixelMap:
    """Segment an ``(H, W, U)`` feature field into connected superpixels."""
    field_ = np.ascontiguousarray(field_, dtype=np.float64)
    if field_.ndim != 3:
        raise DimensionMismatch("feature field must be (H, W, U)")
    if not np.isfinite(field_).all():
        raise ValueError("feature field contains non-finite values")
    seeds = init_centers(field_, params.n_segments)
    s, m = seeds.s, float(params.compactness)
    cy = seeds.rows.astype(np.float64)
    cx = seeds.cols.astype(np.float64)
    cfeat = np.ascontiguousarray(field_[seeds.rows, seeds.cols])
    n = seeds.count

    labels = None
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        new, _ = _kernels.slic_assign(field_, cy, cx, cfeat, s, m)
        orphan = new < 0
        if orphan.any():
            ys, xs, lab = _nearest_center_everywhere(field_, cy, cx, cfeat, s, m, orphan)
            new[ys, xs] = lab
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        counts, my, mx, feats = segment_centroids(field_, labels, n)
        live = counts > 0
        cy = np.where(live, my, cy)
        cx = np.where(live, mx, cx)
        cfeat = np.ascontiguousarray(np.where(live[:, None], feats, cfeat))

    raw = labels.copy()
    raw_centers = np.column_stack([cy, cx, cfeat])
    final = enforce_connectivity(labels, params.min_segment_frac, s, field_)
    counts, my, mx, feats = segment_centroids(field_, final)
    return SuperpixelMap(final, my, mx, feats, counts, s=s, iterations=it,
                         converged=converged, raw_labels=raw, raw_centers=raw_centers)


def enforce_connectivity(labels: np.ndarray, min_segment_frac: float, s: float,
                         field_: np.ndarray) -> np.ndarray:
    """Split segments into 4-connected pieces and absorb the small ones.

    Pieces smaller than ``min_segment_frac * s**2`` are merged, smallest first,
    into the adjacent piece whose feature centroid is nearest. The result is
    renumbered 0.. in raster order of each segment's first pixel.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    h, w = labels.shape
    comp, ncomp = _kernels.connected_components(labels)
    u = field_.shape[-1]
    flat = comp.ravel()
    sizes = np.bincount(flat, minlength=ncomp).astype(np.int64)
    sums = np.stack([np.bincount(flat, weights=field_.reshape(-1, u)[:, j], minlength=ncomp)
                     for j in range(u)], axis=-1)

    neighbours: list[set[int]] = [set() for _ in range(ncomp)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = a != b
        for i, j in zip(a[diff].tolist(), b[diff].tolist()):
            neighbours[i].add(j)
            neighbours[j].add(i)

    min_size = min_segment_frac * s * s
    parent = list(range(ncomp))
    active = ncomp
    heap = [(int(sizes[c]), c) for c in range(ncomp) if sizes[c] < min_size]
    heapq.heapify(heap)
    while heap and active > 1:
        size, c = heapq.heappop(heap)
        if parent[c] != c or size != sizes[c] or not neighbours[c]:
            continue
        centroid = sums[c] / sizes[c]
        target, best = -1, np.inf
        for nb in sorted(neighbours[c]):
            d = float(np.sum((sums[nb] / sizes[nb] - centroid) ** 2))
            if d < best:
                target, best = nb, d
        parent[c] = target
        sizes[target] += sizes[c]
        sums[target] += sums[c]
        for nb in neighbours[c]:
            neighbours[nb].discard(c)
            if nb != target:
                neighbours[nb].add(target)
                neighbours[target].add(nb)
        neighbours[c] = set()
        active -= 1
        if sizes[target] < min_size:
            heapq.heappush(heap, (int(sizes[target]), target))

    def root(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    roots = np.array([root(c) for c in range(ncomp)], dtype=np.int64)
    merged = roots[flat]
    _, first = np.unique(merged, return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(merged.max() + 1, dtype=np.int32)
    remap[np.unique(merged)[order]] = np.arange(len(order), dtype=np.int32)
    return remap[merged].reshape(h, w)


def save_segments(sp: SuperpixelMap, path) -> None:
    """Segment ids as an i32 PLSR1 raster plus a ``<path>.centers.csv`` table."""
    save_raster(path, sp.labels, kind="segments", dtype="i32", s=sp.s)
    try:
        with open(str(path) + ".centers.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            u = sp.features.shape[1]
            writer.writerow(["id", "x", "y", "count"] + [f"c{j + 1}" for j in range(u)])
            for j in range(sp.n_segments):
                writer.writerow([j, repr(float(sp.center_x[j])), repr(float(sp.center_y[j])),
                                 int(sp.counts[j])] + [repr(float(v)) for v in sp.features[j]])
    except OSError as exc:
        raise IoFailure(f"cannot write centers for {path}: {exc}") from exc


def load_segments(path) -> SuperpixelMap:
    labels, header = load_raster(path, kind="segments")
    labels = labels.astype(np.int32)
    rows = []
    try:
        with open(str(path) + ".centers.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
    except OSError:
        pass
    if rows:
        table = np.array([[float(v) for v in r] for r in rows])
        return SuperpixelMap(labels, table[:, 2], table[:, 1], table[:, 4:],
                             table[:, 3].astype(np.int64), s=float(header.get("s", 0.0)))
    n = int(labels.max()) + 1
    counts = np.bincount(labels.ravel(), minlength=n)
    return SuperpixelMap(labels, np.zeros(n), np.zeros(n), np.zeros((n, 0)), counts,
                         s=float(header.get("s", 0.0)))
