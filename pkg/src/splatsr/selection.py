"""Exact top-k Gaussian retrieval under per-Gaussian Mahalanobis distance.

Two query paths that must agree exactly:

* ``brute_force_top_k`` — exhaustive scan, the reference implementation;
* ``top_k`` — a uniform bucket grid over the centers plus concentric
  cell-ring expansion, pruned through the bound

      d_M(g, p) >= ||p - center(g)|| / sqrt(lam_max(Sigma_g))
                >= ||p - center(g)|| / s_max

  which lets a ring stop the search as soon as its minimum possible
  Euclidean distance exceeds d_k * s_max (d_k = current k-th best).
  The bound is strict at the stopping ring, so ties can never be lost.

Ties (equal distances) are broken by ascending flat Gaussian index in both
paths.  Both paths evaluate the quadratic form with the same expression, so
distances agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import ParameterError
from .gaussians import GaussianSet


@dataclass(frozen=True)
class SelectionResult:
    """Top-k indices with ascending Mahalanobis distances (ties: lower index first)."""

    indices: np.ndarray
    distances: np.ndarray


@dataclass(frozen=True)
class GaussianGridIndex:
    """Uniform bucket grid over Gaussian centers (CSR layout).

    ``cell_items[cell_start[c]:cell_start[c+1]]`` are the Gaussians whose
    center falls in cell c = iy * nx + ix.  ``s_max`` is the global spectral
    bound max_n sqrt(lam_max(Sigma_n)).
    """

    cell_start: np.ndarray
    cell_items: np.ndarray
    nx: int
    ny: int
    x0: float
    y0: float
    cell_size: float
    s_max: float

    @property
    def count(self) -> int:
        return int(self.cell_items.shape[0])


def default_cell_size(gs: GaussianSet) -> float:
    """One source-pixel cell: h = 2 / max(W, H)."""
    return 2.0 / max(gs.meta.width, gs.meta.height)


def build_index(gs: GaussianSet, cell_size: float | None = None) -> GaussianGridIndex:
    if gs.count == 0:
        raise ParameterError("cannot index an empty Gaussian set")
    h = default_cell_size(gs) if cell_size is None else float(cell_size)
    if not (h > 0.0):
        raise ParameterError(f"cell size must be positive, got {h}")
    # snap the origin to the h-lattice so cell boundaries are stable multiples of h
    x0 = float(np.floor(gs.x.min() / h) * h)
    y0 = float(np.floor(gs.y.min() / h) * h)
    nx = max(1, int(np.ceil((float(gs.x.max()) - x0) / h)) + 1)
    ny = max(1, int(np.ceil((float(gs.y.max()) - y0) / h)) + 1)
    ix = np.clip(np.floor((gs.x - x0) / h).astype(np.int64), 0, nx - 1)
    iy = np.clip(np.floor((gs.y - y0) / h).astype(np.int64), 0, ny - 1)
    cid = iy * nx + ix
    counts = np.bincount(cid, minlength=nx * ny)
    cell_start = np.zeros(nx * ny + 1, dtype=np.int64)
    np.cumsum(counts, out=cell_start[1:])
    cell_items = np.argsort(cid, kind="stable").astype(np.int64)
    s_max = float(np.sqrt(gs.lam_max.max()))
    return GaussianGridIndex(cell_start, cell_items, nx, ny, x0, y0, h, s_max)


# ---------------------------------------------------------------------------
# compiled query kernels
#
# Bounded max-heap keyed lexicographically by (squared distance, index): the
# root is the worst candidate currently kept, so ties resolve to the lowest
# index automatically.

@njit(cache=True, inline="always")
def _ranks_after(q1, i1, q2, i2):
    return q1 > q2 or (q1 == q2 and i1 > i2)


@njit(cache=True)
def _heap_push(heap_q, heap_i, size, q, idx):
    pos = size
    heap_q[pos] = q
    heap_i[pos] = idx
    while pos > 0:
        parent = (pos - 1) >> 1
        if _ranks_after(heap_q[pos], heap_i[pos], heap_q[parent], heap_i[parent]):
            heap_q[pos], heap_q[parent] = heap_q[parent], heap_q[pos]
            heap_i[pos], heap_i[parent] = heap_i[parent], heap_i[pos]
            pos = parent
        else:
            break
    return size + 1


@njit(cache=True)
def _heap_sift_down(heap_q, heap_i, size):
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        worst = pos
        if left < size and _ranks_after(heap_q[left], heap_i[left], heap_q[worst], heap_i[worst]):
            worst = left
        if right < size and _ranks_after(heap_q[right], heap_i[right], heap_q[worst], heap_i[worst]):
            worst = right
        if worst == pos:
            break
        heap_q[pos], heap_q[worst] = heap_q[worst], heap_q[pos]
        heap_i[pos], heap_i[worst] = heap_i[worst], heap_i[pos]
        pos = worst


@njit(cache=True, inline="always")
def _scan_cell(cid, cell_start, cell_items, ctr_x, ctr_y, ixx, ixy, iyy,
               qx, qy, k, heap_q, heap_i, size):
    for t in range(cell_start[cid], cell_start[cid + 1]):
        n = cell_items[t]
        dx = qx - ctr_x[n]
        dy = qy - ctr_y[n]
        q = ixx[n] * dx * dx + 2.0 * ixy[n] * dx * dy + iyy[n] * dy * dy
        if size < k:
            size = _heap_push(heap_q, heap_i, size, q, n)
        elif _ranks_after(heap_q[0], heap_i[0], q, n):
            heap_q[0] = q
            heap_i[0] = n
            _heap_sift_down(heap_q, heap_i, size)
    return size


@njit(cache=True)
def _query_topk(ctr_x, ctr_y, ixx, ixy, iyy,
                cell_start, cell_items, nx, ny, x0, y0, h, s_max,
                qx, qy, k, out_i, out_q):
    heap_q = np.empty(k, dtype=np.float64)
    heap_i = np.empty(k, dtype=np.int64)
    size = 0
    cx = int(np.floor((qx - x0) / h))
    cy = int(np.floor((qy - y0) / h))
    # rings beyond r_cover contain no grid cells
    r_cover = max(max(cx, nx - 1 - cx), max(cy, ny - 1 - cy))
    for ring in range(r_cover + 1):
        if size == k and ring >= 1:
            # cells on this ring are at least (ring-1)*h away in Euclidean
            # distance; beyond d_k * s_max nothing can beat or tie the heap
            bound = (ring - 1) * h
            if bound * bound > heap_q[0] * (s_max * s_max):
                break
        if ring == 0:
            if 0 <= cx < nx and 0 <= cy < ny:
                size = _scan_cell(cy * nx + cx, cell_start, cell_items,
                                  ctr_x, ctr_y, ixx, ixy, iyy,
                                  qx, qy, k, heap_q, heap_i, size)
            continue
        for gx in range(max(cx - ring, 0), min(cx + ring, nx - 1) + 1):
            gy = cy - ring
            if 0 <= gy < ny:
                size = _scan_cell(gy * nx + gx, cell_start, cell_items,
                                  ctr_x, ctr_y, ixx, ixy, iyy,
                                  qx, qy, k, heap_q, heap_i, size)
            gy = cy + ring
            if 0 <= gy < ny:
                size = _scan_cell(gy * nx + gx, cell_start, cell_items,
                                  ctr_x, ctr_y, ixx, ixy, iyy,
                                  qx, qy, k, heap_q, heap_i, size)
        for gy in range(max(cy - ring + 1, 0), min(cy + ring - 1, ny - 1) + 1):
            gx = cx - ring
            if 0 <= gx < nx:
                size = _scan_cell(gy * nx + gx, cell_start, cell_items,
                                  ctr_x, ctr_y, ixx, ixy, iyy,
                                  qx, qy, k, heap_q, heap_i, size)
            gx = cx + ring
            if 0 <= gx < nx:
                size = _scan_cell(gy * nx + gx, cell_start, cell_items,
                                  ctr_x, ctr_y, ixx, ixy, iyy,
                                  qx, qy, k, heap_q, heap_i, size)
    # heapsort extraction: worst first, filled from the back -> ascending
    for pos in range(size - 1, -1, -1):
        out_q[pos] = heap_q[0]
        out_i[pos] = heap_i[0]
        heap_q[0] = heap_q[pos]
        heap_i[0] = heap_i[pos]
        _heap_sift_down(heap_q, heap_i, pos)
    return size


@njit(cache=True, parallel=True)
def _batch_topk(ctr_x, ctr_y, ixx, ixy, iyy,
                cell_start, cell_items, nx, ny, x0, y0, h, s_max,
                pts, k, out_i, out_q):
    for p in prange(pts.shape[0]):
        _query_topk(ctr_x, ctr_y, ixx, ixy, iyy,
                    cell_start, cell_items, nx, ny, x0, y0, h, s_max,
                    pts[p, 0], pts[p, 1], k, out_i[p], out_q[p])


# ---------------------------------------------------------------------------
# public API

def _check_k(k: int):
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")


def top_k(index: GaussianGridIndex, gs: GaussianSet, point, k: int) -> SelectionResult:
    """Exact k nearest Gaussians (Mahalanobis) using the grid index."""
    _check_k(k)
    m = min(k, gs.count)
    out_i = np.empty((1, m), dtype=np.int64)
    out_q = np.empty((1, m), dtype=np.float64)
    pts = np.array([[point[0], point[1]]], dtype=np.float64)
    _batch_topk(gs.x, gs.y, gs.inv_xx, gs.inv_xy, gs.inv_yy,
                index.cell_start, index.cell_items, index.nx, index.ny,
                index.x0, index.y0, index.cell_size, index.s_max,
                pts, m, out_i, out_q)
    return SelectionResult(out_i[0], np.sqrt(out_q[0]))


def batch_top_k(index: GaussianGridIndex, gs: GaussianSet, points: np.ndarray, k: int):
    """Indexed selection for many query points.

    Returns (indices, distances) of shape (P, min(k, N)), rows sorted
    ascending with the same tie rule as ``top_k``.
    """
    _check_k(k)
    m = min(k, gs.count)
    pts = np.ascontiguousarray(points, dtype=np.float64)
    out_i = np.empty((pts.shape[0], m), dtype=np.int64)
    out_q = np.empty((pts.shape[0], m), dtype=np.float64)
    _batch_topk(gs.x, gs.y, gs.inv_xx, gs.inv_xy, gs.inv_yy,
                index.cell_start, index.cell_items, index.nx, index.ny,
                index.x0, index.y0, index.cell_size, index.s_max,
                pts, m, out_i, out_q)
    return out_i, np.sqrt(out_q)


def batch_brute_force(gs: GaussianSet, points: np.ndarray, k: int):
    """Exhaustive selection for many query points; same contract as batch_top_k."""
    _check_k(k)
    m = min(k, gs.count)
    pts = np.asarray(points, dtype=np.float64)
    npts = pts.shape[0]
    out_i = np.empty((npts, m), dtype=np.int64)
    out_q = np.empty((npts, m), dtype=np.float64)
    chunk = max(1, int(4_000_000 // max(1, gs.count)))
    for lo in range(0, npts, chunk):
        hi = min(npts, lo + chunk)
        dx = pts[lo:hi, 0:1] - gs.x[None, :]
        dy = pts[lo:hi, 1:2] - gs.y[None, :]
        q = gs.inv_xx[None, :] * dx * dx + 2.0 * gs.inv_xy[None, :] * dx * dy \
            + gs.inv_yy[None, :] * dy * dy
        # stable sort implements the ascending-index tie rule
        order = np.argsort(q, axis=1, kind="stable")[:, :m]
        out_i[lo:hi] = order
        out_q[lo:hi] = np.take_along_axis(q, order, axis=1)
    return out_i, np.sqrt(out_q)


def brute_force_top_k(gs: GaussianSet, point, k: int) -> SelectionResult:
    """Reference implementation: scan every Gaussian, sort by (distance, index)."""
    idx, dist = batch_brute_force(gs, np.array([[point[0], point[1]]]), k)
    return SelectionResult(idx[0], dist[0])
