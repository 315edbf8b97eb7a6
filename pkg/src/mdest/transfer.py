"""Transfer grids: common refinements of an interface grid and a coupled grid.

Every transfer cell lies in exactly one cell of the source grid (the
interface grid) and one cell of the destination grid (internal boundary or
lower-dimensional subdomain). Point grids give a trivial one-cell transfer
grid, segment grids are merged by sorting breakpoints, and triangle grids are
intersected cell pair by cell pair.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import CoverageMismatchError, DegenerateClipError, OutOfDomainError, TransferError
from .mdgrid import SimplicialGrid

REL_TOL = 1e-10


class TransferGrid(SimplicialGrid):
    """Simplicial grid whose cells carry parent indices in two grids."""

    def __init__(self, dim, nodes, cells, src: SimplicialGrid, dst: SimplicialGrid,
                 src_parent, dst_parent, name: str = ""):
        super().__init__(dim, nodes, cells, name)
        self.src = src
        self.dst = dst
        self.src_parent = np.asarray(src_parent, dtype=int)
        self.dst_parent = np.asarray(dst_parent, dtype=int)
        if len(self.src_parent) != self.num_cells or len(self.dst_parent) != self.num_cells:
            raise TransferError("one parent pair per transfer cell is required")

    def parent(self, which: str) -> np.ndarray:
        if which == "src":
            return self.src_parent
        if which == "dst":
            return self.dst_parent
        raise ValueError(which)

    def grid_of(self, which: str) -> SimplicialGrid:
        return self.src if which == "src" else self.dst

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "cells": [
                {
                    "vertices": self.cell_vertices[k].tolist(),
                    "src_cell": int(self.src_parent[k]),
                    "dst_cell": int(self.dst_parent[k]),
                    "measure": float(self.cell_volumes[k]),
                }
                for k in range(self.num_cells)
            ],
        }


def build_transfer(src: SimplicialGrid, dst: SimplicialGrid) -> TransferGrid:
    if src.dim != dst.dim:
        raise TransferError(f"cannot intersect a {src.dim}D grid with a {dst.dim}D grid")
    return {0: build_transfer_0d, 1: build_transfer_1d, 2: build_transfer_2d}[src.dim](src, dst)


def build_transfer_0d(src: SimplicialGrid, dst: SimplicialGrid) -> TransferGrid:
    scale = max(1.0, float(np.abs(src.nodes).max()))
    if np.linalg.norm(src.nodes[0] - dst.nodes[0]) > REL_TOL * scale:
        raise CoverageMismatchError("point grids are at different locations")
    return TransferGrid(0, src.nodes[:1], [[0]], src, dst, [0], [0])


def _locate_1d(s_lo: np.ndarray, s_hi: np.ndarray, s: np.ndarray, tol: float) -> np.ndarray:
    """Lowest-index interval containing each parameter value, -1 if none."""
    inside = (s[:, None] >= s_lo[None] - tol) & (s[:, None] <= s_hi[None] + tol)
    idx = np.argmax(inside, axis=1)
    idx[~inside.any(axis=1)] = -1
    return idx


def build_transfer_1d(src: SimplicialGrid, dst: SimplicialGrid) -> TransferGrid:
    """Merge two segment grids of the same line segment by their breakpoints.

    Raises
    ------
    CoverageMismatchError
        If the grids are not collinear or span different segments.
    """
    v = src.cell_vertices[0]
    t = (v[1] - v[0]) / np.linalg.norm(v[1] - v[0])
    n = np.array([-t[1], t[0]])
    origin = v[0]
    s_src = (src.nodes - origin) @ t
    s_dst = (dst.nodes - origin) @ t
    length = s_src.max() - s_src.min()
    tol = REL_TOL * max(length, 1e-300)
    if np.abs((np.vstack([src.nodes, dst.nodes]) - origin) @ n).max() > tol:
        raise CoverageMismatchError("segment grids are not collinear")
    if abs(s_src.min() - s_dst.min()) > tol or abs(s_src.max() - s_dst.max()) > tol:
        raise CoverageMismatchError(
            f"grids span [{s_src.min():.6g}, {s_src.max():.6g}] and "
            f"[{s_dst.min():.6g}, {s_dst.max():.6g}]"
        )
    # union of breakpoints; coordinates of the first occurrence are kept exactly
    s_all = np.concatenate([s_src, s_dst])
    x_all = np.vstack([src.nodes, dst.nodes])
    order = np.argsort(s_all, kind="stable")
    keep = [order[0]]
    for k in order[1:]:
        if s_all[k] - s_all[keep[-1]] > tol:
            keep.append(k)
    keep = np.array(keep)
    s_b = s_all[keep]
    nodes = x_all[keep]
    cells = np.column_stack([np.arange(len(keep) - 1), np.arange(1, len(keep))])
    mid = 0.5 * (s_b[:-1] + s_b[1:])

    def parents(grid, s_nodes):
        sv = s_nodes[grid.cells]
        p = _locate_1d(sv.min(axis=1), sv.max(axis=1), mid, 0.0)
        if np.any(p < 0):
            raise CoverageMismatchError(f"grid {grid.name!r} has gaps")
        return p

    return TransferGrid(1, nodes, cells, src, dst, parents(src, s_src), parents(dst, s_dst))


# ---------------------------------------------------------------------------
# Triangle intersection
# ---------------------------------------------------------------------------


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Intersection of two counter-clockwise convex polygons (Sutherland-Hodgman)."""
    out = [np.asarray(p, float) for p in subject]
    m = len(clip)
    for k in range(m):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % m]
        e = b - a

        def side(p):
            return e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0])

        inp, out = out, []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(prev + (cur - prev) * (sp / (sp - sc)))
                out.append(cur)
            elif sp >= 0:
                if sp > 0:
                    out.append(prev + (cur - prev) * (sp / (sp - sc)))
            prev, sp = cur, sc
    return np.array(out).reshape(-1, 2)


def _dedupe_ring(poly: np.ndarray, tol: float) -> np.ndarray:
    if len(poly) == 0:
        return poly
    keep = [poly[0]]
    for p in poly[1:]:
        if np.linalg.norm(p - keep[-1]) > tol:
            keep.append(p)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= tol:
        keep.pop()
    return np.array(keep)


def _ring_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def intersect_triangles(A: np.ndarray, B: np.ndarray, area_tol: float, tol: float) -> list[np.ndarray]:
    """Triangulated intersection of two triangles (empty list if degenerate).

    Triangles are returned as (3, 2) counter-clockwise vertex arrays. A
    polygon with four or more vertices is split into a fan around its vertex
    centroid.
    """
    def ccw(T):
        return T if _ring_area(T) > 0 else T[::-1]

    P = clip_convex(ccw(A), ccw(B))
    if len(P) == 0:
        return []
    area = abs(_ring_area(P)) if len(P) >= 3 else 0.0
    if area <= area_tol:
        return []
    P = _dedupe_ring(P, tol)
    if len(P) < 3:
        raise DegenerateClipError(f"clip area {area:.3e} with only {len(P)} distinct vertices")
    if len(P) == 3:
        return [ccw(P)]
    c = P.mean(axis=0)
    tris = []
    for k in range(len(P)):
        T = np.array([c, P[k], P[(k + 1) % len(P)]])
        if _ring_area(T) > 0:
            tris.append(T)
    return tris


def _cluster_points(points: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge points closer than ``tol``; the lowest index represents a cluster."""
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(points).query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(points))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    return points[uniq], inverse


def build_transfer_2d(src: SimplicialGrid, dst: SimplicialGrid) -> TransferGrid:
    """Intersect two triangulations of the same polygon.

    Raises
    ------
    CoverageMismatchError
        If the grids do not cover the same region.
    DegenerateClipError
        If a clipped polygon has positive area but fewer than three vertices.
    """
    a_src, a_dst = src.total_measure(), dst.total_measure()
    scale = max(np.ptp(np.vstack([src.nodes, dst.nodes]), axis=0).max(), 1e-300)
    tol = REL_TOL * scale
    if abs(a_src - a_dst) > 1e-12 * max(a_src, a_dst) * 10:
        raise CoverageMismatchError(f"grids cover areas {a_src:.15g} and {a_dst:.15g}")
    Vs, Vd = src.cell_vertices, dst.cell_vertices
    lo_s, hi_s = Vs.min(axis=1), Vs.max(axis=1)
    lo_d, hi_d = Vd.min(axis=1), Vd.max(axis=1)
    vol_s, vol_d = src.cell_volumes, dst.cell_volumes

    tris, sp, dp = [], [], []
    for k in range(src.num_cells):
        cand = np.flatnonzero(np.all(lo_d <= hi_s[k] + tol, axis=1) & np.all(hi_d >= lo_s[k] - tol, axis=1))
        for m in cand:
            area_tol = 1e-12 * min(vol_s[k], vol_d[m])
            for T in intersect_triangles(Vs[k], Vd[m], area_tol, tol):
                tris.append(T)
                sp.append(k)
                dp.append(m)
    if not tris:
        raise CoverageMismatchError("triangulations do not intersect")
    tris = np.array(tris)
    pts = np.vstack([src.nodes, dst.nodes, tris.reshape(-1, 2)])
    nodes, inverse = _cluster_points(pts, tol)
    off = src.num_nodes + dst.num_nodes
    cells = inverse[off:].reshape(-1, 3)
    total = float(sum(abs(_ring_area(T)) for T in tris))
    if abs(total - a_src) > 1e-12 * a_src * 10:
        raise CoverageMismatchError(f"transfer cells cover {total:.15g}, source grid {a_src:.15g}")
    return TransferGrid(2, nodes, cells, src, dst, sp, dp)


# ---------------------------------------------------------------------------
# Queries and output
# ---------------------------------------------------------------------------


def locate_parents(tg: TransferGrid, point) -> tuple[int, int]:
    """Parent pair of the transfer cell containing ``point``.

    For segment transfer grids a scalar is read as the arc length measured
    from the first transfer node. Ties on shared boundaries go to the lowest
    transfer cell index.
    """
    p = np.asarray(point, dtype=float)
    if p.ndim == 0:
        if tg.dim != 1:
            raise OutOfDomainError("scalar positions need a segment transfer grid")
        v = tg.cell_vertices[0]
        t = (v[1] - v[0]) / np.linalg.norm(v[1] - v[0])
        p = tg.nodes[0] + float(p) * t
    scale = max(float(np.ptp(tg.nodes, axis=0).max()), 1.0)
    k = int(tg.locate(p[None], tol=REL_TOL * scale)[0])
    if k < 0:
        raise OutOfDomainError(f"point {p.tolist()} lies outside the transfer grid")
    return int(tg.src_parent[k]), int(tg.dst_parent[k])


def check_transfer(tg: TransferGrid, measure: float | None = None) -> dict:
    """Partition, refinement and node-inclusion diagnostics of a transfer grid."""
    ref = tg.src.total_measure() if measure is None else measure
    out = {
        "measure_error": abs(tg.total_measure() - ref) / (ref if tg.dim > 0 else 1.0),
        "refinement": tg.num_cells >= max(tg.src.num_cells, tg.dst.num_cells),
    }
    if tg.dim == 0:
        out["node_inclusion"] = True
        return out
    scale = max(float(np.ptp(tg.nodes, axis=0).max()), 1.0)
    tree = cKDTree(tg.nodes)
    d, _ = tree.query(np.vstack([tg.src.nodes, tg.dst.nodes]))
    out["node_inclusion"] = bool(d.max() <= REL_TOL * scale)
    return out


def dump_transfer(grids: dict, path: str | Path) -> None:
    """Write transfer cells with parent tags as JSON, keyed by ``str(key)``."""
    data = {str(k): tg.to_dict() for k, tg in grids.items()}
    Path(path).write_text(json.dumps(data, indent=1))
