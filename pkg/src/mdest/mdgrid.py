"""Simplicial grids of intrinsic dimension 0, 1 and 2 embedded in the plane.

Besides the grid container this module generates matching grid bundles for a
mixed-dimensional domain (structured criss-cross triangulation with fracture
lines resolved as split edges), extracts internal boundary grids, and
implements the node perturbation used to create non-matching couplings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    EmptyBoundaryError,
    InvalidGridError,
    InvalidPerturbationError,
    MeshGenerationError,
)
from .mdgeom import Geometry, MdDomain, on_segment

FACE_INTERIOR = 0
FACE_DIRICHLET = 1
FACE_NEUMANN = 2
FACE_INTERNAL = 3

_TAG_NAMES = {FACE_DIRICHLET: "dirichlet", FACE_NEUMANN: "neumann"}


class SimplicialGrid:
    """Conforming simplicial partition of a point, segment or polygon.

    Parameters
    ----------
    dim : int
        Intrinsic dimension of the cells (0, 1 or 2).
    nodes : array_like, (n_nodes, 2)
        Node coordinates in the plane.
    cells : array_like, (n_cells, dim + 1)
        Node indices of each simplex. Triangles must be counter-clockwise.

    Faces are the codimension-one sub-simplices: edges for triangles and
    points for segments. Face ``i`` of a cell is the one opposite its local
    vertex ``i``. Every face has a fixed unit normal ``face_normals``; the
    orientation of that normal relative to a cell is ``cell_face_signs``
    (+1 if it points out of the cell).
    """

    def __init__(self, dim: int, nodes, cells, name: str = "", validate: bool = True):
        self.dim = int(dim)
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.cells = np.asarray(cells, dtype=int).reshape(-1, self.dim + 1)
        self.name = name
        if validate:
            self.validate()

    def __repr__(self) -> str:
        return (f"SimplicialGrid(dim={self.dim}, nodes={self.num_nodes}, "
                f"cells={self.num_cells}, name={self.name!r})")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    # -- geometry ----------------------------------------------------------

    @cached_property
    def cell_vertices(self) -> np.ndarray:
        return self.nodes[self.cells]

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        v = self.cell_vertices
        if self.dim == 0:
            return np.ones(self.num_cells)
        if self.dim == 1:
            return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def cell_volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.cell_vertices.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_K: segment length or longest triangle edge (0 for points)."""
        v = self.cell_vertices
        if self.dim == 0:
            return np.zeros(self.num_cells)
        if self.dim == 1:
            return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        edges = [np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1) for i in range(3)]
        return np.max(edges, axis=0)

    @cached_property
    def inradii(self) -> np.ndarray:
        v = self.cell_vertices
        if self.dim < 2:
            return self.diameters.copy()
        perim = sum(np.linalg.norm(v[:, (i + 1) % 3] - v[:, i], axis=1) for i in range(3))
        return 2.0 * self.cell_volumes / perim

    @cached_property
    def bary_gradients(self) -> np.ndarray:
        """Tangential gradients of the barycentric coordinates, (n_cells, dim+1, 2)."""
        if self.dim == 0:
            return np.zeros((self.num_cells, 1, 2))
        v = self.cell_vertices
        J = np.stack([v[:, k + 1] - v[:, 0] for k in range(self.dim)], axis=2)  # (M, 2, d)
        Jp = np.linalg.pinv(J)  # (M, d, 2)
        g0 = -Jp.sum(axis=1, keepdims=True)
        return np.concatenate([g0, Jp], axis=1)

    def barycentric(self, cells: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of points ``X`` (n, 2) w.r.t. ``cells`` (n,)."""
        # Ratios of signed sub-measures: a point on a vertex gets exact 0/1
        # coordinates, which keeps the identity on matching grids at roundoff.
        cells = np.asarray(cells, dtype=int)
        X = np.atleast_2d(X)
        if self.dim == 0:
            return np.ones((len(cells), 1))
        v = self.cell_vertices[cells]
        if self.dim == 1:
            e = v[:, 1] - v[:, 0]
            L2 = np.einsum("nk,nk->n", e, e)
            lam0 = np.einsum("nk,nk->n", v[:, 1] - X, e) / L2
            lam1 = np.einsum("nk,nk->n", X - v[:, 0], e) / L2
            return np.column_stack([lam0, lam1])

        def area(a, b, c):
            return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])

        tot = area(v[:, 0], v[:, 1], v[:, 2])
        return np.column_stack([
            area(X, v[:, 1], v[:, 2]) / tot,
            area(v[:, 0], X, v[:, 2]) / tot,
            area(v[:, 0], v[:, 1], X) / tot,
        ])

    def locate(self, X: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """Index of a cell containing each point (lowest index on ties), -1 if none."""
        X = np.atleast_2d(X)
        out = np.full(len(X), -1)
        scale = max(self.diameters.max(initial=0.0), 1.0)
        for k in range(self.num_cells):
            todo = out < 0
            if not todo.any():
                break
            lam = self.barycentric(np.full(todo.sum(), k), X[todo])
            ok = lam.min(axis=1) >= -tol
            if self.dim < 2:
                # barycentric coordinates ignore the normal offset of a segment
                rec = np.einsum("na,ak->nk", lam, self.cell_vertices[k])
                ok &= np.linalg.norm(rec - X[todo], axis=1) <= tol * scale
            idx = np.flatnonzero(todo)[ok]
            out[idx] = k
        return out

    # -- topology ----------------------------------------------------------

    @cached_property
    def _topology(self) -> dict:
        d = self.dim
        M = self.num_cells
        if d == 0:
            return dict(faces=np.zeros((0, 0), int), cell_faces=np.zeros((M, 1), int) - 1,
                        face_cells=np.zeros((0, 2), int))
        local = [[k for k in range(d + 1) if k != i] for i in range(d + 1)]
        sub = np.stack([np.sort(self.cells[:, loc], axis=1) for loc in local], axis=1)  # (M, d+1, d)
        flat = sub.reshape(-1, d)
        faces, inv = np.unique(flat, axis=0, return_inverse=True)
        inv = inv.reshape(M, d + 1)
        face_cells = np.full((len(faces), 2), -1)
        counts = np.zeros(len(faces), dtype=int)
        for c in range(M):
            for i in range(d + 1):
                f = inv[c, i]
                if counts[f] >= 2:
                    raise InvalidGridError(f"face {f} shared by more than two cells")
                face_cells[f, counts[f]] = c
                counts[f] += 1
        return dict(faces=faces, cell_faces=inv, face_cells=face_cells)

    @property
    def faces(self) -> np.ndarray:
        return self._topology["faces"]

    @property
    def cell_faces(self) -> np.ndarray:
        return self._topology["cell_faces"]

    @property
    def face_cells(self) -> np.ndarray:
        return self._topology["face_cells"]

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def face_centers(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((0, 2))
        return self.nodes[self.faces].mean(axis=1)

    @cached_property
    def face_measures(self) -> np.ndarray:
        if self.dim == 2:
            p = self.nodes[self.faces]
            return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        return np.ones(self.num_faces)

    @cached_property
    def face_normals(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((0, 2))
        if self.dim == 2:
            p = self.nodes[self.faces]
            e = p[:, 1] - p[:, 0]
            n = np.column_stack([e[:, 1], -e[:, 0]])
            return n / np.linalg.norm(n, axis=1)[:, None]
        first = self.face_cells[:, 0]
        v = self.cell_vertices[first]
        t = v[:, 1] - v[:, 0]
        return t / np.linalg.norm(t, axis=1)[:, None]

    @cached_property
    def cell_face_signs(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((self.num_cells, 1))
        fc = self.face_centers[self.cell_faces]  # (M, d+1, 2)
        n = self.face_normals[self.cell_faces]
        s = np.sign(np.einsum("mfk,mfk->mf", fc - self.cell_centers[:, None], n))
        return s

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @cached_property
    def face_tag(self) -> np.ndarray:
        tag = np.full(self.num_faces, FACE_INTERIOR)
        tag[self.boundary_faces] = FACE_NEUMANN
        return tag

    @cached_property
    def face_ref(self) -> np.ndarray:
        """Interface id (internal faces) or Dirichlet piece index, else -1."""
        return np.full(self.num_faces, -1)

    def set_tags(self, tag: np.ndarray, ref: np.ndarray) -> None:
        self.__dict__["face_tag"] = np.asarray(tag, dtype=int).copy()
        self.__dict__["face_ref"] = np.asarray(ref, dtype=int).copy()

    def boundary_tags(self) -> dict[int, str]:
        out = {}
        for f in self.boundary_faces:
            t = self.face_tag[f]
            out[int(f)] = f"internal:{self.face_ref[f]}" if t == FACE_INTERNAL else _TAG_NAMES[t]
        return out

    def nodes_of_faces(self, tag: int) -> np.ndarray:
        fs = np.flatnonzero(self.face_tag == tag)
        return np.unique(self.faces[fs]) if len(fs) else np.zeros(0, int)

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        if self.dim not in (0, 1, 2):
            raise InvalidGridError(f"unsupported grid dimension {self.dim}")
        if self.num_cells == 0:
            raise InvalidGridError("grid has no cells")
        if self.cells.min() < 0 or self.cells.max() >= self.num_nodes:
            raise InvalidGridError("cell refers to a missing node")
        if self.dim > 0 and np.any(self.signed_volumes <= 0):
            raise InvalidGridError("grid contains cells with non-positive measure")

    def total_measure(self) -> float:
        return float(self.cell_volumes.sum())

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "name": self.name,
            "nodes": self.nodes.ravel().tolist(),
            "cells": self.cells.tolist(),
        }
        if self.dim > 0:
            d["boundary_tags"] = {str(k): v for k, v in self.boundary_tags().items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimplicialGrid":
        g = cls(d["dim"], np.asarray(d["nodes"], float).reshape(-1, 2), d["cells"], d.get("name", ""))
        if g.dim > 0 and "boundary_tags" in d:
            tag = g.face_tag.copy()
            ref = g.face_ref.copy()
            for k, v in d["boundary_tags"].items():
                f = int(k)
                if v.startswith("internal:"):
                    tag[f], ref[f] = FACE_INTERNAL, int(v.split(":")[1])
                elif v == "dirichlet":
                    tag[f] = FACE_DIRICHLET
                else:
                    tag[f] = FACE_NEUMANN
            g.set_tags(tag, ref)
        return g


def point_grid(point, name: str = "") -> SimplicialGrid:
    return SimplicialGrid(0, np.atleast_2d(point), [[0]], name)


def segment_grid(coords: np.ndarray, name: str = "") -> SimplicialGrid:
    """1D grid through the ordered node coordinates ``coords`` (n, 2)."""
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    cells = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return SimplicialGrid(1, coords, cells, name)


def uniform_segment_grid(a, b, n: int, name: str = "") -> SimplicialGrid:
    a, b = np.asarray(a, float), np.asarray(b, float)
    t = np.linspace(0.0, 1.0, n + 1)
    return segment_grid(a + t[:, None] * (b - a), name)


# ---------------------------------------------------------------------------
# Quality measures
# ---------------------------------------------------------------------------


def shape_regularity(grid: SimplicialGrid) -> float:
    """Worst ratio h_K / rho_K over the grid (1 for segment grids)."""
    if grid.dim < 1:
        raise ValueError("shape regularity needs a grid of dimension >= 1")
    if grid.dim == 1:
        return 1.0
    return float(np.max(grid.diameters / grid.inradii))


def mean_cell_diameter(grid: SimplicialGrid) -> float:
    if grid.num_cells == 0:
        raise ValueError("empty grid")
    return float(np.mean(grid.diameters))


# ---------------------------------------------------------------------------
# Perturbation
# ---------------------------------------------------------------------------


def internal_nodes(grid: SimplicialGrid) -> np.ndarray:
    """Nodes not lying on any boundary face of the grid."""
    if grid.dim == 0:
        return np.zeros(0, int)
    bnd = np.unique(grid.faces[grid.boundary_faces])
    return np.setdiff1d(np.arange(grid.num_nodes), bnd)


def perturb_internal_nodes(grid: SimplicialGrid, magnitude: float, direction) -> SimplicialGrid:
    """Shift every internal node by ``magnitude * direction``.

    Boundary nodes (segment endpoints, polygon boundary) stay fixed. The cell
    connectivity and face tags are kept.

    Raises
    ------
    InvalidPerturbationError
        If a cell flips orientation or collapses.
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    nodes = grid.nodes.copy()
    idx = internal_nodes(grid)
    nodes[idx] += magnitude * direction
    v_old = grid.cell_vertices
    v_new = nodes[grid.cells]
    if grid.dim == 1:
        t = v_old[:, 1] - v_old[:, 0]
        t = t / np.linalg.norm(t, axis=1)[:, None]
        signed = np.einsum("mk,mk->m", v_new[:, 1] - v_new[:, 0], t)
    elif grid.dim == 2:
        e1 = v_new[:, 1] - v_new[:, 0]
        e2 = v_new[:, 2] - v_new[:, 0]
        signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    else:
        return grid
    tol = 1e-12 * max(grid.diameters.max(), 1e-300)
    if np.any(signed <= tol):
        raise InvalidPerturbationError(
            f"perturbation of {magnitude:g} degenerates {np.sum(signed <= tol)} cell(s) of {grid.name!r}"
        )
    out = SimplicialGrid(grid.dim, nodes, grid.cells, grid.name)
    out.set_tags(grid.face_tag, grid.face_ref)
    for attr in ("parent_faces", "parent_nodes"):
        if hasattr(grid, attr):
            setattr(out, attr, getattr(grid, attr))
    return out


# ---------------------------------------------------------------------------
# Internal boundary grids
# ---------------------------------------------------------------------------


def extract_internal_boundary_grid(
    grid_hi: SimplicialGrid, interface_geom: Geometry, side: int | None = None,
    tol: float = 1e-10, name: str = "",
) -> SimplicialGrid:
    """Grid formed by the boundary faces of ``grid_hi`` lying on ``interface_geom``.

    ``side`` selects faces whose adjacent cell lies on the given side of a
    segment (relative to its left normal); ``None`` keeps both sides.
    The returned grid carries ``parent_faces`` and ``parent_nodes`` arrays
    mapping its cells and nodes back to ``grid_hi``.
    """
    bf = grid_hi.boundary_faces
    if grid_hi.dim == 1:
        on = interface_geom.contains(grid_hi.face_centers[bf], tol)
        faces = bf[on]
        if len(faces) == 0:
            raise EmptyBoundaryError(f"no face of {grid_hi.name!r} lies on the interface point")
        f = faces[:1]
        g = point_grid(grid_hi.face_centers[f[0]], name)
        g.parent_faces = f
        g.parent_nodes = grid_hi.faces[f, 0]
        return g

    a, b = interface_geom.points[0], interface_geom.points[1]
    nodes = grid_hi.nodes[grid_hi.faces[bf]]  # (nb, 2, 2)
    on = on_segment(nodes[:, 0], a, b, tol) & on_segment(nodes[:, 1], a, b, tol)
    faces = bf[on]
    if side is not None and len(faces):
        cells = grid_hi.face_cells[faces, 0]
        offs = (grid_hi.cell_centers[cells] - grid_hi.face_centers[faces]) @ interface_geom.normal
        faces = faces[np.sign(offs) == side]
    if len(faces) == 0:
        raise EmptyBoundaryError(
            f"no face of {grid_hi.name!r} resolves the interface segment {interface_geom.points.tolist()}"
        )
    t = interface_geom.tangent
    fn = grid_hi.faces[faces]
    s = grid_hi.nodes[fn] @ t
    # orient each face along the tangent and sort along the segment
    swap = s[:, 0] > s[:, 1]
    fn[swap] = fn[swap][:, ::-1]
    order = np.argsort(np.minimum(s[:, 0], s[:, 1]))
    fn, faces = fn[order], faces[order]
    parent_nodes, local = np.unique(fn, return_inverse=True)
    g = SimplicialGrid(1, grid_hi.nodes[parent_nodes], local.reshape(-1, 2), name)
    g.parent_faces = faces
    g.parent_nodes = parent_nodes
    return g


# ---------------------------------------------------------------------------
# Structured generation
# ---------------------------------------------------------------------------


def criss_cross(x0: float, x1: float, y0: float, y1: float, nx: int, ny: int):
    """Nodes and counter-clockwise triangles of a criss-cross triangulation."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    corners = np.column_stack([X.ravel(), Y.ravel()])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    centers = np.column_stack([CX.ravel(), CY.ravel()])
    nodes = np.vstack([corners, centers])

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    bl = I * (ny + 1) + J
    br = (I + 1) * (ny + 1) + J
    tr = (I + 1) * (ny + 1) + J + 1
    tl = I * (ny + 1) + J + 1
    c = len(corners) + I * ny + J
    cells = np.vstack([
        np.column_stack([bl, br, c]),
        np.column_stack([br, tr, c]),
        np.column_stack([tr, tl, c]),
        np.column_stack([tl, bl, c]),
    ])
    return nodes, cells


def _split_nodes(nodes: np.ndarray, cells: np.ndarray, frac_edges: set) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate nodes so that no two cells across a fracture edge share them."""
    cells = cells.copy()
    frac_nodes = sorted({n for e in frac_edges for n in e})
    if not frac_nodes:
        return nodes, cells
    node_cells: dict[int, list[int]] = {n: [] for n in frac_nodes}
    wanted = np.isin(cells, frac_nodes)
    for c, k in zip(*np.nonzero(wanted)):
        node_cells[int(cells[c, k])].append(int(c))
    new_nodes = [nodes]
    n_next = len(nodes)
    for n in frac_nodes:
        cs = node_cells[n]
        parent = {c: c for c in cs}

        def find(c):
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        edge_cells: dict[tuple, list[int]] = {}
        for c in cs:
            for o in cells[c]:
                if o == n:
                    continue
                e = (min(n, int(o)), max(n, int(o)))
                edge_cells.setdefault(e, []).append(c)
        for e, ec in edge_cells.items():
            if len(ec) == 2 and e not in frac_edges:
                parent[find(ec[0])] = find(ec[1])
        comps: dict[int, list[int]] = {}
        for c in cs:
            comps.setdefault(find(c), []).append(c)
        groups = sorted(comps.values(), key=min)
        for grp in groups[1:]:
            new_nodes.append(nodes[n][None])
            for c in grp:
                cells[c][cells[c] == n] = n_next
            n_next += 1
    return np.vstack(new_nodes), cells


@dataclass
class GridBundle:
    subdomain_grids: dict[int, SimplicialGrid]
    interface_grids: dict[int, SimplicialGrid]
    internal_boundary_grids: dict[int, SimplicialGrid]
    h: float = float("nan")
    label: str = "matching"
    meta: dict = field(default_factory=dict)

    def replace(self, **kw) -> "GridBundle":
        d = dict(self.__dict__)
        d.update(kw)
        return GridBundle(**d)


def _tag_subdomain_grid(grid: SimplicialGrid, domain: MdDomain, i: int) -> None:
    sd = domain.subdomains[i]
    tol = domain.eps_geom
    tag = grid.face_tag.copy()
    ref = grid.face_ref.copy()
    bf = grid.boundary_faces
    free = np.ones(len(bf), dtype=bool)
    for j in sorted(domain.check_S[i]):
        itf = domain.interfaces[j]
        if grid.dim == 2:
            a, b = itf.geometry.points
            fn = grid.nodes[grid.faces[bf]]
            on = on_segment(fn[:, 0], a, b, tol) & on_segment(fn[:, 1], a, b, tol)
            if itf.side is not None:
                cells = grid.face_cells[bf, 0]
                offs = (grid.cell_centers[cells] - grid.face_centers[bf]) @ itf.geometry.normal
                on &= np.sign(offs) == itf.side
        else:
            on = itf.geometry.contains(grid.face_centers[bf], tol)
        on &= free
        tag[bf[on]] = FACE_INTERNAL
        ref[bf[on]] = j
        free &= ~on
    for k, piece in enumerate(sd.dirichlet_segments):
        if grid.dim == 2:
            a, b = piece.geometry.points
            fn = grid.nodes[grid.faces[bf]]
            on = on_segment(fn[:, 0], a, b, tol) & on_segment(fn[:, 1], a, b, tol)
        else:
            on = piece.geometry.contains(grid.face_centers[bf], tol)
        on &= free
        tag[bf[on]] = FACE_DIRICHLET
        ref[bf[on]] = k
        free &= ~on
    grid.set_tags(tag, ref)


def generate_matching_bundle(domain: MdDomain, h: float) -> GridBundle:
    """Fully matching grids for every subdomain, interface and internal boundary.

    The planar subdomains are covered by one criss-cross triangulation of
    their bounding box with ``round(width / h)`` squares per row; cells are
    assigned to subdomains by barycentre. Fracture segments must run along
    mesh lines (square edges or diagonals).
    """
    if not (h > 0 and np.isfinite(h)):
        raise MeshGenerationError(f"mesh size must be positive, got {h}")
    tol = domain.eps_geom
    sub_grids: dict[int, SimplicialGrid] = {}

    ids2 = domain.subdomain_ids(2)
    if ids2:
        pts = np.vstack([domain.subdomains[i].geometry.points for i in ids2])
        (x0, y0), (x1, y1) = pts.min(axis=0), pts.max(axis=0)
        nx = max(1, int(round((x1 - x0) / h)))
        ny = max(1, int(round((y1 - y0) / h)))
        nodes, cells = criss_cross(x0, x1, y0, y1, nx, ny)
        centers = nodes[cells].mean(axis=1)
        owner = np.full(len(cells), -1)
        for i in ids2:
            inside = domain.subdomains[i].geometry.contains(centers, 0.0) & (owner < 0)
            owner[inside] = i
        for i in ids2:
            sd = domain.subdomains[i]
            loc_cells = cells[owner == i]
            if len(loc_cells) == 0:
                raise MeshGenerationError(f"subdomain {i} received no cells at h={h}")
            used, loc = np.unique(loc_cells, return_inverse=True)
            loc_nodes = nodes[used]
            loc = loc.reshape(-1, 3)
            e1 = loc_nodes[loc[:, 1]] - loc_nodes[loc[:, 0]]
            e2 = loc_nodes[loc[:, 2]] - loc_nodes[loc[:, 0]]
            area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]).sum()
            if abs(area - sd.geometry.measure) > 1e-12 * max(sd.geometry.measure, 1.0):
                raise MeshGenerationError(
                    f"subdomain {i} is not resolved by the structured mesh at h={h}"
                )
            frac_edges: set = set()
            for j in sorted(domain.check_S[i]):
                a, b = domain.interfaces[j].geometry.points
                covered = 0.0
                for loc_idx in ([0, 1], [1, 2], [2, 0]):
                    e = loc[:, loc_idx]
                    on = on_segment(loc_nodes[e[:, 0]], a, b, tol) & on_segment(loc_nodes[e[:, 1]], a, b, tol)
                    for p, q in e[on]:
                        key = (min(p, q), max(p, q))
                        if key not in frac_edges:
                            frac_edges.add(key)
                            covered += np.linalg.norm(loc_nodes[p] - loc_nodes[q])
                length = np.linalg.norm(b - a)
                already = covered
                if already < length - 1e-9 * length and not _segment_covered(frac_edges, loc_nodes, a, b, tol):
                    raise MeshGenerationError(
                        f"interface {j} does not follow mesh lines of subdomain {i} at h={h}"
                    )
            split_nodes, split_cells = _split_nodes(loc_nodes, loc, frac_edges)
            g = SimplicialGrid(2, split_nodes, split_cells, f"subdomain {i}")
            _tag_subdomain_grid(g, domain, i)
            sub_grids[i] = g

    ib_grids: dict[int, SimplicialGrid] = {}
    for j in domain.interface_ids(1):
        itf = domain.interfaces[j]
        ib_grids[j] = extract_internal_boundary_grid(
            sub_grids[itf.hi], itf.geometry, itf.side, tol, f"internal boundary {j}"
        )

    for i in domain.subdomain_ids(1):
        sd = domain.subdomains[i]
        a, b = sd.geometry.points
        t = sd.geometry.tangent
        coords = None
        for j in sorted(domain.hat_S[i]):
            if j in ib_grids:
                coords = ib_grids[j].nodes
                break
        if coords is None:
            n = max(1, int(round(sd.geometry.measure / h)))
            g = uniform_segment_grid(a, b, n, f"subdomain {i}")
        else:
            coords = coords[np.argsort((coords - a) @ t)]
            g = segment_grid(coords, f"subdomain {i}")
        _tag_subdomain_grid(g, domain, i)
        sub_grids[i] = g

    for i in domain.subdomain_ids(0):
        sub_grids[i] = point_grid(domain.subdomains[i].geometry.points[0], f"subdomain {i}")

    for j in domain.interface_ids(0):
        itf = domain.interfaces[j]
        ib_grids[j] = extract_internal_boundary_grid(
            sub_grids[itf.hi], itf.geometry, None, tol, f"internal boundary {j}"
        )

    itf_grids: dict[int, SimplicialGrid] = {}
    for j, itf in domain.interfaces.items():
        lo = sub_grids[itf.lo]
        if itf.dim == 0:
            itf_grids[j] = point_grid(itf.geometry.points[0], f"interface {j}")
        else:
            itf_grids[j] = segment_grid(lo.nodes[np.argsort((lo.nodes - itf.geometry.points[0]) @ itf.geometry.tangent)],
                                        f"interface {j}")
    return GridBundle(sub_grids, itf_grids, ib_grids, h=float(h))


def _segment_covered(edges: set, nodes: np.ndarray, a, b, tol: float) -> bool:
    t = (b - a) / np.linalg.norm(b - a)
    iv = []
    for p, q in edges:
        if on_segment(nodes[[p, q]], a, b, tol).all():
            s = sorted(((nodes[p] - a) @ t, (nodes[q] - a) @ t))
            iv.append(s)
    iv.sort()
    reach = 0.0
    for s0, s1 in iv:
        if s0 > reach + tol:
            return False
        reach = max(reach, s1)
    return reach >= np.linalg.norm(b - a) - tol


def perturbed_bundle(bundle: GridBundle, domain: MdDomain, sign: int) -> GridBundle:
    """Non-matching bundle: lower-dimensional 1D grids move along ``sign * t``.

    Each internal node of a 1D subdomain grid is shifted by half that grid's
    mean cell diameter; the interface grids coupled to it move the same
    distance in the opposite direction. Internal boundary grids stay put.
    """
    sub = dict(bundle.subdomain_grids)
    itf = dict(bundle.interface_grids)
    for i in domain.subdomain_ids(1):
        if not domain.hat_S[i]:
            continue
        g = bundle.subdomain_grids[i]
        t = domain.subdomains[i].geometry.tangent
        m = 0.5 * mean_cell_diameter(g)
        sub[i] = perturb_internal_nodes(g, m, sign * t)
        for j in sorted(domain.hat_S[i]):
            itf[j] = perturb_internal_nodes(bundle.interface_grids[j], m, -sign * t)
    label = f"{'+' if sign > 0 else '-'}t"
    return bundle.replace(subdomain_grids=sub, interface_grids=itf, label=label)


def write_bundle(bundle: GridBundle, path: str | Path) -> None:
    """Dump every grid of the bundle as JSON."""
    data = {
        "h": bundle.h,
        "label": bundle.label,
        "subdomains": {str(k): g.to_dict() for k, g in bundle.subdomain_grids.items()},
        "interfaces": {str(k): g.to_dict() for k, g in bundle.interface_grids.items()},
        "internal_boundaries": {str(k): g.to_dict() for k, g in bundle.internal_boundary_grids.items()},
    }
    Path(path).write_text(json.dumps(data))
