"""Discrete projection operators between interface grids and coupled grids.

All operators are built from four kernels acting through a transfer grid:

* prolongation onto the transfer grid (exact restriction, no information loss),
* Scott-Zhang quasi-interpolation onto a conforming P1 space,
* the local L2 projection onto broken P_k,
* the mass-constrained local L2 projection (a small KKT system per cell).

The kernels are linear, so each is assembled once as a sparse matrix acting
on flattened coefficient vectors and cached in a :class:`ProjectionCache`.
Coefficients of a degree-1 field are its values at the cell vertices in
local vertex order; degree 0 fields store one value per cell.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatchError, ProjectionError, SingularMassMatrixError
from .mdgrid import SimplicialGrid
from .quadrature import rule
from .transfer import TransferGrid

QUAD_DEGREE = 4


def n_local(k: int, dim: int) -> int:
    """Number of coefficients of P_k on a dim-simplex (k in {0, 1})."""
    if k not in (0, 1):
        raise ProjectionError(f"polynomial degree {k} not supported")
    return 1 if k == 0 else dim + 1


def _basis(k: int, bary: np.ndarray) -> np.ndarray:
    """Basis values from barycentric coordinates (..., dim+1) -> (..., n_local)."""
    if k == 0:
        return np.ones(bary.shape[:-1] + (1,))
    return bary


@dataclass
class PolyField:
    """Broken polynomial field of degree 0 or 1 on a simplicial grid."""

    grid: SimplicialGrid
    degree: int
    coeffs: np.ndarray  # (n_cells, n_local)
    conforming: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(
            self.grid.num_cells, n_local(self.degree, self.grid.dim)
        )

    @classmethod
    def from_flat(cls, grid, degree, flat, conforming=False) -> "PolyField":
        return cls(grid, degree, np.asarray(flat).reshape(grid.num_cells, -1), conforming)

    @classmethod
    def from_nodal(cls, grid: SimplicialGrid, values) -> "PolyField":
        values = np.asarray(values, dtype=float)
        return cls(grid, 1, values[grid.cells], conforming=True)

    @classmethod
    def interpolate(cls, grid: SimplicialGrid, f) -> "PolyField":
        """Nodal P1 interpolant of a callable ``f(X)``."""
        return cls.from_nodal(grid, f(grid.nodes))

    @classmethod
    def cell_means(cls, grid: SimplicialGrid, f, degree: int = 5) -> "PolyField":
        """P0 field of exact-to-quadrature cell averages of ``f``."""
        q = rule(grid.dim, degree)
        X = q.map_points(grid.cell_vertices)
        vals = f(X.reshape(-1, 2)).reshape(X.shape[:2])
        return cls(grid, 0, (vals * q.weights).sum(axis=1) / q.reference_measure)

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.ravel()

    @property
    def nodal_values(self) -> np.ndarray:
        """Node values of a conforming P1 field (first cell wins on ties)."""
        if self.degree != 1:
            raise ProjectionError("nodal values need a degree-1 field")
        out = np.full(self.grid.num_nodes, np.nan)
        out[self.grid.cells[::-1].ravel()] = self.coeffs[::-1].ravel()
        return out

    def evaluate(self, cells, X) -> np.ndarray:
        cells = np.asarray(cells, dtype=int)
        if self.degree == 0:
            return self.coeffs[cells, 0]
        lam = self.grid.barycentric(cells, np.atleast_2d(X))
        return np.einsum("na,na->n", lam, self.coeffs[cells])

    def at_quadrature(self, degree: int = QUAD_DEGREE):
        """Quadrature points (M, q, 2), weights (M, q) and values (M, q)."""
        q = rule(self.grid.dim, degree)
        X = q.map_points(self.grid.cell_vertices)
        W = q.scaled_weights(self.grid.cell_volumes)
        V = _basis(self.degree, np.broadcast_to(q.points, X.shape[:2] + (q.points.shape[1],)))
        vals = np.einsum("mqa,ma->mq", V, self.coeffs)
        return X, W, vals

    def cell_integrals(self) -> np.ndarray:
        if self.degree == 0:
            return self.coeffs[:, 0] * self.grid.cell_volumes
        return self.coeffs.mean(axis=1) * self.grid.cell_volumes

    def l2_norm(self) -> float:
        _, W, v = self.at_quadrature()
        return float(np.sqrt(np.sum(W * v**2)))

    def max_jump(self) -> float:
        """Largest discrepancy between cell values at a shared node."""
        if self.degree != 1:
            raise ProjectionError("nodal jumps need a degree-1 field")
        lo = np.full(self.grid.num_nodes, np.inf)
        hi = np.full(self.grid.num_nodes, -np.inf)
        np.minimum.at(lo, self.grid.cells.ravel(), self.coeffs.ravel())
        np.maximum.at(hi, self.grid.cells.ravel(), self.coeffs.ravel())
        used = np.isfinite(lo)
        return float(np.max(hi[used] - lo[used], initial=0.0))


def mass_matrix(k: int, dim: int, volumes: np.ndarray) -> np.ndarray:
    """Local mass matrices of P_k on simplices, shape (n, n_local, n_local)."""
    volumes = np.asarray(volumes, dtype=float)
    if np.any(volumes <= 0):
        raise SingularMassMatrixError("cell with non-positive measure")
    if k == 0 or dim == 0:
        return volumes[:, None, None] * np.ones((1, 1, 1))
    base = (np.ones((dim + 1, dim + 1)) + np.eye(dim + 1)) / ((dim + 1) * (dim + 2))
    return volumes[:, None, None] * base[None]


def constraint_vector(k: int, dim: int, volumes: np.ndarray) -> np.ndarray:
    """c^K_a = integral of basis function a over K."""
    volumes = np.asarray(volumes, dtype=float)
    if k == 0 or dim == 0:
        return volumes[:, None]
    return np.repeat(volumes[:, None] / (dim + 1), dim + 1, axis=1)


class ProjectionCache:
    """Sparse operator matrices attached to one transfer grid.

    ``which`` is ``"src"`` (the interface grid) or ``"dst"`` (the coupled
    grid: internal boundary or lower-dimensional subdomain).
    """

    def __init__(self, tg: TransferGrid, quad_degree: int = QUAD_DEGREE):
        self.tg = tg
        self.quad = rule(tg.dim, quad_degree)
        self._ops: dict = {}
        self._local: dict = {}

    def side_of(self, grid: SimplicialGrid) -> str:
        if grid is self.tg.src:
            return "src"
        if grid is self.tg.dst:
            return "dst"
        if grid is self.tg:
            return "transfer"
        raise GridMismatchError(f"grid {grid.name!r} is not a parent of this transfer grid")

    def local_mass(self, which: str, k: int):
        key = (which, k)
        if key not in self._local:
            g = self.tg.grid_of(which)
            M = mass_matrix(k, g.dim, g.cell_volumes)
            c = constraint_vector(k, g.dim, g.cell_volumes)
            if np.any(np.abs(c).sum(axis=1) == 0):
                raise SingularMassMatrixError("constraint vector vanishes")
            self._local[key] = (M, c)
        return self._local[key]

    # -- kernels -----------------------------------------------------------

    def prolong_matrix(self, which: str, k: int) -> sp.csr_matrix:
        key = ("prolong", which, k)
        if key in self._ops:
            return self._ops[key]
        tg = self.tg
        parent = tg.parent(which)
        g = tg.grid_of(which)
        nt = tg.num_cells
        if k == 0 or tg.dim == 0:
            nl = n_local(k, tg.dim)
            rows = np.arange(nt * nl)
            cols = (parent[:, None] * nl + np.arange(nl)).ravel()
            P = sp.csr_matrix((np.ones(nt * nl), (rows, cols)), shape=(nt * nl, g.num_cells * nl))
        else:
            d1 = tg.dim + 1
            cells = np.repeat(parent, d1)
            lam = g.barycentric(cells, tg.cell_vertices.reshape(-1, 2))  # (nt*d1, d1)
            rows = np.repeat(np.arange(nt * d1), d1)
            cols = (cells[:, None] * d1 + np.arange(d1)).ravel()
            P = sp.csr_matrix((lam.ravel(), (rows, cols)), shape=(nt * d1, g.num_cells * d1))
        P.eliminate_zeros()
        self._ops[key] = P
        return P

    def _cross_moments(self, which: str, k_out: int, k_in: int) -> np.ndarray:
        """C_t[a, c] = integral over transfer cell t of phi^K_a psi^t_c.

        Restricted to t, the parent basis is phi_a = sum_b L[b, a] chi_b with
        chi the P1 basis of t and L the parent basis values at the vertices
        of t, so the moments follow exactly from the P1 mass matrix of t.
        """
        tg = self.tg
        g = tg.grid_of(which)
        parent = tg.parent(which)
        d1 = tg.dim + 1
        nt = tg.num_cells
        if k_out == 0 or tg.dim == 0:
            L = np.ones((nt, d1, 1))
        else:
            L = g.barycentric(np.repeat(parent, d1), tg.cell_vertices.reshape(-1, 2)).reshape(nt, d1, d1)
        if k_in == 1 and tg.dim > 0:
            Mt = mass_matrix(1, tg.dim, tg.cell_volumes)  # (nt, d1, d1)
        else:
            Mt = constraint_vector(1, tg.dim, tg.cell_volumes)[:, :, None]  # (nt, d1, 1)
        return np.einsum("tba,tbc->tac", L, Mt)

    def _assemble_local(self, which: str, k_out: int, k_in: int, local: np.ndarray) -> sp.csr_matrix:
        """Scatter per-transfer-cell blocks (nt, n_out, n_in) into a sparse matrix."""
        tg = self.tg
        g = tg.grid_of(which)
        parent = tg.parent(which)
        n_out = n_local(k_out, g.dim)
        n_in = n_local(k_in, tg.dim)
        rows = parent[:, None, None] * n_out + np.arange(n_out)[None, :, None]
        cols = np.arange(tg.num_cells)[:, None, None] * n_in + np.arange(n_in)[None, None, :]
        rows, cols = np.broadcast_arrays(rows, cols)
        A = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                          shape=(g.num_cells * n_out, tg.num_cells * n_in))
        return A.tocsr()

    def l2_matrix(self, which: str, k_out: int, k_in: int) -> sp.csr_matrix:
        """Local L2 projection from the transfer grid onto broken P_k of ``which``."""
        key = ("l2", which, k_out, k_in)
        if key in self._ops:
            return self._ops[key]
        M, _ = self.local_mass(which, k_out)
        C = self._cross_moments(which, k_out, k_in)
        Minv = np.linalg.inv(M)[self.tg.parent(which)]
        A = self._assemble_local(which, k_out, k_in, np.einsum("tab,tbc->tac", Minv, C))
        self._ops[key] = A
        return A

    def kkt_inverse(self, which: str, k: int):
        """Blocks (S11, s12) of the inverse KKT matrix [[M, c], [c^T, 0]] per cell."""
        M, c = self.local_mass(which, k)
        n = M.shape[1]
        K = np.zeros((len(M), n + 1, n + 1))
        K[:, :n, :n] = M
        K[:, :n, n] = c
        K[:, n, :n] = c
        try:
            S = np.linalg.inv(K)
        except np.linalg.LinAlgError as exc:
            raise SingularMassMatrixError("local KKT system is singular") from exc
        return S[:, :n, :n], S[:, :n, n], S[:, n, :n], S[:, n, n]

    def kkt_matrix(self, which: str, k_out: int, k_in: int) -> sp.csr_matrix:
        """Mass-constrained projection; target mass = summed child integrals."""
        key = ("kkt", which, k_out, k_in)
        if key in self._ops:
            return self._ops[key]
        S11, s12, _, _ = self.kkt_inverse(which, k_out)
        C = self._cross_moments(which, k_out, k_in)
        e = constraint_vector(k_in, self.tg.dim, self.tg.cell_volumes)  # (nt, n_in)
        par = self.tg.parent(which)
        local = np.einsum("tab,tbc->tac", S11[par], C) + s12[par][:, :, None] * e[:, None, :]
        A = self._assemble_local(which, k_out, k_in, local)
        self._ops[key] = A
        return A

    def mass_matrix_from_transfer(self, which: str, k_in: int) -> sp.csr_matrix:
        """m^K = sum of child integrals, as a matrix on transfer coefficients."""
        key = ("mass", which, k_in)
        if key not in self._ops:
            e = constraint_vector(k_in, self.tg.dim, self.tg.cell_volumes)
            self._ops[key] = self._assemble_local(which, 0, k_in, e[:, None, :])
        return self._ops[key]

    def sz_matrix(self, which: str) -> sp.csr_matrix:
        """Scott-Zhang interpolation of a broken P1 transfer field onto nodes of ``which``.

        Interior nodes use the dual basis of the lowest-index adjacent cell,
        i.e. the local L2 projection onto P1 of that cell evaluated at the
        node. Endpoints of a segment grid use the point functional, which
        evaluates the input at the endpoint and preserves boundary values.
        """
        key = ("sz", which)
        if key in self._ops:
            return self._ops[key]
        tg = self.tg
        g = tg.grid_of(which)
        d1 = g.dim + 1
        if g.dim == 0:
            A = sp.csr_matrix(np.ones((1, 1)))
            self._ops[key] = A
            return A
        # lowest-index adjacent cell and local vertex of each node
        sel_cell = np.full(g.num_nodes, -1)
        sel_loc = np.full(g.num_nodes, -1)
        order = np.argsort(g.cells.ravel(), kind="stable")
        flat_nodes = g.cells.ravel()[order]
        first = np.unique(flat_nodes, return_index=True)[1]
        pick = order[first]
        sel_cell[flat_nodes[first]] = pick // d1
        sel_loc[flat_nodes[first]] = pick % d1
        if np.any(sel_cell < 0):
            raise GridMismatchError(f"grid {g.name!r} has nodes outside every cell")
        L2 = self.l2_matrix(which, 1, 1).tocsr()
        rows_L2 = sel_cell * d1 + sel_loc
        A = L2[rows_L2].tolil()
        if g.dim == 1:
            bnd = np.unique(g.faces[g.boundary_faces].ravel())
            scale = max(float(np.ptp(tg.nodes, axis=0).max()), 1.0)
            for z in bnd:
                # child cell with a vertex at the node; lowest index wins
                dist = np.linalg.norm(tg.cell_vertices - g.nodes[z], axis=2)
                t, a = np.argwhere(dist <= 1e-10 * scale)[0]
                row = sp.lil_matrix((1, A.shape[1]))
                row[0, t * 2 + a] = 1.0
                A[z] = row
        A = A.tocsr()
        self._ops[key] = A
        return A


# ---------------------------------------------------------------------------
# Field-level API
# ---------------------------------------------------------------------------


def _check_on(field: PolyField, grid) -> None:
    if field.grid is not grid:
        raise GridMismatchError(
            f"field lives on {field.grid.name!r}, expected {getattr(grid, 'name', '')!r}"
        )


def prolong(field: PolyField, tg: TransferGrid, cache: ProjectionCache | None = None) -> PolyField:
    cache = cache or ProjectionCache(tg)
    which = cache.side_of(field.grid)
    if which == "transfer":
        raise GridMismatchError("field already lives on the transfer grid")
    out = cache.prolong_matrix(which, field.degree) @ field.flat
    return PolyField.from_flat(tg, field.degree, out)


def scott_zhang(field: PolyField, target: SimplicialGrid, cache: ProjectionCache) -> PolyField:
    _check_on(field, cache.tg)
    which = cache.side_of(target)
    f = field if field.degree == 1 else PolyField(field.grid, 1, np.repeat(field.coeffs, field.grid.dim + 1, axis=1))
    nodal = cache.sz_matrix(which) @ f.flat
    return PolyField.from_nodal(target, nodal)


def l2_project(field: PolyField, target: SimplicialGrid, k: int, cache: ProjectionCache) -> PolyField:
    _check_on(field, cache.tg)
    which = cache.side_of(target)
    out = cache.l2_matrix(which, k, field.degree) @ field.flat
    return PolyField.from_flat(target, k, out)


def mass_constrained_project(field: PolyField, target: SimplicialGrid, k: int,
                             cache: ProjectionCache, mass: np.ndarray | None = None,
                             return_multiplier: bool = False):
    """KKT-constrained local L2 projection.

    ``mass`` overrides the per-cell target masses m^K (default: the
    integral of ``field`` over the transfer children of each cell).
    """
    _check_on(field, cache.tg)
    which = cache.side_of(target)
    par = cache.tg.parent(which)
    C = cache._cross_moments(which, k, field.degree)
    b = np.zeros((target.num_cells, n_local(k, target.dim)))
    np.add.at(b, par, np.einsum("tac,tc->ta", C, field.coeffs))
    if mass is None:
        mass = cache.mass_matrix_from_transfer(which, field.degree) @ field.flat
    S11, s12, s21, s22 = cache.kkt_inverse(which, k)
    alpha = np.einsum("kab,kb->ka", S11, b) + s12 * np.asarray(mass)[:, None]
    out = PolyField(target, k, alpha)
    if return_multiplier:
        mu = np.einsum("kb,kb->k", s21, b) + s22 * np.asarray(mass)
        return out, mu
    return out


@dataclass
class CouplingProjections:
    """Projection caches of one interface: towards the higher and lower side."""

    hi: ProjectionCache
    lo: ProjectionCache

    @property
    def interface_grid(self) -> SimplicialGrid:
        return self.hi.tg.src

    def primal_to_interface_hi(self, trace: PolyField) -> PolyField:
        return scott_zhang(prolong(trace, self.hi.tg, self.hi), self.hi.tg.src, self.hi)

    def primal_to_interface_lo(self, field: PolyField) -> PolyField:
        return scott_zhang(prolong(field, self.lo.tg, self.lo), self.lo.tg.src, self.lo)

    def dual_potential_to_interface_hi(self, trace: PolyField, k: int | None = None) -> PolyField:
        k = trace.degree if k is None else k
        return l2_project(prolong(trace, self.hi.tg, self.hi), self.hi.tg.src, k, self.hi)

    def dual_potential_to_interface_lo(self, field: PolyField, k: int | None = None) -> PolyField:
        k = field.degree if k is None else k
        return l2_project(prolong(field, self.lo.tg, self.lo), self.lo.tg.src, k, self.lo)

    def flux_to_internal_boundary(self, mortar: PolyField) -> PolyField:
        return mass_constrained_project(prolong(mortar, self.hi.tg, self.hi), self.hi.tg.dst,
                                        mortar.degree, self.hi)

    def flux_to_lower(self, mortar: PolyField) -> PolyField:
        return mass_constrained_project(prolong(mortar, self.lo.tg, self.lo), self.lo.tg.dst,
                                        mortar.degree, self.lo)

    # matrix forms used by the solver and the estimators
    def flux_matrix(self, side: str, k: int = 0) -> sp.csr_matrix:
        c = self.hi if side == "hi" else self.lo
        return (c.kkt_matrix("dst", k, k) @ c.prolong_matrix("src", k)).tocsr()

    def primal_matrix(self, side: str) -> sp.csr_matrix:
        """Maps P1 cell coefficients on the coupled grid to interface nodal values."""
        c = self.hi if side == "hi" else self.lo
        return (c.sz_matrix("src") @ c.prolong_matrix("dst", 1)).tocsr()

    def dual_potential_matrix(self, side: str, k: int) -> sp.csr_matrix:
        c = self.hi if side == "hi" else self.lo
        return (c.l2_matrix("src", k, k) @ c.prolong_matrix("dst", k)).tocsr()
