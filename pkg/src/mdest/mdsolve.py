"""Mixed RT0 x P0 x P0-mortar solver for mixed-dimensional Darcy flow.

Unknowns are the normal flux value on every interior and Dirichlet face of
each subdomain grid of dimension >= 1, one pressure per cell of every grid
(0D subdomains included), and one mortar flux per interface cell.

Faces on an internal boundary carry no unknown of their own: their normal
trace is the mortar flux mapped onto the internal boundary grid by the
mass-constrained projection. Neumann faces are fixed to zero.

Sign convention: a positive mortar flux flows from the higher-dimensional
neighbour into the lower-dimensional one, and equals
``-kappa * (p_lo - p_hi)`` at the continuous level.

The system is kept in the symmetric saddle form

    [ A  -B^T ] [x]   [-G]
    [-B   0   ] [p] = [-F]

where ``x`` stacks face fluxes and mortar fluxes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .errors import InconsistentBundleError, OutOfCellError, SingularSystemError
from .mdgeom import MdDomain
from .mdgrid import FACE_DIRICHLET, FACE_INTERIOR, FACE_INTERNAL, GridBundle, SimplicialGrid
from .project import CouplingProjections, PolyField, ProjectionCache
from .quadrature import rule
from .transfer import build_transfer

log = logging.getLogger(__name__)

SOURCE_QUAD_DEGREE = 5


# ---------------------------------------------------------------------------
# RT0 on a single grid
# ---------------------------------------------------------------------------


def rt0_basis(grid: SimplicialGrid, cells: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Values of the local RT0 basis at points, shape (n, dim+1, 2).

    Local basis function ``a`` belongs to the face opposite vertex ``a`` and
    has unit normal trace with respect to that face's fixed normal.
    """
    cells = np.asarray(cells, dtype=int)
    d = grid.dim
    v = grid.cell_vertices[cells]  # (n, d+1, 2)
    s = grid.cell_face_signs[cells]
    fm = grid.face_measures[grid.cell_faces[cells]]
    scale = s * fm / (d * grid.cell_volumes[cells])[:, None]
    return scale[:, :, None] * (np.atleast_2d(X)[:, None, :] - v)


def rt0_divergence(grid: SimplicialGrid) -> sp.csr_matrix:
    """B[K, f] = s_{K,f} |f|, so that (B u)_K is the integral of div u over K."""
    M = grid.num_cells
    d1 = grid.dim + 1
    vals = grid.cell_face_signs * grid.face_measures[grid.cell_faces]
    rows = np.repeat(np.arange(M), d1)
    return sp.csr_matrix((vals.ravel(), (rows, grid.cell_faces.ravel())), shape=(M, grid.num_faces))


def rt0_mass(grid: SimplicialGrid, K_inv: np.ndarray) -> sp.csr_matrix:
    """Face-by-face matrix of (K^{-1} phi_f, phi_g) with cellwise constant K^{-1}."""
    q = rule(grid.dim, 2)
    X = q.map_points(grid.cell_vertices)  # (M, nq, 2)
    W = q.scaled_weights(grid.cell_volumes)
    M, nq = W.shape
    d1 = grid.dim + 1
    cells = np.repeat(np.arange(M), nq)
    phi = rt0_basis(grid, cells, X.reshape(-1, 2)).reshape(M, nq, d1, 2)
    Kphi = np.einsum("mij,mqaj->mqai", K_inv, phi)
    loc = np.einsum("mq,mqai,mqbi->mab", W, Kphi, phi)
    cf = grid.cell_faces
    rows = np.repeat(cf, d1, axis=1).ravel()
    cols = np.tile(cf, (1, d1)).ravel()
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(grid.num_faces, grid.num_faces))


# ---------------------------------------------------------------------------
# Coupling set-up
# ---------------------------------------------------------------------------


def build_couplings(domain: MdDomain, bundle: GridBundle) -> dict[int, CouplingProjections]:
    """Transfer grids and projection caches for every interface."""
    out = {}
    for j, itf in domain.interfaces.items():
        try:
            g_itf = bundle.interface_grids[j]
            g_ib = bundle.internal_boundary_grids[j]
            g_lo = bundle.subdomain_grids[itf.lo]
        except KeyError as exc:
            raise InconsistentBundleError(f"bundle lacks a grid for interface {j}") from exc
        hi = ProjectionCache(build_transfer(g_itf, g_ib))
        lo = ProjectionCache(build_transfer(g_itf, g_lo))
        out[j] = CouplingProjections(hi, lo)
    return out


@dataclass
class DofMap:
    """Global numbering of flux, mortar and pressure unknowns.

    ``face_dofs[i]`` holds the global index of each face of subdomain ``i``,
    or -1 for faces without an independent unknown (Neumann and internal
    boundary faces).
    """

    face_dofs: dict[int, np.ndarray]
    mortar_dofs: dict[int, np.ndarray]
    cell_dofs: dict[int, np.ndarray]
    n_flux: int
    n_mortar: int
    n_cells: int

    @property
    def n_x(self) -> int:
        return self.n_flux + self.n_mortar

    @property
    def size(self) -> int:
        return self.n_x + self.n_cells


def build_dofmap(domain: MdDomain, bundle: GridBundle) -> DofMap:
    face_dofs, mortar_dofs, cell_dofs = {}, {}, {}
    n = 0
    for i in domain.subdomain_ids():
        g = bundle.subdomain_grids[i]
        if g.dim == 0:
            face_dofs[i] = np.zeros(0, int)
            continue
        free = (g.face_tag == FACE_INTERIOR) | (g.face_tag == FACE_DIRICHLET)
        idx = np.full(g.num_faces, -1)
        idx[free] = n + np.arange(free.sum())
        n += int(free.sum())
        face_dofs[i] = idx
    n_flux = n
    for j in domain.interface_ids():
        m = bundle.interface_grids[j].num_cells
        mortar_dofs[j] = n + np.arange(m)
        n += m
    n_mortar = n - n_flux
    c = 0
    for i in domain.subdomain_ids():
        m = bundle.subdomain_grids[i].num_cells
        cell_dofs[i] = c + np.arange(m)
        c += m
    return DofMap(face_dofs, mortar_dofs, cell_dofs, n_flux, n_mortar, c)


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofs: DofMap
    extension: dict[int, sp.csr_matrix]  # subdomain -> (faces x n_x) full flux map
    divergence: dict[int, sp.csr_matrix]  # subdomain -> (cells x faces)
    lower: dict[int, sp.csr_matrix]  # interface -> (lo cells x mortar cells), integrated
    sources: dict[int, np.ndarray]  # subdomain -> integrated source per cell
    domain: MdDomain
    bundle: GridBundle
    couplings: dict[int, CouplingProjections]
    dirichlet_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def n_dofs(self) -> int:
        return self.dofs.size


def cell_sources(domain: MdDomain, i: int, grid: SimplicialGrid) -> np.ndarray:
    """Integral of the source over each cell plus point-cell sources."""
    sd = domain.subdomains[i]
    if grid.dim == 0:
        F = sd.source(grid.nodes).astype(float).copy()
    else:
        q = rule(grid.dim, SOURCE_QUAD_DEGREE)
        X = q.map_points(grid.cell_vertices)
        vals = sd.source(X.reshape(-1, 2)).reshape(X.shape[:2])
        F = np.sum(vals * q.scaled_weights(grid.cell_volumes), axis=1)
    for pt, val in sd.cell_sources:
        k = int(grid.locate(np.atleast_2d(pt), tol=1e-10)[0])
        if k < 0:
            raise InconsistentBundleError(f"cell source at {pt.tolist()} lies outside subdomain {i}")
        F[k] += val
    return F


def _extension(domain, bundle, couplings, dofs, i) -> sp.csr_matrix:
    g = bundle.subdomain_grids[i]
    fd = dofs.face_dofs[i]
    free = np.flatnonzero(fd >= 0)
    rows = [free]
    cols = [fd[free]]
    vals = [np.ones(len(free))]
    internal = np.flatnonzero(g.face_tag == FACE_INTERNAL)
    seen = np.zeros(g.num_faces, dtype=bool)
    for j in sorted(domain.check_S[i]):
        ib = bundle.internal_boundary_grids[j]
        tagged = internal[g.face_ref[internal] == j]
        if not np.array_equal(np.sort(ib.parent_faces), np.sort(tagged)):
            raise InconsistentBundleError(
                f"internal boundary grid {j} does not match the faces of subdomain {i} tagged with it"
            )
        P = couplings[j].flux_matrix("hi").tocoo()  # ib cells x mortar cells
        f = ib.parent_faces[P.row]
        s = g.cell_face_signs[g.face_cells[f, 0], np.argmax(g.cell_faces[g.face_cells[f, 0]] == f[:, None], axis=1)]
        rows.append(f)
        cols.append(dofs.mortar_dofs[j][P.col])
        vals.append(s * P.data)
        seen[tagged] = True
    if np.any(~seen[internal]):
        raise InconsistentBundleError(f"subdomain {i} has internal faces without an interface")
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(g.num_faces, dofs.n_x),
    )


def assemble(domain: MdDomain, bundle: GridBundle,
             couplings: dict[int, CouplingProjections] | None = None) -> LinearSystem:
    """Assemble the saddle-point system of the mixed mortar discretization.

    Raises
    ------
    InconsistentBundleError
        If the bundle does not fit the domain topology.
    """
    for i in domain.subdomain_ids():
        if i not in bundle.subdomain_grids:
            raise InconsistentBundleError(f"bundle lacks a grid for subdomain {i}")
        if bundle.subdomain_grids[i].dim != domain.subdomains[i].dim:
            raise InconsistentBundleError(f"grid of subdomain {i} has the wrong dimension")
    if couplings is None:
        couplings = build_couplings(domain, bundle)
    dofs = build_dofmap(domain, bundle)
    nx = dofs.n_x

    A = sp.csr_matrix((nx, nx))
    B = sp.csr_matrix((dofs.n_cells, nx))
    G = np.zeros(nx)
    F = np.zeros(dofs.n_cells)
    ext, div, lower, srcs = {}, {}, {}, {}
    dirichlet_cols = []

    for i in domain.subdomain_ids():
        g = bundle.subdomain_grids[i]
        cd = dofs.cell_dofs[i]
        srcs[i] = cell_sources(domain, i, g)
        F[cd] += srcs[i]
        if g.dim == 0:
            continue
        E = _extension(domain, bundle, couplings, dofs, i)
        K = domain.permeability(i, g.cell_centers)
        Ai = rt0_mass(g, np.linalg.inv(K))
        Bi = rt0_divergence(g)
        A = A + (E.T @ Ai @ E)
        Sel = sp.csr_matrix((np.ones(g.num_cells), (cd, np.arange(g.num_cells))),
                            shape=(dofs.n_cells, g.num_cells))
        B = B + Sel @ Bi @ E
        ext[i], div[i] = E, Bi

        # Dirichlet data: G_f = s_{K,f} * integral of g_D over the face
        sd = domain.subdomains[i]
        dfaces = np.flatnonzero(g.face_tag == FACE_DIRICHLET)
        if len(dfaces):
            K0 = g.face_cells[dfaces, 0]
            loc = np.argmax(g.cell_faces[K0] == dfaces[:, None], axis=1)
            s = g.cell_face_signs[K0, loc]
            gint = np.zeros(len(dfaces))
            for k, piece in enumerate(sd.dirichlet_segments):
                sel = g.face_ref[dfaces] == k
                if not sel.any():
                    continue
                fs = dfaces[sel]
                if g.dim == 1:
                    gint[sel] = piece.value(g.face_centers[fs])
                else:
                    q = rule(1, 5)
                    V = g.nodes[g.faces[fs]]
                    X = q.map_points(V)
                    W = q.scaled_weights(g.face_measures[fs])
                    gint[sel] = np.sum(piece.value(X.reshape(-1, 2)).reshape(X.shape[:2]) * W, axis=1)
            G[dofs.face_dofs[i][dfaces]] += s * gint
            dirichlet_cols.append(dofs.face_dofs[i][dfaces])

    for j in domain.interface_ids():
        itf = domain.interfaces[j]
        gm = bundle.interface_grids[j]
        md = dofs.mortar_dofs[j]
        kappa = np.asarray(domain.kappa(j, gm.cell_centers), dtype=float).reshape(-1)
        A = A + sp.csr_matrix((gm.cell_volumes / kappa, (md, md)), shape=(nx, nx))
        g_lo = bundle.subdomain_grids[itf.lo]
        Pl = couplings[j].flux_matrix("lo")  # lo cells x mortar cells (values)
        L = sp.diags(g_lo.cell_volumes) @ Pl
        lower[j] = L.tocsr()
        L = L.tocoo()
        B = B - sp.csr_matrix((L.data, (dofs.cell_dofs[itf.lo][L.row], md[L.col])),
                              shape=(dofs.n_cells, nx))

    mat = sp.bmat([[A, -B.T], [-B, None]], format="csr")
    rhs = np.concatenate([-G, -F])
    dc = np.concatenate(dirichlet_cols) if dirichlet_cols else np.zeros(0, int)
    return LinearSystem(mat, rhs, dofs, ext, div, lower, srcs, domain, bundle, couplings, dc)


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------


def check_solvable(system: LinearSystem) -> None:
    """Every group of hydraulically connected cells must see a Dirichlet face.

    Raises
    ------
    SingularSystemError
        If some connected group of cells floats without Dirichlet data.
    """
    nx = system.dofs.n_x
    B = abs(system.matrix[nx:, :nx]).tocsr()
    B.data[:] = 1.0
    adj = (B @ B.T).tocsr()
    n_comp, labels = connected_components(adj, directed=False)
    if len(system.dirichlet_cols):
        anchored_cells = np.unique(B[:, system.dirichlet_cols].tocoo().row)
    else:
        anchored_cells = np.zeros(0, int)
    anchored = np.zeros(n_comp, dtype=bool)
    anchored[labels[anchored_cells]] = True
    if not anchored.all():
        raise SingularSystemError(
            f"{np.sum(~anchored)} of {n_comp} connected cell group(s) carry no Dirichlet data; "
            "the pressure is undetermined"
        )


@dataclass
class MixedSolution:
    """Solved face fluxes, cell pressures and mortar fluxes.

    ``u[i]`` holds the normal flux value on every face of subdomain ``i``
    (internal boundary faces included), measured along the face normal.
    """

    u: dict[int, np.ndarray]
    p: dict[int, np.ndarray]
    lam: dict[int, np.ndarray]
    system: LinearSystem
    residual: float

    @property
    def domain(self) -> MdDomain:
        return self.system.domain

    @property
    def bundle(self) -> GridBundle:
        return self.system.bundle

    @property
    def couplings(self) -> dict[int, CouplingProjections]:
        return self.system.couplings

    def grid(self, i: int) -> SimplicialGrid:
        return self.bundle.subdomain_grids[i]

    def velocity(self, i: int, cells, X) -> np.ndarray:
        g = self.grid(i)
        cells = np.asarray(cells, dtype=int)
        phi = rt0_basis(g, cells, X)
        return np.einsum("na,nak->nk", self.u[i][g.cell_faces[cells]], phi)

    def divergence(self, i: int) -> np.ndarray:
        """Cellwise constant divergence of the full flux."""
        g = self.grid(i)
        return (self.system.divergence[i] @ self.u[i]) / g.cell_volumes

    def mortar_field(self, j: int) -> PolyField:
        return PolyField(self.bundle.interface_grids[j], 0, self.lam[j])

    def lower_flux(self, i: int) -> np.ndarray:
        """Cellwise value of the summed projected mortar fluxes entering subdomain ``i``."""
        g = self.grid(i)
        out = np.zeros(g.num_cells)
        for j in sorted(self.domain.hat_S[i]):
            out += self.couplings[j].flux_matrix("lo") @ self.lam[j]
        return out


def solve(system: LinearSystem, tol: float = 1e-10, dense_threshold: int = 0) -> MixedSolution:
    """Solve the assembled system with a direct method.

    Systems with fewer than ``dense_threshold`` unknowns use a dense LU.

    Raises
    ------
    SingularSystemError
        If the system is singular or the relative residual exceeds ``tol``.
    """
    check_solvable(system)
    A, b = system.matrix, system.rhs
    n = A.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        z = np.zeros(n)
        res = 0.0
    else:
        try:
            if n < dense_threshold:
                z = np.linalg.solve(A.toarray(), b)
            else:
                z = spsolve(A.tocsc(), b)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SingularSystemError(f"direct solve failed: {exc}") from exc
        res = float(np.linalg.norm(A @ z - b) / bnorm)
        if not np.isfinite(res) or res > tol:
            # one step of iterative refinement before giving up
            if np.isfinite(res):
                z = z + spsolve(A.tocsc(), b - A @ z)
                res = float(np.linalg.norm(A @ z - b) / bnorm)
            if not np.isfinite(res) or res > tol:
                raise SingularSystemError(f"relative residual {res:.3e} exceeds {tol:.1e}")
    log.debug("solved %d unknowns, relative residual %.2e", n, res)
    dofs = system.dofs
    x = z[: dofs.n_x]
    p_all = z[dofs.n_x:]
    u = {}
    for i in system.domain.subdomain_ids():
        if i in system.extension:
            u[i] = system.extension[i] @ x
        else:
            u[i] = np.zeros(0)
    p = {i: p_all[cd] for i, cd in dofs.cell_dofs.items()}
    lam = {j: x[md] for j, md in dofs.mortar_dofs.items()}
    return MixedSolution(u, p, lam, system, res)


def solve_domain(domain: MdDomain, bundle: GridBundle, tol: float = 1e-10,
                 dense_threshold: int = 0) -> MixedSolution:
    return solve(assemble(domain, bundle), tol, dense_threshold)


# ---------------------------------------------------------------------------
# Checks and evaluation
# ---------------------------------------------------------------------------


def full_flux(sol: MixedSolution, i: int) -> np.ndarray:
    """Face fluxes of subdomain ``i`` with internal boundary faces rebuilt from the mortars."""
    g = sol.grid(i)
    u = sol.u[i].copy()
    for j in sorted(sol.domain.check_S[i]):
        ib = sol.bundle.internal_boundary_grids[j]
        vals = sol.couplings[j].flux_matrix("hi") @ sol.lam[j]
        f = ib.parent_faces
        K = g.face_cells[f, 0]
        loc = np.argmax(g.cell_faces[K] == f[:, None], axis=1)
        u[f] = g.cell_face_signs[K, loc] * vals
    return u


def check_local_conservation(sol: MixedSolution, domain: MdDomain | None = None,
                             bundle: GridBundle | None = None) -> tuple[float, dict[int, np.ndarray]]:
    """Per-cell residual of the mass balance, (div u - lower fluxes - f, 1)_K.

    The flux on internal boundary faces is recomputed from the mortar fluxes,
    so corrupting ``sol.lam`` shows up in the adjacent cells.
    """
    domain = domain or sol.domain
    bundle = bundle or sol.bundle
    system = sol.system
    out = {}
    for i in domain.subdomain_ids():
        g = bundle.subdomain_grids[i]
        r = -system.sources[i].copy()
        if g.dim > 0:
            r += system.divergence[i] @ full_flux(sol, i)
        for j in sorted(domain.hat_S[i]):
            r -= system.lower[j] @ sol.lam[j]
        out[i] = np.abs(r)
    worst = max((float(v.max()) for v in out.values() if len(v)), default=0.0)
    return worst, out


def rt0_eval(sol: MixedSolution, subdomain: int, cell: int, point, tol: float = 1e-10) -> np.ndarray:
    """Velocity of subdomain ``subdomain`` at ``point`` inside ``cell``.

    Raises
    ------
    OutOfCellError
        If the point is not in the closed cell.
    """
    g = sol.grid(subdomain)
    X = np.atleast_2d(np.asarray(point, dtype=float))
    lam = g.barycentric(np.array([cell]), X)[0]
    rec = lam @ g.cell_vertices[cell]
    if lam.min() < -tol or np.linalg.norm(rec - X[0]) > tol * max(g.diameters[cell], 1.0):
        raise OutOfCellError(f"point {X[0].tolist()} is not in cell {cell} of subdomain {subdomain}")
    return sol.velocity(subdomain, [cell], X)[0]
