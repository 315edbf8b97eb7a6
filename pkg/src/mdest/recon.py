"""Conforming potential reconstruction from a mixed solution.

Each cell gets a linear candidate built from its pressure and the gradient
recovered from the flux at the barycentre. Averaging the candidates at
every node (Oswald interpolation) gives a conforming P1 field, and nodes on
the Dirichlet boundary are then overwritten with the boundary data.
Continuity is only enforced inside each subdomain grid; split fracture
nodes keep the two sides independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdgeom import MdDomain
from .mdgrid import FACE_DIRICHLET, GridBundle
from .mdsolve import MixedSolution
from .project import PolyField


@dataclass
class ConformingPotential:
    """Per-subdomain conforming P1 fields plus the broken candidates they came from."""

    fields: dict[int, PolyField]
    candidates: dict[int, PolyField]

    def __getitem__(self, i: int) -> PolyField:
        return self.fields[i]


def cell_gradients(sol: MixedSolution, i: int) -> np.ndarray:
    """Recovered gradients -K^{-1} u(x_bary) of every cell of subdomain ``i``."""
    g = sol.grid(i)
    if g.dim == 0:
        return np.zeros((g.num_cells, 2))
    K = sol.domain.permeability(i, g.cell_centers)
    u = sol.velocity(i, np.arange(g.num_cells), g.cell_centers)
    return -np.linalg.solve(K, u[:, :, None])[:, :, 0]


def cell_gradient(sol: MixedSolution, subdomain: int, cell: int) -> np.ndarray:
    return cell_gradients(sol, subdomain)[cell]


def candidates(sol: MixedSolution, i: int) -> PolyField:
    """Broken P1 field p_K + grad_K . (x - x_K) on every cell."""
    g = sol.grid(i)
    if g.dim == 0:
        return PolyField(g, 1, sol.p[i][:, None])
    grad = cell_gradients(sol, i)
    offs = g.cell_vertices - g.cell_centers[:, None, :]
    vals = sol.p[i][:, None] + np.einsum("mak,mk->ma", offs, grad)
    return PolyField(g, 1, vals)


def oswald(field: PolyField) -> np.ndarray:
    """Arithmetic mean of the cell values at each node."""
    g = field.grid
    s = np.zeros(g.num_nodes)
    n = np.zeros(g.num_nodes)
    np.add.at(s, g.cells.ravel(), field.coeffs.ravel())
    np.add.at(n, g.cells.ravel(), 1.0)
    return s / np.maximum(n, 1)


def dirichlet_nodes(domain: MdDomain, i: int, grid) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on Dirichlet faces and their boundary data values."""
    sd = domain.subdomains[i]
    nodes, vals = [], []
    for k, piece in enumerate(sd.dirichlet_segments):
        fs = np.flatnonzero((grid.face_tag == FACE_DIRICHLET) & (grid.face_ref == k))
        if len(fs) == 0:
            continue
        nd = np.unique(grid.faces[fs])
        nodes.append(nd)
        vals.append(piece.value(grid.nodes[nd]))
    if not nodes:
        return np.zeros(0, int), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(vals)


def build_conforming_potential(sol: MixedSolution, domain: MdDomain | None = None,
                               bundle: GridBundle | None = None) -> ConformingPotential:
    domain = domain or sol.domain
    bundle = bundle or sol.bundle
    fields, cands = {}, {}
    for i in domain.subdomain_ids():
        g = bundle.subdomain_grids[i]
        c = candidates(sol, i)
        cands[i] = c
        if g.dim == 0:
            fields[i] = PolyField(g, 1, c.coeffs, conforming=True)
            continue
        nodal = oswald(c)
        nd, vals = dirichlet_nodes(domain, i, g)
        nodal[nd] = vals
        fields[i] = PolyField.from_nodal(g, nodal)
    return ConformingPotential(fields, cands)


def jump_check(pot) -> float:
    """Largest nodal discrepancy between cells sharing a node."""
    if isinstance(pot, PolyField):
        return pot.max_jump()
    if isinstance(pot, ConformingPotential):
        pot = pot.fields
    return max((f.max_jump() for f in pot.values()), default=0.0)
