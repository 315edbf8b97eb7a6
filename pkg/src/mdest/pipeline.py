"""Solve, reconstruct and estimate on one grid bundle; fine-grid reference solutions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import MissingReferenceError
from .estimate import EstimateReport, estimate, true_errors
from .mdgeom import MdDomain
from .mdgrid import GridBundle, generate_matching_bundle, perturbed_bundle
from .mdsolve import MixedSolution, assemble, build_couplings, check_local_conservation, solve
from .recon import ConformingPotential, build_conforming_potential, jump_check
from .transfer import check_transfer

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    label: str
    h: float
    report: EstimateReport
    solution: MixedSolution
    potential: ConformingPotential
    conservation: float
    transfer: dict = field(default_factory=dict)

    @property
    def baseline(self) -> bool:
        return self.label == "matching"


def run_configuration(domain: MdDomain, bundle: GridBundle, reference=None,
                      solver_tol: float = 1e-10, dense_threshold: int = 0) -> RunResult:
    """Solve on ``bundle``, reconstruct the potential and evaluate the estimators."""
    couplings = build_couplings(domain, bundle)
    system = assemble(domain, bundle, couplings)
    sol = solve(system, solver_tol, dense_threshold)
    pot = build_conforming_potential(sol)
    rep = estimate(sol, pot)
    if reference is not None:
        rep.error_p, rep.error_u = true_errors(sol, pot, reference)
    cons, _ = check_local_conservation(sol)
    diag = {}
    for j, cp in couplings.items():
        for side, cache in (("hi", cp.hi), ("lo", cp.lo)):
            diag[(j, side)] = check_transfer(cache.tg)
    rep.meta.update({
        "label": bundle.label,
        "h": bundle.h,
        "n_dofs": system.n_dofs,
        "residual": sol.residual,
        "conservation": cons,
        "potential_jump": jump_check(pot),
    })
    return RunResult(bundle.label, bundle.h, rep, sol, pot, cons, diag)


class SurrogateSolution:
    """Reference solution from a matching solve on a finer grid.

    Gradients are recovered as -K^{-1} u_ref, so the reference primal and
    dual errors use the same fine flux field.
    """

    def __init__(self, domain: MdDomain, h_ref: float, solver_tol: float = 1e-10):
        self.domain = domain
        self.h_ref = h_ref
        self.bundle = generate_matching_bundle(domain, h_ref)
        self.bundle.label = "reference"
        self.solution = solve(assemble(domain, self.bundle), solver_tol)
        self._trees: dict = {}

    def _locate(self, grid, key, X: np.ndarray) -> np.ndarray:
        if key not in self._trees:
            self._trees[key] = cKDTree(grid.cell_centers)
        tree = self._trees[key]
        k = min(16, grid.num_cells)
        _, cand = tree.query(X, k=k)
        cand = np.atleast_2d(cand).reshape(len(X), k)
        out = np.full(len(X), -1)
        best = np.full(len(X), -np.inf)
        scale = max(grid.diameters.max(initial=0.0), 1e-300)
        for c in range(k):
            cells = cand[:, c]
            lam = grid.barycentric(cells, X)
            score = lam.min(axis=1)
            if grid.dim < 2:
                rec = np.einsum("na,nak->nk", lam, grid.cell_vertices[cells])
                score = np.where(np.linalg.norm(rec - X, axis=1) <= 1e-8 * scale, score, -np.inf)
            better = score > best
            out[better] = cells[better]
            best[better] = score[better]
        if np.any(best < -1e-8):
            raise MissingReferenceError("reference grid does not cover an evaluation point")
        return out

    def u(self, i, X):
        X = np.atleast_2d(X)
        g = self.bundle.subdomain_grids[i]
        cells = self._locate(g, ("sub", i), X)
        return self.solution.velocity(i, cells, X)

    def grad(self, i, X):
        X = np.atleast_2d(X)
        g = self.bundle.subdomain_grids[i]
        cells = self._locate(g, ("sub", i), X)
        u = self.solution.velocity(i, cells, X)
        K = self.domain.permeability(i, g.cell_centers[cells])
        return -np.linalg.solve(K, u[:, :, None])[:, :, 0]

    def p(self, i, X):
        X = np.atleast_2d(X)
        g = self.bundle.subdomain_grids[i]
        if g.dim == 0:
            return np.full(len(X), self.solution.p[i][0])
        return self.solution.p[i][self._locate(g, ("sub", i), X)]

    def lam(self, j, X):
        X = np.atleast_2d(X)
        g = self.bundle.interface_grids[j]
        if g.dim == 0:
            return np.full(len(X), self.solution.lam[j][0])
        return self.solution.lam[j][self._locate(g, ("itf", j), X)]


def configurations(domain: MdDomain, h: float, directions=(1, -1), perturb: bool = True):
    """Matching bundle followed by one perturbed bundle per direction."""
    base = generate_matching_bundle(domain, h)
    out = [base]
    if perturb:
        out += [perturbed_bundle(base, domain, s) for s in directions]
    return out
