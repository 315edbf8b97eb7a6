"""Guaranteed error majorant, local indicators, true errors and effectivities.

For a conforming potential ``s`` and a locally conservative flux ``u`` the
majorant is ``M = eta_DF + eta_R`` with

    eta_DF^2 = sum_K ||K^{-1/2} u + K^{1/2} grad s||_K^2
             + sum_{K in interface grids} ||kappa^{-1/2} lam + kappa^{1/2} (P s_lo - P s_hi)||_K^2
    eta_R^2  = sum_K (h_K / (pi c_K))^2 ||f - div u + sum_j D lam_j||_K^2

where ``P`` are the primal interface projections, ``D`` the flux projection
onto the lower grid and ``c_K`` the square root of the smallest eigenvalue
of the cell permeability.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MissingReferenceError
from .mdsolve import MixedSolution, SOURCE_QUAD_DEGREE
from .project import PolyField
from .quadrature import rule
from .recon import ConformingPotential, build_conforming_potential

ESTIMATOR_DEGREE = 3
REFERENCE_DEGREE = 5


def potential_gradients(field: PolyField) -> np.ndarray:
    """Cellwise constant (tangential) gradient of a P1 field, (n_cells, 2)."""
    g = field.grid
    if g.dim == 0:
        return np.zeros((g.num_cells, 2))
    return np.einsum("ma,mak->mk", field.coeffs, g.bary_gradients)


def _cell_quadrature(grid, degree):
    q = rule(grid.dim, degree)
    X = q.map_points(grid.cell_vertices)
    W = q.scaled_weights(grid.cell_volumes)
    return X, W


def eta_df_parallel(sol: MixedSolution, pot: ConformingPotential, i: int,
                    degree: int = ESTIMATOR_DEGREE) -> np.ndarray:
    """Per-cell ||K^{-1/2} u + K^{1/2} grad s|| on subdomain ``i``."""
    g = sol.grid(i)
    if g.dim == 0:
        return np.zeros(g.num_cells)
    K = sol.domain.permeability(i, g.cell_centers)
    Kinv = np.linalg.inv(K)
    gs = potential_gradients(pot[i])
    X, W = _cell_quadrature(g, degree)
    M, nq = W.shape
    u = sol.velocity(i, np.repeat(np.arange(M), nq), X.reshape(-1, 2)).reshape(M, nq, 2)
    v = u + np.einsum("mij,mj->mi", K, gs)[:, None, :]
    integrand = np.einsum("mqi,mij,mqj->mq", v, Kinv, v)
    return np.sqrt(np.maximum(np.sum(W * integrand, axis=1), 0.0))


def interface_traces(sol: MixedSolution, pot: ConformingPotential, j: int) -> tuple[PolyField, PolyField]:
    """Primal projections (P s_hi, P s_lo) of the potential onto interface ``j``."""
    itf = sol.domain.interfaces[j]
    cp = sol.couplings[j]
    ib = sol.bundle.internal_boundary_grids[j]
    s_hi = pot[itf.hi].nodal_values
    trace = PolyField.from_nodal(ib, s_hi[ib.parent_nodes])
    return cp.primal_to_interface_hi(trace), cp.primal_to_interface_lo(pot[itf.lo])


def eta_df_perp(sol: MixedSolution, pot: ConformingPotential, j: int,
                degree: int = ESTIMATOR_DEGREE) -> np.ndarray:
    """Per-cell ||kappa^{-1/2} lam + kappa^{1/2} (P s_lo - P s_hi)|| on interface ``j``."""
    gm = sol.bundle.interface_grids[j]
    hi, lo = interface_traces(sol, pot, j)
    kappa = np.asarray(sol.domain.kappa(j, gm.cell_centers), float).reshape(-1)
    jump = PolyField(gm, 1, lo.coeffs - hi.coeffs)
    _, W, vj = jump.at_quadrature(degree)
    v = sol.lam[j][:, None] / np.sqrt(kappa)[:, None] + np.sqrt(kappa)[:, None] * vj
    return np.sqrt(np.sum(W * v**2, axis=1))


def residual_constants(sol: MixedSolution, i: int) -> np.ndarray:
    """h_K / (pi c_K) with c_K^2 the smallest eigenvalue of K on the cell."""
    g = sol.grid(i)
    if g.dim == 0:
        return np.zeros(g.num_cells)
    K = sol.domain.permeability(i, g.cell_centers)
    if g.dim == 1:
        lam_min = K[:, 0, 0]
    else:
        lam_min = np.linalg.eigvalsh(K)[:, 0]
    return g.diameters / (np.pi * np.sqrt(lam_min))


def eta_r(sol: MixedSolution, i: int, degree: int = SOURCE_QUAD_DEGREE) -> np.ndarray:
    """Per-cell (h_K/(pi c_K)) ||f - div u + sum_j D lam_j||."""
    g = sol.grid(i)
    if g.dim == 0:
        return np.zeros(g.num_cells)
    sd = sol.domain.subdomains[i]
    X, W = _cell_quadrature(g, degree)
    M, nq = W.shape
    f = sd.source(X.reshape(-1, 2)).reshape(M, nq)
    # point-cell sources act as a constant density on their cell
    extra = sol.system.sources[i] - np.sum(f * W, axis=1)
    const = extra / g.cell_volumes - sol.divergence(i) + sol.lower_flux(i)
    r = f + const[:, None]
    return residual_constants(sol, i) * np.sqrt(np.sum(W * r**2, axis=1))


@dataclass
class EstimateReport:
    eta_df_par: dict[int, np.ndarray]
    eta_df_perp: dict[int, np.ndarray]
    eta_r: dict[int, np.ndarray]
    eta_subdomain: dict[int, float]
    eta_interface: dict[int, float]
    eta_omega_by_dim: dict[int, float]
    eta_gamma_by_dim: dict[int, float]
    eta_DF: float
    eta_R: float
    majorant: float
    error_p: float | None = None
    error_u: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def eff_p(self) -> float | None:
        return None if self.error_p is None else effectivities(self.majorant, self.error_p, self.error_p)[0]

    @property
    def eff_u(self) -> float | None:
        return None if self.error_u is None else effectivities(self.majorant, self.error_u, self.error_u)[1]

    def square_sum_gap(self) -> float:
        """Relative mismatch between the global values and the per-cell values."""
        df2 = sum(float(np.sum(v**2)) for v in self.eta_df_par.values())
        df2 += sum(float(np.sum(v**2)) for v in self.eta_df_perp.values())
        r2 = sum(float(np.sum(v**2)) for v in self.eta_r.values())
        m = np.sqrt(df2) + np.sqrt(r2)
        return abs(m - self.majorant) / max(self.majorant, 1e-300)

    def to_dict(self) -> dict:
        def arr(d):
            return {str(k): np.asarray(v).tolist() for k, v in d.items()}

        return {
            "majorant": self.majorant,
            "eta_DF": self.eta_DF,
            "eta_R": self.eta_R,
            "error_p": self.error_p,
            "error_u": self.error_u,
            "eff_p": self.eff_p,
            "eff_u": self.eff_u,
            "eta_subdomain": {str(k): v for k, v in self.eta_subdomain.items()},
            "eta_interface": {str(k): v for k, v in self.eta_interface.items()},
            "eta_omega_by_dim": {str(k): v for k, v in self.eta_omega_by_dim.items()},
            "eta_gamma_by_dim": {str(k): v for k, v in self.eta_gamma_by_dim.items()},
            "cells": {
                "eta_df_par": arr(self.eta_df_par),
                "eta_df_perp": arr(self.eta_df_perp),
                "eta_r": arr(self.eta_r),
            },
            "meta": self.meta,
        }


def majorant(eta_par: dict, eta_perp: dict, eta_res: dict, dims_sub: dict, dims_itf: dict) -> EstimateReport:
    """Aggregate per-cell indicators into subdomain, dimension and global values."""
    sub = {i: float(np.sqrt(np.sum(eta_par[i] ** 2) + np.sum(eta_res[i] ** 2))) for i in eta_par}
    itf = {j: float(np.sqrt(np.sum(v**2))) for j, v in eta_perp.items()}
    om: dict[int, float] = {}
    for i, v in sub.items():
        om[dims_sub[i]] = om.get(dims_sub[i], 0.0) + v**2
    ga: dict[int, float] = {}
    for j, v in itf.items():
        ga[dims_itf[j]] = ga.get(dims_itf[j], 0.0) + v**2
    om = {d: float(np.sqrt(v)) for d, v in sorted(om.items(), reverse=True)}
    ga = {d: float(np.sqrt(v)) for d, v in sorted(ga.items(), reverse=True)}
    df = float(np.sqrt(sum(np.sum(v**2) for v in eta_par.values())
                       + sum(np.sum(v**2) for v in eta_perp.values())))
    r = float(np.sqrt(sum(np.sum(v**2) for v in eta_res.values())))
    return EstimateReport(eta_par, eta_perp, eta_res, sub, itf, om, ga, df, r, df + r)


def estimate(sol: MixedSolution, pot: ConformingPotential | None = None) -> EstimateReport:
    """Evaluate all indicators and the majorant for a solved configuration."""
    pot = pot or build_conforming_potential(sol)
    dom = sol.domain
    par = {i: eta_df_parallel(sol, pot, i) for i in dom.subdomain_ids()}
    res = {i: eta_r(sol, i) for i in dom.subdomain_ids()}
    perp = {j: eta_df_perp(sol, pot, j) for j in dom.interface_ids()}
    return majorant(
        par, perp, res,
        {i: s.dim for i, s in dom.subdomains.items()},
        {j: g.dim for j, g in dom.interfaces.items()},
    )


# ---------------------------------------------------------------------------
# True errors
# ---------------------------------------------------------------------------


def true_errors(sol: MixedSolution, pot: ConformingPotential, exact,
                degree: int = REFERENCE_DEGREE) -> tuple[float, float]:
    """Energy-norm errors of the potential and of the flux.

    ``exact`` provides ``grad(i, X)``, ``u(i, X)`` and ``lam(j, X)``. The
    exact interface jump p_lo - p_hi is taken as ``-lam / kappa``.

    Raises
    ------
    MissingReferenceError
        If no reference solution is given.
    """
    if exact is None:
        raise MissingReferenceError("true errors need an analytic or surrogate reference")
    dom = sol.domain
    ep2 = eu2 = 0.0
    for i in dom.subdomain_ids():
        g = sol.grid(i)
        if g.dim == 0:
            continue
        K = dom.permeability(i, g.cell_centers)
        Kinv = np.linalg.inv(K)
        X, W = _cell_quadrature(g, degree)
        M, nq = W.shape
        Xf = X.reshape(-1, 2)
        gs = potential_gradients(pot[i])
        e = np.asarray(exact.grad(i, Xf)).reshape(M, nq, 2) - gs[:, None, :]
        ep2 += float(np.sum(W * np.einsum("mqi,mij,mqj->mq", e, K, e)))
        uh = sol.velocity(i, np.repeat(np.arange(M), nq), Xf).reshape(M, nq, 2)
        d = np.asarray(exact.u(i, Xf)).reshape(M, nq, 2) - uh
        eu2 += float(np.sum(W * np.einsum("mqi,mij,mqj->mq", d, Kinv, d)))
    for j in dom.interface_ids():
        gm = sol.bundle.interface_grids[j]
        hi, lo = interface_traces(sol, pot, j)
        kappa = np.asarray(dom.kappa(j, gm.cell_centers), float).reshape(-1)[:, None]
        jump = PolyField(gm, 1, lo.coeffs - hi.coeffs)
        X, W, vj = jump.at_quadrature(degree)
        lam = np.asarray(exact.lam(j, X.reshape(-1, 2))).reshape(W.shape)
        ep2 += float(np.sum(W * kappa * (-lam / kappa - vj) ** 2))
        eu2 += float(np.sum(W * (lam - sol.lam[j][:, None]) ** 2 / kappa))
    return float(np.sqrt(ep2)), float(np.sqrt(eu2))


def effectivities(M: float, error_p: float, error_u: float) -> tuple[float, float]:
    """I_p = M / |||p - s|||, I_u = M / |||u - u_h|||_* (inf for zero error)."""
    def ratio(e):
        return float(M / e) if e > 0 else float("inf")

    return ratio(error_p), ratio(error_u)
