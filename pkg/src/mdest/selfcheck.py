"""Randomised property checks of transfer grids and projection operators.

Used by ``mdest run --check-projections`` and by the test-suite. Every check
returns the worst observed value so callers can compare it with their own
tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

from .mdgrid import SimplicialGrid, segment_grid
from .project import CouplingProjections, PolyField, ProjectionCache, mass_constrained_project, prolong
from .transfer import TransferGrid, build_transfer, check_transfer


def random_segment_grid(rng: np.random.Generator, n: int, a=(0.0, 0.0), b=(1.0, 0.0),
                        min_gap: float = 1e-3) -> SimplicialGrid:
    """Segment grid with ``n`` cells and random interior breakpoints."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    while True:
        t = np.sort(np.r_[0.0, rng.random(n - 1), 1.0])
        if np.diff(t).min() > min_gap:
            break
    return segment_grid(a + t[:, None] * (b - a))


def random_triangulation(rng: np.random.Generator, n_interior: int = 6) -> SimplicialGrid:
    """Delaunay triangulation of the unit square with random interior points."""
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    edge = rng.random((4,))
    sides = np.array([[edge[0], 0.0], [1.0, edge[1]], [edge[2], 1.0], [0.0, edge[3]]])
    pts = np.vstack([corners, sides, 0.05 + 0.9 * rng.random((n_interior, 2))])
    tri = Delaunay(pts)
    cells = tri.simplices.copy()
    v = pts[cells]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    cells[area < 0] = cells[area < 0][:, ::-1]
    keep = np.abs(area) > 1e-10
    return SimplicialGrid(2, pts, cells[keep])


def coupling(src: SimplicialGrid, hi: SimplicialGrid, lo: SimplicialGrid) -> CouplingProjections:
    return CouplingProjections(ProjectionCache(build_transfer(src, hi)), ProjectionCache(build_transfer(src, lo)))


def random_p1(rng, grid) -> PolyField:
    return PolyField.from_nodal(grid, rng.standard_normal(grid.num_nodes))


def random_broken(rng, grid, k) -> PolyField:
    return PolyField(grid, k, rng.standard_normal((grid.num_cells, 1 if k == 0 else grid.dim + 1)))


# ---------------------------------------------------------------------------
# Individual checks
# ---------------------------------------------------------------------------


def matching_identity(rng, grid: SimplicialGrid) -> float:
    """Max coefficient change of the six operators when all grids coincide."""
    cp = coupling(grid, grid.__class__(grid.dim, grid.nodes, grid.cells),
                  grid.__class__(grid.dim, grid.nodes, grid.cells))
    hi, lo = cp.hi.tg.dst, cp.lo.tg.dst
    worst = 0.0
    q_hi = PolyField.from_nodal(hi, rng.standard_normal(hi.num_nodes))
    q_lo = PolyField.from_nodal(lo, q_hi.nodal_values)
    worst = max(worst, np.abs(cp.primal_to_interface_hi(q_hi).coeffs - q_hi.coeffs).max())
    worst = max(worst, np.abs(cp.primal_to_interface_lo(q_lo).coeffs - q_lo.coeffs).max())
    for k in (0, 1):
        w_hi = PolyField(hi, k, random_broken(rng, hi, k).coeffs)
        w_lo = PolyField(lo, k, w_hi.coeffs)
        worst = max(worst, np.abs(cp.dual_potential_to_interface_hi(w_hi).coeffs - w_hi.coeffs).max())
        worst = max(worst, np.abs(cp.dual_potential_to_interface_lo(w_lo).coeffs - w_lo.coeffs).max())
        nu = random_broken(rng, grid, k)
        worst = max(worst, np.abs(cp.flux_to_internal_boundary(nu).coeffs - nu.coeffs).max())
        worst = max(worst, np.abs(cp.flux_to_lower(nu).coeffs - nu.coeffs).max())
    return float(worst)


def constant_reproduction(cp: CouplingProjections, c: float = 1.7) -> float:
    worst = 0.0
    hi, lo, itf = cp.hi.tg.dst, cp.lo.tg.dst, cp.interface_grid
    for f, out in (
        (PolyField.from_nodal(hi, np.full(hi.num_nodes, c)), cp.primal_to_interface_hi),
        (PolyField.from_nodal(lo, np.full(lo.num_nodes, c)), cp.primal_to_interface_lo),
        (PolyField(hi, 0, np.full(hi.num_cells, c)), cp.dual_potential_to_interface_hi),
        (PolyField(lo, 0, np.full(lo.num_cells, c)), cp.dual_potential_to_interface_lo),
        (PolyField(itf, 0, np.full(itf.num_cells, c)), cp.flux_to_internal_boundary),
        (PolyField(itf, 0, np.full(itf.num_cells, c)), cp.flux_to_lower),
    ):
        worst = max(worst, float(np.abs(out(f).coeffs - c).max()))
    return worst


def p1_reproduction(cp: CouplingProjections, coef=(0.7, -1.3, 0.4)) -> float:
    lin = lambda X: coef[0] * X[:, 0] + coef[1] * X[:, 1] + coef[2]
    itf = cp.interface_grid
    worst = 0.0
    for f, op in ((PolyField.interpolate(cp.hi.tg.dst, lin), cp.primal_to_interface_hi),
                  (PolyField.interpolate(cp.lo.tg.dst, lin), cp.primal_to_interface_lo)):
        worst = max(worst, float(np.abs(op(f).nodal_values - lin(itf.nodes)).max()))
    return worst


def flux_mass_residual(rng, cp: CouplingProjections, k: int = 0) -> float:
    """Per-target-cell mass mismatch of both flux operators on a random mortar."""
    nu = random_broken(rng, cp.interface_grid, k)
    worst = 0.0
    for cache in (cp.hi, cp.lo):
        tg = cache.tg
        w = prolong(nu, tg, cache)
        out = mass_constrained_project(w, tg.dst, k, cache)
        target = np.zeros(tg.dst.num_cells)
        np.add.at(target, tg.dst_parent, w.cell_integrals())
        scale = max(1.0, float(np.abs(target).max()))
        worst = max(worst, float(np.abs(out.cell_integrals() - target).max()) / scale)
    return worst


def overlap_average_gap(rng, src: SimplicialGrid, dst: SimplicialGrid) -> float:
    """k = 0 constrained projection versus the overlap-weighted average formula."""
    tg = build_transfer(src, dst)
    cache = ProjectionCache(tg)
    nu = random_broken(rng, src, 0)
    out = mass_constrained_project(prolong(nu, tg, cache), dst, 0, cache).coeffs[:, 0]
    num = np.zeros(dst.num_cells)
    np.add.at(num, tg.dst_parent, tg.cell_volumes * nu.coeffs[tg.src_parent, 0])
    return float(np.abs(out - num / dst.cell_volumes).max())


def stability_ratio(rng, cp: CouplingProjections, samples: int = 20) -> float:
    """Largest sampled ||P q|| / ||q|| over the six operators."""
    worst = 0.0
    hi, lo, itf = cp.hi.tg.dst, cp.lo.tg.dst, cp.interface_grid
    for _ in range(samples):
        for f, op in ((random_p1(rng, hi), cp.primal_to_interface_hi),
                      (random_p1(rng, lo), cp.primal_to_interface_lo),
                      (random_broken(rng, hi, 0), cp.dual_potential_to_interface_hi),
                      (random_broken(rng, lo, 0), cp.dual_potential_to_interface_lo),
                      (random_broken(rng, itf, 0), cp.flux_to_internal_boundary),
                      (random_broken(rng, itf, 0), cp.flux_to_lower)):
            worst = max(worst, op(f).l2_norm() / f.l2_norm())
    return worst


def transfer_partition(tg: TransferGrid) -> tuple[float, bool]:
    d = check_transfer(tg)
    return d["measure_error"], d["node_inclusion"]


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def run_projection_checks(seed: int = 0, n_1d: int = 200, n_2d: int = 20) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    ident = cons = p1 = mass = avg = stab = part = 0.0
    for _ in range(n_1d):
        g = lambda: random_segment_grid(rng, int(rng.integers(1, 9)))
        cp = coupling(g(), g(), g())
        cons = max(cons, constant_reproduction(cp))
        p1 = max(p1, p1_reproduction(cp))
        mass = max(mass, flux_mass_residual(rng, cp, 0), flux_mass_residual(rng, cp, 1))
        avg = max(avg, overlap_average_gap(rng, g(), g()))
        stab = max(stab, stability_ratio(rng, cp, 2))
        part = max(part, transfer_partition(cp.hi.tg)[0], transfer_partition(cp.lo.tg)[0])
        ident = max(ident, matching_identity(rng, g()))
    for _ in range(n_2d):
        cp = coupling(random_triangulation(rng), random_triangulation(rng), random_triangulation(rng))
        cons = max(cons, constant_reproduction(cp))
        mass = max(mass, flux_mass_residual(rng, cp, 0), flux_mass_residual(rng, cp, 1))
        part = max(part, transfer_partition(cp.hi.tg)[0])
        ident = max(ident, matching_identity(rng, random_triangulation(rng)))
    return [
        CheckResult("identity on matching grids (six operators)", ident, 1e-13),
        CheckResult("constant reproduction (six operators)", cons, 1e-12),
        CheckResult("P1 reproduction (primal operators)", p1, 1e-13),
        CheckResult("local mass conservation (flux operators)", mass, 1e-12),
        CheckResult("k=0 constrained projection = overlap average", avg, 1e-14),
        CheckResult("transfer grid measure partition", part, 1e-12),
        CheckResult("sampled L2 operator norm bound", stab, 10.0),
    ]
