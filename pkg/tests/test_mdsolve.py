import numpy as np
import pytest
import scipy.sparse as sp

from mdest import build_domain, generate_matching_bundle
from mdest.errors import InconsistentBundleError, OutOfCellError, SingularSystemError
from mdest.mdgrid import FACE_DIRICHLET, FACE_INTERIOR, perturbed_bundle
from mdest.mdsolve import (
    MixedSolution,
    assemble,
    check_local_conservation,
    rt0_basis,
    rt0_divergence,
    rt0_eval,
    solve,
    solve_domain,
)

from conftest import domain_from, matrix_only_spec, two_halves_spec


def series_oracle(kappa=1.0, K=1.0):
    """Finite-difference chain x=0 | left trace | fracture | right trace | x=1 with series conductances."""
    g = np.array([K / 0.5, kappa, kappa, K / 0.5])  # conductances between the five nodes
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for e, (a, c) in enumerate([(-1, 0), (0, 1), (1, 2), (2, -2)]):
        for u, v in ((a, c), (c, a)):
            if u < 0:
                continue
            A[u, u] += g[e]
            if v >= 0:
                A[u, v] -= g[e]
            else:
                b[u] += g[e] * (1.0 if v == -1 else 0.0)
    p = np.linalg.solve(A, b)
    return p, g[0] * (1.0 - p[0])


class TestAssembly:
    def test_zero_data(self):
        dom = domain_from(matrix_only_spec())
        sol = solve_domain(dom, generate_matching_bundle(dom, 0.25))
        assert np.abs(sol.u[0]).max() == 0.0
        assert np.abs(sol.p[0]).max() == 0.0

    def test_symmetric(self, series_domain, series_bundle):
        A = assemble(series_domain, series_bundle).matrix
        assert abs(A - A.T).max() <= 1e-14 * abs(A).max()

    def test_dimension(self, series_domain, series_bundle):
        sys_ = assemble(series_domain, series_bundle)
        b = series_bundle
        n_faces = sum(int(np.sum((g.face_tag == FACE_INTERIOR) | (g.face_tag == FACE_DIRICHLET)))
                      for g in b.subdomain_grids.values() if g.dim > 0)
        n_cells = sum(g.num_cells for g in b.subdomain_grids.values())
        n_mortar = sum(g.num_cells for g in b.interface_grids.values())
        assert sys_.n_dofs == n_faces + n_cells + n_mortar

    def test_missing_grid(self, series_domain, series_bundle):
        bad = series_bundle.replace(internal_boundary_grids={0: series_bundle.internal_boundary_grids[0]})
        with pytest.raises(InconsistentBundleError):
            assemble(series_domain, bad)

    def test_divergence_matrix_integrates(self, series_bundle):
        g = series_bundle.subdomain_grids[0]
        B = rt0_divergence(g)
        # a constant field has zero net flux through every cell
        u = g.face_normals @ np.array([0.3, -1.2])
        np.testing.assert_allclose(B @ u, 0.0, atol=1e-15)


class TestSeriesResistance:
    def test_oracle(self):
        p, flux = series_oracle()
        np.testing.assert_allclose(p, [5 / 6, 1 / 2, 1 / 6])
        assert flux == pytest.approx(1 / 3)

    def test_solution(self, series_solution):
        p_oracle, flux = series_oracle()
        sol = series_solution
        np.testing.assert_allclose(sol.p[1], p_oracle[1], atol=1e-10)
        np.testing.assert_allclose(sol.lam[0], flux, atol=1e-10)
        np.testing.assert_allclose(sol.lam[1], -flux, atol=1e-10)
        g = sol.grid(0)
        X = g.cell_centers
        np.testing.assert_allclose(sol.velocity(0, np.arange(g.num_cells), X), np.tile([flux, 0.0], (len(X), 1)),
                                   atol=1e-10)
        np.testing.assert_allclose(sol.u[1], 0.0, atol=1e-10)

    def test_cell_pressures(self, series_solution, series):
        g = series_solution.grid(0)
        # P0 pressure equals the mean of the linear exact pressure, i.e. its centroid value
        np.testing.assert_allclose(series_solution.p[0], series.exact.p(0, g.cell_centers), atol=1e-10)

    def test_conservation(self, series_solution):
        worst, per_cell = check_local_conservation(series_solution)
        assert worst <= 1e-12
        assert set(per_cell) == {0, 1}

    def test_corrupted_mortar_detected(self, series_domain):
        b = generate_matching_bundle(series_domain, 0.25)
        sol = solve_domain(series_domain, b)
        bad = MixedSolution(sol.u, sol.p, {j: v.copy() for j, v in sol.lam.items()}, sol.system, sol.residual)
        bad.lam[0][1] *= 1.1
        _, res = check_local_conservation(bad)
        assert res[1][1] > 1e-3
        g = b.subdomain_grids[0]
        f = b.internal_boundary_grids[0].parent_faces[1]
        assert res[0][g.face_cells[f, 0]] > 1e-3

    def test_dense_path(self, series_domain):
        b = generate_matching_bundle(series_domain, 0.25)
        s1 = solve(assemble(series_domain, b))
        s2 = solve(assemble(series_domain, b), dense_threshold=10**6)
        np.testing.assert_allclose(s1.p[0], s2.p[0], atol=1e-13)

    @pytest.mark.parametrize("kappa", [0.1, 10.0])
    def test_other_normal_permeability(self, series, kappa):
        spec = dict(series.spec)
        spec["materials"] = [m if "interface" not in m else {**m, "normal_permeability": kappa}
                             for m in spec["materials"]]
        dom = build_domain(spec)
        sol = solve_domain(dom, perturbed_bundle(generate_matching_bundle(dom, 1 / 8), dom, 1))
        _, flux = series_oracle(kappa)
        np.testing.assert_allclose(sol.lam[0], flux, atol=1e-10)


class TestSingular:
    def test_floating_subdomain(self):
        spec = two_halves_spec()
        spec["subdomains"] = spec["subdomains"][:2]
        spec["interfaces"] = []
        spec["boundary_conditions"] = [bc for bc in spec["boundary_conditions"] if bc["type"] == "neumann"
                                       or bc["subdomain"] == 1]
        dom = build_domain(spec)
        with pytest.raises(SingularSystemError):
            solve_domain(dom, generate_matching_bundle(dom, 0.25))

    def test_network_solves(self):
        dom = domain_from(two_halves_spec())
        sol = solve_domain(dom, generate_matching_bundle(dom, 0.125))
        assert check_local_conservation(sol)[0] <= 1e-10
        assert sol.p[7][0] == pytest.approx(0.5, abs=1e-10)


@pytest.fixture(scope="module")
def zero_system():
    dom = domain_from(matrix_only_spec())
    return assemble(dom, generate_matching_bundle(dom, 0.25))


def field_solution(system, u):
    return MixedSolution({0: u}, {0: np.zeros(system.bundle.subdomain_grids[0].num_cells)}, {}, system, 0.0)


class TestRT0:
    def test_uniform_flow(self, zero_system, rng):
        g = zero_system.bundle.subdomain_grids[0]
        sol = field_solution(zero_system, g.face_normals @ np.array([1.0, 0.0]))
        for K in rng.integers(0, g.num_cells, 10):
            lam = rng.dirichlet(np.ones(3))
            np.testing.assert_allclose(rt0_eval(sol, 0, K, lam @ g.cell_vertices[K]), [1.0, 0.0], atol=1e-14)

    def test_divergence_identity(self, zero_system, rng):
        g = zero_system.bundle.subdomain_grids[0]
        u = rng.standard_normal(g.num_faces)
        cells = np.arange(g.num_cells)
        X = g.cell_centers
        eps = 1e-4
        div = np.zeros(g.num_cells)
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            vp = np.einsum("na,nak->nk", u[g.cell_faces], rt0_basis(g, cells, X + e))
            vm = np.einsum("na,nak->nk", u[g.cell_faces], rt0_basis(g, cells, X - e))
            div += (vp[:, k] - vm[:, k]) / (2 * eps)
        np.testing.assert_allclose(div, (rt0_divergence(g) @ u) / g.cell_volumes, rtol=1e-8, atol=1e-8)

    def test_normal_trace(self, zero_system, rng):
        g = zero_system.bundle.subdomain_grids[0]
        u = rng.standard_normal(g.num_faces)
        sol = field_solution(zero_system, u)
        for f in rng.integers(0, g.num_faces, 20):
            a, b = g.nodes[g.faces[f]]
            for K in g.face_cells[f]:
                if K < 0:
                    continue
                for t in (0.0, 0.3, 1.0):
                    v = rt0_eval(sol, 0, K, (1 - t) * a + t * b)
                    assert v @ g.face_normals[f] == pytest.approx(u[f], abs=1e-12)

    def test_point_outside(self, zero_system):
        sol = field_solution(zero_system, np.zeros(zero_system.bundle.subdomain_grids[0].num_faces))
        with pytest.raises(OutOfCellError):
            rt0_eval(sol, 0, 0, [5.0, 5.0])

    def test_segment_basis(self, series_bundle):
        g = series_bundle.subdomain_grids[1]
        cells = np.arange(g.num_cells)
        # the two local functions sum to a unit tangential flux when both coefficients are n_f . t
        t = np.array([0.0, 1.0])
        coef = g.face_normals[g.cell_faces] @ t
        v = np.einsum("na,nak->nk", coef, rt0_basis(g, cells, g.cell_centers))
        np.testing.assert_allclose(v, np.tile(t, (g.num_cells, 1)), atol=1e-14)


def test_sparse_blocks_shapes(series_domain, series_bundle):
    s = assemble(series_domain, series_bundle)
    nx = s.dofs.n_x
    assert sp.issparse(s.matrix)
    assert s.matrix[nx:, nx:].nnz == 0
