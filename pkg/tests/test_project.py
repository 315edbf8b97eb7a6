import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdest import SimplicialGrid
from mdest.errors import GridMismatchError, ProjectionError
from mdest.mdgrid import perturb_internal_nodes, segment_grid, uniform_segment_grid
from mdest.project import (
    CouplingProjections,
    PolyField,
    ProjectionCache,
    l2_project,
    mass_constrained_project,
    mass_matrix,
    n_local,
    prolong,
    scott_zhang,
)
from mdest.selfcheck import coupling, matching_identity, random_segment_grid, random_triangulation
from mdest.transfer import build_transfer

GL_X, GL_W = np.polynomial.legendre.leggauss(8)


def line(xs):
    xs = np.asarray(xs, float)
    return segment_grid(np.column_stack([xs, np.zeros_like(xs)]))


def integrate_1d(f, a, b):
    """Gauss-Legendre integral of a callable of the scalar coordinate over [a, b]."""
    t = 0.5 * (b - a) * GL_X + 0.5 * (a + b)
    return 0.5 * (b - a) * GL_W @ f(t)


def broken_eval_1d(field: PolyField, s):
    """Evaluate a broken field on a segment grid along x at the scalar positions ``s``."""
    g = field.grid
    x = g.cell_vertices[:, :, 0]
    out = np.empty_like(s)
    for n, sv in enumerate(s):
        k = np.nonzero((x.min(axis=1) <= sv) & (sv <= x.max(axis=1)))[0][0]
        out[n] = field.evaluate([k], np.array([[sv, 0.0]]))[0]
    return out


def children(tg, which, K):
    return np.nonzero(tg.parent(which) == K)[0]


class TestPolyField:
    def test_coefficient_counts(self):
        assert [n_local(k, d) for k in (0, 1) for d in (0, 1, 2)] == [1, 1, 1, 1, 2, 3]
        with pytest.raises(ProjectionError):
            n_local(2, 1)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_mass_matrix_against_quadrature(self, dim):
        g = random_triangulation(np.random.default_rng(0)) if dim == 2 else line([0, 0.3, 1])
        M = mass_matrix(1, dim, g.cell_volumes)
        f = PolyField(g, 1, np.eye(dim + 1)[0][None].repeat(g.num_cells, 0))
        _, W, v = f.at_quadrature(4)
        np.testing.assert_allclose(M[:, 0, 0], (W * v**2).sum(axis=1), rtol=1e-13)
        assert np.all(np.linalg.eigvalsh(M) > 0)

    def test_nodal_roundtrip_and_jump(self):
        g = line([0, 0.5, 1])
        f = PolyField.from_nodal(g, [1.0, 2.0, 0.0])
        np.testing.assert_array_equal(f.nodal_values, [1, 2, 0])
        assert f.max_jump() == 0.0
        broken = PolyField(g, 1, [[1.0, 2.0], [2.5, 0.0]])
        assert broken.max_jump() == pytest.approx(0.5)

    def test_cell_means(self):
        f = PolyField.cell_means(line([0, 0.5, 1]), lambda X: X[:, 0] ** 2)
        np.testing.assert_allclose(f.coeffs[:, 0], [1 / 12, 7 / 12])


class TestProlong:
    def test_constant(self):
        tg = build_transfer(line([0, 0.3, 1]), line([0, 0.5, 0.8, 1]))
        out = prolong(PolyField(tg.dst, 0, np.full(3, 1.7)), tg)
        np.testing.assert_array_equal(out.coeffs, 1.7)

    def test_linear_split(self):
        src, dst = line([0, 1]), line([0, 0.4, 1])
        tg = build_transfer(src, dst)
        out = prolong(PolyField.interpolate(src, lambda X: X[:, 0]), tg)
        np.testing.assert_allclose(out.coeffs, [[0, 0.4], [0.4, 1]], atol=1e-15)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_pointwise_agreement(self, dim, rng):
        if dim == 1:
            a, b = random_segment_grid(rng, 5), random_segment_grid(rng, 7)
        else:
            a, b = random_triangulation(rng), random_triangulation(rng)
        tg = build_transfer(a, b)
        f = PolyField(b, 1, rng.standard_normal((b.num_cells, dim + 1)))
        w = prolong(f, tg)
        cells = rng.integers(0, tg.num_cells, 50)
        lam = rng.dirichlet(np.ones(dim + 1), 50)
        X = np.einsum("na,nak->nk", lam, tg.cell_vertices[cells])
        np.testing.assert_allclose(w.evaluate(cells, X), f.evaluate(tg.dst_parent[cells], X), atol=1e-14)

    def test_wrong_grid(self):
        tg = build_transfer(line([0, 1]), line([0, 0.5, 1]))
        with pytest.raises(GridMismatchError):
            prolong(PolyField(line([0, 1]), 0, [1.0]), tg)


class TestScottZhang:
    @pytest.mark.parametrize("seed", range(5))
    def test_linear_reproduced(self, seed):
        rng = np.random.default_rng(seed)
        tg = build_transfer(random_segment_grid(rng, 4), random_segment_grid(rng, 6))
        cache = ProjectionCache(tg)
        f = PolyField.interpolate(tg.dst, lambda X: 2 * X[:, 0] + 1)
        out = scott_zhang(prolong(f, tg, cache), tg.src, cache)
        np.testing.assert_allclose(out.nodal_values, 2 * tg.src.nodes[:, 0] + 1, atol=1e-13)

    def test_constant(self):
        tg = build_transfer(line([0, 0.2, 1]), line([0, 0.7, 1]))
        cache = ProjectionCache(tg)
        out = scott_zhang(PolyField(tg, 1, np.full((tg.num_cells, 2), -3.0)), tg.src, cache)
        np.testing.assert_allclose(out.nodal_values, -3.0, atol=1e-14)

    def test_dual_basis_oracle(self):
        """Three target cells, nonconforming input with jumps: explicit dual basis per node."""
        target = line([0.0, 0.3, 0.6, 1.0])
        other = line([0.0, 0.45, 0.8, 1.0])
        tg = build_transfer(target, other)
        cache = ProjectionCache(tg)
        rng = np.random.default_rng(7)
        w = PolyField(tg, 1, rng.standard_normal((tg.num_cells, 2)))
        out = scott_zhang(w, target, cache).nodal_values

        expected = np.empty(target.num_nodes)
        for z in range(target.num_nodes):
            if z in (0, target.num_nodes - 1):
                expected[z] = broken_eval_1d(w, np.array([target.nodes[z, 0]]))[0]
                continue
            K = min(np.nonzero((target.cells == z).any(axis=1))[0])
            a, b = target.nodes[target.cells[K], 0]
            phi = [lambda t: (b - t) / (b - a), lambda t: (t - a) / (b - a)]
            M = np.array([[integrate_1d(lambda t: p(t) * q(t), a, b) for q in phi] for p in phi])
            psi = np.linalg.inv(M)  # dual basis coefficients in the nodal basis
            moments = np.zeros(2)
            for c in children(tg, "src", K):
                ca, cb = tg.cell_vertices[c, :, 0]
                for i, p in enumerate(phi):
                    moments[i] += integrate_1d(lambda t: p(t) * broken_eval_1d(w, t), ca, cb)
            loc = list(target.cells[K]).index(z)
            expected[z] = psi[loc] @ moments
        np.testing.assert_allclose(out, expected, atol=1e-13)

    def test_target_not_in_transfer(self):
        tg = build_transfer(line([0, 1]), line([0, 0.5, 1]))
        with pytest.raises(GridMismatchError):
            scott_zhang(PolyField(tg, 1, np.zeros((2, 2))), line([0, 1]), ProjectionCache(tg))


class TestL2Projection:
    def test_average(self):
        src, dst = line([0, 1]), line([0, 0.5, 1])
        tg = build_transfer(src, dst)
        cache = ProjectionCache(tg)
        w = prolong(PolyField(dst, 0, [2.0, 4.0]), tg, cache)
        assert l2_project(w, src, 0, cache).coeffs[0, 0] == pytest.approx(3.0)

    def test_idempotent(self, rng):
        a, b = random_triangulation(rng), random_triangulation(rng)
        tg = build_transfer(a, b)
        cache = ProjectionCache(tg)
        f = PolyField(a, 1, rng.standard_normal((a.num_cells, 3)))
        np.testing.assert_allclose(l2_project(prolong(f, tg, cache), a, 1, cache).coeffs, f.coeffs, atol=1e-12)

    @pytest.mark.parametrize("k", [0, 1])
    def test_orthogonality(self, k, rng):
        a, b = random_triangulation(rng), random_triangulation(rng)
        tg = build_transfer(a, b)
        cache = ProjectionCache(tg)
        w = PolyField(tg, 1, rng.standard_normal((tg.num_cells, 3)))
        P = prolong(l2_project(w, a, k, cache), tg, cache)
        X, W, vw = w.at_quadrature(4)
        _, _, vp = P.at_quadrature(4)
        # test functions: P1 basis of the parent cell evaluated at the child quadrature points
        lam = a.barycentric(np.repeat(tg.src_parent, X.shape[1]), X.reshape(-1, 2)).reshape(X.shape[0], X.shape[1], 3)
        test = lam if k == 1 else np.ones(lam.shape[:2] + (1,))
        res = np.zeros((a.num_cells, test.shape[2]))
        np.add.at(res, tg.src_parent, np.einsum("mq,mqa->ma", W * (vw - vp), test))
        assert np.abs(res).max() <= 1e-12


class TestMassConstrained:
    def test_k0_average(self):
        src, dst = line([0, 1]), line([0, 0.5, 1])
        tg = build_transfer(src, dst)
        cache = ProjectionCache(tg)
        out, mu = mass_constrained_project(prolong(PolyField(dst, 0, [2.0, 4.0]), tg, cache), src, 0, cache,
                                           return_multiplier=True)
        assert out.coeffs[0, 0] == pytest.approx(3.0)
        assert mu[0] == pytest.approx(0.0, abs=1e-15)

    def test_constant_input(self, rng):
        a, b = random_triangulation(rng), random_triangulation(rng)
        tg = build_transfer(a, b)
        cache = ProjectionCache(tg)
        for k in (0, 1):
            out, mu = mass_constrained_project(PolyField(tg, 1, np.full((tg.num_cells, 3), 0.6)), a, k, cache,
                                               return_multiplier=True)
            np.testing.assert_allclose(out.coeffs, 0.6, atol=1e-13)
            np.testing.assert_allclose(mu, 0.0, atol=1e-13)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_k1_dense_kkt_oracle(self, dim, rng):
        if dim == 1:
            a, b = random_segment_grid(rng, 4), random_segment_grid(rng, 6)
        else:
            a, b = random_triangulation(rng), random_triangulation(rng)
        tg = build_transfer(a, b)
        cache = ProjectionCache(tg)
        w = PolyField(tg, 1, rng.standard_normal((tg.num_cells, dim + 1)))
        mass = rng.standard_normal(a.num_cells)
        out = mass_constrained_project(w, a, 1, cache, mass=mass)
        free = l2_project(w, a, 1, cache)
        M = mass_matrix(1, dim, a.cell_volumes)
        X, W, vw = w.at_quadrature(4)
        lam = a.barycentric(np.repeat(tg.src_parent, X.shape[1]), X.reshape(-1, 2)).reshape(X.shape[0], X.shape[1], -1)
        rhs = np.zeros((a.num_cells, dim + 1))
        np.add.at(rhs, tg.src_parent, np.einsum("mq,mqa->ma", W * vw, lam))
        for K in range(a.num_cells):
            c = np.full(dim + 1, a.cell_volumes[K] / (dim + 1))
            kkt = np.block([[M[K], c[:, None]], [c[None], np.zeros((1, 1))]])
            sol = np.linalg.solve(kkt, np.r_[rhs[K], mass[K]])
            np.testing.assert_allclose(out.coeffs[K], sol[:-1], atol=1e-11)
            assert out.coeffs[K] @ c == pytest.approx(mass[K], abs=1e-12)
            # the constraint shifts the free projection along M^-1 c
            d = out.coeffs[K] - free.coeffs[K]
            v = np.linalg.solve(M[K], c)
            np.testing.assert_allclose(d, (d @ v) / (v @ v) * v, atol=1e-10)


class TestCouplingOperators:
    def test_flux_overlap_average(self):
        mortar_grid = line([0, 0.5, 1])
        target = line([0, 0.25, 1])
        cp = coupling(mortar_grid, target, line([0, 1]))
        out = cp.flux_to_internal_boundary(PolyField(mortar_grid, 0, [2.0, 4.0]))
        np.testing.assert_allclose(out.coeffs[:, 0], [2.0, 10.0 / 3.0], rtol=1e-15)

    @pytest.mark.parametrize("k", [0, 1])
    def test_total_mass(self, k, rng):
        g = lambda: random_segment_grid(rng, int(rng.integers(2, 9)))
        cp = coupling(g(), g(), g())
        nu = PolyField(cp.interface_grid, k, rng.standard_normal((cp.interface_grid.num_cells, 1 + k)))
        for op in (cp.flux_to_internal_boundary, cp.flux_to_lower):
            assert op(nu).cell_integrals().sum() == pytest.approx(nu.cell_integrals().sum(), abs=1e-12)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_matching_identity(self, dim, rng):
        for _ in range(10):
            g = random_segment_grid(rng, int(rng.integers(1, 9))) if dim == 1 else random_triangulation(rng)
            assert matching_identity(rng, g) <= 1e-13

    def test_linear_through_mismatch(self, rng):
        g = lambda: random_segment_grid(rng, int(rng.integers(2, 9)))
        cp = coupling(g(), g(), g())
        lin = lambda X: 0.3 - 1.1 * X[:, 0]
        for op, grid in ((cp.primal_to_interface_hi, cp.hi.tg.dst), (cp.primal_to_interface_lo, cp.lo.tg.dst)):
            out = op(PolyField.interpolate(grid, lin))
            np.testing.assert_allclose(out.nodal_values, lin(cp.interface_grid.nodes), atol=1e-13)

    def test_matrix_forms_agree(self, rng):
        g = lambda: random_segment_grid(rng, int(rng.integers(2, 9)))
        cp = coupling(g(), g(), g())
        nu = PolyField(cp.interface_grid, 0, rng.standard_normal(cp.interface_grid.num_cells))
        np.testing.assert_allclose(cp.flux_matrix("lo") @ nu.flat, cp.flux_to_lower(nu).flat, atol=1e-14)
        q = PolyField.from_nodal(cp.lo.tg.dst, rng.standard_normal(cp.lo.tg.dst.num_nodes))
        np.testing.assert_allclose(cp.primal_matrix("lo") @ q.flat, cp.primal_to_interface_lo(q).nodal_values,
                                   atol=1e-14)
        w = PolyField(cp.hi.tg.dst, 0, rng.standard_normal(cp.hi.tg.dst.num_cells))
        np.testing.assert_allclose(cp.dual_potential_matrix("hi", 0) @ w.flat,
                                   cp.dual_potential_to_interface_hi(w).flat, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.49), st.sampled_from([1, -1]))
def test_norm_bound_independent_of_shift(frac, sign):
    """Sampled L2 operator norms stay bounded however far the lower grid is shifted."""
    rng = np.random.default_rng(11)
    base = uniform_segment_grid([0, 0], [1, 0], 8)
    itf = uniform_segment_grid([0, 0], [1, 0], 8)
    lo = perturb_internal_nodes(base, frac / 8, [sign, 0])
    cp = CouplingProjections(ProjectionCache(build_transfer(itf, base)), ProjectionCache(build_transfer(itf, lo)))
    worst = 0.0
    for _ in range(200 // 8):
        q = PolyField.from_nodal(lo, rng.standard_normal(lo.num_nodes))
        worst = max(worst, cp.primal_to_interface_lo(q).l2_norm() / q.l2_norm())
        nu = PolyField(itf, 0, rng.standard_normal(itf.num_cells))
        worst = max(worst, cp.flux_to_lower(nu).l2_norm() / nu.l2_norm())
    assert worst <= 5.0


def test_cache_reuses_operators():
    tg = build_transfer(line([0, 0.5, 1]), line([0, 0.3, 1]))
    cache = ProjectionCache(tg)
    assert cache.l2_matrix("src", 1, 1) is cache.l2_matrix("src", 1, 1)
    assert cache.side_of(tg.src) == "src" and cache.side_of(tg) == "transfer"
    with pytest.raises(GridMismatchError):
        cache.side_of(SimplicialGrid(1, [[0, 0], [1, 0]], [[0, 1]]))
