import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdest import build_domain, coupling_triplet, load_domain
from mdest.errors import (
    BoundaryOverlapError,
    CouplingDimensionError,
    DomainError,
    GeometryMismatchError,
    MissingDirichletError,
    NonSpdError,
)
from mdest.mdgeom import Geometry, as_field, check_spd, hausdorff, permeability_tensor, validate_triplets

from conftest import domain_from, embedded_fracture_spec, two_halves_spec


class TestIndexSets:
    def test_two_halves_topology(self, fig_spec):
        dom = build_domain(fig_spec)
        assert dom.hat_S[5] == {3, 4}
        assert dom.check_S[5] == {10}
        assert dom.hat_S[7] == {9, 10, 11, 12}
        assert dom.hat_S[1] == set() and dom.hat_S[2] == set()
        assert len(dom.interfaces) == 12

    def test_every_interface_listed_once(self, fig_spec):
        dom = build_domain(fig_spec)
        for j, itf in dom.interfaces.items():
            assert sum(j in s for s in dom.hat_S.values()) == 1
            assert sum(j in s for s in dom.check_S.values()) == 1
            assert j in dom.hat_S[itf.lo] and j in dom.check_S[itf.hi]

    def test_single_embedded_fracture(self):
        dom = domain_from(embedded_fracture_spec())
        assert dom.hat_S[1] == {0, 1}
        assert dom.check_S[0] == {0, 1}
        assert dom.hat_S[0] == set()

    def test_dimension_queries(self, fig_spec):
        dom = build_domain(fig_spec)
        assert dom.subdomain_ids(2) == [1, 2]
        assert dom.subdomain_ids(0) == [7]
        assert dom.interface_ids(0) == [9, 10, 11, 12]


class TestValidation:
    def test_skipping_a_dimension(self, fig_spec):
        fig_spec["interfaces"].append({"id": 13, "hi": 1, "lo": 7})
        with pytest.raises(CouplingDimensionError):
            build_domain(fig_spec)

    def test_missing_dirichlet(self, fig_spec):
        for bc in fig_spec["boundary_conditions"]:
            bc["type"] = "neumann"
        with pytest.raises(MissingDirichletError):
            build_domain(fig_spec)

    @pytest.mark.parametrize("perm", [-1.0, [[1.0, 2.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]]])
    def test_non_spd_permeability(self, perm):
        spec = embedded_fracture_spec()
        spec["materials"] = [{"subdomain": 0, "permeability": perm}]
        with pytest.raises(NonSpdError):
            build_domain(spec)

    @pytest.mark.parametrize("kappa", [0.0, -2.0, np.inf])
    def test_bad_normal_permeability(self, kappa):
        spec = embedded_fracture_spec()
        spec["materials"] = [{"interface": 0, "normal_permeability": kappa}]
        with pytest.raises(NonSpdError):
            build_domain(spec)

    def test_overlapping_boundary_pieces(self):
        spec = embedded_fracture_spec()
        spec["boundary_conditions"].append(
            {"subdomain": 0, "type": "neumann", "geometry": [[0, 0.2], [0, 0.4]]})
        with pytest.raises(BoundaryOverlapError):
            build_domain(spec)

    def test_unknown_subdomain(self):
        spec = embedded_fracture_spec()
        spec["interfaces"][0]["lo"] = 9
        with pytest.raises(DomainError):
            build_domain(spec)

    def test_geometry_outside_plane(self):
        with pytest.raises(DomainError):
            Geometry.from_points([[0, 0, 0], [1, 0, 0]])


class TestCouplingTriplet:
    def test_embedded_fracture(self):
        dom = domain_from(embedded_fracture_spec())
        bnd, gamma, lo = coupling_triplet(dom, 1)
        for g in (bnd, gamma, lo):
            assert hausdorff(g, lo) == 0.0
        assert gamma.measure == pytest.approx(0.5)

    def test_two_sides_share_geometry(self):
        dom = domain_from(embedded_fracture_spec())
        t0, t1 = coupling_triplet(dom, 0), coupling_triplet(dom, 1)
        np.testing.assert_array_equal(t0[1].points, t1[1].points)
        assert dom.interfaces[0].side == -dom.interfaces[1].side

    def test_displaced_interface(self):
        dom = domain_from(embedded_fracture_spec(offset=0.1))
        coupling_triplet(dom, 1)
        with pytest.raises(GeometryMismatchError):
            coupling_triplet(dom, 0)
        with pytest.raises(GeometryMismatchError):
            validate_triplets(dom)

    def test_point_coupling(self, fig_spec):
        dom = build_domain(fig_spec)
        bnd, gamma, lo = coupling_triplet(dom, 10)
        np.testing.assert_allclose(bnd.points, [[0.5, 0.5]])
        np.testing.assert_allclose(lo.points, [[0.5, 0.5]])

    def test_all_triplets_valid(self, fig_spec):
        validate_triplets(build_domain(fig_spec))


class TestFields:
    def test_constant(self):
        f = as_field(2.5)
        np.testing.assert_array_equal(f(np.zeros((3, 2))), 2.5)
        assert f.constant == 2.5

    def test_expression(self):
        f = as_field("sin(pi * x) * y")
        X = np.array([[0.5, 2.0], [0.25, 1.0]])
        np.testing.assert_allclose(f(X), np.sin(np.pi * X[:, 0]) * X[:, 1])

    def test_tensor_shape(self):
        K = permeability_tensor(np.array([2.0, 3.0]), 2)
        np.testing.assert_array_equal(K[1], 3.0 * np.eye(2))

    def test_smallest_eigenvalue(self):
        lam = check_spd(np.diag([1.0, 100.0])[None], "test")
        assert lam[0] == pytest.approx(1.0)

    def test_domain_permeability(self):
        spec = embedded_fracture_spec()
        spec["materials"] = [{"subdomain": 0, "permeability": [[2.0, 0.5], [0.5, 1.0]]},
                             {"interface": 1, "normal_permeability": "1 + y"}]
        dom = build_domain(spec)
        K = dom.permeability(0, np.array([[0.1, 0.1], [0.9, 0.9]]))
        np.testing.assert_array_equal(K[0], [[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(dom.kappa(1, np.array([[0.5, 0.5]])), [1.5])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.55, 0.95))
def test_any_embedded_segment_is_a_valid_triplet(y0, y1):
    dom = domain_from(embedded_fracture_spec(y0, y1))
    for j in (0, 1):
        _, gamma, _ = coupling_triplet(dom, j)
        assert gamma.measure == pytest.approx(y1 - y0)


def test_load_domain_roundtrip(tmp_path):
    p = tmp_path / "dom.json"
    p.write_text(json.dumps(two_halves_spec()))
    dom = load_domain(p)
    assert dom.check_S[5] == {10}


def test_load_domain_missing_key(tmp_path):
    p = tmp_path / "dom.json"
    p.write_text(json.dumps({"subdomains": []}))
    with pytest.raises(DomainError):
        load_domain(p)
