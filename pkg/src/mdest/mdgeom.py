"""Mixed-dimensional domain decomposition in the plane.

A domain is a collection of flat subdomains (polygons, segments, points)
coupled across codimension-one interfaces. Each interface ``j`` knows its
higher-dimensional neighbour ``hi`` and lower-dimensional neighbour ``lo``;
the index sets ``hat_S`` and ``check_S`` are derived from those.

The description is a plain dictionary with keys ``subdomains``,
``interfaces``, ``materials`` and ``boundary_conditions`` (see
``docs``-style notes in the README). Scalar data may be numbers, callables
``f(X) -> array`` on point arrays of shape (n, 2), or string expressions in
``x`` and ``y`` evaluated with numpy.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    BoundaryOverlapError,
    CouplingDimensionError,
    DomainError,
    GeometryMismatchError,
    MissingDirichletError,
    NonSpdError,
)

AMBIENT_DIM = 2
GEOM_RTOL = 1e-10

Field = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Planar geometry helpers
# ---------------------------------------------------------------------------


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` (n, 2) to the closed segment [a, b]."""
    p = np.atleast_2d(p)
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return np.linalg.norm(p - a, axis=1)
    t = np.clip((p - a) @ ab / L2, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float) -> np.ndarray:
    return point_segment_distance(p, a, b) <= tol


def points_in_polygon(p: np.ndarray, poly: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Closed point-in-polygon test (crossing number plus boundary tolerance)."""
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    inside = np.zeros(len(p), dtype=bool)
    on_bnd = np.zeros(len(p), dtype=bool)
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        on_bnd |= on_segment(p, a, b, tol)
        cond = (a[1] > y) != (b[1] > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= cond & (x < xc)
    return inside | on_bnd


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def hausdorff(g1: "Geometry", g2: "Geometry") -> float:
    """Hausdorff distance between two points/segments (exact for convex sets)."""
    def dist_to(pts, g):
        if g.kind == "point":
            return np.linalg.norm(pts - g.points[0], axis=1)
        if g.kind == "segment":
            return point_segment_distance(pts, g.points[0], g.points[1])
        # polyline: min over its pieces
        d = np.full(len(pts), np.inf)
        for a, b in zip(g.points[:-1], g.points[1:]):
            d = np.minimum(d, point_segment_distance(pts, a, b))
        return d

    return float(max(dist_to(g1.points, g2).max(), dist_to(g2.points, g1).max()))


@dataclass(frozen=True)
class Geometry:
    """Point, segment or polygon descriptor embedded in the plane."""

    kind: str  # "point", "segment", "polygon" or "polyline"
    points: np.ndarray

    @classmethod
    def from_points(cls, pts, dim: int | None = None) -> "Geometry":
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != AMBIENT_DIM:
            raise DomainError(f"geometry must be given in R^2, got shape {pts.shape}")
        if dim is None:
            dim = {1: 0, 2: 1}.get(len(pts), 2)
        kind = {0: "point", 1: "segment", 2: "polygon"}[dim]
        expected = {0: 1, 1: 2}.get(dim)
        if expected is not None and len(pts) != expected:
            raise DomainError(f"{kind} needs {expected} points, got {len(pts)}")
        if kind == "polygon" and polygon_area(pts) < 0:
            pts = pts[::-1].copy()
        return cls(kind, pts)

    @property
    def dim(self) -> int:
        return {"point": 0, "segment": 1, "polygon": 2, "polyline": 1}[self.kind]

    @property
    def measure(self) -> float:
        if self.kind == "point":
            return 1.0
        if self.kind == "segment":
            return float(np.linalg.norm(self.points[1] - self.points[0]))
        if self.kind == "polygon":
            return polygon_area(self.points)
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    @property
    def tangent(self) -> np.ndarray:
        d = self.points[1] - self.points[0]
        return d / np.linalg.norm(d)

    @property
    def normal(self) -> np.ndarray:
        """Left normal of a segment: the tangent rotated by +90 degrees."""
        t = self.tangent
        return np.array([-t[1], t[0]])

    def contains(self, p: np.ndarray, tol: float) -> np.ndarray:
        p = np.atleast_2d(p)
        if self.kind == "point":
            return np.linalg.norm(p - self.points[0], axis=1) <= tol
        if self.kind == "segment":
            return on_segment(p, self.points[0], self.points[1], tol)
        if self.kind == "polygon":
            return points_in_polygon(p, self.points, tol)
        raise DomainError("containment undefined for polylines")

    def boundary_contains(self, p: np.ndarray, tol: float) -> np.ndarray:
        p = np.atleast_2d(p)
        if self.kind == "segment":
            return (np.linalg.norm(p - self.points[0], axis=1) <= tol) | (
                np.linalg.norm(p - self.points[1], axis=1) <= tol
            )
        if self.kind == "polygon":
            n = len(self.points)
            out = np.zeros(len(p), dtype=bool)
            for k in range(n):
                out |= on_segment(p, self.points[k], self.points[(k + 1) % n], tol)
            return out
        return np.zeros(len(p), dtype=bool)


# ---------------------------------------------------------------------------
# Data fields
# ---------------------------------------------------------------------------

_EXPR_NAMESPACE = {
    k: getattr(np, k)
    for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "where", "minimum", "maximum")
}


def as_field(value, shape: tuple = ()) -> Field:
    """Turn a constant, string expression or callable into a vectorised field."""
    if callable(value):
        def f(X, _v=value):
            X = np.atleast_2d(X)
            out = np.asarray(_v(X), dtype=float)
            if out.ndim == 0 or out.shape == shape:
                out = np.broadcast_to(out, (len(X),) + shape)
            return np.array(out, dtype=float)
        return f
    if isinstance(value, str):
        code = compile(value, "<expression>", "eval")

        def f(X, _c=code):
            X = np.atleast_2d(X)
            ns = dict(_EXPR_NAMESPACE, x=X[:, 0], y=X[:, 1])
            out = np.asarray(eval(_c, {"__builtins__": {}}, ns), dtype=float)
            return np.array(np.broadcast_to(out, (len(X),) + shape), dtype=float)
        f.expression = value
        return f
    arr = np.asarray(value, dtype=float)

    def f(X, _a=arr):
        X = np.atleast_2d(X)
        return np.array(np.broadcast_to(_a, (len(X),) + _a.shape), dtype=float)
    f.constant = arr
    return f


def permeability_tensor(values: np.ndarray, dim: int) -> np.ndarray:
    """Promote sampled permeability values to (n, 2, 2) tensors.

    Scalars become multiples of the identity. For subdomains of dimension
    below two the tensor acts on tangential vectors only, where it is the
    scalar times the identity.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if values.ndim == 1:
        return values[:, None, None] * np.eye(2)[None]
    if dim < 2:
        raise NonSpdError("lower-dimensional subdomains take scalar permeabilities")
    return values.reshape(n, 2, 2)


def check_spd(K: np.ndarray, where: str) -> np.ndarray:
    """Check symmetry and positivity, return the smallest eigenvalues."""
    K = np.asarray(K, dtype=float)
    if not np.allclose(K, np.swapaxes(K, -1, -2), rtol=1e-12, atol=1e-14):
        raise NonSpdError(f"permeability of {where} is not symmetric")
    eig = np.linalg.eigvalsh(K)
    if not np.all(np.isfinite(eig)) or eig.min() <= 0:
        raise NonSpdError(f"permeability of {where} is not positive definite")
    return eig[..., 0]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class DirichletPiece:
    geometry: Geometry
    value: Field


@dataclass
class Subdomain:
    id: int
    dim: int
    geometry: Geometry
    dirichlet_segments: list[DirichletPiece] = field(default_factory=list)
    neumann_segments: list[Geometry] = field(default_factory=list)
    permeability: Field = None
    source: Field = None
    cell_sources: list[tuple[np.ndarray, float]] = field(default_factory=list)


@dataclass
class Interface:
    id: int
    dim: int
    hi: int
    lo: int
    geometry: Geometry
    normal_permeability: Field = None
    side: int | None = None  # which side of the lower subdomain hi lies on


@dataclass
class MdDomain:
    subdomains: dict[int, Subdomain]
    interfaces: dict[int, Interface]
    hat_S: dict[int, set[int]]
    check_S: dict[int, set[int]]
    eps_geom: float
    spec: dict | None = None

    def subdomain_ids(self, dim: int | None = None) -> list[int]:
        return sorted(i for i, s in self.subdomains.items() if dim is None or s.dim == dim)

    def interface_ids(self, dim: int | None = None) -> list[int]:
        return sorted(j for j, g in self.interfaces.items() if dim is None or g.dim == dim)

    @property
    def diameter(self) -> float:
        pts = np.vstack([s.geometry.points for s in self.subdomains.values()])
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def permeability(self, i: int, X: np.ndarray) -> np.ndarray:
        sd = self.subdomains[i]
        return permeability_tensor(sd.permeability(X), sd.dim)

    def kappa(self, j: int, X: np.ndarray) -> np.ndarray:
        return self.interfaces[j].normal_permeability(X)


def _lookup(items: list, key: str, idx: int) -> dict:
    for it in items:
        if it.get(key) == idx:
            return it
    return {}


def build_domain(spec: dict) -> MdDomain:
    """Validate a domain description and build the index sets.

    Raises
    ------
    CouplingDimensionError
        An interface couples subdomains that are not one dimension apart.
    MissingDirichletError
        No subdomain carries a Dirichlet boundary piece.
    NonSpdError
        A constant permeability is not symmetric positive definite, or a
        normal permeability is not positive.
    """
    materials = spec.get("materials", [])
    bcs = spec.get("boundary_conditions", [])

    subdomains: dict[int, Subdomain] = {}
    for s in spec["subdomains"]:
        i = int(s["id"])
        dim = int(s["dim"])
        if not 0 <= dim <= AMBIENT_DIM:
            raise DomainError(f"subdomain {i}: dimension {dim} outside [0, 2]")
        geom = Geometry.from_points(s["geometry"], dim)
        mat = _lookup(materials, "subdomain", i)
        perm_val = mat.get("permeability", s.get("permeability", 1.0))
        perm = as_field(perm_val)
        if hasattr(perm, "constant"):
            K = permeability_tensor(perm(np.zeros((1, 2))), dim)
            check_spd(K, f"subdomain {i}")
        src = as_field(mat.get("source", s.get("source", 0.0)))
        cell_sources = [(np.asarray(c["point"], float), float(c["value"]))
                        for c in mat.get("cell_sources", [])]
        subdomains[i] = Subdomain(i, dim, geom, permeability=perm, source=src,
                                  cell_sources=cell_sources)

    for bc in bcs:
        i = int(bc["subdomain"])
        if i not in subdomains:
            raise DomainError(f"boundary condition refers to unknown subdomain {i}")
        sd = subdomains[i]
        g = Geometry.from_points(bc["geometry"], max(sd.dim - 1, 0))
        kind = bc.get("type", "dirichlet").lower()
        if kind == "dirichlet":
            sd.dirichlet_segments.append(DirichletPiece(g, as_field(bc.get("value", 0.0))))
        elif kind == "neumann":
            sd.neumann_segments.append(g)
        else:
            raise DomainError(f"unknown boundary condition type {kind!r}")

    interfaces: dict[int, Interface] = {}
    hat_S = {i: set() for i in subdomains}
    check_S = {i: set() for i in subdomains}
    for itf in spec.get("interfaces", []):
        j = int(itf["id"])
        hi, lo = int(itf["hi"]), int(itf["lo"])
        if hi not in subdomains or lo not in subdomains:
            raise DomainError(f"interface {j} couples unknown subdomains ({hi}, {lo})")
        if subdomains[hi].dim != subdomains[lo].dim + 1:
            raise CouplingDimensionError(
                f"interface {j} couples a {subdomains[hi].dim}D and a "
                f"{subdomains[lo].dim}D subdomain; codimension must be one"
            )
        dim = subdomains[lo].dim
        geom = Geometry.from_points(itf.get("geometry", subdomains[lo].geometry.points), dim)
        mat = _lookup(materials, "interface", j)
        kv = mat.get("normal_permeability", itf.get("normal_permeability", 1.0))
        kappa = as_field(kv)
        if hasattr(kappa, "constant"):
            k0 = float(kappa.constant)
            if not (0.0 < k0 < np.inf):
                raise NonSpdError(f"interface {j}: normal permeability {k0} not in (0, inf)")
        side = itf.get("side")
        interfaces[j] = Interface(j, dim, hi, lo, geom, kappa, None if side is None else int(side))
        hat_S[lo].add(j)
        check_S[hi].add(j)

    if not any(sd.dirichlet_segments for sd in subdomains.values()):
        raise MissingDirichletError("the Dirichlet boundary is empty; the problem is not elliptic")

    pts = np.vstack([s.geometry.points for s in subdomains.values()])
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0
    dom = MdDomain(subdomains, interfaces, hat_S, check_S, GEOM_RTOL * diam, spec)
    _check_boundary_pieces(dom)
    return dom


def _overlap_length(g1: Geometry, g2: Geometry, tol: float) -> float:
    """Length of the collinear overlap of two segments (0 if not collinear)."""
    if g1.kind != "segment" or g2.kind != "segment":
        return 0.0
    a, b = g1.points
    t = g1.tangent
    off_line = np.abs((g2.points - a) @ g1.normal)
    if off_line.max() > tol:
        return 0.0
    s1 = sorted((a @ t, b @ t))
    s2 = sorted(g2.points @ t)
    return max(0.0, min(s1[1], s2[1]) - max(s1[0], s2[0]))


def _check_boundary_pieces(dom: MdDomain) -> None:
    tol = dom.eps_geom
    for sd in dom.subdomains.values():
        if sd.dim != 2:
            continue
        pieces = [("dirichlet", p.geometry) for p in sd.dirichlet_segments]
        pieces += [("neumann", g) for g in sd.neumann_segments]
        pieces += [("internal", dom.interfaces[j].geometry) for j in sorted(dom.check_S[sd.id])]
        for a in range(len(pieces)):
            for b in range(a + 1, len(pieces)):
                ka, ga = pieces[a]
                kb, gb = pieces[b]
                if ka == kb == "internal":
                    continue
                if _overlap_length(ga, gb, tol) > tol:
                    raise BoundaryOverlapError(
                        f"subdomain {sd.id}: {ka} and {kb} boundary pieces overlap"
                    )


def coupling_triplet(domain: MdDomain, j: int) -> tuple[Geometry, Geometry, Geometry]:
    """Return descriptors of (internal boundary of hi, interface, lo subdomain).

    The three must coincide as point sets up to ``domain.eps_geom``.
    """
    if j not in domain.interfaces:
        raise DomainError(f"unknown interface {j}")
    itf = domain.interfaces[j]
    hi = domain.subdomains[itf.hi]
    lo = domain.subdomains[itf.lo]
    tol = domain.eps_geom
    gamma = itf.geometry
    lo_geom = lo.geometry

    if hi.dim == 2:
        samples = lo_geom.points[0] + np.linspace(0, 1, 33)[:, None] * (
            lo_geom.points[1] - lo_geom.points[0]
        )
        inside = hi.geometry.contains(samples, tol)
        if inside.all():
            bnd = lo_geom
        else:
            bnd = Geometry("polyline", samples[inside] if inside.any() else hi.geometry.points)
    else:
        # hi is a segment: the coupled boundary is its endpoint nearest the point
        ends = hi.geometry.points
        k = int(np.argmin(np.linalg.norm(ends - lo_geom.points[0], axis=1)))
        bnd = Geometry("point", ends[k:k + 1])

    for name, g in (("internal boundary", bnd), ("lower subdomain", lo_geom)):
        d = hausdorff(gamma, g)
        if d > tol:
            raise GeometryMismatchError(
                f"interface {j}: {name} deviates from the interface by {d:.3e} > {tol:.1e}"
            )
    return bnd, gamma, lo_geom


def validate_triplets(domain: MdDomain) -> None:
    for j in domain.interfaces:
        coupling_triplet(domain, j)


def load_domain(path: str | Path) -> MdDomain:
    """Read a JSON domain description and build it."""
    with open(path) as fh:
        spec = json.load(fh)
    for key in ("subdomains", "interfaces"):
        if key not in spec:
            raise DomainError(f"domain file {path} lacks the {key!r} array")
    return build_domain(spec)
