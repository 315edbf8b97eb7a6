"""Quadrature rules on reference simplices of dimension 0, 1 and 2.

Points are stored in barycentric coordinates so the same rule can be mapped
onto a segment or triangle embedded in the plane. Weights sum to the measure
of the reference simplex (1 for the unit interval, 1/2 for the unit triangle).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    dim: int
    points: np.ndarray  # (n_points, dim + 1) barycentric coordinates
    weights: np.ndarray  # (n_points,), sum = reference measure
    degree: int

    @property
    def reference_measure(self) -> float:
        return 1.0 / factorial(self.dim)

    def scaled_weights(self, volumes: np.ndarray) -> np.ndarray:
        """Physical weights, shape (n_cells, n_points)."""
        volumes = np.asarray(volumes, dtype=float)
        return np.outer(volumes, self.weights / self.reference_measure)

    def map_points(self, vertices: np.ndarray) -> np.ndarray:
        """Map the rule onto cells given by ``vertices`` of shape (n_cells, dim+1, 2)."""
        return np.einsum("qa,mak->mqk", self.points, vertices)


def _gauss_legendre(n: int) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    pts = np.column_stack([1.0 - t, t])
    return QuadratureRule(1, pts, 0.5 * w, 2 * n - 1)


def _triangle_3() -> QuadratureRule:
    a, b = 2.0 / 3.0, 1.0 / 6.0
    pts = np.array([[a, b, b], [b, a, b], [b, b, a]])
    return QuadratureRule(2, pts, np.full(3, 1.0 / 6.0), 2)


def _orbit3(a: float) -> list[list[float]]:
    b = 1.0 - 2.0 * a
    return [[b, a, a], [a, b, a], [a, a, b]]


def _triangle_6() -> QuadratureRule:
    # Symmetric 6-point rule, exact for degree 4.
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    pts = np.array(_orbit3(a1) + _orbit3(a2))
    w = np.array([w1] * 3 + [w2] * 3) * 0.5
    return QuadratureRule(2, pts, w, 4)


def _triangle_7() -> QuadratureRule:
    # Radon's 7-point rule, exact for degree 5.
    r15 = np.sqrt(15.0)
    a1, w1 = (6.0 - r15) / 21.0, (155.0 - r15) / 1200.0
    a2, w2 = (6.0 + r15) / 21.0, (155.0 + r15) / 1200.0
    pts = np.array([[1 / 3, 1 / 3, 1 / 3]] + _orbit3(a1) + _orbit3(a2))
    w = np.array([9.0 / 40.0] + [w1] * 3 + [w2] * 3) * 0.5
    return QuadratureRule(2, pts, w, 5)


@lru_cache(maxsize=None)
def rule(dim: int, degree: int) -> QuadratureRule:
    """Cheapest available rule on the reference ``dim``-simplex exact to ``degree``."""
    if dim == 0:
        return QuadratureRule(0, np.ones((1, 1)), np.ones(1), 99)
    if dim == 1:
        n = max(1, (degree + 2) // 2)
        return _gauss_legendre(max(n, 3))
    if dim == 2:
        if degree <= 2:
            return _triangle_3()
        if degree <= 4:
            return _triangle_6()
        if degree <= 5:
            return _triangle_7()
        raise ValueError(f"no triangle rule of degree {degree}")
    raise ValueError(f"unsupported simplex dimension {dim}")
