from math import factorial

import numpy as np
import pytest

from mdest.quadrature import rule


def monomial_integral_triangle(a, b):
    # int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 5])
def test_triangle_rules_exact(degree):
    q = rule(2, degree)
    assert q.weights.sum() == pytest.approx(0.5, abs=1e-15)
    x, y = q.points[:, 1], q.points[:, 2]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert q.weights @ (x**a * y**b) == pytest.approx(monomial_integral_triangle(a, b), abs=1e-14)


@pytest.mark.parametrize("degree", [1, 3, 5, 7, 9])
def test_segment_rules_exact(degree):
    q = rule(1, degree)
    t = q.points[:, 1]
    for a in range(degree + 1):
        assert q.weights @ t**a == pytest.approx(1.0 / (a + 1), abs=1e-15)


def test_physical_weights_sum_to_volume():
    q = rule(2, 5)
    vol = np.array([0.5, 0.125])
    np.testing.assert_allclose(q.scaled_weights(vol).sum(axis=1), vol)


def test_no_rule_beyond_degree_five():
    with pytest.raises(ValueError):
        rule(2, 6)
