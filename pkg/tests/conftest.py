"""Shared fixtures: domain descriptions, matching bundles and solved runs."""
from __future__ import annotations

import copy

import numpy as np
import pytest

from mdest import build_domain, generate_matching_bundle
from mdest.mdgrid import perturbed_bundle
from mdest.mdsolve import solve_domain
from mdest.scenarios import series_resistance_scenario, smooth_source_scenario

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


def two_halves_spec() -> dict:
    """Two 2D halves, four half-fractures meeting at a point, twelve interfaces.

    Subdomains 1, 2 are the left and right halves of the unit square, 3 and 4
    are horizontal half-fractures inside them, 5 and 6 are the vertical
    half-fractures on the dividing line and 7 is the crossing point.
    """
    c = [0.5, 0.5]
    sub = [
        {"id": 1, "dim": 2, "geometry": [[0, 0], [0.5, 0], [0.5, 1], [0, 1]]},
        {"id": 2, "dim": 2, "geometry": [[0.5, 0], [1, 0], [1, 1], [0.5, 1]]},
        {"id": 3, "dim": 1, "geometry": [[0.25, 0.5], c]},
        {"id": 4, "dim": 1, "geometry": [c, [0.75, 0.5]]},
        {"id": 5, "dim": 1, "geometry": [[0.5, 0.0], c]},
        {"id": 6, "dim": 1, "geometry": [c, [0.5, 1.0]]},
        {"id": 7, "dim": 0, "geometry": [c]},
    ]
    itf = [
        {"id": 1, "hi": 1, "lo": 3, "side": 1}, {"id": 2, "hi": 1, "lo": 3, "side": -1},
        {"id": 3, "hi": 1, "lo": 5, "side": 1}, {"id": 4, "hi": 2, "lo": 5, "side": -1},
        {"id": 5, "hi": 1, "lo": 6, "side": 1}, {"id": 6, "hi": 2, "lo": 6, "side": -1},
        {"id": 7, "hi": 2, "lo": 4, "side": 1}, {"id": 8, "hi": 2, "lo": 4, "side": -1},
        {"id": 9, "hi": 3, "lo": 7}, {"id": 10, "hi": 5, "lo": 7},
        {"id": 11, "hi": 4, "lo": 7}, {"id": 12, "hi": 6, "lo": 7},
    ]
    bcs = [
        {"subdomain": 1, "type": "dirichlet", "geometry": [[0, 0], [0, 1]], "value": 1.0},
        {"subdomain": 1, "type": "neumann", "geometry": [[0, 0], [0.5, 0]]},
        {"subdomain": 1, "type": "neumann", "geometry": [[0, 1], [0.5, 1]]},
        {"subdomain": 2, "type": "dirichlet", "geometry": [[1, 0], [1, 1]], "value": 0.0},
        {"subdomain": 2, "type": "neumann", "geometry": [[0.5, 0], [1, 0]]},
        {"subdomain": 2, "type": "neumann", "geometry": [[0.5, 1], [1, 1]]},
    ]
    return {"subdomains": sub, "interfaces": itf, "boundary_conditions": bcs}


def embedded_fracture_spec(y0: float = 0.25, y1: float = 0.75, offset: float = 0.0) -> dict:
    """Unit square with a vertical fracture x = 0.5 on [y0, y1] and two interfaces."""
    frac = [[0.5, y0], [0.5, y1]]
    moved = [[0.5 + offset, y0], [0.5 + offset, y1]]
    return {
        "subdomains": [
            {"id": 0, "dim": 2, "geometry": UNIT_SQUARE},
            {"id": 1, "dim": 1, "geometry": frac},
        ],
        "interfaces": [
            {"id": 0, "hi": 0, "lo": 1, "side": 1, "geometry": moved},
            {"id": 1, "hi": 0, "lo": 1, "side": -1, "geometry": frac},
        ],
        "boundary_conditions": [
            {"subdomain": 0, "type": "dirichlet", "geometry": [[0, 0], [0, 1]], "value": 1.0},
            {"subdomain": 0, "type": "dirichlet", "geometry": [[1, 0], [1, 1]], "value": 0.0},
            {"subdomain": 0, "type": "neumann", "geometry": [[0, 0], [1, 0]]},
            {"subdomain": 0, "type": "neumann", "geometry": [[0, 1], [1, 1]]},
        ],
    }


def matrix_only_spec(value=0.0, source=0.0) -> dict:
    return {
        "subdomains": [{"id": 0, "dim": 2, "geometry": UNIT_SQUARE}],
        "interfaces": [],
        "materials": [{"subdomain": 0, "permeability": 1.0, "source": source}],
        "boundary_conditions": [
            {"subdomain": 0, "type": "dirichlet", "geometry": [[0, 0], [1, 0]], "value": value},
            {"subdomain": 0, "type": "dirichlet", "geometry": [[1, 0], [1, 1]], "value": value},
            {"subdomain": 0, "type": "dirichlet", "geometry": [[1, 1], [0, 1]], "value": value},
            {"subdomain": 0, "type": "dirichlet", "geometry": [[0, 1], [0, 0]], "value": value},
        ],
    }


@pytest.fixture
def fig_spec():
    return copy.deepcopy(two_halves_spec())


@pytest.fixture(scope="session")
def series():
    return series_resistance_scenario()


@pytest.fixture(scope="session")
def smooth():
    return smooth_source_scenario()


@pytest.fixture(scope="session")
def series_domain(series):
    return series.domain()


@pytest.fixture(scope="session", params=["matching", "+t", "-t"])
def series_bundle(request, series_domain):
    base = generate_matching_bundle(series_domain, 1 / 8)
    if request.param == "matching":
        return base
    return perturbed_bundle(base, series_domain, 1 if request.param == "+t" else -1)


@pytest.fixture(scope="session")
def series_solution(series_domain, series_bundle):
    return solve_domain(series_domain, series_bundle)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def domain_from(spec):
    return build_domain(copy.deepcopy(spec))


# one line per acceptance criterion, filled by test_acceptance and echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
