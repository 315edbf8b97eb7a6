"""Bundled verification scenarios and the perturbation sweep driver.

Three scenarios ship with the package:

``series_resistance``
    Unit square cut by a vertical fracture at x = 0.5; pressure 1 on the
    left, 0 on the right. The exact solution is piecewise linear with
    constant mortar fluxes and lies in the discrete space.
``smooth_source``
    Same geometry with a smooth source and full Dirichlet data chosen so the
    exact solution is known in closed form but not discrete.
``network``
    Two crossing conductive fractures meeting at a point, heterogeneous
    matrix, and a source/sink pair in the fractures. No closed form; a
    fine-grid solve serves as reference.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .mdgeom import MdDomain, build_domain

UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


@dataclass
class ExactSolution:
    """Closed-form pressure, gradient, flux and mortar flux callables.

    Each dict maps a subdomain (or interface) id to a callable acting on
    point arrays of shape (n, 2).
    """

    pressure: dict[int, Callable]
    gradient: dict[int, Callable]
    flux: dict[int, Callable]
    mortar: dict[int, Callable]

    def p(self, i, X):
        return self.pressure[i](np.atleast_2d(X))

    def grad(self, i, X):
        return self.gradient[i](np.atleast_2d(X))

    def u(self, i, X):
        return self.flux[i](np.atleast_2d(X))

    def lam(self, j, X):
        return self.mortar[j](np.atleast_2d(X))


@dataclass
class Scenario:
    name: str
    spec: dict
    h_list: list[float]
    directions: list[int] = field(default_factory=lambda: [1, -1])
    reference: str = "none"  # "analytic", "fine-grid-surrogate" or "none"
    exact: ExactSolution | None = None
    expected: str | None = None  # CSV fixture shipped in mdest/data
    refine: int = 8  # surrogate mesh size is h / refine

    def domain(self) -> MdDomain:
        return build_domain(self.spec)


# ---------------------------------------------------------------------------
# Single vertical fracture
# ---------------------------------------------------------------------------


def _single_fracture_spec(kappa: float = 1.0, k_frac: float = 1.0) -> dict:
    return {
        "subdomains": [
            {"id": 0, "dim": 2, "geometry": UNIT_SQUARE},
            {"id": 1, "dim": 1, "geometry": [[0.5, 0.0], [0.5, 1.0]]},
        ],
        # the left normal of the fracture points to -x, so side +1 is the left half
        "interfaces": [
            {"id": 0, "hi": 0, "lo": 1, "side": 1},
            {"id": 1, "hi": 0, "lo": 1, "side": -1},
        ],
        "materials": [
            {"subdomain": 0, "permeability": 1.0, "source": 0.0},
            {"subdomain": 1, "permeability": k_frac, "source": 0.0},
            {"interface": 0, "normal_permeability": kappa},
            {"interface": 1, "normal_permeability": kappa},
        ],
        "boundary_conditions": [
            {"subdomain": 0, "type": "dirichlet", "geometry": [[0.0, 0.0], [0.0, 1.0]], "value": 1.0},
            {"subdomain": 0, "type": "dirichlet", "geometry": [[1.0, 0.0], [1.0, 1.0]], "value": 0.0},
            {"subdomain": 0, "type": "neumann", "geometry": [[0.0, 0.0], [1.0, 0.0]]},
            {"subdomain": 0, "type": "neumann", "geometry": [[0.0, 1.0], [1.0, 1.0]]},
        ],
    }


def _p_series(X):
    x = X[:, 0]
    return np.where(x < 0.5, 1.0 - x / 3.0, (1.0 - x) / 3.0)


def series_resistance_scenario(h_list=(1 / 8, 1 / 16, 1 / 32)) -> Scenario:
    """Vertical fracture with piecewise linear exact pressure.

    Left half p = 1 - x/3, fracture p = 1/2, right half p = (1 - x)/3.
    The matrix flux is (1/3, 0); the mortar flux is +1/3 on the left
    interface (flow into the fracture) and -1/3 on the right one.
    """
    zero2 = lambda X: np.zeros((len(X), 2))
    exact = ExactSolution(
        pressure={0: _p_series, 1: lambda X: np.full(len(X), 0.5)},
        gradient={0: lambda X: np.tile([-1.0 / 3.0, 0.0], (len(X), 1)), 1: zero2},
        flux={0: lambda X: np.tile([1.0 / 3.0, 0.0], (len(X), 1)), 1: zero2},
        mortar={0: lambda X: np.full(len(X), 1.0 / 3.0), 1: lambda X: np.full(len(X), -1.0 / 3.0)},
    )
    return Scenario("series_resistance", _single_fracture_spec(), list(h_list),
                    reference="analytic", exact=exact, expected="series_resistance.csv")


def _smooth_parts(X):
    x, y = X[:, 0], X[:, 1]
    phi = np.sin(np.pi * y)
    dphi = np.pi * np.cos(np.pi * y)
    s = np.abs(x - 0.5)
    sgn = np.where(x < 0.5, -1.0, 1.0)  # ds/dx
    return x, y, phi, dphi, s, sgn


def smooth_p(X):
    x, y, phi, dphi, s, sgn = _smooth_parts(X)
    return _p_series(X) + phi * (1.0 + 0.5 * s)


def _smooth_branch(X, side):
    """Exact matrix pressure extended from the left (-1) or right (+1) half."""
    x, y = X[:, 0], X[:, 1]
    base = 1.0 - x / 3.0 if side < 0 else (1.0 - x) / 3.0
    return base + np.sin(np.pi * y) * (1.0 + 0.5 * side * (x - 0.5))


def smooth_grad(X):
    x, y, phi, dphi, s, sgn = _smooth_parts(X)
    gx = -1.0 / 3.0 + phi * 0.5 * sgn
    gy = dphi * (1.0 + 0.5 * s)
    return np.column_stack([gx, gy])


def smooth_source_scenario(h_list=(1 / 8, 1 / 16, 1 / 32)) -> Scenario:
    """Vertical fracture with a smooth exact solution outside the discrete space.

    With phi(y) = sin(pi y) and s = |x - 1/2| the exact solution is

        matrix    p = p_series(x) + phi (1 + s/2)
        fracture  p = 1/2 + phi/2
        mortars   lambda_left = 1/3 + phi/2, lambda_right = -1/3 + phi/2

    for K = kappa = 1, matrix source pi^2 phi (1 + s/2) and fracture source
    (pi^2/2 - 1) phi. Dirichlet data are the exact values on the whole outer
    boundary and at both fracture ends.
    """
    spec = _single_fracture_spec()
    spec["materials"][0]["source"] = lambda X: np.pi**2 * np.sin(np.pi * X[:, 1]) * (1 + 0.5 * np.abs(X[:, 0] - 0.5))
    spec["materials"][1]["source"] = lambda X: (np.pi**2 / 2 - 1) * np.sin(np.pi * X[:, 1])
    p_frac = lambda X: 0.5 + 0.5 * np.sin(np.pi * X[:, 1])
    # the pressure jumps across the fracture, so the bottom and top sides are
    # split at x = 1/2 and each half gets the data of its own side
    p_left = lambda X: _smooth_branch(X, -1)
    p_right = lambda X: _smooth_branch(X, 1)
    pieces = [
        ([[0.0, 0.0], [0.0, 1.0]], p_left), ([[1.0, 0.0], [1.0, 1.0]], p_right),
        ([[0.0, 0.0], [0.5, 0.0]], p_left), ([[0.5, 0.0], [1.0, 0.0]], p_right),
        ([[0.0, 1.0], [0.5, 1.0]], p_left), ([[0.5, 1.0], [1.0, 1.0]], p_right),
    ]
    spec["boundary_conditions"] = [
        {"subdomain": 0, "type": "dirichlet", "geometry": seg, "value": val} for seg, val in pieces
    ] + [
        {"subdomain": 1, "type": "dirichlet", "geometry": [[0.5, 0.0]], "value": p_frac},
        {"subdomain": 1, "type": "dirichlet", "geometry": [[0.5, 1.0]], "value": p_frac},
    ]

    def frac_grad(X):
        return np.column_stack([np.zeros(len(X)), 0.5 * np.pi * np.cos(np.pi * X[:, 1])])

    exact = ExactSolution(
        pressure={0: smooth_p, 1: p_frac},
        gradient={0: smooth_grad, 1: frac_grad},
        flux={0: lambda X: -smooth_grad(X), 1: lambda X: -frac_grad(X)},
        mortar={
            0: lambda X: 1.0 / 3.0 + 0.5 * np.sin(np.pi * X[:, 1]),
            1: lambda X: -1.0 / 3.0 + 0.5 * np.sin(np.pi * X[:, 1]),
        },
    )
    return Scenario("smooth_source", spec, list(h_list), reference="analytic", exact=exact,
                    expected="smooth_source.csv")


# ---------------------------------------------------------------------------
# Fracture network
# ---------------------------------------------------------------------------


def network_spec(k_frac: float = 1e4, kappa: float = 1e4) -> dict:
    c = [0.5, 0.5]
    halves = {
        1: [[0.5, 0.25], c],  # vertical, lower
        2: [c, [0.5, 0.75]],  # vertical, upper
        3: [[0.25, 0.5], c],  # horizontal, left
        4: [c, [0.75, 0.5]],  # horizontal, right
    }
    subdomains = [{"id": 0, "dim": 2, "geometry": UNIT_SQUARE}]
    subdomains += [{"id": i, "dim": 1, "geometry": g} for i, g in halves.items()]
    subdomains.append({"id": 5, "dim": 0, "geometry": [c]})
    interfaces, materials = [], []
    jid = 0
    for i in halves:
        for side in (1, -1):
            interfaces.append({"id": jid, "hi": 0, "lo": i, "side": side})
            materials.append({"interface": jid, "normal_permeability": kappa})
            jid += 1
    for i in halves:
        interfaces.append({"id": jid, "hi": i, "lo": 5, "geometry": [c]})
        materials.append({"interface": jid, "normal_permeability": kappa})
        jid += 1
    materials.append({
        "subdomain": 0,
        "permeability": lambda X: np.where((X[:, 0] > 0.5) & (X[:, 1] > 0.5), 0.1, 1.0),
        "source": 0.0,
    })
    for i in halves:
        m = {"subdomain": i, "permeability": k_frac, "source": 0.0}
        if i == 1:
            m["cell_sources"] = [{"point": [0.5, 0.3], "value": 0.1}]
        if i == 2:
            m["cell_sources"] = [{"point": [0.5, 0.7], "value": -0.1}]
        materials.append(m)
    materials.append({"subdomain": 5, "source": 0.0})
    bcs = [
        {"subdomain": 0, "type": "dirichlet", "geometry": [[0.0, 0.0], [0.0, 1.0]], "value": 1.0},
        {"subdomain": 0, "type": "dirichlet", "geometry": [[1.0, 0.0], [1.0, 1.0]], "value": 0.0},
        {"subdomain": 0, "type": "neumann", "geometry": [[0.0, 0.0], [1.0, 0.0]]},
        {"subdomain": 0, "type": "neumann", "geometry": [[0.0, 1.0], [1.0, 1.0]]},
    ]
    return {"subdomains": subdomains, "interfaces": interfaces, "materials": materials,
            "boundary_conditions": bcs}


def network_scenario_2d(h_list=(1 / 8, 1 / 16, 1 / 32)) -> Scenario:
    """Crossing conductive fractures with a 0D intersection point."""
    return Scenario("network", network_spec(), list(h_list), reference="fine-grid-surrogate",
                    expected="network.csv", refine=4)


SCENARIOS = {
    "series_resistance": series_resistance_scenario,
    "smooth_source": smooth_source_scenario,
    "network": network_scenario_2d,
}


def get_scenario(name: str, h_list=None) -> Scenario:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(sorted(SCENARIOS))}")
    return SCENARIOS[name]() if h_list is None else SCENARIOS[name](tuple(h_list))


# ---------------------------------------------------------------------------
# Perturbation sweep
# ---------------------------------------------------------------------------

SUMMARY_QUANTITIES = ("majorant", "eta_DF", "eta_R", "error_p", "error_u", "eff_p", "eff_u")


def worker_count(default: int = 1) -> int:
    """Worker cap from the MDEST_THREADS environment variable."""
    raw = os.environ.get("MDEST_THREADS")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"MDEST_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("MDEST_THREADS must be at least 1")
    return n


def parse_directions(text) -> list[int]:
    """Turn '+t,-t' (or a list of +-1) into a list of signs."""
    items = text if isinstance(text, (list, tuple)) else [s for s in str(text).split(",") if s.strip()]
    out = []
    for s in items:
        s = str(s).strip().lower()
        if s in ("+t", "t", "+1", "1", "+"):
            out.append(1)
        elif s in ("-t", "-1", "-"):
            out.append(-1)
        else:
            raise ConfigError(f"unknown perturbation direction {s!r}; use +t or -t")
    if not out:
        raise ConfigError("the perturbation direction list is empty")
    return out


@dataclass
class SweepResult:
    scenario: str
    runs: list  # RunResult, matching baseline first within each h

    @property
    def reports(self) -> list:
        return [r.report for r in self.runs]

    def by_h(self) -> dict[float, list]:
        out: dict[float, list] = {}
        for r in self.runs:
            out.setdefault(r.h, []).append(r)
        return out

    def summary(self) -> list[dict]:
        """Baseline, perturbation mean, sample std and relative deviation per quantity."""
        rows = []
        for h, runs in self.by_h().items():
            base = [r for r in runs if r.baseline]
            pert = [r for r in runs if not r.baseline]
            if not base or not pert:
                continue
            b = base[0].report
            names = list(SUMMARY_QUANTITIES)
            names += [f"eta_omega_{d}" for d in b.eta_omega_by_dim]
            names += [f"eta_gamma_{d}" for d in b.eta_gamma_by_dim]
            for q in names:
                bv = _quantity(b, q)
                vals = [_quantity(r.report, q) for r in pert]
                if bv is None or any(v is None for v in vals):
                    continue
                mean = float(np.mean(vals))
                std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                dev = abs(mean - bv) / abs(bv) if bv != 0 else abs(mean - bv)
                rows.append({"scenario": self.scenario, "h": h, "quantity": q, "baseline": bv,
                             "mean": mean, "std": std, "rel_deviation": dev})
        return rows


def _quantity(rep, name):
    if name.startswith("eta_omega_"):
        return rep.eta_omega_by_dim.get(int(name.rsplit("_", 1)[1]))
    if name.startswith("eta_gamma_"):
        return rep.eta_gamma_by_dim.get(int(name.rsplit("_", 1)[1]))
    return getattr(rep, name)


def reference_for(scenario: Scenario, domain: MdDomain, h: float, kind: str | None = None,
                  solver_tol: float = 1e-10):
    """Reference solution handle for one mesh size (None when unavailable)."""
    from .pipeline import SurrogateSolution

    kind = kind or scenario.reference
    if kind == "analytic":
        if scenario.exact is None:
            raise ConfigError(f"scenario {scenario.name!r} has no closed-form solution")
        return scenario.exact
    if kind in ("fine-grid-surrogate", "surrogate"):
        return SurrogateSolution(domain, h / scenario.refine, solver_tol)
    return None


def perturbation_sweep(scenario: Scenario, h_list=None, directions=None, perturb: bool = True,
                       reference: str | None = None, solver_tol: float = 1e-10,
                       dense_threshold: int = 0, workers: int | None = None) -> SweepResult:
    """Matching run plus one perturbed run per direction, for every mesh size.

    Perturbed runs shift the interior nodes of each fracture grid by half its
    mean cell diameter along +-t, move the interface grids the opposite way
    and keep the internal boundary grids fixed.
    """
    from concurrent.futures import ThreadPoolExecutor

    from .pipeline import configurations, run_configuration

    h_list = list(scenario.h_list if h_list is None else h_list)
    if not h_list or any(not (h > 0) for h in h_list):
        raise ConfigError(f"mesh sizes must be positive, got {h_list}")
    directions = scenario.directions if directions is None else parse_directions(directions)
    domain = scenario.domain()
    workers = workers or worker_count()
    runs = []
    for h in h_list:
        ref = reference_for(scenario, domain, h, reference, solver_tol)
        bundles = configurations(domain, h, directions, perturb)

        def job(b, _ref=ref):
            return run_configuration(domain, b, _ref, solver_tol, dense_threshold)

        if workers > 1 and len(bundles) > 1:
            with ThreadPoolExecutor(max_workers=min(workers, len(bundles))) as ex:
                runs.extend(ex.map(job, bundles))
        else:
            runs.extend(job(b) for b in bundles)
    return SweepResult(scenario.name, runs)
