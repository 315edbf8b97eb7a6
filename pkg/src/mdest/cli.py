"""Command-line entry point.

``mdest run`` solves, reconstructs and estimates on a scenario (or a JSON
domain file) and writes the majorant table, the indicator table and the
per-cell JSON. ``mdest compare`` runs matching and perturbed configurations
and reports relative deviations. Exit codes: 0 success, 2 configuration
error, 3 solver failure, 4 invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import errors
from .errors import ConfigError, MdestError
from .mdgeom import load_domain
from .mdgrid import write_bundle
from .mdsolve import build_couplings
from .report import write_reports
from .scenarios import Scenario, get_scenario, parse_directions, perturbation_sweep, worker_count
from .selfcheck import run_projection_checks
from .transfer import dump_transfer

log = logging.getLogger("mdest")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4

CONSERVATION_TOL = 1e-10
SQUARE_SUM_TOL = 1e-12
PARTITION_TOL = 1e-12
ERROR_FLOOR = 1e-12  # below this the error is roundoff and effectivity is not meaningful
SURROGATE_FACTOR = 0.99

# module tag for every error family
_TAGS = (
    (errors.DomainError, "mdgeom"),
    (errors.GridError, "mdgrid"),
    (errors.TransferError, "transfer"),
    (errors.ProjectionError, "project"),
    (errors.InconsistentBundleError, "mdsolve"),
    (errors.SingularSystemError, "mdsolve"),
    (errors.OutOfCellError, "mdsolve"),
    (errors.MissingReferenceError, "estimate"),
    (errors.ConfigError, "cli"),
)
_SOLVER_ERRORS = (errors.SingularSystemError,)
_CONFIG_ERRORS = (errors.ConfigError, errors.DomainError, errors.GridError)


def module_tag(exc: BaseException) -> str:
    for cls, tag in _TAGS:
        if isinstance(exc, cls):
            return tag
    return "mdest"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, _CONFIG_ERRORS):
        return EXIT_CONFIG
    if isinstance(exc, _SOLVER_ERRORS):
        return EXIT_SOLVER
    return EXIT_INVARIANT


@dataclass
class RunConfig:
    scenario: str | None = None
    domain_spec: str | None = None
    h: list[float] = field(default_factory=list)
    perturb: bool = False
    directions: list[int] = field(default_factory=lambda: [1, -1])
    reference: str | None = None
    out: str = "mdest_out"
    formats: tuple = ("csv", "json")
    solver_tol: float = 1e-10
    dense_threshold: int = 0
    dump_transfer: bool = False
    mesh_out: bool = False

    def resolve(self) -> Scenario:
        """Validate the configuration and return the scenario to run."""
        if (self.scenario is None) == (self.domain_spec is None):
            raise ConfigError("give exactly one of --scenario or --domain-spec")
        if any(not (h > 0) for h in self.h):
            raise ConfigError(f"mesh sizes must be positive, got {self.h}")
        if len(self.h) > 1 and any(b >= a for a, b in zip(self.h, self.h[1:])):
            raise ConfigError(f"mesh sizes must be strictly decreasing, got {self.h}")
        if not (self.solver_tol > 0):
            raise ConfigError("--solver-tol must be positive")
        if self.scenario is not None:
            return get_scenario(self.scenario, self.h or None)
        path = Path(self.domain_spec)
        if not path.is_file():
            raise ConfigError(f"domain file {path} not found")
        if not self.h:
            raise ConfigError("--h is required with --domain-spec")
        import json

        spec = json.loads(path.read_text())
        load_domain(path)  # validates before any meshing
        return Scenario(path.stem, spec, list(self.h))


def parse_h(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse mesh sizes {text!r}") from exc


def _formats(text: str) -> tuple:
    fm = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [f for f in fm if f not in ("csv", "json")]
    if bad or not fm:
        raise ConfigError(f"--format takes csv and/or json, got {text!r}")
    return fm


def invariant_violations(sweep, reference_kind: str) -> list[str]:
    """Messages for every run that breaks conservation, the square-sum identity or the bound."""
    out = []
    factor = SURROGATE_FACTOR if reference_kind in ("fine-grid-surrogate", "surrogate") else 1.0
    for r in sweep.runs:
        tag = f"h={r.h:g} {r.label}"
        rep = r.report
        if not (r.conservation <= CONSERVATION_TOL):
            out.append(f"mdsolve: {tag}: local conservation residual {r.conservation:.3e}")
        if not (rep.square_sum_gap() <= SQUARE_SUM_TOL):
            out.append(f"estimate: {tag}: square-sum gap {rep.square_sum_gap():.3e}")
        for name, err in (("primal", rep.error_p), ("dual", rep.error_u)):
            if err is not None and err > ERROR_FLOOR and rep.majorant < factor * err:
                out.append(f"estimate: {tag}: majorant {rep.majorant:.6g} below {name} error {err:.6g}")
        for key, d in r.transfer.items():
            if not (d["measure_error"] <= PARTITION_TOL and d["node_inclusion"]):
                out.append(f"transfer: {tag}: transfer grid {key} fails the partition check")
    return out


def _dump_grids(cfg: RunConfig, scenario: Scenario, out: Path) -> None:
    from .pipeline import configurations

    domain = scenario.domain()
    for h in scenario.h_list:
        for b in configurations(domain, h, cfg.directions, cfg.perturb):
            stem = f"{scenario.name}_h{h:g}_{b.label}"
            if cfg.mesh_out:
                write_bundle(b, out / f"{stem}_mesh.json")
            if cfg.dump_transfer:
                tgs = {}
                for j, cp in build_couplings(domain, b).items():
                    tgs[(j, "hi")] = cp.hi.tg
                    tgs[(j, "lo")] = cp.lo.tg
                dump_transfer(tgs, out / f"{stem}_transfer.json")


def run(cfg: RunConfig, compare: bool = False) -> int:
    """Run the pipeline for ``cfg`` and write report files; return the exit code."""
    scenario = cfg.resolve()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = cfg.reference or scenario.reference
    sweep = perturbation_sweep(scenario, scenario.h_list, cfg.directions, cfg.perturb or compare,
                               kind, cfg.solver_tol, cfg.dense_threshold, worker_count())
    summary = sweep.summary()
    for p in write_reports(scenario.name, sweep.reports, out, cfg.formats, summary):
        print(f"wrote {p}")
    if cfg.mesh_out or cfg.dump_transfer:
        _dump_grids(cfg, scenario, out)
    for r in sweep.runs:
        rep = r.report
        print(f"h={r.h:<10g} {r.label:<9} M={rep.majorant:.6e} eta_DF={rep.eta_DF:.3e} "
              f"eta_R={rep.eta_R:.3e} eff_p={_g(rep.eff_p)} eff_u={_g(rep.eff_u)}")
    if compare:
        print("relative deviation of perturbation mean from matching baseline:")
        for row in summary:
            if row["quantity"] in ("majorant",) or row["quantity"].startswith("eta_"):
                print(f"  h={row['h']:<10g} {row['quantity']:<12} {row['rel_deviation']:.3e} "
                      f"(std {row['std']:.3e})")
    bad = invariant_violations(sweep, kind)
    for msg in bad:
        print(f"invariant violation: {msg}", file=sys.stderr)
    return EXIT_INVARIANT if bad else EXIT_OK


def _g(v) -> str:
    return "-" if v is None else f"{v:.4g}"


def check_projections(seed: int) -> int:
    results = run_projection_checks(seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdest", description="Mixed-dimensional Darcy solver with a posteriori error majorant")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--scenario", help="series_resistance, smooth_source or network")
        sp.add_argument("--domain-spec", help="JSON domain description")
        sp.add_argument("--h", default="", help="comma-separated mesh sizes, strictly decreasing")
        sp.add_argument("--reference", choices=("analytic", "fine-grid-surrogate", "none"))
        sp.add_argument("--out", default="mdest_out", help="output directory")
        sp.add_argument("--format", default="csv,json", help="csv, json or csv,json")
        sp.add_argument("--solver-tol", type=float, default=1e-10)
        sp.add_argument("--dense-threshold", type=int, default=0,
                        help="use a dense solve below this many unknowns")
        sp.add_argument("--dump-transfer", action="store_true", help="write transfer cells with parent tags")
        sp.add_argument("--mesh-out", action="store_true", help="write every grid of each bundle")

    r = sub.add_parser("run", help="solve and estimate")
    common(r)
    r.add_argument("--perturb", action="store_true", help="add the +t and -t non-matching configurations")
    r.add_argument("--directions", default="+t,-t")
    r.add_argument("--check-projections", action="store_true", help="run the projection self-test and exit")
    r.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("compare", help="matching versus non-matching deviation summary")
    common(c)
    c.add_argument("--directions", default="+t,-t")
    return p


def config_from_args(args) -> RunConfig:
    return RunConfig(
        scenario=args.scenario,
        domain_spec=args.domain_spec,
        h=parse_h(args.h),
        perturb=getattr(args, "perturb", False),
        directions=parse_directions(args.directions),
        reference=args.reference,
        out=args.out,
        formats=_formats(args.format),
        solver_tol=args.solver_tol,
        dense_threshold=args.dense_threshold,
        dump_transfer=args.dump_transfer,
        mesh_out=args.mesh_out,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2, --help with 0
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("mdest: error: choose a command (run or compare)", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run" and args.check_projections:
            return check_projections(args.seed)
        cfg = config_from_args(args)
        return run(cfg, compare=args.command == "compare")
    except MdestError as exc:
        if isinstance(exc, ConfigError):
            parser.print_usage(sys.stderr)
        print(f"mdest.{module_tag(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
