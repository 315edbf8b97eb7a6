"""CSV and JSON serialisation of estimator runs.

Floats are written with 17 significant digits so repeated runs diff cleanly.
Column orders are fixed by the ``*_COLUMNS`` tuples below.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

MAJORANT_COLUMNS = (
    "scenario", "h", "config", "n_dofs", "majorant", "eta_DF", "eta_R",
    "error_p", "error_u", "eff_p", "eff_u", "conservation",
)
INDICATOR_COLUMNS = (
    "scenario", "h", "config", "eta_omega_2", "eta_omega_1", "eta_omega_0",
    "eta_gamma_1", "eta_gamma_0",
)
SUMMARY_COLUMNS = ("scenario", "h", "quantity", "baseline", "mean", "std", "rel_deviation")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def majorant_row(scenario: str, rep) -> dict:
    m = rep.meta
    return {
        "scenario": scenario, "h": m.get("h"), "config": m.get("label"), "n_dofs": m.get("n_dofs"),
        "majorant": rep.majorant, "eta_DF": rep.eta_DF, "eta_R": rep.eta_R,
        "error_p": rep.error_p, "error_u": rep.error_u, "eff_p": rep.eff_p, "eff_u": rep.eff_u,
        "conservation": m.get("conservation"),
    }


def indicator_row(scenario: str, rep) -> dict:
    m = rep.meta
    row = {"scenario": scenario, "h": m.get("h"), "config": m.get("label")}
    for d in (2, 1, 0):
        row[f"eta_omega_{d}"] = rep.eta_omega_by_dim.get(d)
    for d in (1, 0):
        row[f"eta_gamma_{d}"] = rep.eta_gamma_by_dim.get(d)
    return row


def to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_reports(scenario: str, reports: list, out: str | Path, formats=("csv", "json"),
                  summary: list[dict] | None = None) -> list[Path]:
    """Write the majorant table, indicator table and per-cell JSON."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = out / f"{scenario}_majorant.csv"
        p.write_text(to_csv([majorant_row(scenario, r) for r in reports], MAJORANT_COLUMNS))
        written.append(p)
        p = out / f"{scenario}_indicators.csv"
        p.write_text(to_csv([indicator_row(scenario, r) for r in reports], INDICATOR_COLUMNS))
        written.append(p)
        if summary:
            p = out / f"{scenario}_summary.csv"
            p.write_text(to_csv(summary, SUMMARY_COLUMNS))
            written.append(p)
    if "json" in formats:
        p = out / f"{scenario}_cells.json"
        p.write_text(json.dumps({"scenario": scenario, "runs": [r.to_dict() for r in reports]},
                                default=_json_default))
        written.append(p)
    return written


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def majorant_from_cells(run: dict) -> float:
    """Recompute the majorant of one JSON run record from its per-cell values."""
    cells = run["cells"]
    df2 = sum(np.sum(np.square(v)) for v in cells["eta_df_par"].values())
    df2 += sum(np.sum(np.square(v)) for v in cells["eta_df_perp"].values())
    r2 = sum(np.sum(np.square(v)) for v in cells["eta_r"].values())
    return float(np.sqrt(df2) + np.sqrt(r2))
