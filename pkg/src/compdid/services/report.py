"""Report rendering: machine-readable JSON plus formatted text tables."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal

import pandas as pd
from pydantic import BaseModel

from compdid.estimators import ESTIMATOR_LABELS
from compdid.models.config import EstimatorKind
from compdid.models.results import EstimationReport, McReport
from compdid.utils.logger import logger

ReportFormat = Literal["json", "text", "both"]

TWFE_SPECS = {EstimatorKind.TWFE_LINEAR.value: "Linear", EstimatorKind.TWFE_SATURATED.value: "Saturated"}
CRITERION_NAMES = {"ml": "ML", "ls": "LS", "-": "-"}


def _label(kind: str) -> str:
    return ESTIMATOR_LABELS[EstimatorKind(kind)]


def format_estimation(report: EstimationReport) -> str:
    """Text summary; analytic SEs in parentheses and bootstrap SEs in brackets."""
    lines = [f"Observations: {report.n}  cells: " + "  ".join(f"({k[0]},{k[1]})={v}" for k, v in report.cell_counts.items())]
    if report.bandwidths is not None:
        bw = report.bandwidths
        or_part = "  ".join(f"b_{cell}={b:.4g} theta_{cell}={tuple(theta)}" for cell, (b, theta) in bw.or_bandwidths.items())
        lines.append(f"Bandwidths ({bw.criterion.upper()}): h={bw.h:.4g} lambda={tuple(bw.lam)}  {or_part}")
        lines.append(f"CV criterion at selection: {bw.criterion_value:.6g}")
    lines.append("")

    rows = []
    for est in report.estimates:
        rows.append({
            "Estimator": _label(est.kind),
            "ATT": f"{est.tau_hat:.3f}",
            "SE": f"({est.se:.3f})",
            "Boot. SE": f"[{est.bootstrap_se:.3f}]" if est.bootstrap_se is not None else "",
            "CI": f"[{est.ci_low:.3f}, {est.ci_high:.3f}]",
            "Asy. Var.": f"{est.omega_hat:.3f}",
        })
    if rows:
        lines.append(pd.DataFrame(rows).to_string(index=False))
        lines.append("")

    if report.hausman is not None:
        h = report.hausman
        lines.append("Hausman-type test (H0: tau_sz = tau_dr)")
        lines.append(f"  statistic: {h.statistic:.3f}  contrast: {h.contrast:.3f}  V_n: {h.v_hat:.3f}")
        lines.append(f"  Unclustered p-value: {h.p_value:.3f}")
        if h.clustered_p_value is not None:
            lines.append(f"  Clustered p-value:   {h.clustered_p_value:.3f}")
        if h.degenerate:
            lines.append("  (degenerate: zero contrast with zero variance)")
        lines.append(f"  Omega_dr - Omega_sz (not used in the statistic): {h.naive_variance:.3f}")
    if report.bias_decomposition is not None:
        lines.append(f"Bias decomposition E[tau(X)|D=1] - E[tau(X)|D=1,T=1]: {report.bias_decomposition:.3f}")
    if report.efficiency_loss_rho is not None:
        lines.append(f"Efficiency loss under stationarity (rho_sz): {report.efficiency_loss_rho:.3f}")

    diagnostics = {f"ps {k}": v for k, v in report.gps_diagnostics.items()}
    for cell, counts in report.or_diagnostics.items():
        diagnostics.update({f"or {cell} {k}": v for k, v in counts.items()})
    if diagnostics:
        lines.append("")
        lines.append("Nuisance diagnostics: " + ", ".join(f"{k}={v}" for k, v in diagnostics.items()))
    for warning in report.warnings:
        lines.append(f"WARNING: {warning}")
    return "\n".join(lines) + "\n"


def _metric_row(row) -> dict[str, str]:
    return {
        "Avg. Bias": f"{row.avg_bias:.3f}",
        "Med. Bias": f"{row.med_bias:.3f}",
        "RMSE": f"{row.rmse:.3f}",
        "Asy. Var.": f"{row.avg_asy_var:.3f}",
        "Cover.": f"{row.coverage:.3f}",
        "CIL": f"{row.avg_ci_length:.3f}",
    }


def format_monte_carlo(report: McReport) -> str:
    """Layout of the usual simulation tables: TWFE block, DR DiD block, test block."""
    lines = [
        f"Design {report.design}, n = {report.n}, {report.replications} replications "
        f"({report.failed_replications} failed), seed {report.seed}",
        f"True value of ATT: {report.true_att:.2f}. Semiparametric Efficiency Bound: {report.seb:.1f}",
        "",
    ]
    twfe = [r for r in report.estimators if r.estimator in TWFE_SPECS]
    if twfe:
        lines.append("Two-way Fixed Effect Estimators")
        frame = pd.DataFrame([{"": "tau_fe", "Spec.": TWFE_SPECS[r.estimator], **_metric_row(r)} for r in twfe])
        lines.append(frame.to_string(index=False))
        lines.append("")
    nonparametric = [r for r in report.estimators if r.estimator not in TWFE_SPECS]
    if nonparametric:
        lines.append("Nonparametric Doubly Robust DiD Estimators for the ATT")
        ordered = sorted(nonparametric, key=lambda r: (r.estimator, r.label))
        frame = pd.DataFrame([
            {"": _label(r.estimator), "CV Crit.": CRITERION_NAMES.get(r.label, r.label), **_metric_row(r)}
            for r in ordered
        ])
        lines.append(frame.to_string(index=False))
        lines.append("")
    if report.tests:
        heading = "Emp. Size" if report.design == 2 else "Emp. Pow."
        lines.append("Hausman-type test")
        frame = pd.DataFrame([
            {
                "CV Crit.": CRITERION_NAMES.get(t.label, t.label),
                "Avg. Test Stats.": f"{t.avg_statistic:.3f}",
                **{f"{heading} ({alpha})": f"{rate:.3f}" for alpha, rate in t.rejection_rates.items()},
            }
            for t in report.tests
        ])
        lines.append(frame.to_string(index=False))
        lines.append("")
    if report.diagnostics:
        lines.append("Diagnostics: " + ", ".join(f"{k}={v:.3f}" for k, v in report.diagnostics.items()))
    for failure in report.failures:
        lines.append(f"FAILED: {failure}")
    return "\n".join(lines) + "\n"


def write_report(
    report: BaseModel,
    text: str,
    output: str | Path | None = None,
    fmt: ReportFormat = "both",
) -> list[Path]:
    """Writes ``<output>.json`` and/or ``<output>.txt``; prints to stdout without an output path."""
    if output is None:
        if fmt in ("text", "both"):
            sys.stdout.write(text)
        if fmt == "json":
            sys.stdout.write(report.model_dump_json(indent=2) + "\n")
        return []
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both"):
        path = output.with_suffix(".json")
        path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
        written.append(path)
    if fmt in ("text", "both"):
        path = output.with_suffix(".txt")
        path.write_text(text, encoding="utf-8")
        written.append(path)
    for path in written:
        logger.info(f"Wrote report {path}")
    return written


def read_estimation_report(path: str | Path) -> EstimationReport:
    return EstimationReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def read_mc_report(path: str | Path) -> McReport:
    return McReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
