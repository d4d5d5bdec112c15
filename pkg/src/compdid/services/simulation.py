"""Simulation service wrapping the Monte Carlo driver."""

from __future__ import annotations

from pathlib import Path

from compdid.models.config import BandwidthConfig, CvCriterion, EstimatorKind
from compdid.models.results import McReport
from compdid.services.report import ReportFormat, format_monte_carlo, write_report
from compdid.simulation import DEFAULT_ESTIMATORS, DgpSpec, run_monte_carlo
from compdid.tools.visualization_tools import VisualizationTools
from compdid.utils.logger import logger


def run_simulation(
    spec: DgpSpec,
    replications: int,
    criteria: tuple[CvCriterion, ...],
    estimators: tuple[EstimatorKind, ...] = DEFAULT_ESTIMATORS,
    bandwidth: BandwidthConfig | None = None,
    floor: float = 0.01,
    orders: tuple[int, int] = (1, 1),
    workers: int = 1,
    output: str | Path | None = None,
    fmt: ReportFormat = "both",
    plot_dir: str | Path | None = None,
) -> McReport:
    """
    Run the Monte Carlo study for one design and write its tables.

    Args:
        spec: Design, sample size and master seed.
        replications: Number of Monte Carlo replications.
        criteria: Cross-validation criteria to compare.

    Returns:
        The aggregated Monte Carlo report.
    """
    logger.info(f"Starting simulation: design {int(spec.design)}, {replications} replications")
    report = run_monte_carlo(
        spec,
        replications=replications,
        estimators=estimators,
        bandwidth_config=bandwidth,
        criteria=criteria,
        floor=floor,
        orders=orders,
        workers=workers,
    )
    write_report(report, format_monte_carlo(report), output, fmt)
    if plot_dir is not None:
        figure = VisualizationTools().plot_estimate_distribution(
            report, Path(plot_dir) / f"mc_design{int(spec.design)}_estimates.png"
        )
        if figure.startswith("Error:"):
            logger.warning(figure)
    return report
