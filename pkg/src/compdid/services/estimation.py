"""Estimation service for running one analysis from a resolved configuration."""

from __future__ import annotations

from pathlib import Path

from compdid.core.errors import ConfigError
from compdid.ingest import load_sample_data
from compdid.models.config import RunConfig
from compdid.models.results import EstimationReport
from compdid.pipeline import DrDidPipeline
from compdid.services.report import format_estimation, write_report
from compdid.tools.visualization_tools import VisualizationTools
from compdid.utils.logger import logger


def run_estimation(config: RunConfig) -> EstimationReport:
    """
    Ingest the configured CSV, run the pipeline and write the report.

    Args:
        config: Fully resolved run configuration.

    Returns:
        The report that was written.
    """
    if config.input is None or config.columns is None:
        raise ConfigError("estimation needs an input file and a column mapping", module="cli")
    if config.bootstrap is not None and config.bootstrap.cluster_by:
        if config.bootstrap.cluster_by != config.columns.cluster:
            raise ConfigError(
                f"bootstrap.cluster_by '{config.bootstrap.cluster_by}' must name the mapped cluster column",
                module="cli",
            )

    logger.info(f"Starting estimation on {config.input}")
    data = load_sample_data(config.input, config.columns, config.rescale_continuous)
    result = DrDidPipeline(config).run(data)
    report = result.to_report(config)
    write_report(report, format_estimation(report), config.output, config.format)

    if config.plot_dir is not None and report.bandwidths is not None:
        figure = VisualizationTools().plot_grid_trace(report.bandwidths, Path(config.plot_dir) / "cv_grid_trace.png")
        if figure.startswith("Error:"):
            logger.warning(figure)
    logger.info("Estimation finished.")
    return report
