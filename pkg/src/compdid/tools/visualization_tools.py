import base64
import io
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from compdid.models.results import McReport, SelectedBandwidths  # noqa: E402
from compdid.utils.logger import logger  # noqa: E402

logging.getLogger('matplotlib.font_manager').setLevel(logging.ERROR)


def _encode_current_figure() -> str:
    img_buffer = io.BytesIO()
    plt.savefig(img_buffer, format='png')
    img_buffer.seek(0)
    img_str = base64.b64encode(img_buffer.read()).decode('utf-8')
    plt.close()
    return img_str


def _finish(fig, path: str | Path | None) -> str:
    """Base64 PNG of ``fig``, or the written file path when ``path`` is given."""
    if path is None:
        return _encode_current_figure()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format='png')
    plt.close(fig)
    logger.info(f"Wrote figure {path}")
    return str(path)


class VisualizationTools:
    """Figures for bandwidth selection and Monte Carlo output.

    Each method returns a base64 PNG string, or writes the PNG to ``path`` and
    returns that path. Failures come back as strings starting with "Error:".
    """

    def plot_grid_trace(self, selected: SelectedBandwidths, path: str | Path | None = None) -> str:
        """
        Plots the cross-validation criterion against the bandwidth, one panel per block.

        Args:
            selected: Selection result carrying the full grid trace.
            path: Optional PNG destination.

        Returns:
            A base64 encoded string of the plot image, or the written path.
        """
        logger.debug("Attempting to plot the CV grid trace.")
        try:
            df = pd.DataFrame([p.model_dump() for p in selected.grid_trace])
            if df.empty:
                return "Error: Empty grid trace, nothing to plot."
            blocks = list(dict.fromkeys(df['block']))
            fig, axes = plt.subplots(1, len(blocks), figsize=(4 * len(blocks), 4), squeeze=False)
            for ax, block in zip(axes[0], blocks):
                part = df[df['block'] == block]
                for (lambda_u, lambda_o), group in part.groupby(['lambda_u', 'lambda_o']):
                    group = group.sort_values('bandwidth')
                    ax.plot(group['bandwidth'], group['value'], marker='o', linestyle='-',
                            label=f'λ=({lambda_u:g}, {lambda_o:g})')
                ax.set_xscale('log')
                ax.set_title(block)
                ax.set_xlabel('bandwidth')
                ax.grid(True)
            axes[0][0].set_ylabel(f'CV criterion ({selected.criterion})')
            axes[0][0].legend(fontsize='small')
            plt.tight_layout()
            img_str = _finish(fig, path)
            logger.debug("Successfully plotted the CV grid trace.")
            return img_str
        except Exception as e:
            plt.close('all')
            logger.error(f"An unexpected error occurred while plotting the grid trace: {e}", exc_info=True)
            return f"Error: An unexpected error occurred while plotting the grid trace: {e}"

    def plot_estimate_distribution(self, report: McReport, path: str | Path | None = None) -> str:
        """
        Histograms of the Monte Carlo estimates per estimator, with the true ATT marked.

        Args:
            report: Monte Carlo report including per-replication records.
            path: Optional PNG destination.

        Returns:
            A base64 encoded string of the plot image, or the written path.
        """
        logger.debug(f"Attempting to plot estimate distributions for design {report.design}.")
        try:
            df = pd.DataFrame([r.model_dump() for r in report.records])
            if df.empty:
                return "Error: No replication records to plot."
            groups = list(df.groupby(['estimator', 'label'], sort=False))
            fig, axes = plt.subplots(len(groups), 1, figsize=(8, 2.2 * len(groups)), squeeze=False, sharex=True)
            for ax, ((estimator, label), group) in zip(axes[:, 0], groups):
                ax.hist(group['tau_hat'], bins=30, alpha=0.8)
                ax.axvline(report.true_att, color='black', linestyle='--')
                ax.set_ylabel(f'{estimator}\n{label}', rotation=0, ha='right', va='center')
            axes[-1][0].set_xlabel('estimate')
            fig.suptitle(f'Design {report.design}, n={report.n}: true ATT {report.true_att:.2f}')
            plt.tight_layout()
            img_str = _finish(fig, path)
            logger.debug("Successfully plotted estimate distributions.")
            return img_str
        except Exception as e:
            plt.close('all')
            logger.error(f"An unexpected error occurred while plotting estimate distributions: {e}", exc_info=True)
            return f"Error: An unexpected error occurred while plotting estimate distributions: {e}"
