"""Nonparametric doubly robust DiD estimation of the ATT under compositional changes."""

from .data import CELLS, Sample, SampleData
from .estimators import AttEstimate, att_dr, att_ipw, att_or, att_sz, att_twfe, bias_decomposition
from .inference import HausmanResult, bootstrap_hausman_pvalue, bootstrap_se, hausman_test
from .pipeline import DrDidPipeline, PipelineResult
from .tools.bandwidth import select_bandwidths
from .tools.localpoly import fit_local_ls_loo, fit_local_mlogit_loo, predict_gps

__version__ = "0.1.0"

__all__ = [
    "CELLS",
    "Sample",
    "SampleData",
    "AttEstimate",
    "att_dr",
    "att_sz",
    "att_or",
    "att_ipw",
    "att_twfe",
    "bias_decomposition",
    "HausmanResult",
    "hausman_test",
    "bootstrap_se",
    "bootstrap_hausman_pvalue",
    "DrDidPipeline",
    "PipelineResult",
    "select_bandwidths",
    "fit_local_mlogit_loo",
    "fit_local_ls_loo",
    "predict_gps",
]
