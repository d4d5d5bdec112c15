from .config import (
    BandwidthConfig,
    BootstrapConfig,
    ColumnMapping,
    CvCriterion,
    EstimatorKind,
    FixedBandwidths,
    RunConfig,
    WeightLaw,
)
from .results import EstimationReport, EstimateRecord, HausmanRecord, McReport, SelectedBandwidths

__all__ = [
    "BandwidthConfig",
    "BootstrapConfig",
    "ColumnMapping",
    "CvCriterion",
    "EstimatorKind",
    "FixedBandwidths",
    "RunConfig",
    "WeightLaw",
    "EstimationReport",
    "EstimateRecord",
    "HausmanRecord",
    "McReport",
    "SelectedBandwidths",
]
