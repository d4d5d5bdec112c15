"""Configuration models for estimation and simulation runs."""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, PositiveFloat, field_validator, model_validator

from compdid.tools.kernels import KernelFamily


class CvCriterion(str, Enum):
    LOCAL_LIKELIHOOD = "ml"
    LEAST_SQUARES = "ls"


class WeightLaw(str, Enum):
    MEAN_ONE_EXPONENTIAL = "exponential"
    MAMMEN = "mammen"


class EstimatorKind(str, Enum):
    DR = "dr"
    SZ = "sz"
    TWFE_LINEAR = "twfe_linear"
    TWFE_SATURATED = "twfe_saturated"
    OR = "or"
    IPW = "ipw"


LambdaPair = tuple[float, float]
CELL_LABELS = ("11", "10", "01", "00")


def _check_lambdas(pairs: list[LambdaPair] | None) -> list[LambdaPair] | None:
    if pairs is None:
        return pairs
    if not pairs:
        raise ValueError("smoothing grid must not be empty")
    for pair in pairs:
        if not all(0.0 <= v <= 1.0 for v in pair):
            raise ValueError(f"discrete smoothing parameters must lie in [0, 1], got {pair}")
    return [tuple(float(v) for v in pair) for pair in pairs]


class BandwidthConfig(BaseModel):
    """Tuning surface for cross-validated bandwidth selection.

    Unset grids are built from the data (see ``tools.bandwidth.default_grid``).
    OR grids may be shared lists or per-cell dictionaries keyed by ``"10"`` etc.
    """

    h_grid: list[PositiveFloat] | None = None
    lambda_grid: list[LambdaPair] | None = None
    b_grid: list[PositiveFloat] | dict[str, list[PositiveFloat]] | None = None
    theta_grid: list[LambdaPair] | dict[str, list[LambdaPair]] | None = None
    criterion: CvCriterion = CvCriterion.LOCAL_LIKELIHOOD
    share_or_bandwidths: bool = False
    grid_size: int = Field(default=8, ge=1)
    h_span: tuple[PositiveFloat, PositiveFloat] = (0.2, 2.0)
    default_lambdas: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5])
    coarse: bool = False
    search: Literal["separable", "cartesian"] = "separable"

    @field_validator("h_grid", "b_grid")
    @classmethod
    def _non_empty(cls, value):
        if value is None:
            return value
        grids = value.values() if isinstance(value, dict) else [value]
        for grid in grids:
            if not grid:
                raise ValueError("bandwidth grid must not be empty")
        return value

    @field_validator("lambda_grid")
    @classmethod
    def _lambda_range(cls, value):
        return _check_lambdas(value)

    @field_validator("theta_grid")
    @classmethod
    def _theta_range(cls, value):
        if isinstance(value, dict):
            return {k: _check_lambdas(v) for k, v in value.items()}
        return _check_lambdas(value)

    @field_validator("b_grid", "theta_grid")
    @classmethod
    def _cell_keys(cls, value):
        if isinstance(value, dict):
            unknown = set(value) - set(CELL_LABELS)
            if unknown:
                raise ValueError(f"unknown cells in per-cell grid: {sorted(unknown)}")
        return value

    @field_validator("default_lambdas")
    @classmethod
    def _default_lambda_range(cls, value):
        if not value or not all(0.0 <= v <= 1.0 for v in value):
            raise ValueError("default_lambdas must be a non-empty list in [0, 1]")
        return value


class FixedBandwidths(BaseModel):
    """Bandwidths supplied directly, bypassing cross-validation."""

    h: PositiveFloat
    lam: LambdaPair = (0.0, 0.0)
    b: PositiveFloat | dict[str, PositiveFloat]
    theta: LambdaPair | dict[str, LambdaPair] = (0.0, 0.0)

    def or_params(self, label: str) -> tuple[float, LambdaPair]:
        b = self.b[label] if isinstance(self.b, dict) else self.b
        theta = self.theta[label] if isinstance(self.theta, dict) else self.theta
        return float(b), tuple(theta)


class BootstrapConfig(BaseModel):
    draws: int = Field(default=999, ge=1)
    weight_law: WeightLaw = WeightLaw.MEAN_ONE_EXPONENTIAL
    cluster_by: str | None = None
    seed: int = 0


class ColumnMapping(BaseModel):
    outcome: str
    treatment: str
    period: str
    continuous: list[str] = Field(default_factory=list)
    unordered: list[str] = Field(default_factory=list)
    ordered: list[str] = Field(default_factory=list)
    cluster: str | None = None

    @model_validator(mode="after")
    def _distinct(self):
        names = [self.outcome, self.treatment, self.period, *self.continuous, *self.unordered, *self.ordered]
        if self.cluster:
            names.append(self.cluster)
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"column names must be distinct, duplicated: {duplicates}")
        return self

    @property
    def covariates(self) -> list[str]:
        return [*self.continuous, *self.unordered, *self.ordered]


class RunConfig(BaseModel):
    """Fully resolved configuration of one estimation run."""

    input: Path | None = None
    columns: ColumnMapping | None = None
    estimators: list[EstimatorKind] = Field(
        default_factory=lambda: [
            EstimatorKind.DR, EstimatorKind.SZ, EstimatorKind.TWFE_LINEAR, EstimatorKind.TWFE_SATURATED
        ]
    )
    p_order: int = Field(default=1, ge=0)
    q_order: int = Field(default=1, ge=0)
    or_orders: dict[str, int] = Field(default_factory=dict)
    kernel: KernelFamily = KernelFamily.EPANECHNIKOV
    bandwidth: BandwidthConfig = Field(default_factory=BandwidthConfig)
    fixed_bandwidths: FixedBandwidths | None = None
    floor: float = 0.01
    ci_level: float = Field(default=0.95, gt=0.0, lt=1.0)
    bootstrap: BootstrapConfig | None = Field(default_factory=BootstrapConfig)
    rescale_continuous: bool = True
    output: Path | None = None
    format: Literal["json", "text", "both"] = "both"
    plot_dir: Path | None = None
    workers: int = Field(default=1, ge=1)

    @field_validator("floor")
    @classmethod
    def _floor_range(cls, value):
        if not 0.0 <= value < 0.25:
            raise ValueError(f"truncation floor must lie in [0, 0.25), got {value}")
        return value

    @field_validator("or_orders")
    @classmethod
    def _order_keys(cls, value):
        unknown = set(value) - set(CELL_LABELS)
        if unknown:
            raise ValueError(f"unknown cells in or_orders: {sorted(unknown)}")
        if any(v < 0 for v in value.values()):
            raise ValueError("polynomial orders must be nonnegative")
        return value

    def or_order(self, label: str) -> int:
        return self.or_orders.get(label, self.q_order)
