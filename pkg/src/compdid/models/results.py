"""Serializable result records written into reports."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from compdid.models.config import LambdaPair


class ResultModel(BaseModel):
    # Non-finite CV values and diagnostics must survive a JSON round trip.
    model_config = ConfigDict(ser_json_inf_nan="constants")


class GridPoint(ResultModel):
    block: str
    bandwidth: float
    lambda_u: float
    lambda_o: float
    value: float


class SelectedBandwidths(ResultModel):
    h: float
    lam: LambdaPair
    or_bandwidths: dict[str, tuple[float, LambdaPair]]
    criterion: str
    criterion_value: float
    grid_trace: list[GridPoint] = Field(default_factory=list)

    def block_trace(self, block: str) -> list[GridPoint]:
        return [g for g in self.grid_trace if g.block == block]


class EstimateRecord(ResultModel):
    kind: str
    tau_hat: float
    omega_hat: float
    se: float
    ci_low: float
    ci_high: float
    bootstrap_se: float | None = None


class HausmanRecord(ResultModel):
    statistic: float
    v_hat: float
    contrast: float
    p_value: float
    decision_at: dict[str, bool]
    naive_variance: float
    degenerate: bool = False
    clustered_p_value: float | None = None


class EstimationReport(ResultModel):
    """Everything an estimation run produces, plus the config that produced it."""

    config: dict
    n: int
    cell_counts: dict[str, int]
    bandwidths: SelectedBandwidths | None = None
    gps_diagnostics: dict[str, int] = Field(default_factory=dict)
    or_diagnostics: dict[str, dict[str, int]] = Field(default_factory=dict)
    estimates: list[EstimateRecord] = Field(default_factory=list)
    hausman: HausmanRecord | None = None
    bias_decomposition: float | None = None
    efficiency_loss_rho: float | None = None
    warnings: list[str] = Field(default_factory=list)

    def estimate(self, kind: str) -> EstimateRecord:
        for record in self.estimates:
            if record.kind == kind:
                return record
        raise KeyError(kind)


class EstimatorSummary(ResultModel):
    estimator: str
    label: str
    avg_bias: float
    med_bias: float
    rmse: float
    avg_asy_var: float
    coverage: float
    avg_ci_length: float
    replications: int


class RejectionSummary(ResultModel):
    label: str
    avg_statistic: float
    rejection_rates: dict[str, float]
    replications: int


class ReplicationRecord(ResultModel):
    replication: int
    estimator: str
    label: str
    tau_hat: float
    omega_hat: float
    ci_low: float
    ci_high: float


class McReport(ResultModel):
    design: int
    n: int
    seed: int
    replications: int
    failed_replications: int
    true_att: float
    seb: float
    estimators: list[EstimatorSummary]
    tests: list[RejectionSummary]
    diagnostics: dict[str, float] = Field(default_factory=dict)
    records: list[ReplicationRecord] = Field(default_factory=list)
    failures: list[str] = Field(default_factory=list)

    def summary(self, estimator: str, label: str) -> EstimatorSummary:
        for row in self.estimators:
            if row.estimator == estimator and row.label == label:
                return row
        raise KeyError((estimator, label))
