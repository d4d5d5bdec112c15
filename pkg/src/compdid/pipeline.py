"""End-to-end estimation: select bandwidths, fit nuisances, estimate, test."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from compdid.core.errors import EstimationError
from compdid.data import CELLS, CELLS_MINUS, Cell, SampleData, cell_label
from compdid.estimators import (
    AttEstimate,
    att_dr,
    att_ipw,
    att_or,
    att_sz,
    att_twfe,
    bias_decomposition,
    cell_summary,
    efficiency_loss_rho,
    hajek_weights_dr,
)
from compdid.inference import (
    BootstrapResult,
    HausmanResult,
    bootstrap_hausman_pvalue,
    bootstrap_se,
    hausman_test,
)
from compdid.models.config import CvCriterion, EstimatorKind, RunConfig
from compdid.models.results import EstimationReport, SelectedBandwidths
from compdid.tools.bandwidth import CvSearch
from compdid.tools.kernels import DiscreteKernelParams, KernelWeights
from compdid.tools.localpoly import (
    GpsFit,
    MultiIndexBasis,
    OrFit,
    fit_local_ls_loo,
    fit_local_mlogit_loo,
    predict_gps,
)
from compdid.utils.logger import logger

WEIGHT_TOL = 1e-12
SIMPLEX_TOL = 1e-12
INFLUENCE_TOL = 1e-10

NUISANCE_FREE = (EstimatorKind.TWFE_LINEAR, EstimatorKind.TWFE_SATURATED)


@dataclass
class PipelineResult:
    data: SampleData
    estimates: dict[EstimatorKind, AttEstimate]
    selected: SelectedBandwidths | None = None
    gps: GpsFit | None = None
    or_fit: OrFit | None = None
    hausman: HausmanResult | None = None
    clustered_p_value: float | None = None
    bootstrap: dict[EstimatorKind, BootstrapResult] = field(default_factory=dict)
    bias_decomposition: float | None = None
    efficiency_loss_rho: float | None = None
    warnings: list[str] = field(default_factory=list)

    def to_report(self, config: RunConfig) -> EstimationReport:
        return EstimationReport(
            config=config.model_dump(mode="json"),
            n=self.data.n,
            cell_counts=cell_summary(self.data),
            bandwidths=self.selected,
            gps_diagnostics=self.gps.diagnostics() if self.gps is not None else {},
            or_diagnostics=self.or_fit.diagnostics() if self.or_fit is not None else {},
            estimates=[
                est.to_record(self.bootstrap[kind].se if kind in self.bootstrap else None)
                for kind, est in self.estimates.items()
            ],
            hausman=self.hausman.to_record(self.clustered_p_value) if self.hausman is not None else None,
            bias_decomposition=self.bias_decomposition,
            efficiency_loss_rho=self.efficiency_loss_rho,
            warnings=self.warnings,
        )


class DrDidPipeline:
    """Orchestrates one estimation run for a resolved ``RunConfig``.

    The same instance serves single runs and Monte Carlo replications; a
    ``CvSearch`` can be shared across criteria so leave-one-out fits are
    computed once per candidate.
    """

    def __init__(self, config: RunConfig, workers: int | None = None):
        self.config = config
        self.workers = workers or config.workers
        logger.debug(f"DrDidPipeline initialized with estimators {[e.value for e in config.estimators]}")

    @property
    def needs_all_cells(self) -> bool:
        return EstimatorKind.SZ in self.config.estimators

    def needs_nuisances(self, kinds: list[EstimatorKind] | None = None) -> bool:
        kinds = self.config.estimators if kinds is None else kinds
        return any(kind not in NUISANCE_FREE for kind in kinds)

    @property
    def or_cells(self) -> tuple[Cell, ...]:
        return CELLS if self.needs_all_cells else CELLS_MINUS

    def or_orders(self) -> dict[Cell, int]:
        return {cell: self.config.or_order(cell_label(cell)) for cell in CELLS}

    def search(self, data: SampleData) -> CvSearch:
        return CvSearch(
            data,
            self.config.bandwidth,
            p_order=self.config.p_order,
            or_orders=self.or_orders(),
            cells=self.or_cells,
            family=self.config.kernel,
            workers=self.workers,
            q_order=self.config.q_order,
        )

    def fit_fixed(self, data: SampleData) -> tuple[GpsFit, OrFit]:
        """Leave-one-out fits at user-supplied bandwidths."""
        fixed = self.config.fixed_bandwidths
        weights = KernelWeights(data, self.config.kernel)
        gps = fit_local_mlogit_loo(
            data, MultiIndexBasis(self.config.p_order, data.n_continuous), fixed.h, DiscreteKernelParams(*fixed.lam),
            family=self.config.kernel, workers=self.workers, weights=weights,
        )
        fits = []
        for cell in self.or_cells:
            b, theta = fixed.or_params(cell_label(cell))
            basis = MultiIndexBasis(self.config.or_order(cell_label(cell)), data.n_continuous)
            fits.append(fit_local_ls_loo(
                data, cell, basis, b, DiscreteKernelParams(*theta),
                family=self.config.kernel, workers=self.workers, weights=weights,
            ))
        return gps, OrFit.combine(fits)

    def fit_nuisances(
        self, data: SampleData, criterion: CvCriterion | None = None, search: CvSearch | None = None
    ) -> tuple[SelectedBandwidths | None, GpsFit, OrFit]:
        if self.config.fixed_bandwidths is not None:
            gps, or_fit = self.fit_fixed(data)
            selected = None
        else:
            search = search or self.search(data)
            selected = search.select(criterion)
            gps, or_fit = search.fits_for(selected)
        return selected, predict_gps(gps, self.config.floor), or_fit

    def check_invariants(self, data: SampleData, gps: GpsFit, estimates: dict[EstimatorKind, AttEstimate]) -> None:
        """Normalization identities every run must satisfy."""
        row_sums = gps.raw_probabilities.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > SIMPLEX_TOL:
            raise EstimationError("propensity scores do not sum to one before truncation", module="estimators")
        for cell, weights in hajek_weights_dr(data, gps).items():
            if abs(np.mean(weights) - 1.0) > WEIGHT_TOL:
                raise EstimationError(f"Hajek weights of cell {cell} do not average one", module="estimators")
        for kind in (EstimatorKind.DR, EstimatorKind.SZ):
            if kind in estimates:
                influence = estimates[kind].influence
                scale = max(1.0, float(np.max(np.abs(influence))))
                if abs(np.mean(influence)) > INFLUENCE_TOL * scale:
                    raise EstimationError(f"{kind.value} influence values are not centered", module="estimators")

    def run(
        self,
        data: SampleData,
        criterion: CvCriterion | None = None,
        search: CvSearch | None = None,
        estimators: list[EstimatorKind] | None = None,
    ) -> PipelineResult:
        config = self.config
        kinds = estimators if estimators is not None else config.estimators
        data.require_cells(CELLS, module="estimators")
        result = PipelineResult(data=data, estimates={})

        if self.needs_nuisances(kinds):
            result.selected, result.gps, result.or_fit = self.fit_nuisances(data, criterion, search)
            for name, count in result.gps.diagnostics().items():
                if name != "points" and count:
                    result.warnings.append(f"propensity score: {count} points {name.replace('_', ' ')}")

        level = config.ci_level
        for kind in kinds:
            if kind is EstimatorKind.DR:
                result.estimates[kind] = att_dr(data, result.gps, result.or_fit, level)
            elif kind is EstimatorKind.SZ:
                result.estimates[kind] = att_sz(data, result.gps, result.or_fit, level)
            elif kind is EstimatorKind.OR:
                result.estimates[kind] = att_or(data, result.or_fit, level)
            elif kind is EstimatorKind.IPW:
                result.estimates[kind] = att_ipw(data, result.gps, level)
            elif kind is EstimatorKind.TWFE_LINEAR:
                result.estimates[kind] = att_twfe(data, "linear", level)
            elif kind is EstimatorKind.TWFE_SATURATED:
                result.estimates[kind] = att_twfe(data, "saturated", level)
            logger.info(
                f"{kind.value}: tau={result.estimates[kind].tau_hat:.4f} se={result.estimates[kind].se:.4f}"
            )
        if result.gps is not None:
            self.check_invariants(data, result.gps, result.estimates)

        if result.or_fit is not None and all(c in result.or_fit.cells for c in CELLS):
            result.bias_decomposition = bias_decomposition(data, result.or_fit)
            result.efficiency_loss_rho = efficiency_loss_rho(data, result.or_fit)

        est_dr = result.estimates.get(EstimatorKind.DR)
        est_sz = result.estimates.get(EstimatorKind.SZ)
        if est_dr is not None and est_sz is not None:
            result.hausman = hausman_test(est_dr, est_sz)

        if config.bootstrap is not None:
            for kind, estimate in result.estimates.items():
                boot = bootstrap_se(data, estimate, config.bootstrap, workers=self.workers)
                result.bootstrap[kind] = boot
                result.warnings.extend(w for w in boot.warnings if w not in result.warnings)
            if result.hausman is not None and not result.hausman.degenerate:
                result.clustered_p_value = bootstrap_hausman_pvalue(
                    data, est_dr, est_sz, config.bootstrap, workers=self.workers
                )
            elif result.hausman is not None:
                result.clustered_p_value = 1.0
        return result
