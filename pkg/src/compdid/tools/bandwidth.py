"""Cross-validated bandwidth selection.

The criterion is additively separable: a propensity-score block that only
depends on (h, lambda) plus one outcome-regression block per fitted cell that
only depends on that cell's (b, theta). Minimizing each block over its own grid
therefore gives the same answer as searching the full product grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from compdid.core.errors import EstimationError
from compdid.core.parallel import parallel_map
from compdid.data import CELLS, CELLS_MINUS, Cell, SampleData, cell_label
from compdid.models.config import BandwidthConfig, CvCriterion, LambdaPair
from compdid.models.results import GridPoint, SelectedBandwidths
from compdid.tools.kernels import DiscreteKernelParams, KernelFamily, KernelWeights
from compdid.tools.localpoly import (
    GpsFit,
    MultiIndexBasis,
    OrFit,
    fit_local_ls_loo,
    fit_local_mlogit_loo,
)
from compdid.utils.logger import logger

LOG_FLOOR = 1e-12
# Pairwise kernel components are kept in memory below this sample size.
CACHE_MAX_N = 1500

Candidate = tuple[float, LambdaPair]


# ---------------------------------------------------------------------------
# Criterion blocks
# ---------------------------------------------------------------------------

def _cell_matrix(data: SampleData) -> np.ndarray:
    return np.column_stack([data.indicator(cell) for cell in CELLS])


def ps_block_ls(data: SampleData, gps: GpsFit) -> float:
    probabilities = gps.raw_probabilities
    if not np.all(np.isfinite(probabilities)):
        return float("inf")
    return float(np.mean(np.sum((_cell_matrix(data) - probabilities) ** 2, axis=1)))


def ps_block_ml(data: SampleData, gps: GpsFit) -> float:
    probabilities = gps.raw_probabilities
    if not np.all(np.isfinite(probabilities)):
        return float("inf")
    logs = np.log(np.maximum(probabilities, LOG_FLOOR))
    return float(-np.mean(np.sum(_cell_matrix(data) * logs, axis=1)))


def or_block(data: SampleData, cell: Cell, or_fit: OrFit) -> float:
    """E_n[I_{d,t}(Y - m_{d,t}(X))^2]; +inf if the fit is non-finite anywhere."""
    means = or_fit.mean(cell)
    if not np.all(np.isfinite(means)):
        return float("inf")
    in_cell = data.indicator(cell)
    residual = np.where(in_cell > 0, data.y - means, 0.0)
    return float(np.mean(in_cell * residual**2))


def _criterion(
    data: SampleData, gps: GpsFit, or_fit: OrFit, ps_block, cells: tuple[Cell, ...] | None
) -> float:
    cells = CELLS_MINUS if cells is None else cells
    total = ps_block(data, gps)
    for cell in cells:
        total += or_block(data, cell, or_fit)
    return total


def cv_criterion_ls(data: SampleData, gps: GpsFit, or_fit: OrFit, cells: tuple[Cell, ...] | None = None) -> float:
    """Least-squares criterion on leave-one-out fits at one candidate."""
    return _criterion(data, gps, or_fit, ps_block_ls, cells)


def cv_criterion_ml(data: SampleData, gps: GpsFit, or_fit: OrFit, cells: tuple[Cell, ...] | None = None) -> float:
    """Likelihood criterion: the PS block is the negative mean log-likelihood."""
    return _criterion(data, gps, or_fit, ps_block_ml, cells)


PS_BLOCKS = {
    CvCriterion.LOCAL_LIKELIHOOD: ps_block_ml,
    CvCriterion.LEAST_SQUARES: ps_block_ls,
}


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------

def bandwidth_scale(data: SampleData) -> float:
    """Mean sample std of the continuous covariates times n^(-1/(v_c + 4))."""
    if data.n_continuous == 0:
        return 1.0
    spread = float(np.mean(np.std(data.x_c, axis=0, ddof=1))) if data.n > 1 else 1.0
    if not spread > 0:
        spread = 1.0
    return spread * data.n ** (-1.0 / (data.n_continuous + 4))


def _lambda_pairs(data: SampleData, values: list[float]) -> list[LambdaPair]:
    # Types without columns only get lambda = 0 so the grid carries no duplicates.
    u_values = values if data.x_u.shape[1] else [0.0]
    o_values = values if data.x_o.shape[1] else [0.0]
    return [(float(u), float(o)) for u, o in itertools.product(u_values, o_values)]


def default_grid(data: SampleData, config: BandwidthConfig) -> tuple[list[float], list[LambdaPair]]:
    """Data-driven (h, lambda) grid used whenever the config leaves a grid unset."""
    if data.n_continuous == 0:
        h_grid = [1.0]
    elif config.coarse:
        scale = bandwidth_scale(data)
        h_grid = [float(np.sqrt(config.h_span[0] * config.h_span[1]) * scale), float(config.h_span[1] * scale)]
    else:
        scale = bandwidth_scale(data)
        h_grid = [float(v) for v in np.geomspace(config.h_span[0] * scale, config.h_span[1] * scale, config.grid_size)]
    if config.coarse:
        pairs = sorted({(u if data.x_u.shape[1] else 0.0, o if data.x_o.shape[1] else 0.0)
                        for u, o in ((0.25, 0.25), (0.5, 0.5))})
        lambda_grid = [(float(u), float(o)) for u, o in pairs]
    else:
        lambda_grid = _lambda_pairs(data, config.default_lambdas)
    return h_grid, lambda_grid


def _sorted_candidates(h_grid, lambda_grid) -> list[Candidate]:
    return sorted(
        {(float(h), (float(lam[0]), float(lam[1]))) for h, lam in itertools.product(h_grid, lambda_grid)}
    )


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

@dataclass
class _BlockResult:
    name: str
    candidates: list[Candidate]
    values: list[float]

    def argmin(self) -> int:
        finite = [k for k, v in enumerate(self.values) if np.isfinite(v)]
        if not finite:
            raise EstimationError(
                f"every candidate of block '{self.name}' has a non-finite criterion "
                f"({len(self.candidates)} candidates)",
                module="bandwidth",
            )
        # Candidates are sorted by (h, lambda), so the first minimizer wins ties.
        best = min(self.values[k] for k in finite)
        return next(k for k in finite if self.values[k] == best)

    def trace(self) -> list[GridPoint]:
        return [
            GridPoint(block=self.name, bandwidth=h, lambda_u=lam[0], lambda_o=lam[1], value=v)
            for (h, lam), v in zip(self.candidates, self.values)
        ]


class CvSearch:
    """Leave-one-out fits per candidate, cached and shared by both criteria.

    ``cells`` are the outcome-regression cells to tune; pass ``CELLS`` when the
    stationarity-imposing estimator also needs the (1,1) regression.
    """

    def __init__(
        self,
        data: SampleData,
        config: BandwidthConfig | None = None,
        p_order: int = 1,
        or_orders: dict[Cell, int] | None = None,
        cells: tuple[Cell, ...] = CELLS_MINUS,
        family: KernelFamily = KernelFamily.EPANECHNIKOV,
        workers: int = 1,
        q_order: int = 1,
    ):
        self.data = data
        self.config = config or BandwidthConfig()
        self.cells = tuple(c for c in CELLS if c in cells)
        self.family = KernelFamily(family)
        self.workers = workers
        self.ps_basis = MultiIndexBasis(p_order, data.n_continuous)
        or_orders = or_orders or {}
        self.or_bases = {
            cell: MultiIndexBasis(or_orders.get(cell, q_order), data.n_continuous) for cell in self.cells
        }
        self.kernel_weights = KernelWeights(data, self.family, cache=data.n <= CACHE_MAX_N)
        self._gps_cache: dict[Candidate, GpsFit] = {}
        self._or_cache: dict[tuple[Cell, Candidate], OrFit] = {}

        h_default, lambda_default = default_grid(data, self.config)
        self.ps_candidates = _sorted_candidates(
            self.config.h_grid or h_default, self.config.lambda_grid or lambda_default
        )
        self.or_candidates = {
            cell: _sorted_candidates(
                self._cell_grid(self.config.b_grid, cell) or h_default,
                self._cell_grid(self.config.theta_grid, cell) or lambda_default,
            )
            for cell in self.cells
        }

    @staticmethod
    def _cell_grid(grid, cell: Cell):
        if isinstance(grid, dict):
            return grid.get(cell_label(cell))
        return grid

    def gps_fit(self, h: float, lam: LambdaPair) -> GpsFit:
        key = (float(h), (float(lam[0]), float(lam[1])))
        if key not in self._gps_cache:
            self._gps_cache[key] = fit_local_mlogit_loo(
                self.data, self.ps_basis, key[0], DiscreteKernelParams(*key[1]),
                family=self.family, weights=self.kernel_weights,
            )
        return self._gps_cache[key]

    def or_fit(self, cell: Cell, b: float, theta: LambdaPair) -> OrFit:
        key = (cell, (float(b), (float(theta[0]), float(theta[1]))))
        if key not in self._or_cache:
            self._or_cache[key] = fit_local_ls_loo(
                self.data, cell, self.or_bases[cell], key[1][0], DiscreteKernelParams(*key[1][1]),
                family=self.family, weights=self.kernel_weights,
            )
        return self._or_cache[key]

    def ps_value(self, candidate: Candidate, criterion: CvCriterion) -> float:
        return PS_BLOCKS[CvCriterion(criterion)](self.data, self.gps_fit(*candidate))

    def or_value(self, cell: Cell, candidate: Candidate) -> float:
        return or_block(self.data, cell, self.or_fit(cell, *candidate))

    def _evaluate(self, name: str, candidates: list[Candidate], evaluate) -> _BlockResult:
        values = parallel_map(evaluate, candidates, self.workers)
        for (h, lam), value in zip(candidates, values):
            logger.debug(f"CV {name}: bandwidth={h:.4g} lambda={lam} value={value:.6g}")
        return _BlockResult(name, candidates, values)

    def _ps_block(self, criterion: CvCriterion) -> _BlockResult:
        return self._evaluate("ps", self.ps_candidates, lambda c: self.ps_value(c, criterion))

    def _or_blocks(self) -> dict[Cell, _BlockResult]:
        return {
            cell: self._evaluate(f"or_{cell_label(cell)}", self.or_candidates[cell],
                                 lambda c, cell=cell: self.or_value(cell, c))
            for cell in self.cells
        }

    def _shared_or_block(self) -> _BlockResult:
        shared = sorted(set.intersection(*(set(self.or_candidates[c]) for c in self.cells)))
        if not shared:
            raise EstimationError("per-cell OR grids have no candidate in common", module="bandwidth")

        def total(candidate: Candidate) -> float:
            return float(sum(self.or_value(cell, candidate) for cell in self.cells))

        return self._evaluate("or_shared", shared, total)

    def select(self, criterion: CvCriterion | None = None) -> SelectedBandwidths:
        criterion = CvCriterion(criterion or self.config.criterion)
        if self.config.search == "cartesian":
            return self._select_cartesian(criterion)

        ps = self._ps_block(criterion)
        h, lam = ps.candidates[ps.argmin()]
        ps_value = ps.values[ps.argmin()]
        trace = ps.trace()
        or_selected: dict[Cell, Candidate] = {}
        if self.config.share_or_bandwidths and self.cells:
            block = self._shared_or_block()
            choice = block.candidates[block.argmin()]
            or_selected = {cell: choice for cell in self.cells}
            trace += block.trace()
        else:
            for cell, block in self._or_blocks().items():
                or_selected[cell] = block.candidates[block.argmin()]
                trace += block.trace()
        return self._result(criterion, (h, lam), ps_value, or_selected, trace)

    def _select_cartesian(self, criterion: CvCriterion) -> SelectedBandwidths:
        """Brute force over the full product grid; used to check the separable search."""
        ps = self._ps_block(criterion)
        ps_values = dict(zip(ps.candidates, ps.values))
        trace = ps.trace()
        if self.config.share_or_bandwidths and self.cells:
            shared = sorted(set.intersection(*(set(self.or_candidates[c]) for c in self.cells)))
            or_grids = [[(c,) * len(self.cells) for c in shared]]
        else:
            or_grids = [self.or_candidates[cell] for cell in self.cells]
        or_values = {
            cell: dict(zip(block.candidates, block.values)) for cell, block in self._or_blocks().items()
        }
        for cell in self.cells:
            trace += [
                GridPoint(block=f"or_{cell_label(cell)}", bandwidth=h, lambda_u=lam[0], lambda_o=lam[1], value=v)
                for (h, lam), v in or_values[cell].items()
            ]

        best, best_value = None, float("inf")
        for ps_candidate in ps.candidates:
            for combo in itertools.product(*or_grids):
                if self.config.share_or_bandwidths and self.cells:
                    combo = combo[0]
                value = ps_values[ps_candidate]
                for cell, candidate in zip(self.cells, combo):
                    value += or_values[cell][candidate]
                if np.isfinite(value) and value < best_value:
                    best, best_value = (ps_candidate, combo), value
        if best is None:
            raise EstimationError("every candidate of the product grid is non-finite", module="bandwidth")
        ps_candidate, combo = best
        return self._result(criterion, ps_candidate, ps_values[ps_candidate], dict(zip(self.cells, combo)), trace)

    def _result(
        self,
        criterion: CvCriterion,
        ps_candidate: Candidate,
        ps_value: float,
        or_selected: dict[Cell, Candidate],
        trace: list[GridPoint],
    ) -> SelectedBandwidths:
        total = ps_value
        for cell in self.cells:
            total += self.or_value(cell, or_selected[cell])
        h, lam = ps_candidate
        logger.info(
            f"Selected bandwidths ({criterion.value}): h={h:.4g} lambda={lam} "
            + " ".join(f"b_{cell_label(c)}={or_selected[c][0]:.4g}" for c in self.cells)
            + f" criterion={total:.6g}"
        )
        return SelectedBandwidths(
            h=h,
            lam=lam,
            or_bandwidths={cell_label(c): or_selected[c] for c in self.cells},
            criterion=criterion.value,
            criterion_value=total,
            grid_trace=trace,
        )

    def fits_for(self, selected: SelectedBandwidths) -> tuple[GpsFit, OrFit]:
        """Cached leave-one-out fits at a selected point."""
        gps = self.gps_fit(selected.h, selected.lam)
        or_fit = OrFit.combine(
            [self.or_fit(cell, *selected.or_bandwidths[cell_label(cell)]) for cell in self.cells]
        )
        return gps, or_fit


def select_bandwidths(
    data: SampleData,
    config: BandwidthConfig,
    p_order: int = 1,
    or_orders: dict[Cell, int] | None = None,
    cells: tuple[Cell, ...] = CELLS_MINUS,
    family: KernelFamily = KernelFamily.EPANECHNIKOV,
    workers: int = 1,
    q_order: int = 1,
) -> SelectedBandwidths:
    """Exhaustive grid minimization of the configured criterion.

    Cells missing from ``or_orders`` use ``q_order``.
    """
    return CvSearch(data, config, p_order, or_orders, cells, family, workers, q_order).select()
