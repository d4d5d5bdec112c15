import numpy as np
import pytest

from compdid.core.errors import EstimationError
from compdid.data import CELLS, CELLS_MINUS, SampleData
from compdid.models.config import BandwidthConfig, CvCriterion
from compdid.tools.bandwidth import (
    CvSearch,
    cv_criterion_ls,
    cv_criterion_ml,
    default_grid,
    or_block,
    ps_block_ls,
    ps_block_ml,
    select_bandwidths,
)
from compdid.tools.localpoly import GpsFit, OrFit


def _uniform(n: int) -> GpsFit:
    return GpsFit.from_probabilities(np.full((n, 4), 0.25))


def test_uniform_propensity_blocks(mixed_data):
    gps = _uniform(mixed_data.n)
    assert ps_block_ml(mixed_data, gps) == pytest.approx(np.log(4.0))
    assert ps_block_ls(mixed_data, gps) == pytest.approx(0.75)


def test_criteria_add_outcome_blocks(mixed_data):
    gps = _uniform(mixed_data.n)
    or_fit = OrFit(loo_means={cell: np.zeros(mixed_data.n) for cell in CELLS_MINUS})
    expected = sum(np.mean(mixed_data.indicator(c) * mixed_data.y**2) for c in CELLS_MINUS)
    assert cv_criterion_ml(mixed_data, gps, or_fit) == pytest.approx(np.log(4.0) + expected)
    assert cv_criterion_ls(mixed_data, gps, or_fit) == pytest.approx(0.75 + expected)


def test_non_finite_fit_scores_infinity(mixed_data):
    means = np.zeros(mixed_data.n)
    means[5] = np.nan
    assert or_block(mixed_data, (1, 0), OrFit(loo_means={(1, 0): means})) == float("inf")
    probabilities = np.full((mixed_data.n, 4), 0.25)
    probabilities[0, 0] = np.inf
    assert ps_block_ml(mixed_data, GpsFit.from_probabilities(probabilities)) == float("inf")


def test_singleton_grid_is_selected(mixed_data):
    config = BandwidthConfig(h_grid=[0.5], lambda_grid=[(0.5, 0.5)], b_grid=[0.7], theta_grid=[(0.25, 0.5)])
    selected = select_bandwidths(mixed_data, config)
    assert selected.h == 0.5
    assert tuple(selected.lam) == (0.5, 0.5)
    for label in ("10", "01", "00"):
        b, theta = selected.or_bandwidths[label]
        assert b == 0.7 and tuple(theta) == (0.25, 0.5)
    assert np.isfinite(selected.criterion_value)


def test_empty_window_candidate_is_skipped(mixed_data):
    config = BandwidthConfig(h_grid=[0.5], lambda_grid=[(0.5, 0.5)], b_grid=[1e-9, 0.8], theta_grid=[(0.5, 0.5)])
    selected = select_bandwidths(mixed_data, config)
    assert all(b == 0.8 for b, _ in selected.or_bandwidths.values())
    tiny = [p for p in selected.grid_trace if p.block.startswith("or_") and p.bandwidth == 1e-9]
    assert tiny and all(p.value == float("inf") for p in tiny)


def test_every_candidate_non_finite(mixed_data):
    config = BandwidthConfig(h_grid=[0.5], lambda_grid=[(0.5, 0.5)], b_grid=[1e-9], theta_grid=[(0.5, 0.5)])
    with pytest.raises(EstimationError):
        select_bandwidths(mixed_data, config)


@pytest.mark.parametrize("criterion", list(CvCriterion))
def test_separable_search_matches_product_grid(mixed_data, small_grid, criterion):
    separable = CvSearch(mixed_data, small_grid).select(criterion)
    cartesian = CvSearch(mixed_data, small_grid.model_copy(update={"search": "cartesian"})).select(criterion)
    assert separable.h == cartesian.h
    assert tuple(separable.lam) == tuple(cartesian.lam)
    assert separable.or_bandwidths == cartesian.or_bandwidths
    assert separable.criterion_value == pytest.approx(cartesian.criterion_value, rel=1e-12)


def test_shared_outcome_bandwidths(mixed_data, small_grid):
    config = small_grid.model_copy(update={"share_or_bandwidths": True})
    selected = select_bandwidths(mixed_data, config)
    assert len({(b, tuple(theta)) for b, theta in selected.or_bandwidths.values()}) == 1


def test_all_cells_are_tuned_when_requested(mixed_data, small_grid):
    search = CvSearch(mixed_data, small_grid, cells=CELLS)
    selected = search.select()
    assert set(selected.or_bandwidths) == {"11", "10", "01", "00"}
    gps, or_fit = search.fits_for(selected)
    assert or_fit.cells == CELLS
    assert gps.h == selected.h


def test_default_grid_without_continuous_covariates(mixed_data):
    data = SampleData(
        y=mixed_data.y, d=mixed_data.d, t=mixed_data.t, x_c=np.zeros((mixed_data.n, 0)),
        x_u=mixed_data.x_u, x_o=np.zeros((mixed_data.n, 0)),
    )
    h_grid, lambda_grid = default_grid(data, BandwidthConfig())
    assert h_grid == [1.0]
    assert lambda_grid == [(0.0, 0.0), (0.25, 0.0), (0.5, 0.0)]


def test_default_grid_sizes(mixed_data):
    h_grid, lambda_grid = default_grid(mixed_data, BandwidthConfig(grid_size=5))
    assert len(h_grid) == 5 and h_grid == sorted(h_grid)
    assert len(lambda_grid) == 9
    h_coarse, lambda_coarse = default_grid(mixed_data, BandwidthConfig(coarse=True))
    assert len(h_coarse) == 2
    assert lambda_coarse == [(0.25, 0.25), (0.5, 0.5)]


def test_outcome_order_falls_back_to_q_order(mixed_data, small_grid):
    search = CvSearch(mixed_data, small_grid, or_orders={(1, 0): 0}, cells=CELLS, q_order=2)
    assert search.or_bases[(1, 0)].order == 0
    assert {search.or_bases[c].order for c in CELLS if c != (1, 0)} == {2}
