import numpy as np
import pytest

from compdid.core.errors import EmptyCellError, EstimationError
from compdid.data import CELLS, CELLS_MINUS, SampleData
from compdid.estimators import (
    att_dr,
    att_ipw,
    att_or,
    att_sz,
    att_twfe,
    bias_decomposition,
    efficiency_loss_rho,
    hajek_weights_dr,
    sz_weights,
    twfe_design,
)
from compdid.models.config import EstimatorKind
from compdid.simulation import DgpSpec, draw_data, efficiency_bound, oracle_nuisances, true_att
from compdid.tools.localpoly import GpsFit, OrFit


def _nuisances(data: SampleData, seed: int = 2) -> tuple[GpsFit, OrFit]:
    rng = np.random.default_rng(seed)
    probabilities = rng.dirichlet([4.0, 4.0, 4.0, 4.0], size=data.n)
    x = data.x_c[:, 0]
    means = {cell: 1.0 + k + (k + 1) * x for k, cell in enumerate(CELLS)}
    return GpsFit.from_probabilities(probabilities), OrFit(loo_means=means)


def test_hajek_weights_average_one(mixed_data):
    gps, _ = _nuisances(mixed_data)
    weights = hajek_weights_dr(mixed_data, gps)
    for cell in CELLS:
        assert np.mean(weights[cell]) == pytest.approx(1.0, abs=1e-12)
        assert np.all(weights[cell][mixed_data.indicator(cell) == 0] == 0)
    for weights in sz_weights(mixed_data, gps).values():
        assert np.mean(weights) == pytest.approx(1.0, abs=1e-12)


def test_constant_propensity_gives_cell_mean_weights(mixed_data):
    gps = GpsFit.from_probabilities(np.tile([0.4, 0.2, 0.3, 0.1], (mixed_data.n, 1)))
    weights = hajek_weights_dr(mixed_data, gps)
    counts = mixed_data.cell_counts()
    for cell in CELLS:
        expected = mixed_data.indicator(cell) * mixed_data.n / counts[cell]
        np.testing.assert_allclose(weights[cell], expected, rtol=1e-12)


def test_constant_propensity_ipw_is_difference_of_cell_means(mixed_data):
    gps = GpsFit.from_probabilities(np.tile([0.25, 0.25, 0.25, 0.25], (mixed_data.n, 1)))
    estimate = att_ipw(mixed_data, gps)
    means = {c: mixed_data.y[mixed_data.indicator(c) == 1].mean() for c in CELLS}
    expected = means[(1, 1)] - means[(1, 0)] - means[(0, 1)] + means[(0, 0)]
    assert estimate.tau_hat == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("estimator", [att_dr, att_sz])
def test_influence_values_are_centered(mixed_data, estimator):
    gps, or_fit = _nuisances(mixed_data)
    estimate = estimator(mixed_data, gps, or_fit)
    assert abs(np.mean(estimate.influence)) < 1e-10
    assert estimate.omega_hat == pytest.approx(np.mean(estimate.influence**2))
    assert estimate.ci_low < estimate.tau_hat < estimate.ci_high


def test_treated_post_shift_moves_estimate(mixed_data):
    gps, or_fit = _nuisances(mixed_data)
    shift = 3.5 * mixed_data.indicator((1, 1))
    before = att_dr(mixed_data, gps, or_fit)
    after = att_dr(mixed_data.with_outcome(mixed_data.y + shift), gps, or_fit)
    assert after.tau_hat - before.tau_hat == pytest.approx(3.5, abs=1e-10)


def test_weighted_decomposition_equals_estimator_gap(mixed_data):
    gps, or_fit = _nuisances(mixed_data, seed=8)
    gap = att_sz(mixed_data, gps, or_fit).tau_hat - att_dr(mixed_data, gps, or_fit).tau_hat
    assert bias_decomposition(mixed_data, or_fit, gps, method="weighted") == pytest.approx(gap, abs=1e-10)


def test_weighted_decomposition_needs_propensity(mixed_data):
    _, or_fit = _nuisances(mixed_data)
    with pytest.raises(ValueError):
        bias_decomposition(mixed_data, or_fit, method="weighted")


def test_homogeneous_effect_has_no_composition_bias():
    spec = DgpSpec(design=1, n=400, seed=4, constant_effect=2.0)
    data = draw_data(spec)
    _, or_fit = oracle_nuisances(spec, data)
    assert bias_decomposition(data, or_fit) == pytest.approx(0.0, abs=1e-9)
    assert efficiency_loss_rho(data, or_fit) == pytest.approx(0.0, abs=1e-9)


def test_oracle_nuisances_recover_the_effect():
    spec = DgpSpec(design=2, n=2000, seed=6, constant_effect=5.0, noise_sd=0.5)
    data = draw_data(spec)
    gps, or_fit = oracle_nuisances(spec, data)
    assert att_or(data, or_fit).tau_hat == pytest.approx(5.0, abs=0.5)
    estimate = att_dr(data, gps, or_fit)
    assert abs(estimate.tau_hat - 5.0) < 5 * estimate.se


def test_permutation_invariance(mixed_data):
    gps, or_fit = _nuisances(mixed_data)
    perm = np.random.default_rng(0).permutation(mixed_data.n)
    gps_p = GpsFit.from_probabilities(gps.loo_probabilities[perm])
    or_p = OrFit(loo_means={c: m[perm] for c, m in or_fit.loo_means.items()})
    data_p = mixed_data.subset(perm)
    for estimator in (att_dr, att_sz):
        assert estimator(data_p, gps_p, or_p).tau_hat == pytest.approx(
            estimator(mixed_data, gps, or_fit).tau_hat, rel=1e-12
        )


def test_empty_treated_post_cell(mixed_data):
    keep = np.flatnonzero(mixed_data.indicator((1, 1)) == 0)
    data = mixed_data.subset(keep)
    gps, or_fit = _nuisances(data)
    with pytest.raises(EmptyCellError) as excinfo:
        att_dr(data, gps, or_fit)
    assert str(excinfo.value) == "[estimators] empty treatment cell (1,1)"


def test_twfe_recovers_interaction_coefficient(mixed_data):
    y = (1.0 + 0.5 * mixed_data.t + 0.3 * mixed_data.d + 2.0 * mixed_data.t * mixed_data.d
         + mixed_data.x_c[:, 0] + 0.2 * mixed_data.x_o[:, 0])
    data = mixed_data.with_outcome(y)
    for spec in ("linear", "saturated"):
        assert att_twfe(data, spec).tau_hat == pytest.approx(2.0, abs=1e-8)
    assert att_twfe(data, "saturated").kind is EstimatorKind.TWFE_SATURATED


def test_twfe_saturated_design_columns(mixed_data):
    design = twfe_design(mixed_data, "saturated")
    assert {"const", "T", "D", "TD", "x1", "x1^2", "xo", "x1:xo"} <= set(design.columns)
    assert "xu_1:xu_2" not in design.columns


def test_twfe_rank_deficient_design(mixed_data):
    x = mixed_data.x_c[:, 0]
    data = SampleData(
        y=mixed_data.y, d=mixed_data.d, t=mixed_data.t, x_c=np.column_stack([x, x]),
        x_u=np.zeros((mixed_data.n, 0)), x_o=np.zeros((mixed_data.n, 0)),
        covariate_names={"continuous": ["a", "b"]},
    )
    with pytest.raises(EstimationError):
        att_twfe(data)


def test_non_finite_outcome_regression_is_an_error(mixed_data):
    gps, or_fit = _nuisances(mixed_data)
    means = dict(or_fit.loo_means)
    bad = means[(1, 0)].copy()
    bad[np.flatnonzero(mixed_data.indicator((1, 1)))[0]] = np.nan
    means[(1, 0)] = bad
    with pytest.raises(EstimationError):
        att_dr(mixed_data, gps, OrFit(loo_means=means))


def test_sz_needs_treated_post_regression(mixed_data):
    gps, or_fit = _nuisances(mixed_data)
    partial = OrFit(loo_means={c: or_fit.mean(c) for c in CELLS_MINUS})
    att_dr(mixed_data, gps, partial)
    with pytest.raises(EstimationError):
        att_sz(mixed_data, gps, partial)


@pytest.mark.parametrize("misspecified", ["propensity", "outcome"])
def test_double_robustness(misspecified):
    spec = DgpSpec(design=1, n=1000, seed=12)
    tau = true_att(spec)
    errors = []
    for replication in range(200):
        data = draw_data(spec, replication)
        gps, or_fit = oracle_nuisances(spec, data)
        if misspecified == "propensity":
            gps = GpsFit.from_probabilities(np.full((data.n, 4), 0.25))
        else:
            or_fit = OrFit(loo_means={c: m + 5.0 * data.x_c[:, 0] + 3.0 for c, m in or_fit.loo_means.items()})
        errors.append(att_dr(data, gps, or_fit).tau_hat - tau)
    errors = np.array(errors)
    assert abs(errors.mean()) < 3 * errors.std(ddof=1) / np.sqrt(len(errors))


def test_efficiency_loss_by_hand():
    data = SampleData(
        y=np.zeros(6), d=[1, 1, 1, 0, 0, 0], t=[1, 0, 1, 0, 1, 0],
        x_c=np.zeros((6, 1)), x_u=np.zeros((6, 0)), x_o=np.zeros((6, 0)),
    )
    zeros = np.zeros(6)
    or_fit = OrFit(loo_means={
        (1, 1): np.array([1.0, 2.0, 6.0, 9.0, 9.0, 9.0]), (1, 0): zeros, (0, 1): zeros, (0, 0): zeros,
    })
    # E[T] = E[D] = 1/2, tau(X) on the treated is (1, 2, 6) with variance 14/3.
    assert efficiency_loss_rho(data, or_fit) == pytest.approx(28.0 / 3.0)


def test_stationarity_trades_variance_for_the_efficiency_loss():
    spec = DgpSpec(design=2, n=1000, seed=21)
    omega_dr, omega_sz, rho, decomposition = [], [], [], []
    for replication in range(200):
        data = draw_data(spec, replication)
        gps, or_fit = oracle_nuisances(spec, data)
        omega_dr.append(att_dr(data, gps, or_fit).omega_hat)
        omega_sz.append(att_sz(data, gps, or_fit).omega_hat)
        rho.append(efficiency_loss_rho(data, or_fit))
        decomposition.append(bias_decomposition(data, or_fit))
    gap = np.mean(omega_dr) - np.mean(omega_sz)
    assert gap > 0
    assert np.mean(rho) == pytest.approx(gap, rel=0.25)
    assert np.mean(omega_sz) == pytest.approx(efficiency_bound(spec), rel=0.1)
    assert abs(np.mean(decomposition)) < 3 * np.std(decomposition, ddof=1) / np.sqrt(len(decomposition))
