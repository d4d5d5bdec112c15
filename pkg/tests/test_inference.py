import numpy as np
import pytest
from scipy.stats import kstest

from compdid.core.errors import DegenerateTestError, EstimationError, ShapeError
from compdid.data import CELLS, SampleData
from compdid.estimators import AttEstimate, att_dr, att_sz
from compdid.inference import (
    TEST_LEVELS,
    bootstrap_hausman_pvalue,
    bootstrap_se,
    cluster_codes,
    hausman_test,
    mammen_weights,
    multiplier_draws,
)
from compdid.models.config import BootstrapConfig, EstimatorKind, WeightLaw
from compdid.tools.localpoly import GpsFit, OrFit


def _estimate(kind: EstimatorKind, tau: float, influence: np.ndarray) -> AttEstimate:
    omega = float(np.mean(influence**2))
    return AttEstimate(kind=kind, tau_hat=tau, influence=influence, omega_hat=omega, ci_low=tau, ci_high=tau)


def _pair(n: int = 200, gap: float = 0.1, seed: int = 0) -> tuple[AttEstimate, AttEstimate]:
    rng = np.random.default_rng(seed)
    eta_sz = rng.normal(0.0, 1.0, n)
    eta_dr = eta_sz + rng.normal(0.0, 0.5, n)
    return _estimate(EstimatorKind.DR, 1.0 + gap, eta_dr), _estimate(EstimatorKind.SZ, 1.0, eta_sz)


def test_statistic_formula():
    est_dr, est_sz = _pair()
    result = hausman_test(est_dr, est_sz)
    v_hat = np.mean((est_dr.influence - est_sz.influence) ** 2)
    assert result.v_hat == pytest.approx(v_hat)
    assert result.statistic == pytest.approx(200 * 0.1**2 / v_hat)
    assert result.contrast == pytest.approx(0.1)
    assert 0.0 <= result.p_value <= 1.0
    assert result.naive_variance == pytest.approx(est_dr.omega_hat - est_sz.omega_hat)


@pytest.mark.parametrize("gap", [0.0, 0.02, 0.1, 0.5])
def test_decisions_follow_the_p_value(gap):
    result = hausman_test(*_pair(gap=gap))
    assert set(result.decision_at) == set(TEST_LEVELS)
    for alpha, reject in result.decision_at.items():
        assert reject == (result.p_value <= alpha)


def test_identical_estimates_are_degenerate():
    influence = np.random.default_rng(1).normal(size=50)
    est = _estimate(EstimatorKind.DR, 2.0, influence)
    result = hausman_test(est, _estimate(EstimatorKind.SZ, 2.0, influence))
    assert result.degenerate
    assert result.statistic == 0.0 and result.p_value == 1.0
    assert not any(result.decision_at.values())


def test_zero_variance_with_nonzero_contrast():
    influence = np.random.default_rng(1).normal(size=50)
    with pytest.raises(DegenerateTestError):
        hausman_test(_estimate(EstimatorKind.DR, 2.0, influence), _estimate(EstimatorKind.SZ, 2.5, influence))


def test_misaligned_influence_vectors():
    with pytest.raises(ShapeError):
        hausman_test(_estimate(EstimatorKind.DR, 0.0, np.ones(5)), _estimate(EstimatorKind.SZ, 0.0, np.ones(6)))


def test_record_keys_levels_as_strings():
    record = hausman_test(*_pair()).to_record(clustered_p_value=0.3)
    assert set(record.decision_at) == {"0.10", "0.05", "0.01"}
    assert record.clustered_p_value == 0.3


def test_mammen_weights_have_unit_mean_and_variance():
    draws = mammen_weights(np.random.default_rng(0), 400_000)
    assert np.all(draws >= 0)
    assert np.mean(draws) == pytest.approx(1.0, abs=0.01)
    assert np.var(draws) == pytest.approx(1.0, abs=0.01)


def _data(n: int, cluster=None) -> SampleData:
    rng = np.random.default_rng(5)
    return SampleData(
        y=rng.normal(size=n), d=rng.integers(0, 2, n), t=rng.integers(0, 2, n),
        x_c=rng.uniform(size=(n, 1)), x_u=np.zeros((n, 0)), x_o=np.zeros((n, 0)), cluster=cluster,
    )


def test_bootstrap_is_reproducible_across_workers():
    data = _data(150)
    est, _ = _pair(n=150)
    config = BootstrapConfig(draws=200, seed=11)
    serial = bootstrap_se(data, est, config, workers=1)
    pooled = bootstrap_se(data, est, config, workers=4)
    np.testing.assert_array_equal(serial.draws, pooled.draws)
    assert serial.se == pooled.se
    assert serial.se == pytest.approx(np.std(serial.draws, ddof=1))


def test_bootstrap_se_tracks_the_analytic_se():
    data = _data(400)
    est, _ = _pair(n=400)
    result = bootstrap_se(data, est, BootstrapConfig(draws=2000, seed=3))
    assert result.se == pytest.approx(np.sqrt(np.mean(est.influence**2) / 400), rel=0.15)


def test_unit_multipliers_give_zero_se():
    data = _data(60)
    est, _ = _pair(n=60)
    result = bootstrap_se(data, est, BootstrapConfig(draws=100), sampler=lambda rng, size: np.ones(size))
    assert result.se == 0.0
    assert np.all(result.draws == 0.0)


def test_multipliers_are_shared_within_clusters():
    codes = np.array([0, 0, 1, 1, 2])
    scores = np.array([1.0, -1.0, 2.0, 0.5, -3.0])
    draws = multiplier_draws(scores, codes, 5, seed=9, sampler=mammen_weights)
    merged = multiplier_draws(np.array([0.0, 2.5, -3.0]), np.array([0, 1, 2]), 5, seed=9, sampler=mammen_weights)
    np.testing.assert_allclose(draws * 5, merged * 3)


def test_cluster_codes():
    data = _data(6, cluster=np.array(["b", "a", "b", "c", "a", "c"]))
    np.testing.assert_array_equal(cluster_codes(data, BootstrapConfig(cluster_by="state")), [1, 0, 1, 2, 0, 2])
    np.testing.assert_array_equal(cluster_codes(data, BootstrapConfig()), np.arange(6))
    with pytest.raises(EstimationError):
        cluster_codes(_data(6), BootstrapConfig(cluster_by="state"))


def test_single_cluster_is_rejected():
    data = _data(20, cluster=np.array(["only"] * 20))
    est, _ = _pair(n=20)
    with pytest.raises(EstimationError):
        bootstrap_se(data, est, BootstrapConfig(cluster_by="g"))


def test_few_draws_warn():
    data = _data(30)
    est, _ = _pair(n=30)
    result = bootstrap_se(data, est, BootstrapConfig(draws=10, weight_law=WeightLaw.MAMMEN))
    assert result.warnings and "10 bootstrap draws" in result.warnings[0]


def test_clustered_p_value_range():
    data = _data(200, cluster=np.repeat(np.arange(40), 5))
    est_dr, est_sz = _pair(n=200, gap=0.0)
    assert bootstrap_hausman_pvalue(data, est_dr, est_sz, BootstrapConfig(draws=99, cluster_by="g")) == 1.0
    est_dr, est_sz = _pair(n=200, gap=5.0)
    assert bootstrap_hausman_pvalue(data, est_dr, est_sz, BootstrapConfig(draws=99, cluster_by="g")) == 0.0


@pytest.mark.parametrize("a, b", [(10.0, 2.0), (-3.0, 0.5), (0.0, -4.0)])
def test_statistic_is_invariant_to_affine_outcome_changes(mixed_data, a, b):
    rng = np.random.default_rng(2)
    gps = GpsFit.from_probabilities(rng.dirichlet([4.0, 4.0, 4.0, 4.0], size=mixed_data.n))
    x = mixed_data.x_c[:, 0]
    or_fit = OrFit(loo_means={cell: 1.0 + k + (k + 1) * x**2 for k, cell in enumerate(CELLS)})
    moved = OrFit(loo_means={cell: a + b * m for cell, m in or_fit.loo_means.items()})
    data = mixed_data.with_outcome(a + b * mixed_data.y)
    base = hausman_test(att_dr(mixed_data, gps, or_fit), att_sz(mixed_data, gps, or_fit))
    shifted = hausman_test(att_dr(data, gps, moved), att_sz(data, gps, moved))
    assert shifted.statistic == pytest.approx(base.statistic, rel=1e-9)
    assert shifted.p_value == pytest.approx(base.p_value, rel=1e-9, abs=1e-15)


def test_clustering_widens_the_bootstrap_under_within_cluster_correlation():
    rng = np.random.default_rng(4)
    clusters = np.repeat(np.arange(40), 10)
    influence = rng.normal(0.0, 1.0, 40)[clusters] + rng.normal(0.0, 0.3, 400)
    est = _estimate(EstimatorKind.DR, 0.0, influence - influence.mean())
    data = _data(400, cluster=clusters)
    plain = bootstrap_se(data, est, BootstrapConfig(draws=999, seed=1))
    clustered = bootstrap_se(data, est, BootstrapConfig(draws=999, seed=1, cluster_by="g"))
    assert clustered.n_clusters == 40
    assert clustered.se > 1.5 * plain.se


@pytest.mark.slow
def test_p_values_are_uniform_under_the_null():
    analytic, bootstrapped = [], []
    for replication in range(300):
        rng = np.random.default_rng([17, replication])
        eta_sz = rng.normal(0.0, 1.0, 200)
        noise = rng.normal(0.0, 0.5, 200)
        # Contrast and influence gap come from the same mean-zero draws.
        est_dr = _estimate(EstimatorKind.DR, 1.0 + noise.mean(), eta_sz + noise - noise.mean())
        est_sz = _estimate(EstimatorKind.SZ, 1.0, eta_sz)
        analytic.append(hausman_test(est_dr, est_sz).p_value)
        config = BootstrapConfig(draws=299, seed=replication)
        bootstrapped.append(bootstrap_hausman_pvalue(_data(200), est_dr, est_sz, config))
    assert kstest(analytic, "uniform").pvalue > 0.01
    assert kstest(bootstrapped, "uniform").pvalue > 0.01
