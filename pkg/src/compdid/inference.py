"""Hausman-type test for relevant compositional changes and multiplier bootstrap."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from compdid.core.errors import DegenerateTestError, EstimationError, ShapeError
from compdid.core.parallel import chunked, parallel_map
from compdid.data import SampleData
from compdid.estimators import AttEstimate
from compdid.models.config import BootstrapConfig, WeightLaw
from compdid.models.results import HausmanRecord
from compdid.utils.logger import logger

TEST_LEVELS = (0.10, 0.05, 0.01)
DEGENERATE_VARIANCE = 1e-12
MIN_DRAWS = 50

WeightSampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class HausmanResult:
    statistic: float
    v_hat: float
    p_value: float
    contrast: float
    decision_at: dict[float, bool]
    naive_variance: float
    degenerate: bool = False

    def to_record(self, clustered_p_value: float | None = None) -> HausmanRecord:
        return HausmanRecord(
            statistic=self.statistic,
            v_hat=self.v_hat,
            contrast=self.contrast,
            p_value=self.p_value,
            decision_at={f"{alpha:.2f}": reject for alpha, reject in self.decision_at.items()},
            naive_variance=self.naive_variance,
            degenerate=self.degenerate,
            clustered_p_value=clustered_p_value,
        )


def _check_aligned(est_dr: AttEstimate, est_sz: AttEstimate) -> None:
    if est_dr.influence.shape != est_sz.influence.shape:
        raise ShapeError(
            f"influence vectors differ in length: {est_dr.n} vs {est_sz.n}", module="inference"
        )


def hausman_test(
    est_dr: AttEstimate, est_sz: AttEstimate, levels: tuple[float, ...] = TEST_LEVELS
) -> HausmanResult:
    """T_n = n (tau_dr - tau_sz)^2 / V_n with V_n = E_n[(eta_dr - eta_sz)^2]."""
    _check_aligned(est_dr, est_sz)
    n = est_dr.n
    contrast = est_dr.tau_hat - est_sz.tau_hat
    v_hat = float(np.mean((est_dr.influence - est_sz.influence) ** 2))
    naive = est_dr.omega_hat - est_sz.omega_hat
    if v_hat < DEGENERATE_VARIANCE:
        if contrast != 0.0:
            raise DegenerateTestError(
                f"contrast variance {v_hat:.3g} is degenerate while the contrast is {contrast:.6g}",
                module="inference",
            )
        logger.warning("Hausman contrast and its variance are both zero; reporting a degenerate test")
        return HausmanResult(0.0, v_hat, 1.0, 0.0, {a: False for a in levels}, naive, degenerate=True)

    statistic = n * contrast**2 / v_hat
    p_value = float(chi2.sf(statistic, df=1))
    logger.info(f"Hausman test: statistic={statistic:.4f} p-value={p_value:.4f}")
    return HausmanResult(
        statistic=float(statistic),
        v_hat=v_hat,
        p_value=p_value,
        contrast=float(contrast),
        decision_at={alpha: p_value <= alpha for alpha in levels},
        naive_variance=float(naive),
    )


# ---------------------------------------------------------------------------
# Multiplier bootstrap
# ---------------------------------------------------------------------------

_MAMMEN_LOW = 1.0 - (np.sqrt(5.0) - 1.0) / 2.0
_MAMMEN_HIGH = 1.0 + (np.sqrt(5.0) + 1.0) / 2.0
_MAMMEN_P_LOW = (np.sqrt(5.0) + 1.0) / (2.0 * np.sqrt(5.0))


def exponential_weights(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.exponential(1.0, size)


def mammen_weights(rng: np.random.Generator, size: int) -> np.ndarray:
    """1 + Mammen's two-point variable: nonnegative, mean one, variance one."""
    return np.where(rng.random(size) < _MAMMEN_P_LOW, _MAMMEN_LOW, _MAMMEN_HIGH)


WEIGHT_SAMPLERS: dict[WeightLaw, WeightSampler] = {
    WeightLaw.MEAN_ONE_EXPONENTIAL: exponential_weights,
    WeightLaw.MAMMEN: mammen_weights,
}


@dataclass
class BootstrapResult:
    se: float
    draws: np.ndarray
    n_clusters: int
    warnings: list[str] = field(default_factory=list)


def cluster_codes(data: SampleData, config: BootstrapConfig) -> np.ndarray:
    """Integer cluster code per observation; every observation is its own cluster without clustering."""
    if config.cluster_by is None:
        return np.arange(data.n)
    if data.cluster is None:
        raise EstimationError(
            f"clustering by '{config.cluster_by}' requested but the sample has no cluster ids", module="inference"
        )
    _, codes = np.unique(np.asarray(data.cluster).astype(str), return_inverse=True)
    return codes


def multiplier_draws(
    scores: np.ndarray,
    codes: np.ndarray,
    draws: int,
    seed: int,
    sampler: WeightSampler = exponential_weights,
    workers: int = 1,
) -> np.ndarray:
    """E_n[(V_g - 1) * score] per draw, one multiplier V_g per cluster.

    Draw ``b`` always uses ``default_rng([seed, b])`` so the result does not
    depend on how draws are split across workers.
    """
    n_clusters = int(codes.max()) + 1
    cluster_scores = np.bincount(codes, weights=scores, minlength=n_clusters)
    n = len(scores)

    def run_block(block: list[int]) -> list[float]:
        out = []
        for b in block:
            rng = np.random.default_rng([seed, b])
            multipliers = sampler(rng, n_clusters)
            out.append(float(np.dot(multipliers - 1.0, cluster_scores) / n))
        return out

    blocks = chunked(list(range(draws)), max(workers, 1))
    return np.array([v for block in parallel_map(run_block, blocks, workers) for v in block])


def _prepare(data: SampleData, config: BootstrapConfig, n_scores: int) -> tuple[np.ndarray, list[str]]:
    if n_scores != data.n:
        raise ShapeError(f"{n_scores} influence values for {data.n} observations", module="inference")
    codes = cluster_codes(data, config)
    n_clusters = int(codes.max()) + 1
    if n_clusters < 2:
        raise EstimationError("the multiplier bootstrap needs at least two clusters", module="inference")
    warnings = []
    if config.draws < MIN_DRAWS:
        message = f"only {config.draws} bootstrap draws requested; standard errors will be noisy"
        logger.warning(message)
        warnings.append(message)
    return codes, warnings


def bootstrap_se(
    data: SampleData,
    estimate: AttEstimate,
    config: BootstrapConfig,
    workers: int = 1,
    sampler: WeightSampler | None = None,
) -> BootstrapResult:
    """Influence-function multiplier bootstrap standard error (nuisances held fixed)."""
    codes, warnings = _prepare(data, config, estimate.n)
    sampler = sampler or WEIGHT_SAMPLERS[config.weight_law]
    draws = multiplier_draws(estimate.influence, codes, config.draws, config.seed, sampler, workers)
    se = float(np.std(draws, ddof=1)) if len(draws) > 1 else 0.0
    logger.info(
        f"Bootstrap SE for {estimate.kind.value}: {se:.6g} "
        f"({config.draws} draws, {int(codes.max()) + 1} clusters)"
    )
    return BootstrapResult(se=se, draws=draws, n_clusters=int(codes.max()) + 1, warnings=warnings)


def bootstrap_hausman_pvalue(
    data: SampleData,
    est_dr: AttEstimate,
    est_sz: AttEstimate,
    config: BootstrapConfig,
    workers: int = 1,
    sampler: WeightSampler | None = None,
) -> float:
    """Share of bootstrap contrasts at least as large in magnitude as the observed one.

    The studentizing scale is common to the observed and bootstrapped
    contrasts, so it cancels from the comparison.
    """
    _check_aligned(est_dr, est_sz)
    codes, _ = _prepare(data, config, est_dr.n)
    sampler = sampler or WEIGHT_SAMPLERS[config.weight_law]
    scores = est_dr.influence - est_sz.influence
    draws = multiplier_draws(scores, codes, config.draws, config.seed, sampler, workers)
    observed = abs(est_dr.tau_hat - est_sz.tau_hat)
    p_value = float(np.mean(np.abs(draws) >= observed))
    logger.info(f"Clustered Hausman p-value: {p_value:.4f} ({config.draws} draws)")
    return p_value
