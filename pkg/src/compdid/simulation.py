"""Monte Carlo designs with and without compositional changes.

Both designs share six mutually independent covariates (two uniform on
(-1, 1), two Bernoulli(0.5), two Binomial(3, 0.5)) and the same potential
outcomes. They differ in the generalized propensity score: the first design
lets it vary by period, the second averages it over periods so that (D, X) is
independent of T.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from pydantic import ValidationError
from scipy.stats import binom

from compdid.core.errors import CompDidError, ParameterError
from compdid.core.parallel import parallel_map
from compdid.data import CELLS, CELLS_MINUS, Sample, SampleData, cell_label
from compdid.estimators import ESTIMATOR_LABELS
from compdid.inference import TEST_LEVELS
from compdid.models.config import BandwidthConfig, CvCriterion, EstimatorKind, RunConfig
from compdid.models.results import (
    EstimatorSummary,
    McReport,
    RejectionSummary,
    ReplicationRecord,
)
from compdid.pipeline import DrDidPipeline
from compdid.tools.localpoly import GpsFit, OrFit, probabilities_from_intercepts
from compdid.utils.logger import logger

BASELINE = 210.0
QUADRATURE_NODES = 64
MC_CHUNK = 1_000_000
COVARIATE_NAMES = {"continuous": ["x1", "x2"], "unordered": ["x3", "x4"], "ordered": ["x5", "x6"]}


class Design(IntEnum):
    NON_STATIONARY = 1
    STATIONARY = 2


@dataclass(frozen=True)
class DgpSpec:
    """One design at one sample size.

    ``noise_sd`` scales the cell-specific outcome shocks; ``constant_effect``
    replaces the heterogeneous effect function by a constant.
    """

    design: Design = Design.NON_STATIONARY
    n: int = 1000
    seed: int = 0
    noise_sd: float = 1.0
    constant_effect: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        if self.n < 1:
            raise ParameterError(f"sample size must be positive, got {self.n}", module="simulation")
        if self.noise_sd < 0:
            raise ParameterError("noise_sd must be nonnegative", module="simulation")


# ---------------------------------------------------------------------------
# Design functions
# ---------------------------------------------------------------------------

def _split(x: np.ndarray) -> tuple[np.ndarray, ...]:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return tuple(x[:, k] for k in range(6))


def ps_index_10(x: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5, x6 = _split(x)
    s36 = x3 + x4 + x5 + x6
    interactions = (
        x3 * x4 + x5 * x6
        + x1 * s36 - x2 * s36
        + x3 * x5 - x3 * x6 - x4 * x5 + x4 * x6
    )
    return 0.4 * ((x1 - x1**2) + (x2 - x2**2)) + 0.2 * s36 + 0.1 * interactions


def ps_index_01(x: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5, x6 = _split(x)
    return (
        0.4 * (2 * x1 + x2 + x1**2 - x2**2 + x1 * x2)
        + 0.2 * (x3 - x4 + x5 - x6)
        + 0.1 * (x2 * (x3 + x4 + x5 + x6) + x3 * x6 + x4 * x6)
    )


def ps_index_00(x: np.ndarray) -> np.ndarray:
    x1, x2, x3, x4, x5, x6 = _split(x)
    return (
        0.4 * (x1 + 2 * x2 - x1**2 + x2**2 - x1 * x2)
        + 0.2 * (-x3 + x4 - x5 + x6)
        + 0.1 * (x1 * (x3 + x4 + x5 + x6) + x3 * x5 + x4 * x5)
    )


def f_base(x: np.ndarray) -> np.ndarray:
    x1, x2, *_ = _split(x)
    return 27.4 * x1 + 27.4 * x2 + 13.7 * x1**2 + 13.7 * x2**2 + 13.7 * x1 * x2


f_het = f_base


def f_att(x: np.ndarray, constant_effect: float | None = None) -> np.ndarray:
    x1, x2, x3, x4, x5, x6 = _split(x)
    if constant_effect is not None:
        return np.full(len(x1), float(constant_effect))
    return 27.4 * x1 + 13.7 * x2 + 6.85 * (x3 + x4 + x5 + x6) - 15.0


def gps_nonstationary(x: np.ndarray) -> np.ndarray:
    """Multinomial logit with (1,1) as reference; columns in ``CELLS`` order."""
    index = np.column_stack([ps_index_10(x), ps_index_01(x), ps_index_00(x)])
    return probabilities_from_intercepts(index)


def gps_stationary(x: np.ndarray) -> np.ndarray:
    """P(T=t) * (p(d,1,x) + p(d,0,x)) with the period shares of the first design."""
    base = gps_nonstationary(x)
    share = period_shares()
    column = {cell: k for k, cell in enumerate(CELLS)}
    out = np.empty_like(base)
    for k, (d, t) in enumerate(CELLS):
        out[:, k] = share[t] * (base[:, column[(d, 1)]] + base[:, column[(d, 0)]])
    return out


def generalized_propensity(design: Design, x: np.ndarray) -> np.ndarray:
    return gps_nonstationary(x) if Design(design) is Design.NON_STATIONARY else gps_stationary(x)


def outcome_means(spec: DgpSpec, x: np.ndarray) -> np.ndarray:
    """m_{d,t}(x) in ``CELLS`` order."""
    base = BASELINE + f_base(x)
    het = f_het(x)
    effect = f_att(x, spec.constant_effect)
    means = {
        (1, 1): BASELINE + 2 * f_base(x) + het + effect,
        (1, 0): base + het,
        (0, 1): BASELINE + 2 * f_base(x),
        (0, 0): base,
    }
    return np.column_stack([means[cell] for cell in CELLS])


def outcome_variance(spec: DgpSpec) -> float:
    return 1.0 + spec.noise_sd**2


# ---------------------------------------------------------------------------
# Integration over the covariate law
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=4)
def quadrature_grid(nodes: int = QUADRATURE_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on (-1, 1)^2 times exact enumeration of the discrete covariates."""
    points, weights = leggauss(nodes)
    weights = weights / 2.0
    bern = [(0, 0.5), (1, 0.5)]
    binomial = [(k, float(binom.pmf(k, 3, 0.5))) for k in range(4)]
    x1, x2 = np.meshgrid(points, points, indexing="ij")
    plane = np.outer(weights, weights).ravel()
    rows, mass = [], []
    for (x3, p3), (x4, p4), (x5, p5), (x6, p6) in itertools.product(bern, bern, binomial, binomial):
        w = plane * (p3 * p4 * p5 * p6)
        block = np.column_stack([
            x1.ravel(), x2.ravel(),
            np.full(x1.size, x3), np.full(x1.size, x4), np.full(x1.size, x5), np.full(x1.size, x6),
        ])
        rows.append(block)
        mass.append(w)
    return np.vstack(rows), np.concatenate(mass)


@functools.lru_cache(maxsize=1)
def period_shares() -> dict[int, float]:
    """P(T=t) = E[p(1,t,X) + p(0,t,X)] under the first design."""
    x, w = quadrature_grid()
    probs = gps_nonstationary(x)
    column = {cell: k for k, cell in enumerate(CELLS)}
    return {t: float(w @ (probs[:, column[(1, t)]] + probs[:, column[(0, t)]])) for t in (0, 1)}


def propensity_gap(design: Design = Design.NON_STATIONARY) -> dict[str, float]:
    """Mean |p(d,1,X) - p(d,0,X)| for the treated and the control group."""
    x, w = quadrature_grid()
    probs = generalized_propensity(design, x)
    column = {cell: k for k, cell in enumerate(CELLS)}
    return {
        group: float(w @ np.abs(probs[:, column[(d, 1)]] - probs[:, column[(d, 0)]]))
        for group, d in (("treated", 1), ("control", 0))
    }


def draw_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.column_stack([
        rng.uniform(-1.0, 1.0, n),
        rng.uniform(-1.0, 1.0, n),
        rng.binomial(1, 0.5, n),
        rng.binomial(1, 0.5, n),
        rng.binomial(3, 0.5, n),
        rng.binomial(3, 0.5, n),
    ]).astype(float)


def _att_moments(spec: DgpSpec, x: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    p11 = generalized_propensity(spec.design, x)[:, 0]
    return float(w @ (p11 * f_att(x, spec.constant_effect))), float(w @ p11)


@functools.lru_cache(maxsize=32)
def _true_att_cached(spec_key: tuple, method: str, draws: int, seed: int) -> float:
    spec = DgpSpec(design=spec_key[0], noise_sd=spec_key[1], constant_effect=spec_key[2])
    if method == "quadrature":
        numerator, denominator = _att_moments(spec, *quadrature_grid())
        return numerator / denominator
    rng = np.random.default_rng(seed)
    numerator = denominator = 0.0
    for start in range(0, draws, MC_CHUNK):
        size = min(MC_CHUNK, draws - start)
        x = draw_covariates(rng, size)
        num, den = _att_moments(spec, x, np.full(size, 1.0 / draws))
        numerator += num
        denominator += den
    return numerator / denominator


def _spec_key(spec: DgpSpec) -> tuple:
    return (int(spec.design), float(spec.noise_sd), spec.constant_effect)


def _check_method(method: str) -> None:
    if method not in ("quadrature", "monte_carlo"):
        raise ParameterError(f"unknown integration method '{method}'", module="simulation")


def true_att(spec: DgpSpec, method: str = "quadrature", draws: int = 10**7, seed: int = 0) -> float:
    """E[Y1(1) - Y1(0) | D=1, T=1] = E[f_att(X) p(1,1,X)] / E[p(1,1,X)]."""
    _check_method(method)
    return _true_att_cached(_spec_key(spec), method, draws, seed)


def sz_target(spec: DgpSpec) -> float:
    """Probability limit of the stationarity-imposing estimator, E[f_att(X) | D=1]."""
    x, w = quadrature_grid()
    probs = generalized_propensity(spec.design, x)
    p_tilde = probs[:, 0] + probs[:, 1]
    return float(w @ (p_tilde * f_att(x, spec.constant_effect)) / (w @ p_tilde))


def _eff_terms(spec: DgpSpec, x: np.ndarray, w: np.ndarray, tau: float) -> np.ndarray:
    """Sums behind E[eta_eff^2]: the weighted moment and E[p11]."""
    probs = generalized_propensity(spec.design, x)
    p11 = probs[:, 0]
    sigma2 = outcome_variance(spec)
    effect = f_att(x, spec.constant_effect)
    inner = p11 * ((effect - tau) ** 2 + sigma2)
    for k, _cell in enumerate(CELLS_MINUS, start=1):
        inner = inner + sigma2 * p11**2 / probs[:, k]
    return np.array([w @ inner, w @ p11])


def _eff_combine(terms: np.ndarray, sigma2: float) -> float:
    moment, mass = terms
    return float(moment / mass**2)


def _sz_terms(spec: DgpSpec, x: np.ndarray, w: np.ndarray, tau: float) -> np.ndarray:
    """Sums behind E[eta_sz^2]: treated projection, per-period treated mass, control odds moments."""
    probs = generalized_propensity(spec.design, x)
    column = {cell: k for k, cell in enumerate(CELLS)}
    p_tilde = probs[:, column[(1, 1)]] + probs[:, column[(1, 0)]]
    odds = p_tilde / (1.0 - p_tilde)
    effect = f_att(x, spec.constant_effect)
    terms = [w @ (p_tilde * (effect - tau) ** 2), w @ p_tilde]
    for t in (1, 0):
        p0t = probs[:, column[(0, t)]]
        terms += [w @ probs[:, column[(1, t)]], w @ (odds**2 * p0t), w @ (odds * p0t)]
    return np.array(terms)


def _sz_combine(terms: np.ndarray, sigma2: float) -> float:
    projection, treated = terms[0], terms[1]
    out = projection / treated**2
    for start in (2, 5):
        p1t, odds2, odds1 = terms[start:start + 3]
        out += sigma2 * (1.0 / p1t + odds2 / odds1**2)
    return float(out)


_BOUND_FUNCTIONALS = {
    Design.NON_STATIONARY: (_eff_terms, _eff_combine),
    Design.STATIONARY: (_sz_terms, _sz_combine),
}


@functools.lru_cache(maxsize=32)
def _bound_cached(spec_key: tuple, method: str, draws: int, seed: int) -> float:
    spec = DgpSpec(design=spec_key[0], noise_sd=spec_key[1], constant_effect=spec_key[2])
    terms_of, combine = _BOUND_FUNCTIONALS[spec.design]
    tau = true_att(spec, method, draws, seed)
    if method == "quadrature":
        return combine(terms_of(spec, *quadrature_grid(), tau), outcome_variance(spec))
    rng = np.random.default_rng([seed, 1])
    terms = 0.0
    for start in range(0, draws, MC_CHUNK):
        size = min(MC_CHUNK, draws - start)
        terms = terms + terms_of(spec, draw_covariates(rng, size), np.full(size, 1.0 / draws), tau)
    return combine(terms, outcome_variance(spec))


def efficiency_bound(spec: DgpSpec, method: str = "quadrature", draws: int = 10**7, seed: int = 0) -> float:
    """Semiparametric efficiency bound of the ATT under the true nuisances.

    The first design allows compositional changes, so the bound is E[eta_eff^2]:
    E[p11 ((f_att - tau)^2 + s^2) + sum_{S-} s^2 p11^2 / p_dt] / E[p11]^2.
    The second design imposes stationarity and the bound is E[eta_sz^2]:
    E[p~ (f_att - tau)^2] / E[p~]^2 + sum_t s^2 (1 / E[p_1t] + E[o^2 p_0t] / E[o p_0t]^2),
    with p~ = p11 + p10 and o = p~ / (1 - p~).
    """
    _check_method(method)
    return _bound_cached(_spec_key(spec), method, draws, seed)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def _rng(spec: DgpSpec, replication: int | None) -> np.random.Generator:
    return np.random.default_rng(spec.seed if replication is None else [spec.seed, replication])


def draw_data(spec: DgpSpec, replication: int | None = None) -> SampleData:
    """Columnar draw; ``replication`` selects an independent stream under the same seed."""
    rng = _rng(spec, replication)
    n = spec.n
    x = draw_covariates(rng, n)
    probs = generalized_propensity(spec.design, x)
    p11, p10, p01 = probs[:, 0], probs[:, 1], probs[:, 2]
    u = rng.uniform(0.0, 1.0, n)
    d = np.ones(n, dtype=int)
    t = np.ones(n, dtype=int)
    in_10 = u <= p10
    in_01 = ~in_10 & (u <= p10 + p01)
    in_00 = ~in_10 & ~in_01 & (u <= 1.0 - p11)
    d[in_10], t[in_10] = 1, 0
    d[in_01], t[in_01] = 0, 1
    d[in_00], t[in_00] = 0, 0

    eps_het = rng.normal(d * f_het(x), 1.0)
    shocks = rng.normal(0.0, 1.0, (n, 4)) * spec.noise_sd
    base = f_base(x)
    effect = f_att(x, spec.constant_effect)
    column = {cell: k for k, cell in enumerate(CELLS)}
    y = np.where(
        t == 0,
        BASELINE + base + eps_het + shocks[np.arange(n), np.where(d == 1, column[(1, 0)], column[(0, 0)])],
        BASELINE + 2 * base + eps_het + np.where(d == 1, effect + shocks[:, column[(1, 1)]], shocks[:, column[(0, 1)]]),
    )
    return SampleData(
        y=y, d=d, t=t,
        x_c=x[:, :2], x_u=x[:, 2:4].astype(int), x_o=x[:, 4:].astype(int),
        covariate_names=COVARIATE_NAMES,
    )


def draw_sample(spec: DgpSpec, replication: int | None = None) -> list[Sample]:
    return draw_data(spec, replication).to_samples()


def _covariate_matrix(data: SampleData) -> np.ndarray:
    return np.column_stack([data.x_c, data.x_u, data.x_o]).astype(float)


def oracle_nuisances(spec: DgpSpec, data: SampleData) -> tuple[GpsFit, OrFit]:
    """True propensity scores and outcome regressions at the sample points."""
    x = _covariate_matrix(data)
    means = outcome_means(spec, x)
    gps = GpsFit.from_probabilities(generalized_propensity(spec.design, x))
    return gps, OrFit(loo_means={cell: means[:, k] for k, cell in enumerate(CELLS)})


# ---------------------------------------------------------------------------
# Replication driver
# ---------------------------------------------------------------------------

DEFAULT_CRITERIA = (CvCriterion.LOCAL_LIKELIHOOD, CvCriterion.LEAST_SQUARES)
DEFAULT_ESTIMATORS = (
    EstimatorKind.TWFE_LINEAR, EstimatorKind.TWFE_SATURATED, EstimatorKind.DR, EstimatorKind.SZ
)


@dataclass(frozen=True)
class _ReplicationTask:
    spec: DgpSpec
    config: RunConfig
    criteria: tuple[CvCriterion, ...]


@dataclass
class _ReplicationOutcome:
    replication: int
    records: list[ReplicationRecord]
    tests: list[dict]
    diagnostics: list[dict]
    failure: str | None = None


def run_replication(task: _ReplicationTask, replication: int) -> _ReplicationOutcome:
    """Draw, select bandwidths per criterion, fit, estimate and test once."""
    try:
        data = draw_data(task.spec, replication)
        pipeline = DrDidPipeline(task.config, workers=1)
        nuisance_kinds = [k for k in task.config.estimators if k not in (
            EstimatorKind.TWFE_LINEAR, EstimatorKind.TWFE_SATURATED)]
        comparator_kinds = [k for k in task.config.estimators if k not in nuisance_kinds]
        records, tests, diagnostics = [], [], []

        def keep(result, label):
            for kind, est in result.estimates.items():
                records.append(ReplicationRecord(
                    replication=replication, estimator=kind.value, label=label,
                    tau_hat=est.tau_hat, omega_hat=est.omega_hat, ci_low=est.ci_low, ci_high=est.ci_high,
                ))

        if comparator_kinds:
            keep(pipeline.run(data, estimators=comparator_kinds), "-")
        if nuisance_kinds:
            search = pipeline.search(data)
            for criterion in task.criteria:
                result = pipeline.run(data, criterion=criterion, search=search, estimators=nuisance_kinds)
                keep(result, criterion.value)
                if result.hausman is not None:
                    tests.append({
                        "label": criterion.value,
                        "statistic": result.hausman.statistic,
                        "p_value": result.hausman.p_value,
                    })
                if result.bias_decomposition is not None:
                    gap = None
                    if EstimatorKind.DR in result.estimates and EstimatorKind.SZ in result.estimates:
                        gap = result.estimates[EstimatorKind.SZ].tau_hat - result.estimates[EstimatorKind.DR].tau_hat
                    diagnostics.append({
                        "label": criterion.value,
                        "bias_decomposition": result.bias_decomposition,
                        "efficiency_loss_rho": result.efficiency_loss_rho,
                        "sz_minus_dr": gap,
                    })
        return _ReplicationOutcome(replication, records, tests, diagnostics)
    except CompDidError as e:
        return _ReplicationOutcome(replication, [], [], [], failure=f"replication {replication}: {e}")


def _summaries(records: pd.DataFrame, tau: float) -> list[EstimatorSummary]:
    rows = []
    for (estimator, label), group in records.groupby(["estimator", "label"], sort=False):
        error = group["tau_hat"] - tau
        rows.append(EstimatorSummary(
            estimator=estimator,
            label=label,
            avg_bias=float(error.mean()),
            med_bias=float(error.median()),
            rmse=float(np.sqrt(np.mean(error**2))),
            avg_asy_var=float(group["omega_hat"].mean()),
            coverage=float(((group["ci_low"] <= tau) & (tau <= group["ci_high"])).mean()),
            avg_ci_length=float((group["ci_high"] - group["ci_low"]).mean()),
            replications=int(len(group)),
        ))
    return rows


def _rejections(tests: pd.DataFrame) -> list[RejectionSummary]:
    rows = []
    if tests.empty:
        return rows
    for label, group in tests.groupby("label", sort=False):
        rows.append(RejectionSummary(
            label=label,
            avg_statistic=float(group["statistic"].mean()),
            rejection_rates={f"{a:.2f}": float((group["p_value"] <= a).mean()) for a in TEST_LEVELS},
            replications=int(len(group)),
        ))
    return rows


def _diagnostic_means(diagnostics: pd.DataFrame) -> dict[str, float]:
    out = {}
    if diagnostics.empty:
        return out
    for label, group in diagnostics.groupby("label", sort=False):
        for column in ("bias_decomposition", "efficiency_loss_rho", "sz_minus_dr"):
            values = group[column].dropna()
            if len(values):
                out[f"{column}[{label}]"] = float(values.mean())
            if len(values) > 1:
                out[f"{column}_mcse[{label}]"] = float(values.std(ddof=1) / np.sqrt(len(values)))
        pair = group[["bias_decomposition", "sz_minus_dr"]].dropna()
        if len(pair) > 2 and pair.std().min() > 0:
            out[f"bias_gap_correlation[{label}]"] = float(pair.corr().iloc[0, 1])
    return out


def run_monte_carlo(
    spec: DgpSpec,
    replications: int = 200,
    estimators: tuple[EstimatorKind, ...] = DEFAULT_ESTIMATORS,
    bandwidth_config: BandwidthConfig | None = None,
    criteria: tuple[CvCriterion, ...] = DEFAULT_CRITERIA,
    floor: float = 0.01,
    orders: tuple[int, int] = (1, 1),
    workers: int = 1,
) -> McReport:
    """Replicate the full pipeline and aggregate the estimator and test metrics."""
    if replications < 1:
        raise ParameterError("at least one replication is required", module="simulation")
    try:
        config = RunConfig(
            estimators=list(estimators),
            p_order=orders[0],
            q_order=orders[1],
            bandwidth=bandwidth_config or BandwidthConfig(coarse=True),
            floor=floor,
            bootstrap=None,
            workers=1,
        )
    except ValidationError as e:
        raise ParameterError(f"invalid simulation settings: {e}", module="simulation") from e
    task = _ReplicationTask(spec=spec, config=config, criteria=tuple(CvCriterion(c) for c in criteria))
    logger.info(
        f"Monte Carlo: design {int(spec.design)}, n={spec.n}, {replications} replications, {workers} workers"
    )
    outcomes = parallel_map(
        functools.partial(run_replication, task), range(replications), workers, kind="process"
    )

    failures = [o.failure for o in outcomes if o.failure]
    for failure in failures:
        logger.warning(failure)
    records = [r for o in outcomes for r in o.records]
    tau = true_att(spec)
    frame = pd.DataFrame([r.model_dump() for r in records])
    tests = pd.DataFrame([t for o in outcomes for t in o.tests])
    diagnostics = pd.DataFrame([d for o in outcomes for d in o.diagnostics])
    summaries = _summaries(frame, tau) if not frame.empty else []
    report = McReport(
        design=int(spec.design),
        n=spec.n,
        seed=spec.seed,
        replications=replications,
        failed_replications=len(failures),
        true_att=tau,
        seb=efficiency_bound(spec),
        estimators=summaries,
        tests=_rejections(tests),
        diagnostics=_diagnostic_means(diagnostics),
        records=records,
        failures=failures,
    )
    logger.info(f"Monte Carlo finished: {replications - len(failures)} of {replications} replications succeeded")
    return report


def estimator_label(estimator: str) -> str:
    return ESTIMATOR_LABELS[EstimatorKind(estimator)]


def cell_shares(data: SampleData) -> dict[str, float]:
    return {cell_label(cell): count / data.n for cell, count in data.cell_counts().items()}
