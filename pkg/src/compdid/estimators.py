"""ATT estimators built on leave-one-out nuisance fits.

``att_dr`` stays valid under compositional changes; ``att_sz`` imposes
stationarity of (D, X) across periods and is the comparison point of the
Hausman-type test. TWFE regressions are reported as conventional comparators.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy.stats import norm

from compdid.core.errors import EmptyCellError, EstimationError, ParameterError
from compdid.data import CELLS, CELLS_MINUS, Cell, SampleData, cell_label, cell_sign
from compdid.models.config import EstimatorKind
from compdid.models.results import EstimateRecord
from compdid.tools.localpoly import GpsFit, OrFit
from compdid.utils.logger import logger

Weights = dict[Cell, np.ndarray]


@dataclass(frozen=True, eq=False)
class AttEstimate:
    """Point estimate with its per-observation influence values."""

    kind: EstimatorKind
    tau_hat: float
    influence: np.ndarray
    omega_hat: float
    ci_low: float
    ci_high: float
    ci_level: float = 0.95

    @property
    def n(self) -> int:
        return len(self.influence)

    @property
    def se(self) -> float:
        return float(np.sqrt(self.omega_hat / self.n))

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_record(self, bootstrap_se: float | None = None) -> EstimateRecord:
        return EstimateRecord(
            kind=self.kind.value,
            tau_hat=self.tau_hat,
            omega_hat=self.omega_hat,
            se=self.se,
            ci_low=self.ci_low,
            ci_high=self.ci_high,
            bootstrap_se=bootstrap_se,
        )


def critical_value(ci_level: float) -> float:
    if not 0.0 < ci_level < 1.0:
        raise ParameterError(f"confidence level must lie in (0, 1), got {ci_level}", module="estimators")
    return float(norm.ppf(0.5 + ci_level / 2.0))


def _finalize(kind: EstimatorKind, tau_hat: float, influence: np.ndarray, ci_level: float) -> AttEstimate:
    if not np.isfinite(tau_hat) or not np.all(np.isfinite(influence)):
        raise EstimationError(f"{kind.value} estimate is not finite", module="estimators")
    omega_hat = float(np.mean(influence**2))
    half_width = critical_value(ci_level) * np.sqrt(omega_hat / len(influence))
    return AttEstimate(
        kind=kind,
        tau_hat=float(tau_hat),
        influence=influence,
        omega_hat=omega_hat,
        ci_low=float(tau_hat - half_width),
        ci_high=float(tau_hat + half_width),
        ci_level=ci_level,
    )


def _normalize(raw: np.ndarray, cell: Cell) -> np.ndarray:
    scale = np.mean(raw)
    if not scale > 0:
        raise EmptyCellError(cell, module="estimators")
    return raw / scale


def _residual(weights: np.ndarray, y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """w * (Y - m), zero wherever the weight is zero even if m is not finite there."""
    return np.where(weights != 0, weights * (y - m), 0.0)


# ---------------------------------------------------------------------------
# Compositional-change robust estimator
# ---------------------------------------------------------------------------

def hajek_weights_dr(data: SampleData, gps: GpsFit) -> Weights:
    """w_11 = DT / E_n[DT]; w_dt proportional to I_dt * p(1,1,X) / p(d,t,X), averaging one."""
    data.require_cells(CELLS)
    weights = {(1, 1): _normalize(data.indicator((1, 1)), (1, 1))}
    p11 = gps.prob((1, 1))
    for cell in CELLS_MINUS:
        raw = data.indicator(cell) * p11 / gps.prob(cell)
        weights[cell] = _normalize(raw, cell)
    return weights


def _tau_yx(data: SampleData, or_fit: OrFit) -> np.ndarray:
    """Y - (m_10 + m_01 - m_00)."""
    return data.y - (or_fit.mean((1, 0)) + or_fit.mean((0, 1)) - or_fit.mean((0, 0)))


def att_dr(data: SampleData, gps: GpsFit, or_fit: OrFit, ci_level: float = 0.95) -> AttEstimate:
    weights = hajek_weights_dr(data, gps)
    w11 = weights[(1, 1)]
    treated = np.where(w11 != 0, w11 * _tau_yx(data, or_fit), 0.0)
    correction = np.zeros(data.n)
    for cell in CELLS_MINUS:
        correction += cell_sign(cell) * _residual(weights[cell], data.y, or_fit.mean(cell))
    tau_hat = float(np.mean(treated + correction))
    influence = correction + treated - w11 * tau_hat
    logger.debug(f"tau_dr={tau_hat:.6g}")
    return _finalize(EstimatorKind.DR, tau_hat, influence, ci_level)


# ---------------------------------------------------------------------------
# Stationarity-imposing estimator
# ---------------------------------------------------------------------------

def treated_share_score(gps: GpsFit) -> np.ndarray:
    """p~(X) = p(1,1,X) + p(1,0,X)."""
    return gps.prob((1, 1)) + gps.prob((1, 0))


def sz_weights(data: SampleData, gps: GpsFit) -> Weights:
    data.require_cells(CELLS)
    p_tilde = treated_share_score(gps)
    complement = np.maximum(1.0 - p_tilde, gps.truncation_floor)
    if np.any(complement <= 0):
        raise EstimationError(
            f"P(D=1|X) estimate reaches 1 at {int((complement <= 0).sum())} points", module="estimators"
        )
    odds = p_tilde / complement
    weights = {}
    for cell in CELLS:
        d, t = cell
        period = (data.t == t).astype(float)
        raw = data.d * period if d == 1 else odds * (1 - data.d) * period
        weights[cell] = _normalize(raw.astype(float), cell)
    return weights


def conditional_effect(or_fit: OrFit) -> np.ndarray:
    """tau(X) = m_11 - m_10 - m_01 + m_00."""
    return sum(cell_sign(cell) * or_fit.mean(cell) for cell in CELLS)


def att_sz(data: SampleData, gps: GpsFit, or_fit: OrFit, ci_level: float = 0.95) -> AttEstimate:
    weights = sz_weights(data, gps)
    treated = _normalize(data.d.astype(float), (1, 1))
    tau_x = conditional_effect(or_fit)
    projection = np.where(treated != 0, treated * tau_x, 0.0)
    correction = np.zeros(data.n)
    for cell in CELLS:
        correction += cell_sign(cell) * _residual(weights[cell], data.y, or_fit.mean(cell))
    tau_hat = float(np.mean(projection + correction))
    influence = projection - treated * tau_hat + correction
    logger.debug(f"tau_sz={tau_hat:.6g}")
    return _finalize(EstimatorKind.SZ, tau_hat, influence, ci_level)


# ---------------------------------------------------------------------------
# Single-nuisance plug-ins
# ---------------------------------------------------------------------------

def att_or(data: SampleData, or_fit: OrFit, ci_level: float = 0.95) -> AttEstimate:
    """Outcome-regression plug-in over the treated post-period cell."""
    data.require_cells(CELLS)
    w11 = _normalize(data.indicator((1, 1)), (1, 1))
    treated = np.where(w11 != 0, w11 * _tau_yx(data, or_fit), 0.0)
    tau_hat = float(np.mean(treated))
    return _finalize(EstimatorKind.OR, tau_hat, treated - w11 * tau_hat, ci_level)


def att_ipw(data: SampleData, gps: GpsFit, ci_level: float = 0.95) -> AttEstimate:
    """Hajek inverse-probability weighting without outcome regressions."""
    weights = hajek_weights_dr(data, gps)
    tau_hat = 0.0
    influence = np.zeros(data.n)
    for cell in CELLS:
        cell_mean = float(np.mean(weights[cell] * data.y))
        tau_hat += cell_sign(cell) * cell_mean
        influence += cell_sign(cell) * weights[cell] * (data.y - cell_mean)
    return _finalize(EstimatorKind.IPW, tau_hat, influence, ci_level)


# ---------------------------------------------------------------------------
# TWFE comparators
# ---------------------------------------------------------------------------

def _continuous_names(data: SampleData) -> list[str]:
    return data.covariate_names.get("continuous") or [f"xc{k}" for k in range(data.x_c.shape[1])]


def _covariate_frame(data: SampleData) -> tuple[pd.DataFrame, dict[str, str]]:
    """Covariate columns for OLS and the source variable of each column."""
    names = data.covariate_names
    c_names = _continuous_names(data)
    u_names = names.get("unordered") or [f"xu{k}" for k in range(data.x_u.shape[1])]
    o_names = names.get("ordered") or [f"xo{k}" for k in range(data.x_o.shape[1])]
    frame = pd.DataFrame(data.x_c, columns=c_names)
    source = {name: name for name in c_names}
    for k, name in enumerate(u_names):
        dummies = pd.get_dummies(data.x_u[:, k], prefix=name, drop_first=True, dtype=float)
        for column in dummies.columns:
            frame[column] = dummies[column].to_numpy()
            source[column] = name
    for k, name in enumerate(o_names):
        frame[name] = data.x_o[:, k].astype(float)
        source[name] = name
    return frame, source


def twfe_design(data: SampleData, spec: Literal["linear", "saturated"] = "linear") -> pd.DataFrame:
    """const, T, D, T*D, covariates; saturated adds squares and cross-variable interactions."""
    covariates, source = _covariate_frame(data)
    design = pd.DataFrame({"T": data.t.astype(float), "D": data.d.astype(float)})
    design["TD"] = design["T"] * design["D"]
    columns = list(covariates.columns)
    extra = {}
    if spec == "saturated":
        for name in _continuous_names(data):
            extra[f"{name}^2"] = covariates[name] ** 2
        for a, b in itertools.combinations(columns, 2):
            if source[a] != source[b]:
                extra[f"{a}:{b}"] = covariates[a] * covariates[b]
    elif spec != "linear":
        raise ParameterError(f"unknown TWFE specification '{spec}'", module="estimators")
    design = pd.concat([design, covariates, pd.DataFrame(extra)], axis=1)
    return sm.add_constant(design, has_constant="add")


def att_twfe(
    data: SampleData, spec: Literal["linear", "saturated"] = "linear", ci_level: float = 0.95
) -> AttEstimate:
    """OLS coefficient on T*D with heteroskedasticity-robust influence values."""
    design = twfe_design(data, spec)
    matrix = design.to_numpy(dtype=float)
    rank = np.linalg.matrix_rank(matrix)
    if rank < matrix.shape[1]:
        raise EstimationError(
            f"TWFE {spec} design is rank deficient (rank {rank} < {matrix.shape[1]} columns)",
            module="estimators",
        )
    fit = sm.OLS(data.y, matrix).fit()
    k = list(design.columns).index("TD")
    # n * e_k'(X'X)^{-1} X_i e_i; its second moment is n times the HC0 variance.
    influence = data.n * (matrix @ fit.normalized_cov_params[:, k]) * fit.resid
    kind = EstimatorKind.TWFE_LINEAR if spec == "linear" else EstimatorKind.TWFE_SATURATED
    return _finalize(kind, float(fit.params[k]), np.asarray(influence, dtype=float), ci_level)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def bias_decomposition(
    data: SampleData,
    or_fit: OrFit,
    gps: GpsFit | None = None,
    method: Literal["conditional", "weighted"] = "conditional",
) -> float:
    """Plug-in gap between the stationarity-imposing and the robust estimand.

    ``conditional`` returns E_n[tau(X) | D=1] - E_n[tau(X) | D=1, T=1].
    ``weighted`` uses the weight-difference representation, which matches
    ``att_sz - att_dr`` on the sample exactly and needs ``gps``.
    """
    data.require_cells(CELLS)
    if method == "conditional":
        tau_x = conditional_effect(or_fit)
        treated = data.d == 1
        post = treated & (data.t == 1)
        return float(np.mean(tau_x[treated]) - np.mean(tau_x[post]))
    if method != "weighted":
        raise ParameterError(f"unknown decomposition method '{method}'", module="estimators")
    if gps is None:
        raise ParameterError("weighted decomposition needs propensity scores", module="estimators")
    treated = _normalize(data.d.astype(float), (1, 1))
    treated_post = _normalize(data.indicator((1, 1)), (1, 1))
    dr = hajek_weights_dr(data, gps)
    sz = sz_weights(data, gps)
    gap = 0.0
    for cell in CELLS:
        m = or_fit.mean(cell)
        shift = treated - treated_post
        gap += cell_sign(cell) * float(np.mean(np.where(shift != 0, shift * m, 0.0)))
    for cell in CELLS_MINUS:
        m = or_fit.mean(cell)
        gap += cell_sign(cell) * float(np.mean(_residual(sz[cell], data.y, m) - _residual(dr[cell], data.y, m)))
    return gap


def efficiency_loss_rho(data: SampleData, or_fit: OrFit) -> float:
    """(1 - E_n[T]) / (E_n[D] E_n[T]) * Var_n(tau(X) | D=1)."""
    data.require_cells(CELLS)
    share_t = float(np.mean(data.t))
    share_d = float(np.mean(data.d))
    tau_x = conditional_effect(or_fit)[data.d == 1]
    return float((1.0 - share_t) / (share_d * share_t) * np.var(tau_x))


ESTIMATOR_LABELS = {
    EstimatorKind.DR: "tau_dr",
    EstimatorKind.SZ: "tau_sz",
    EstimatorKind.TWFE_LINEAR: "tau_fe (Linear)",
    EstimatorKind.TWFE_SATURATED: "tau_fe (Saturated)",
    EstimatorKind.OR: "tau_or",
    EstimatorKind.IPW: "tau_ipw",
}


def cell_summary(data: SampleData) -> dict[str, int]:
    return {cell_label(cell): count for cell, count in data.cell_counts().items()}
