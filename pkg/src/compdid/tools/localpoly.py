"""Leave-one-out local polynomial nuisance estimators.

Two first-step estimators share one polynomial basis:

* a local multinomial logit for the generalized propensity score
  p(d, t, x), fitted by Newton's method on the kernel-weighted local
  likelihood with (1,1) as the reference cell;
* local least squares for the outcome regressions m_{d,t}(x).

Every prediction at X_j excludes observation j.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
from scipy.special import logsumexp

from compdid.core.errors import EmptyCellError, EstimationError, ParameterError, ShapeError
from compdid.core.parallel import chunked, parallel_map
from compdid.data import CELLS, CELLS_MINUS, Cell, SampleData
from compdid.tools.kernels import DiscreteKernelParams, KernelFamily, KernelWeights
from compdid.utils.logger import logger

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
RIDGE_SCALE = 1e-8
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class MultiIndexBasis:
    """Multi-indices k with |k| <= order, grouped by |k|.

    Within a degree block the indices are sorted lexicographically with the
    last position taking priority, so for two coordinates (a, b) and order 2
    the basis reads (1, a, b, a^2, ab, b^2).
    """

    order: int
    dimension: int
    index_table: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.order < 0 or self.dimension < 0:
            raise ParameterError("polynomial order and dimension must be nonnegative", module="localpoly")
        table: list[tuple[int, ...]] = []
        for degree in range(self.order + 1):
            block = [k for k in itertools.product(range(degree + 1), repeat=self.dimension) if sum(k) == degree]
            table.extend(sorted(block, key=lambda k: k[::-1]))
        object.__setattr__(self, "index_table", tuple(table))
        object.__setattr__(self, "_exponents", np.array(table, dtype=float).reshape(len(table), self.dimension))

    @property
    def size(self) -> int:
        return len(self.index_table)

    @staticmethod
    def expected_size(order: int, dimension: int) -> int:
        """N_p = sum_k C(k + v - 1, v - 1)."""
        if dimension == 0:
            return 1
        return sum(comb(k + dimension - 1, dimension - 1) for k in range(order + 1))

    def design(self, x_c: np.ndarray, center: np.ndarray) -> np.ndarray:
        """Rows of (x_c - center)^k for every multi-index k."""
        x_c = np.asarray(x_c, dtype=float)
        center = np.asarray(center, dtype=float)
        if x_c.ndim == 1:
            x_c = x_c.reshape(1, -1)
        if x_c.shape[1] != self.dimension or center.shape[-1] != self.dimension:
            raise ShapeError(
                f"basis has dimension {self.dimension}, got points of dimension {x_c.shape[1]}"
                f" and center of dimension {center.shape[-1]}",
                module="localpoly",
            )
        displacement = x_c - center
        return np.prod(displacement[:, None, :] ** self._exponents[None, :, :], axis=-1)


def build_basis_vector(basis: MultiIndexBasis, x_c: np.ndarray, center: np.ndarray) -> np.ndarray:
    return basis.design(np.atleast_1d(x_c), np.atleast_1d(center))[0]


# ---------------------------------------------------------------------------
# Local likelihood
# ---------------------------------------------------------------------------

def _likelihood_terms(
    design: np.ndarray, indicators: np.ndarray, weights: np.ndarray, gamma: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted local log-likelihood with its gradient and Hessian.

    ``indicators`` holds I_{d,t} for the non-reference cells in the order of
    ``CELLS_MINUS``; ``gamma`` stacks one coefficient block per such cell.
    """
    n_basis = design.shape[1]
    coefficients = gamma.reshape(len(CELLS_MINUS), n_basis)
    index = design @ coefficients.T
    padded = np.column_stack([np.zeros(len(index)), index])
    lse = logsumexp(padded, axis=1)
    probs = np.exp(index - lse[:, None])

    value = float(np.sum(weights * (np.sum(indicators * index, axis=1) - lse)))
    residual = (indicators - probs) * weights[:, None]
    grad = (residual.T @ design).ravel()

    k = len(CELLS_MINUS)
    hess = np.empty((k * n_basis, k * n_basis))
    for a in range(k):
        for b in range(a, k):
            delta = 1.0 if a == b else 0.0
            mix = weights * probs[:, a] * (delta - probs[:, b])
            block = -(design * mix[:, None]).T @ design
            hess[a * n_basis:(a + 1) * n_basis, b * n_basis:(b + 1) * n_basis] = block
            hess[b * n_basis:(b + 1) * n_basis, a * n_basis:(a + 1) * n_basis] = block.T
    return value, grad, hess


def _cell_indicators(d: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.column_stack([((d == c[0]) & (t == c[1])).astype(float) for c in CELLS_MINUS])


def local_likelihood(
    x_c: np.ndarray, cell: Cell, center: np.ndarray, gamma: np.ndarray, basis: MultiIndexBasis
) -> float:
    """Pointwise contribution l(w, x; gamma) of one observation in ``cell``."""
    value, _, _ = local_likelihood_derivatives(x_c, cell, center, gamma, basis)
    return value


def local_likelihood_derivatives(
    x_c: np.ndarray, cell: Cell, center: np.ndarray, gamma: np.ndarray, basis: MultiIndexBasis
) -> tuple[float, np.ndarray, np.ndarray]:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (len(CELLS_MINUS) * basis.size,):
        raise ShapeError(f"gamma must have length {len(CELLS_MINUS) * basis.size}", module="localpoly")
    design = basis.design(np.atleast_1d(x_c), np.atleast_1d(center))
    indicators = _cell_indicators(np.array([cell[0]]), np.array([cell[1]]))
    return _likelihood_terms(design, indicators, np.ones(1), gamma)


def probabilities_from_intercepts(intercepts: np.ndarray) -> np.ndarray:
    """Multinomial-logistic transform of the non-reference intercepts.

    Returns a row per point in ``CELLS`` order.
    """
    intercepts = np.atleast_2d(intercepts)
    padded = np.column_stack([np.zeros(len(intercepts)), intercepts])
    lse = logsumexp(padded, axis=1)
    return np.exp(padded - lse[:, None])


# ---------------------------------------------------------------------------
# Fitted nuisance containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GpsFit:
    """Leave-one-out generalized propensity scores, columns in ``CELLS`` order."""

    loo_probabilities: np.ndarray
    gamma_hat: np.ndarray
    convergence_flags: np.ndarray
    degenerate_flags: np.ndarray
    truncation_floor: float = 0.0
    truncated_flags: np.ndarray | None = None
    raw_probabilities: np.ndarray | None = None
    h: float | None = None
    lam: DiscreteKernelParams | None = None
    order: int | None = None

    def __post_init__(self):
        if self.raw_probabilities is None:
            object.__setattr__(self, "raw_probabilities", self.loo_probabilities)
        if self.truncated_flags is None:
            object.__setattr__(self, "truncated_flags", np.zeros(len(self.loo_probabilities), dtype=bool))

    def prob(self, cell: Cell) -> np.ndarray:
        return self.loo_probabilities[:, CELLS.index(cell)]

    @classmethod
    def from_probabilities(cls, probabilities: np.ndarray) -> "GpsFit":
        """Wrap externally supplied probabilities (oracle or contaminated)."""
        probabilities = np.asarray(probabilities, dtype=float)
        n = len(probabilities)
        return cls(
            loo_probabilities=probabilities,
            gamma_hat=np.zeros((n, len(CELLS_MINUS), 1)),
            convergence_flags=np.ones(n, dtype=bool),
            degenerate_flags=np.zeros(n, dtype=bool),
        )

    def diagnostics(self) -> dict[str, int]:
        return {
            "points": int(len(self.loo_probabilities)),
            "not_converged": int((~self.convergence_flags).sum()),
            "degenerate_windows": int(self.degenerate_flags.sum()),
            "truncated": int(self.truncated_flags.sum()),
        }


@dataclass(frozen=True, eq=False)
class OrFit:
    """Leave-one-out outcome regressions keyed by cell."""

    loo_means: dict[Cell, np.ndarray]
    beta_hat: dict[Cell, np.ndarray] = field(default_factory=dict)
    effective_counts: dict[Cell, np.ndarray] = field(default_factory=dict)
    ridge_flags: dict[Cell, np.ndarray] = field(default_factory=dict)
    bandwidths: dict[Cell, tuple[float, DiscreteKernelParams]] = field(default_factory=dict)

    def mean(self, cell: Cell) -> np.ndarray:
        try:
            return self.loo_means[cell]
        except KeyError:
            raise EstimationError(f"outcome regression for cell {cell} was not fitted", module="localpoly")

    @property
    def cells(self) -> tuple[Cell, ...]:
        return tuple(c for c in CELLS if c in self.loo_means)

    def merge(self, other: "OrFit") -> "OrFit":
        return OrFit(
            loo_means={**self.loo_means, **other.loo_means},
            beta_hat={**self.beta_hat, **other.beta_hat},
            effective_counts={**self.effective_counts, **other.effective_counts},
            ridge_flags={**self.ridge_flags, **other.ridge_flags},
            bandwidths={**self.bandwidths, **other.bandwidths},
        )

    @classmethod
    def combine(cls, fits: list["OrFit"]) -> "OrFit":
        combined = cls(loo_means={})
        for fit in fits:
            combined = combined.merge(fit)
        return combined

    def diagnostics(self) -> dict[str, dict[str, int]]:
        out = {}
        for cell in self.cells:
            means = self.loo_means[cell]
            out[f"{cell[0]}{cell[1]}"] = {
                "non_finite": int((~np.isfinite(means)).sum()),
                "ridge": int(self.ridge_flags.get(cell, np.zeros(0, dtype=bool)).sum()),
            }
        return out


# ---------------------------------------------------------------------------
# Local multinomial logit
# ---------------------------------------------------------------------------

@dataclass
class _NewtonResult:
    gamma: np.ndarray
    converged: bool
    degenerate: bool
    iterations: int


def _positive_definite(matrix: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return False
    return True


def _newton_point(
    design: np.ndarray,
    indicators: np.ndarray,
    weights: np.ndarray,
    gamma0: np.ndarray,
    norm: float,
    tol: float,
    max_iter: int,
) -> _NewtonResult:
    dim = gamma0.size
    degenerate = len(weights) < dim
    gamma = gamma0.copy()
    value, grad, hess = _likelihood_terms(design, indicators, weights, gamma)
    value, grad, hess = value / norm, grad / norm, hess / norm
    for iteration in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return _NewtonResult(gamma, True, degenerate, iteration)
        info = -hess
        if degenerate or not _positive_definite(info):
            degenerate = True
            info = info + RIDGE_SCALE * max(np.trace(info) / dim, 1e-300) * np.eye(dim)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            return _NewtonResult(gamma, False, True, iteration)
        scale = 1.0
        while scale > 1e-10:
            candidate = gamma + scale * step
            new_value, new_grad, new_hess = _likelihood_terms(design, indicators, weights, candidate)
            new_value /= norm
            if np.isfinite(new_value) and new_value >= value - 1e-14 * abs(value):
                break
            scale *= 0.5
        else:
            return _NewtonResult(gamma, bool(np.max(np.abs(grad)) < tol), degenerate, iteration)
        gamma, value, grad, hess = candidate, new_value, new_grad / norm, new_hess / norm
    return _NewtonResult(gamma, bool(np.max(np.abs(grad)) < tol), degenerate, max_iter)


def _start_values(counts: dict[Cell, int], basis: MultiIndexBasis) -> np.ndarray:
    gamma0 = np.zeros((len(CELLS_MINUS), basis.size))
    reference = max(counts[(1, 1)], 0.5)
    gamma0[:, 0] = [np.log(max(counts[c], 0.5) / reference) for c in CELLS_MINUS]
    return gamma0.ravel()


def global_intercepts(data: SampleData, basis: MultiIndexBasis, exclude: int | None = None) -> np.ndarray:
    """Intercept-only multinomial logit solution log(n_{d,t} / n_{1,1}).

    With ``exclude`` the counts leave out that observation, so the start value
    of a leave-one-out fit never sees the point it predicts. A count of zero
    is replaced by one half.
    """
    counts = data.cell_counts()
    if min(counts.values()) == 0:
        empty = next(c for c in CELLS if counts[c] == 0)
        raise EmptyCellError(empty, module="localpoly")
    if exclude is not None:
        counts[(int(data.d[exclude]), int(data.t[exclude]))] -= 1
    return _start_values(counts, basis)


def local_mlogit_at(
    data: SampleData,
    weights: np.ndarray,
    center: np.ndarray,
    basis: MultiIndexBasis,
    gamma0: np.ndarray,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    norm: float | None = None,
) -> _NewtonResult:
    """Maximize the weighted local likelihood around ``center``.

    The likelihood is scaled by ``norm`` (default ``data.n``, the number of
    observations entering the fit) before the gradient is compared with ``tol``.
    """
    mask = weights > 0
    design = basis.design(data.x_c[mask], center)
    indicators = _cell_indicators(data.d[mask], data.t[mask])
    norm = float(norm if norm is not None else max(data.n, 1))
    return _newton_point(design, indicators, weights[mask], gamma0, norm, tol, max_iter)


def _nearest_converged(data: SampleData, converged: np.ndarray, j: int) -> int | None:
    candidates = np.flatnonzero(converged)
    if candidates.size == 0:
        return None
    features = np.column_stack([data.x_c, data.x_u, data.x_o]).astype(float)
    dist = np.sum((features[candidates] - features[j]) ** 2, axis=1)
    return int(candidates[np.argmin(dist)])


def fit_local_mlogit_loo(
    data: SampleData,
    basis: MultiIndexBasis,
    h: float,
    lam: DiscreteKernelParams,
    family: KernelFamily = KernelFamily.EPANECHNIKOV,
    workers: int = 1,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
    weights: KernelWeights | None = None,
) -> GpsFit:
    """Leave-one-out local multinomial logit at every observation."""
    if not h > 0:
        raise ParameterError(f"bandwidth must be positive, got {h}", module="localpoly")
    if basis.dimension != data.n_continuous:
        raise ShapeError("basis dimension does not match the continuous covariates", module="localpoly")
    data.require_cells(CELLS, module="localpoly")
    counts = data.cell_counts()
    kernel_weights = weights or KernelWeights(data, family)
    norm = max(data.n - 1, 1)

    def start_at(j: int) -> np.ndarray:
        own = (int(data.d[j]), int(data.t[j]))
        return _start_values({c: counts[c] - (c == own) for c in CELLS}, basis)

    def solve_block(block: list[int]) -> list[_NewtonResult]:
        return [
            local_mlogit_at(
                data, kernel_weights.row(j, h, lam), data.x_c[j], basis, start_at(j), tol, max_iter, norm=norm
            )
            for j in block
        ]

    blocks = chunked(list(range(data.n)), max(workers, 1))
    results = [r for block in parallel_map(solve_block, blocks, workers) for r in block]

    gamma_hat = np.stack([r.gamma for r in results]).reshape(data.n, len(CELLS_MINUS), basis.size)
    converged = np.array([r.converged for r in results])
    degenerate = np.array([r.degenerate for r in results])
    for j in np.flatnonzero(~converged):
        neighbour = _nearest_converged(data, converged, j)
        if neighbour is not None:
            gamma_hat[j] = gamma_hat[neighbour]
    if (~converged).any():
        logger.warning(f"Local logit did not converge at {int((~converged).sum())} of {data.n} points (h={h:.4g})")
    if degenerate.any():
        logger.debug(f"Ridge-stabilized local logit at {int(degenerate.sum())} points (h={h:.4g})")

    probabilities = probabilities_from_intercepts(gamma_hat[:, :, 0])
    return GpsFit(
        loo_probabilities=probabilities,
        gamma_hat=gamma_hat,
        convergence_flags=converged,
        degenerate_flags=degenerate,
        raw_probabilities=probabilities,
        h=h,
        lam=lam,
        order=basis.order,
    )


def predict_gps(fit: GpsFit, floor: float) -> GpsFit:
    """Clip propensity scores below at ``floor``; rows touched are flagged."""
    if not 0.0 <= floor < 0.25:
        raise ParameterError(f"truncation floor must lie in [0, 0.25), got {floor}", module="localpoly")
    raw = fit.raw_probabilities
    clipped = np.maximum(raw, floor)
    flags = (raw < floor).any(axis=1)
    if flags.any():
        logger.debug(f"Truncated propensity scores at {int(flags.sum())} points (floor={floor})")
    return replace(fit, loo_probabilities=clipped, truncation_floor=floor, truncated_flags=flags)


# ---------------------------------------------------------------------------
# Local least squares
# ---------------------------------------------------------------------------

@dataclass
class _LsResult:
    beta: np.ndarray
    count: int
    ridge: bool


def local_ls_at(
    data: SampleData, weights: np.ndarray, center: np.ndarray, basis: MultiIndexBasis
) -> _LsResult:
    """Weighted least squares around ``center`` using observations with positive weight."""
    mask = weights > 0
    count = int(mask.sum())
    if count == 0:
        return _LsResult(np.full(basis.size, np.nan), 0, True)
    design = basis.design(data.x_c[mask], center)
    w = weights[mask]
    normal = design.T @ (design * w[:, None])
    rhs = design.T @ (w * data.y[mask])
    ridge = count < basis.size or np.linalg.cond(normal) > MAX_CONDITION
    if ridge:
        normal = normal + RIDGE_SCALE * max(np.trace(normal) / basis.size, 1e-300) * np.eye(basis.size)
    try:
        beta = np.linalg.solve(normal, rhs)
    except np.linalg.LinAlgError:
        return _LsResult(np.full(basis.size, np.nan), count, True)
    return _LsResult(beta, count, ridge)


def fit_local_ls_loo(
    data: SampleData,
    cell: Cell,
    basis: MultiIndexBasis,
    b: float,
    theta: DiscreteKernelParams,
    family: KernelFamily = KernelFamily.EPANECHNIKOV,
    workers: int = 1,
    weights: KernelWeights | None = None,
) -> OrFit:
    """Leave-one-out local least squares for one cell, evaluated at every X_j."""
    if not b > 0:
        raise ParameterError(f"bandwidth must be positive, got {b}", module="localpoly")
    in_cell = data.indicator(cell)
    if in_cell.sum() == 0:
        raise EmptyCellError(cell, module="localpoly")
    kernel_weights = weights or KernelWeights(data, family)

    def solve_block(block: list[int]) -> list[_LsResult]:
        return [local_ls_at(data, in_cell * kernel_weights.row(j, b, theta), data.x_c[j], basis) for j in block]

    blocks = chunked(list(range(data.n)), max(workers, 1))
    results = [r for block in parallel_map(solve_block, blocks, workers) for r in block]

    beta_hat = np.stack([r.beta for r in results])
    ridge = np.array([r.ridge for r in results])
    if ridge.any():
        logger.debug(f"Ridge-stabilized local regression for cell {cell} at {int(ridge.sum())} points (b={b:.4g})")
    return OrFit(
        loo_means={cell: beta_hat[:, 0]},
        beta_hat={cell: beta_hat},
        effective_counts={cell: np.array([r.count for r in results])},
        ridge_flags={cell: ridge},
        bandwidths={cell: (b, theta)},
    )
