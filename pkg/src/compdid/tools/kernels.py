"""Kernel weights for mixed continuous / discrete covariates.

Continuous coordinates use a compactly supported product kernel scaled by a
bandwidth ``h``; unordered and ordered discrete coordinates use the
Li-Racine kernel with one smoothing parameter per type. A candidate pair
(``h``, ``lambda``) therefore produces weights

    K_h(x_c,i - x_c,j) * lambda_u ** (#unordered mismatches) * lambda_o ** (sum |ordered gaps|)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from compdid.core.errors import ParameterError, ShapeError
from compdid.data import SampleData


class KernelFamily(str, Enum):
    EPANECHNIKOV = "epanechnikov"
    TRIANGULAR = "triangular"
    BIWEIGHT = "biweight"
    TRIWEIGHT = "triweight"


def _profile(family: KernelFamily, u: np.ndarray) -> np.ndarray:
    inside = np.abs(u) <= 1.0
    if family is KernelFamily.EPANECHNIKOV:
        values = 0.75 * (1.0 - u**2)
    elif family is KernelFamily.TRIANGULAR:
        values = 1.0 - np.abs(u)
    elif family is KernelFamily.BIWEIGHT:
        values = (15.0 / 16.0) * (1.0 - u**2) ** 2
    elif family is KernelFamily.TRIWEIGHT:
        values = (35.0 / 32.0) * (1.0 - u**2) ** 3
    else:
        raise ParameterError(f"Unsupported kernel family: {family}", module="kernels")
    return np.where(inside, values, 0.0)


@dataclass(frozen=True)
class ContinuousKernel:
    """Product kernel on [-1, 1]^dimension."""

    family: KernelFamily = KernelFamily.EPANECHNIKOV
    dimension: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.dimension < 0:
            raise ParameterError("kernel dimension must be nonnegative", module="kernels")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """K(u) for ``u`` of shape (..., dimension)."""
        u = np.asarray(u, dtype=float)
        if self.dimension == 0:
            return np.ones(u.shape[:-1]) if u.ndim > 1 else np.float64(1.0)
        if u.shape[-1] != self.dimension:
            raise ShapeError(
                f"expected {self.dimension} continuous coordinates, got {u.shape[-1]}", module="kernels"
            )
        return np.prod(_profile(self.family, u), axis=-1)

    def scaled(self, u: np.ndarray, h: float) -> np.ndarray:
        """K_h(u) = K(u / h) / h^dimension."""
        if not h > 0:
            raise ParameterError(f"bandwidth must be positive, got {h}", module="kernels")
        u = np.asarray(u, dtype=float)
        return self(u / h) / h**self.dimension


@dataclass(frozen=True)
class DiscreteKernelParams:
    """Li-Racine smoothing parameters (lambda_u, lambda_o)."""

    lambda_u: float = 0.0
    lambda_o: float = 0.0

    def __post_init__(self):
        for name in ("lambda_u", "lambda_o"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value}", module="kernels")

    def as_tuple(self) -> tuple[float, float]:
        return (self.lambda_u, self.lambda_o)


def scaled_continuous_kernel(
    u: np.ndarray, h: float, family: KernelFamily = KernelFamily.EPANECHNIKOV
) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(ContinuousKernel(family, u.shape[-1]).scaled(u, h))


def discrete_kernel(
    x_d: np.ndarray,
    z_d: np.ndarray,
    params: DiscreteKernelParams,
    ordered: np.ndarray | None = None,
) -> np.ndarray:
    """L_lambda(x_d, z_d); ``ordered`` flags which coordinates are ordered.

    ``x_d`` may be a single vector or a stack of rows compared against ``z_d``.
    """
    x_d = np.asarray(x_d)
    z_d = np.asarray(z_d)
    if x_d.shape[-1] != z_d.shape[-1]:
        raise ShapeError(
            f"discrete covariate vectors differ in length: {x_d.shape[-1]} vs {z_d.shape[-1]}",
            module="kernels",
        )
    if ordered is None:
        ordered = np.zeros(z_d.shape[-1], dtype=bool)
    ordered = np.asarray(ordered, dtype=bool)
    if ordered.shape[-1] != z_d.shape[-1]:
        raise ShapeError("ordered mask does not match the discrete layout", module="kernels")
    mismatches = np.sum((x_d != z_d) & ~ordered, axis=-1)
    gaps = np.sum(np.abs(x_d - z_d) * ordered, axis=-1)
    # 0.0 ** 0 == 1 keeps the frequency estimator (lambda = 0) exact.
    return np.power(params.lambda_u, mismatches) * np.power(params.lambda_o, gaps)


def composite_weight(
    x_c_i: np.ndarray,
    x_d_i: np.ndarray,
    x_c_j: np.ndarray,
    x_d_j: np.ndarray,
    h: float,
    params: DiscreteKernelParams,
    ordered: np.ndarray | None = None,
    family: KernelFamily = KernelFamily.EPANECHNIKOV,
) -> float:
    """K_h(x_c,i - x_c,j) * L_lambda(x_d,i, x_d,j) for one pair."""
    x_c_i = np.atleast_1d(np.asarray(x_c_i, dtype=float))
    x_c_j = np.atleast_1d(np.asarray(x_c_j, dtype=float))
    if x_c_i.shape != x_c_j.shape:
        raise ShapeError("continuous covariate layouts disagree", module="kernels")
    kernel = ContinuousKernel(family, x_c_i.shape[-1])
    continuous = kernel.scaled(x_c_i - x_c_j, h)
    return float(continuous * discrete_kernel(x_d_i, x_d_j, params, ordered))


class KernelWeights:
    """Leave-one-out composite weights of every observation around each point.

    Rows are evaluated lazily per evaluation point. ``cache=True`` keeps the
    pairwise continuous differences and the discrete mismatch/gap counts in
    memory, which pays off when many bandwidth candidates are evaluated on a
    small sample.
    """

    def __init__(self, data: SampleData, family: KernelFamily = KernelFamily.EPANECHNIKOV, cache: bool = False):
        self.data = data
        self.kernel = ContinuousKernel(family, data.n_continuous)
        self.cache = cache
        self._diff = None
        self._mismatch = None
        self._gap = None
        if cache:
            x_c = data.x_c
            self._diff = x_c[:, None, :] - x_c[None, :, :]
            self._mismatch = (data.x_u[:, None, :] != data.x_u[None, :, :]).sum(axis=-1)
            self._gap = np.abs(data.x_o[:, None, :] - data.x_o[None, :, :]).sum(axis=-1)

    @property
    def n(self) -> int:
        return self.data.n

    def _components(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.cache:
            return self._diff[:, j, :], self._mismatch[:, j], self._gap[:, j]
        data = self.data
        diff = data.x_c - data.x_c[j]
        mismatch = (data.x_u != data.x_u[j]).sum(axis=-1)
        gap = np.abs(data.x_o - data.x_o[j]).sum(axis=-1)
        return diff, mismatch, gap

    def row(self, j: int, h: float, params: DiscreteKernelParams, leave_out: bool = True) -> np.ndarray:
        """Weights K~(X_i; X_j, h, lambda) for all i, zero at i = j when leaving out."""
        diff, mismatch, gap = self._components(j)
        weights = self.kernel.scaled(diff, h) * np.power(params.lambda_u, mismatch) * np.power(params.lambda_o, gap)
        weights = np.asarray(weights, dtype=float)
        if weights.ndim == 0:
            weights = np.full(self.n, float(weights))
        if leave_out:
            weights = weights.copy()
            weights[j] = 0.0
        return weights
