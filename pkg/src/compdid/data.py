"""Observation records and their columnar form."""

from __future__ import annotations

from collections.abc import Hashable, Sequence
from dataclasses import dataclass, field

import numpy as np

from compdid.core.errors import EmptyCellError, ShapeError

Cell = tuple[int, int]

# Column order of every per-cell matrix in the package.
CELLS: tuple[Cell, ...] = ((1, 1), (1, 0), (0, 1), (0, 0))
# Non-reference cells; also the block order of the local logit coefficients.
CELLS_MINUS: tuple[Cell, ...] = ((1, 0), (0, 1), (0, 0))


def cell_sign(cell: Cell) -> int:
    """(-1)^(d+t)."""
    return -1 if (cell[0] + cell[1]) % 2 else 1


def cell_label(cell: Cell) -> str:
    return f"{cell[0]}{cell[1]}"


@dataclass(frozen=True)
class Sample:
    """One observation of a repeated cross-section."""

    y: float
    d: int
    t: int
    x_c: tuple[float, ...] = ()
    x_u: tuple[int, ...] = ()
    x_o: tuple[int, ...] = ()
    cluster: Hashable | None = None

    def __post_init__(self):
        if self.d not in (0, 1) or self.t not in (0, 1):
            raise ShapeError(f"treatment and period must be 0/1, got d={self.d}, t={self.t}", module="data")


@dataclass(frozen=True)
class SampleData:
    """Columnar sample: outcome, cell indicators and mixed covariates.

    ``x_c`` is ``(n, v_c)`` float, ``x_u`` and ``x_o`` are ``(n, v_u)`` and
    ``(n, v_o)`` integer codes; any block may have zero columns.
    """

    y: np.ndarray
    d: np.ndarray
    t: np.ndarray
    x_c: np.ndarray
    x_u: np.ndarray
    x_o: np.ndarray
    cluster: np.ndarray | None = None
    covariate_names: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.y)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=int))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=int))
        for name in ("x_c", "x_u", "x_o"):
            block = np.asarray(getattr(self, name), dtype=float if name == "x_c" else int)
            if block.ndim == 1:
                block = block.reshape(n, -1) if block.size else np.zeros((n, 0), dtype=block.dtype)
            if block.shape[0] != n:
                raise ShapeError(f"{name} has {block.shape[0]} rows, expected {n}", module="data")
            object.__setattr__(self, name, block)
        for name in ("d", "t"):
            values = getattr(self, name)
            if len(values) != n:
                raise ShapeError(f"{name} has length {len(values)}, expected {n}", module="data")
            if not np.isin(values, (0, 1)).all():
                raise ShapeError(f"{name} must be binary", module="data")
        if self.cluster is not None and len(self.cluster) != n:
            raise ShapeError("cluster ids must align with observations", module="data")

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleData":
        if not samples:
            raise ShapeError("no observations", module="data")
        layout = (len(samples[0].x_c), len(samples[0].x_u), len(samples[0].x_o))
        for i, s in enumerate(samples):
            if (len(s.x_c), len(s.x_u), len(s.x_o)) != layout:
                raise ShapeError(f"observation {i} has a different covariate layout", module="data")
        n = len(samples)
        clusters = [s.cluster for s in samples]
        return cls(
            y=np.array([s.y for s in samples], dtype=float),
            d=np.array([s.d for s in samples], dtype=int),
            t=np.array([s.t for s in samples], dtype=int),
            x_c=np.array([s.x_c for s in samples], dtype=float).reshape(n, layout[0]),
            x_u=np.array([s.x_u for s in samples], dtype=int).reshape(n, layout[1]),
            x_o=np.array([s.x_o for s in samples], dtype=int).reshape(n, layout[2]),
            cluster=None if all(c is None for c in clusters) else np.asarray(clusters),
        )

    def to_samples(self) -> list[Sample]:
        return [
            Sample(
                y=float(self.y[i]),
                d=int(self.d[i]),
                t=int(self.t[i]),
                x_c=tuple(float(v) for v in self.x_c[i]),
                x_u=tuple(int(v) for v in self.x_u[i]),
                x_o=tuple(int(v) for v in self.x_o[i]),
                cluster=None if self.cluster is None else self.cluster[i],
            )
            for i in range(self.n)
        ]

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_continuous(self) -> int:
        return self.x_c.shape[1]

    def indicator(self, cell: Cell) -> np.ndarray:
        """I_{d,t} as a float vector."""
        return ((self.d == cell[0]) & (self.t == cell[1])).astype(float)

    def cell_counts(self) -> dict[Cell, int]:
        return {cell: int(self.indicator(cell).sum()) for cell in CELLS}

    def require_cells(self, cells: Sequence[Cell] = CELLS, module: str = "estimators") -> None:
        counts = self.cell_counts()
        for cell in cells:
            if counts[cell] == 0:
                raise EmptyCellError(cell, module=module)

    def subset(self, index: np.ndarray) -> "SampleData":
        return SampleData(
            y=self.y[index],
            d=self.d[index],
            t=self.t[index],
            x_c=self.x_c[index],
            x_u=self.x_u[index],
            x_o=self.x_o[index],
            cluster=None if self.cluster is None else self.cluster[index],
            covariate_names=self.covariate_names,
        )

    def with_outcome(self, y: np.ndarray) -> "SampleData":
        return SampleData(
            y=y, d=self.d, t=self.t, x_c=self.x_c, x_u=self.x_u, x_o=self.x_o,
            cluster=self.cluster, covariate_names=self.covariate_names,
        )
