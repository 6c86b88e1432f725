"""Histograms, linear queries, sensitivities and marginal-sum invariants.

Neighbouring databases are bounded: same size, one row's value replaced.
Replacing a record of type ``z`` by one of type ``z'`` moves the histogram by
``e_{z'} - e_z``, so the l_p sensitivity of a linear query is the largest
l_p distance between two of its columns.

Multiway tables are flattened row-major over the axis order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import AxisOverlap, DimensionMismatch, NonFiniteInput
from .invariants import InvariantSystem, build_invariant_system, DEFAULT_RANK_TOLERANCE


@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray
    labels: tuple | None = None

    def __post_init__(self):
        c = np.array(self.counts, dtype=float, ndmin=1)
        if c.ndim != 1 or c.size < 1:
            raise DimensionMismatch("histogram must be a non-empty vector")
        if not np.all(np.isfinite(c)):
            raise NonFiniteInput("histogram counts must be finite")
        if np.any(c < 0):
            raise ValueError("histogram counts must be nonnegative")
        if self.labels is not None and len(self.labels) != c.size:
            raise DimensionMismatch("one label per cell required")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def d(self) -> int:
        return self.counts.size

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True, eq=False)
class LinearQuery:
    a_matrix: np.ndarray
    name: str = "query"

    def __post_init__(self):
        a = np.array(self.a_matrix, dtype=float, ndmin=2)
        if a.ndim != 2 or min(a.shape) < 1:
            raise DimensionMismatch(f"query matrix must be 2-D and non-empty, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("query matrix must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)

    @property
    def n(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def d(self) -> int:
        return self.a_matrix.shape[1]

    @classmethod
    def identity(cls, d: int, name: str = "identity") -> "LinearQuery":
        return cls(np.eye(d), name)


def evaluate(query: LinearQuery, h) -> np.ndarray:
    """Exact (noise-free) answer ``A h``."""
    counts = h.counts if isinstance(h, Histogram) else np.asarray(h, dtype=float)
    if counts.shape != (query.d,):
        raise DimensionMismatch(f"query expects {query.d} cells, histogram has {counts.shape}")
    return query.a_matrix @ counts


def l_p_sensitivity(query: LinearQuery, p: int) -> float:
    """Bounded-neighbour sensitivity: ``max_{z != z'} ||a_z - a_z'||_p``."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if query.d == 1:
        return 0.0
    a = query.a_matrix
    if a.shape[0] == a.shape[1] and np.count_nonzero(a) == np.count_nonzero(np.diag(a)):
        # diagonal: ||d_i e_i - d_j e_j||_p is largest for the two biggest |d|
        top = np.sort(np.abs(np.diag(a)))[-2:]
        return float(np.sum(top**p) ** (1.0 / p))
    return kernels.pairwise_max_distance(a.T, p)


def projected_query(query: LinearQuery, sys: InvariantSystem) -> LinearQuery:
    """The (n - n_c) x d query ``Q_N^T A``."""
    if sys.n != query.n:
        raise DimensionMismatch(f"invariant acts on R^{sys.n}, query outputs R^{query.n}")
    return LinearQuery(sys.q_null.T @ query.a_matrix, name=f"{query.name}|null")


@dataclass(frozen=True)
class TableShape:
    dims: tuple
    axis_names: tuple | None = None

    def __post_init__(self):
        dims = tuple(int(x) for x in self.dims)
        if not dims or any(x < 1 for x in dims):
            raise ValueError(f"table dims must all be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        if self.axis_names is None:
            object.__setattr__(self, "axis_names", tuple(f"axis{i}" for i in range(len(dims))))
        else:
            names = tuple(self.axis_names)
            if len(names) != len(dims) or len(set(names)) != len(names):
                raise ValueError("axis_names must be unique, one per dimension")
            object.__setattr__(self, "axis_names", names)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def axis_index(self, axis) -> int:
        if isinstance(axis, (int, np.integer)):
            if not 0 <= axis < len(self.dims):
                raise AxisOverlap(f"axis {axis} out of range")
            return int(axis)
        try:
            return self.axis_names.index(axis)
        except ValueError:
            raise AxisOverlap(f"unknown axis {axis!r}; have {list(self.axis_names)}") from None

    def flat_index(self, coords) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.dims))

    def coords(self, flat: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(flat, self.dims))


@dataclass(frozen=True)
class MarginalSpec:
    """One exact-sum constraint per joint cell of ``grouped_axes``."""

    grouped_axes: tuple
    summed_axes: tuple

    @classmethod
    def group_by(cls, shape: TableShape, axes: Sequence) -> "MarginalSpec":
        grouped = tuple(shape.axis_index(a) for a in axes)
        summed = tuple(i for i in range(len(shape.dims)) if i not in grouped)
        return cls(grouped, summed)

    def validate(self, shape: TableShape) -> tuple[tuple, tuple]:
        grouped = tuple(shape.axis_index(a) for a in self.grouped_axes)
        summed = tuple(shape.axis_index(a) for a in self.summed_axes)
        if len(set(grouped)) != len(grouped) or len(set(summed)) != len(summed):
            raise AxisOverlap("axis listed twice")
        if set(grouped) & set(summed):
            raise AxisOverlap(f"axes {sorted(set(grouped) & set(summed))} both grouped and summed")
        if set(grouped) | set(summed) != set(range(len(shape.dims))):
            raise AxisOverlap("grouped and summed axes must cover every axis")
        return grouped, summed


def marginal_rows(shape: TableShape, spec: MarginalSpec) -> np.ndarray:
    """Raw 0/1 constraint rows for one spec, one row per grouped joint cell."""
    grouped, _ = spec.validate(shape)
    n = shape.size
    if not grouped:
        return np.ones((1, n))
    coords = np.indices(shape.dims).reshape(len(shape.dims), -1)
    gdims = tuple(shape.dims[i] for i in grouped)
    group_id = np.ravel_multi_index(tuple(coords[i] for i in grouped), gdims)
    rows = np.zeros((int(np.prod(gdims)), n))
    rows[group_id, np.arange(n)] = 1.0
    return rows


def build_marginal_invariants(
    shape: TableShape,
    specs: Sequence[MarginalSpec],
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE,
) -> InvariantSystem:
    if not specs:
        raise ValueError("at least one marginal spec is required")
    rows = np.vstack([marginal_rows(shape, s) for s in specs])
    return build_invariant_system(rows, rank_tolerance)
