"""Correlated Gaussian noise shaped by the sensitivity polytope.

The unconstrained mechanism answers a full-row-rank linear query ``A`` (n x d)
with ``A h + sqrt(k) * sum_i r_i U_i w_i``. The orthogonal blocks ``U_i`` come
from a recursive split driven by the minimum-volume enclosing ellipsoid of
``K = conv{+-a_j}``: at each level the ellipsoid's smallest ceil(n/2) principal
directions become a block and the recursion continues on the span of the
largest floor(n/2). ``r_i`` is the largest length of a column of ``A`` seen
through block ``i``, and ``w_i ~ N(0, c_{eps,delta}^2 I)``.

The invariant-respecting version runs the same construction on
``A_N = Q_N^T A`` and maps the noise back with ``Q_N``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, MaxItersExceeded, ProjectedRankDeficient, RankDeficient
from .invariants import InvariantSystem
from .mechanisms import (
    CORRELATED_GAUSSIAN,
    MechanismRelease,
    NoisePlan,
    PrivacyBudget,
    gaussian_calibration,
    release_with_plan,
)
from .noise import NoiseSource
from .query import LinearQuery, evaluate

DEFAULT_MVEE_TOLERANCE = 1e-7


@dataclass(frozen=True, eq=False)
class EllipsoidFactor:
    """``E = F B_2^n`` plus the dual weights that certify it.

    ``points`` are the distinct directions (one of each +-pair) the solver
    used; the symmetric point set is ``{+-p}``, each sign carrying half of
    ``weights``.
    """

    f_matrix: np.ndarray
    tolerance_achieved: float
    iterations: int
    weights: np.ndarray
    points: np.ndarray
    converged: bool = True

    @property
    def shape_matrix(self) -> np.ndarray:
        return self.f_matrix @ self.f_matrix.T

    def quadratic_forms(self, points=None) -> np.ndarray:
        """``p^T (F F^T)^{-1} p`` for each row of ``points``."""
        pts = self.points if points is None else np.atleast_2d(points)
        sol = np.linalg.solve(self.shape_matrix, pts.T)
        return np.einsum("ij,ji->i", pts, sol)

    def john_residual(self) -> float:
        """Worst violation of containment, John's identity and slackness."""
        n = self.f_matrix.shape[0]
        target = self.shape_matrix / n
        s = (self.points.T * self.weights) @ self.points
        identity_gap = np.max(np.abs(s - target)) / np.max(np.abs(target))
        q = self.quadratic_forms()
        containment = max(0.0, float(q.max()) - 1.0)
        support = self.weights > 0
        slack = float(np.max(np.abs(q[support] - 1.0))) if support.any() else 0.0
        return float(max(identity_gap, containment, slack))


def _distinct_directions(points: np.ndarray) -> np.ndarray:
    """Drop zero rows and collapse duplicates and +-pairs."""
    pts = points[np.any(points != 0.0, axis=1)]
    if pts.size == 0:
        return pts
    first = np.argmax(pts != 0.0, axis=1)
    signs = np.sign(pts[np.arange(len(pts)), first])
    pts = pts * signs[:, None]
    return np.unique(pts, axis=0)


def _fresh_state(P, u):
    X = (P * u) @ P.T
    Xinv = np.linalg.inv(X)
    Xinv = 0.5 * (Xinv + Xinv.T)
    M = np.einsum("ij,ij->j", P, Xinv @ P)
    return np.ascontiguousarray(Xinv), np.ascontiguousarray(M)


def _gaps(M, u, n):
    eplus = float(M.max()) / n - 1.0
    eminus = 1.0 - float(M[u > 0].min()) / n
    return eplus, eminus


def mvee_symmetric(points, tolerance: float = DEFAULT_MVEE_TOLERANCE, max_iters: int | None = None,
                   on_max_iters: str = "warn", backend: str | None = None) -> EllipsoidFactor:
    """Origin-centred minimum-volume ellipsoid enclosing ``{+-p}``.

    Parameters
    ----------
    points : (m, n) array_like
        One row per point. Sign-flipped duplicates, repeats and zero rows are
        harmless; they are collapsed before solving.
    tolerance : float
        Stop once every point satisfies ``p^T (F F^T)^{-1} p <= 1 + tolerance``
        and every weighted point has ``|p^T (F F^T)^{-1} p - 1| <= tolerance``.
    max_iters : int, optional
        Defaults to ``100 * n * m``.
    on_max_iters : {"warn", "raise"}
        ``"raise"`` throws :class:`MaxItersExceeded` carrying the best factor.

    Notes
    -----
    Khachiyan's coordinate-ascent scheme on the dual weights, with the
    Todd-Yildirim away steps so weights on interior points can shrink to
    zero. Each step is a rank-one update of ``X^{-1}`` done by the compiled
    kernel; the state is refreshed from scratch between sweeps to stop drift.
    """
    pts = np.array(points, dtype=float, ndmin=2)
    if pts.ndim != 2:
        raise DimensionMismatch("points must be a 2-D array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    n = pts.shape[1]
    dirs = _distinct_directions(pts)
    if dirs.shape[0] == 0 or np.linalg.matrix_rank(dirs) < n:
        raise RankDeficient(f"points do not span R^{n}")
    m = dirs.shape[0]

    if n == 1:
        w = np.zeros(m)
        w[int(np.argmax(np.abs(dirs[:, 0])))] = 1.0
        return EllipsoidFactor(np.array([[float(np.max(np.abs(dirs)))]]), 0.0, 0, w, dirs)

    if max_iters is None:
        max_iters = 100 * n * m
    P = np.ascontiguousarray(dirs.T)
    u = np.full(m, 1.0 / m)
    Xinv, M = _fresh_state(P, u)
    iterations = 0
    chunk = 20 * n + 100
    converged = False
    while True:
        eplus, eminus = _gaps(M, u, n)
        if eplus <= tolerance and eminus <= tolerance:
            converged = True
            break
        if iterations >= max_iters:
            break
        steps, _ = kernels.khachiyan_sweep(
            P, u, Xinv, M, tolerance, min(chunk, max_iters - iterations), backend=backend
        )
        iterations += steps
        u = np.clip(u, 0.0, None)
        u /= u.sum()
        Xinv, M = _fresh_state(P, u)
        if steps == 0 and not converged:
            # kernel refused to move (degenerate away step); stop rather than spin
            eplus, eminus = _gaps(M, u, n)
            converged = eplus <= tolerance and eminus <= tolerance
            break

    evals, evecs = np.linalg.eigh(n * ((P * u) @ P.T))
    f = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    eplus, eminus = _gaps(M, u, n)
    factor = EllipsoidFactor(
        f_matrix=0.5 * (f + f.T),
        tolerance_achieved=max(eplus, eminus, 0.0),
        iterations=iterations,
        weights=u.copy(),
        points=dirs,
        converged=converged,
    )
    if not converged:
        msg = f"MVEE did not reach tolerance {tolerance:g} in {iterations} iterations (at {factor.tolerance_achieved:.3g})"
        if on_max_iters == "raise":
            raise MaxItersExceeded(msg, factor)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return factor


@dataclass(frozen=True, eq=False)
class Block:
    u: np.ndarray
    r: float

    @property
    def n_i(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True, eq=False)
class BaseDecomposition:
    blocks: tuple
    k: int

    @property
    def n(self) -> int:
        return self.blocks[0].u.shape[0]

    def stacked(self) -> np.ndarray:
        """All block bases side by side: an n x n orthogonal matrix."""
        return np.hstack([b.u for b in self.blocks])

    def scales(self) -> np.ndarray:
        """Per-column noise multiplier ``sqrt(k) * r_i`` before ``c_{eps,delta}``."""
        return np.concatenate([np.full(b.n_i, math.sqrt(self.k) * b.r) for b in self.blocks])

    def analytic_mse(self, c: float) -> float:
        return self.k * c**2 * sum(b.r**2 * b.n_i for b in self.blocks)

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "blocks": [{"n_i": b.n_i, "r_i": b.r, "u": b.u.tolist()} for b in self.blocks],
            }
        )


def block_count(n: int) -> int:
    """``ceil(1 + log2 n)``."""
    return math.ceil(1.0 + math.log2(n))


def _split(a: np.ndarray, tolerance: float, backend) -> list:
    n = a.shape[0]
    if n == 1 or a.shape[1] == 1:
        return [np.ones((1, 1))]
    ell = mvee_symmetric(a.T, tolerance, backend=backend)
    left, _, _ = np.linalg.svd(ell.f_matrix)
    half = n // 2
    lower, upper = left[:, half:], left[:, :half]
    return [lower] + [upper @ sub for sub in _split(upper.T @ a, tolerance, backend)]


def base_decomposition(a_matrix, mvee_tolerance: float = DEFAULT_MVEE_TOLERANCE,
                       backend: str | None = None) -> BaseDecomposition:
    a = np.array(a_matrix, dtype=float, ndmin=2)
    n = a.shape[0]
    if np.linalg.matrix_rank(a) < n:
        raise RankDeficient(f"query matrix must have full row rank {n}")
    bases = _split(a, mvee_tolerance, backend)
    blocks = tuple(Block(u, float(np.max(np.linalg.norm(u.T @ a, axis=0)))) for u in bases)
    return BaseDecomposition(blocks, block_count(n))


@dataclass(frozen=True, eq=False)
class CorrelatedResult:
    values: np.ndarray
    analytic_mse: float
    decomposition: BaseDecomposition


def correlated_gaussian(query: LinearQuery, h, budget: PrivacyBudget, noise: NoiseSource,
                        mvee_tolerance: float = DEFAULT_MVEE_TOLERANCE) -> CorrelatedResult:
    """Unconstrained correlated Gaussian release of a full-row-rank query."""
    c = gaussian_calibration(budget, 1.0)
    decomp = base_decomposition(query.a_matrix, mvee_tolerance)
    w = noise.standard_normal(query.n) * (c * decomp.scales())
    values = evaluate(query, h) + decomp.stacked() @ w
    return CorrelatedResult(values, decomp.analytic_mse(c), decomp)


def plan_subspace_correlated(query: LinearQuery, sys: InvariantSystem, budget: PrivacyBudget,
                             mvee_tolerance: float = DEFAULT_MVEE_TOLERANCE) -> NoisePlan:
    if query.n != sys.n:
        raise DimensionMismatch(f"query outputs R^{query.n}, invariant acts on R^{sys.n}")
    c = gaussian_calibration(budget, 1.0)
    q = np.asarray(sys.q_null)
    a_null = q.T @ query.a_matrix
    if np.linalg.matrix_rank(a_null) < sys.null_dim:
        raise ProjectedRankDeficient(
            f"Q_N^T A has rank below {sys.null_dim}; the invariant absorbs query directions"
        )
    decomp = base_decomposition(a_null, mvee_tolerance)
    return NoisePlan(
        CORRELATED_GAUSSIAN, "gaussian", c * decomp.scales(), "basis", sys,
        q @ decomp.stacked(), analytic_mse=decomp.analytic_mse(c),
        extras={"decomposition": decomp},
    )


def subspace_correlated_gaussian(query: LinearQuery, h, sys: InvariantSystem, budget: PrivacyBudget,
                                 noise: NoiseSource,
                                 mvee_tolerance: float = DEFAULT_MVEE_TOLERANCE) -> MechanismRelease:
    """Invariant-respecting correlated Gaussian release.

    Computed as ``A h + Q_N eta`` with ``eta`` the inner mechanism's noise,
    which equals ``Q_N z + Pi_R A h`` for ``z = A_N h + eta``.
    """
    plan = plan_subspace_correlated(query, sys, budget, mvee_tolerance)
    return release_with_plan(plan, evaluate(query, h), noise, budget)
