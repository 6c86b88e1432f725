"""Projected and extended Gaussian / Laplace mechanisms.

Every mechanism here is additive: ``release = A(h) + noise`` where ``noise``
depends only on public inputs (query, invariant, budget) and the noise key.
That structure is captured by :class:`NoisePlan`, which is what lets the
distributed runner regenerate identical noise on every agent.

Projected variants draw n-dimensional noise and project it onto the null
space; extended variants draw (n - n_c) coordinates calibrated to the
projected query and map them in with the null-space basis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DeltaZero, DimensionMismatch, InvariantViolation, MixedDelta
from .invariants import (
    InvariantSystem,
    build_invariant_system,
    invariant_tolerance,
    project_to_null,
)
from .noise import NoiseSource
from .query import Histogram, LinearQuery, evaluate, l_p_sensitivity, projected_query

PROJECTED_GAUSSIAN = "projected_gaussian"
EXTENDED_GAUSSIAN = "extended_gaussian"
PROJECTED_LAPLACE = "projected_laplace"
EXTENDED_LAPLACE = "extended_laplace"
CORRELATED_GAUSSIAN = "correlated_gaussian"
COMPOSED = "composed"

MECHANISMS = (
    PROJECTED_GAUSSIAN,
    EXTENDED_GAUSSIAN,
    PROJECTED_LAPLACE,
    EXTENDED_LAPLACE,
    CORRELATED_GAUSSIAN,
)
ADDITIVE_MECHANISMS = frozenset(MECHANISMS)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be finite and > 0, got {self.epsilon}")
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must be in [0, 1), got {self.delta}")

    @property
    def c_eps_delta(self) -> float | None:
        """Gaussian noise multiplier; ``None`` for pure budgets."""
        if self.delta == 0.0:
            return None
        return (1.0 + math.sqrt(1.0 + math.log(1.0 / self.delta))) / self.epsilon


def gaussian_calibration(budget: PrivacyBudget, delta_2: float) -> float:
    """Per-coordinate standard deviation ``delta_2 * c_{eps,delta}``."""
    if budget.delta == 0.0:
        raise DeltaZero("Gaussian calibration needs delta > 0; use a Laplace mechanism")
    if delta_2 < 0:
        raise ValueError("sensitivity must be nonnegative")
    return float(delta_2) * budget.c_eps_delta


def laplace_scale(budget: PrivacyBudget, delta_1: float) -> float:
    if delta_1 < 0:
        raise ValueError("sensitivity must be nonnegative")
    return float(delta_1) / budget.epsilon


@dataclass(frozen=True, eq=False)
class NoisePlan:
    """Data-independent recipe for one mechanism's noise.

    ``mode == "project"``: draw n iid coordinates, project onto the null space.
    ``mode == "basis"``: draw ``basis.shape[1]`` coordinates and map them
    through ``basis`` (n x m, orthonormal columns inside the null space).
    ``scales`` are per-draw standard deviations (Gaussian) or Laplace scales.
    """

    mechanism_id: str
    distribution: str
    scales: np.ndarray
    mode: str
    sys: InvariantSystem
    basis: np.ndarray | None
    analytic_mse: float
    sensitivity: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def draw_dim(self) -> int:
        return self.scales.size

    def draws(self, source: NoiseSource, reps: int | None = None) -> np.ndarray:
        shape = (self.draw_dim,) if reps is None else (reps, self.draw_dim)
        if self.distribution == "gaussian":
            z = source.standard_normal(shape)
        else:
            z = source.standard_laplace(shape)
        return z * self.scales

    def transform(self, z: np.ndarray) -> np.ndarray:
        if self.mode == "project":
            return project_to_null(self.sys, z)
        return z @ self.basis.T

    def sample(self, source: NoiseSource, reps: int | None = None) -> np.ndarray:
        """Noise vector (or ``reps`` x n stack) for this plan."""
        return self.transform(self.draws(source, reps))

    def draw_variances(self) -> np.ndarray:
        unit = 1.0 if self.distribution == "gaussian" else 2.0
        return unit * self.scales**2

    def covariance(self) -> np.ndarray:
        var = self.draw_variances()
        if self.mode == "project":
            # scales are uniform for projected plans
            return float(var[0]) * np.asarray(self.sys.proj_null)
        return (self.basis * var) @ self.basis.T


@dataclass(frozen=True, eq=False)
class MechanismRelease:
    values: np.ndarray
    mechanism_id: str
    seed: int
    stream_id: int
    budget: PrivacyBudget
    invariant_digest: str
    analytic_mse: float | None
    invariant_targets: np.ndarray
    invariant: InvariantSystem = field(repr=False)
    components: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mechanism_id": self.mechanism_id,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "epsilon": self.budget.epsilon,
            "delta": self.budget.delta,
            "analytic_mse": self.analytic_mse,
            "values": [float(v) for v in self.values],
            "invariant_digest": self.invariant_digest,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def make_release(values, truth, sys, *, mechanism_id, seed, stream_id, budget, analytic_mse, components=()):
    """Validate a release against its invariant and wrap it."""
    values = np.asarray(values, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if values.shape != (sys.n,):
        raise DimensionMismatch(f"release has shape {values.shape}, invariant expects ({sys.n},)")
    if not np.all(np.isfinite(values)):
        raise InvariantViolation("release contains non-finite values")
    targets = sys.c_matrix @ truth
    dev = float(np.max(np.abs(sys.c_matrix @ values - targets)))
    tol = invariant_tolerance(sys, truth)
    if dev > tol:
        raise InvariantViolation(f"invariant deviation {dev:.3e} exceeds {tol:.3e}")
    values.setflags(write=False)
    targets.setflags(write=False)
    return MechanismRelease(
        values=values,
        mechanism_id=mechanism_id,
        seed=int(seed),
        stream_id=int(stream_id),
        budget=budget,
        invariant_digest=sys.digest,
        analytic_mse=analytic_mse,
        invariant_targets=targets,
        invariant=sys,
        components=components,
    )


def _check_dims(query: LinearQuery, sys: InvariantSystem):
    if query.n != sys.n:
        raise DimensionMismatch(f"query outputs R^{query.n}, invariant acts on R^{sys.n}")


def plan_projected_gaussian(query, sys, budget, sensitivity=None) -> NoisePlan:
    _check_dims(query, sys)
    delta_2 = l_p_sensitivity(query, 2) if sensitivity is None else float(sensitivity)
    sigma = gaussian_calibration(budget, delta_2)
    return NoisePlan(
        PROJECTED_GAUSSIAN, "gaussian", np.full(sys.n, sigma), "project", sys, None,
        analytic_mse=sys.null_dim * sigma**2, sensitivity=delta_2,
    )


def plan_extended_gaussian(query, sys, budget, sensitivity=None) -> NoisePlan:
    """``sensitivity`` overrides the l2 sensitivity of the *projected* query."""
    _check_dims(query, sys)
    if sensitivity is None:
        delta_2 = l_p_sensitivity(projected_query(query, sys), 2)
    else:
        delta_2 = float(sensitivity)
    sigma = gaussian_calibration(budget, delta_2)
    return NoisePlan(
        EXTENDED_GAUSSIAN, "gaussian", np.full(sys.null_dim, sigma), "basis", sys,
        np.asarray(sys.q_null), analytic_mse=sys.null_dim * sigma**2, sensitivity=delta_2,
    )


def plan_projected_laplace(query, sys, budget, sensitivity=None) -> NoisePlan:
    _check_dims(query, sys)
    delta_1 = l_p_sensitivity(query, 1) if sensitivity is None else float(sensitivity)
    b = laplace_scale(budget, delta_1)
    return NoisePlan(
        PROJECTED_LAPLACE, "laplace", np.full(sys.n, b), "project", sys, None,
        analytic_mse=2.0 * b**2 * sys.null_dim, sensitivity=delta_1,
    )


def plan_extended_laplace(query, sys, budget, sensitivity=None) -> NoisePlan:
    """``sensitivity`` overrides the l1 sensitivity of the *projected* query."""
    _check_dims(query, sys)
    if sensitivity is None:
        delta_1 = l_p_sensitivity(projected_query(query, sys), 1)
    else:
        delta_1 = float(sensitivity)
    b = laplace_scale(budget, delta_1)
    return NoisePlan(
        EXTENDED_LAPLACE, "laplace", np.full(sys.null_dim, b), "basis", sys,
        np.asarray(sys.q_null), analytic_mse=2.0 * b**2 * sys.null_dim, sensitivity=delta_1,
    )


def make_plan(mechanism_id, query, sys, budget, sensitivity=None, **options) -> NoisePlan:
    """Build the noise plan for any of the additive mechanisms."""
    if mechanism_id == PROJECTED_GAUSSIAN:
        return plan_projected_gaussian(query, sys, budget, sensitivity)
    if mechanism_id == EXTENDED_GAUSSIAN:
        return plan_extended_gaussian(query, sys, budget, sensitivity)
    if mechanism_id == PROJECTED_LAPLACE:
        return plan_projected_laplace(query, sys, budget, sensitivity)
    if mechanism_id == EXTENDED_LAPLACE:
        return plan_extended_laplace(query, sys, budget, sensitivity)
    if mechanism_id == CORRELATED_GAUSSIAN:
        from .correlated import plan_subspace_correlated

        return plan_subspace_correlated(query, sys, budget, **options)
    raise ValueError(f"unknown mechanism {mechanism_id!r}")


def release_with_plan(plan: NoisePlan, truth, noise: NoiseSource, budget) -> MechanismRelease:
    truth = np.asarray(truth, dtype=float)
    values = truth + plan.sample(noise)
    return make_release(
        values, truth, plan.sys,
        mechanism_id=plan.mechanism_id, seed=noise.seed, stream_id=noise.stream_id,
        budget=budget, analytic_mse=plan.analytic_mse,
    )


def _release(mechanism_id, query, h, sys, budget, noise, sensitivity):
    plan = make_plan(mechanism_id, query, sys, budget, sensitivity)
    return release_with_plan(plan, evaluate(query, h), noise, budget)


def projected_gaussian(query: LinearQuery, h: Histogram, sys: InvariantSystem,
                       budget: PrivacyBudget, noise: NoiseSource, sensitivity=None) -> MechanismRelease:
    """``A h + Pi_N e`` with ``e ~ N(0, (c * Delta_2(A))^2 I_n)``."""
    return _release(PROJECTED_GAUSSIAN, query, h, sys, budget, noise, sensitivity)


def extended_gaussian(query, h, sys, budget, noise, sensitivity=None) -> MechanismRelease:
    """``A h + Q_N e_N`` calibrated to ``Delta_2(Q_N^T A)``."""
    return _release(EXTENDED_GAUSSIAN, query, h, sys, budget, noise, sensitivity)


def projected_laplace(query, h, sys, budget, noise, sensitivity=None) -> MechanismRelease:
    """``A h + Pi_N e`` with iid ``Lap(Delta_1(A) / eps)`` noise. Ignores delta."""
    return _release(PROJECTED_LAPLACE, query, h, sys, budget, noise, sensitivity)


def extended_laplace(query, h, sys, budget, noise, sensitivity=None) -> MechanismRelease:
    return _release(EXTENDED_LAPLACE, query, h, sys, budget, noise, sensitivity)


def release(mechanism_id, query, h, sys, budget, noise, sensitivity=None, **options) -> MechanismRelease:
    """Dispatch to any mechanism by id."""
    plan = make_plan(mechanism_id, query, sys, budget, sensitivity, **options)
    return release_with_plan(plan, evaluate(query, h), noise, budget)


def compose(releases) -> MechanismRelease:
    """Stack pure-DP releases; budgets add and invariants stack block-diagonally."""
    releases = list(releases)
    if not releases:
        raise ValueError("nothing to compose")
    if any(r.budget.delta != 0.0 for r in releases):
        raise MixedDelta("composition is only defined here for delta == 0 releases")
    if len(releases) == 1:
        return releases[0]

    rows = sum(r.invariant.c_matrix.shape[0] for r in releases)
    cols = sum(r.invariant.n for r in releases)
    c = np.zeros((rows, cols))
    i = j = 0
    for r in releases:
        ci = r.invariant.c_matrix
        c[i:i + ci.shape[0], j:j + ci.shape[1]] = ci
        i += ci.shape[0]
        j += ci.shape[1]
    sys = build_invariant_system(c)
    values = np.concatenate([r.values for r in releases])
    targets = np.concatenate([r.invariant_targets for r in releases])

    dev = float(np.max(np.abs(c @ values - targets)))
    tol = 1e-8 * (1.0 + float(np.max(np.abs(c))) * float(np.max(np.abs(values))))
    if dev > tol:
        raise InvariantViolation(f"composed invariant deviation {dev:.3e} exceeds {tol:.3e}")

    mses = [r.analytic_mse for r in releases]
    budget = PrivacyBudget(sum(r.budget.epsilon for r in releases), 0.0)
    values.setflags(write=False)
    targets.setflags(write=False)
    return MechanismRelease(
        values=values,
        mechanism_id=COMPOSED,
        seed=releases[0].seed,
        stream_id=releases[0].stream_id,
        budget=budget,
        invariant_digest=sys.digest,
        analytic_mse=None if any(m is None for m in mses) else float(sum(mses)),
        invariant_targets=targets,
        invariant=sys,
        components=tuple((r.mechanism_id, r.seed, r.stream_id) for r in releases),
    )
