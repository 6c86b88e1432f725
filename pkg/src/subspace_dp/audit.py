"""Statistical checks on mechanism output.

These are empirical audits, not proofs: Monte-Carlo moment checks against
the closed-form mean and covariance, an OLS test for error trends against
(log) true size, and a binned density-ratio probe along a one-dimensional
null space. Audits report pass/fail flags; they never raise on a statistical
failure. Pass thresholds are arguments and are echoed into the report.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateRegressor, InsufficientMass
from .invariants import InvariantSystem, build_invariant_system, invariant_tolerance
from .mechanisms import PrivacyBudget, make_plan
from .noise import NoiseSource
from .query import LinearQuery, evaluate, l_p_sensitivity

DEFAULT_CHUNK = 10_000
COVARIANCE_MAX_N = 512


@dataclass(frozen=True, eq=False)
class MechanismConfig:
    mechanism_id: str
    query: LinearQuery
    h: np.ndarray
    sys: InvariantSystem
    budget: PrivacyBudget
    sensitivity: float | None = None
    options: dict = field(default_factory=dict)

    def plan(self):
        return make_plan(self.mechanism_id, self.query, self.sys, self.budget, self.sensitivity, **self.options)


@dataclass
class Thresholds:
    guard_sigmas: float = 5.0
    mse_rtol: float = 0.05
    ks_min_p: float = 1e-3
    invariant_rtol: float = 1e-8


@dataclass
class AuditReport:
    mechanism_id: str
    repetitions: int
    seed: int
    mean_error: list
    mean_error_ci: list
    mean_pass: bool
    empirical_mse: float
    analytic_mse: float
    mse_ratio: float
    mse_pass: bool
    covariance_max_deviation: float | None
    covariance_tolerance: float | None
    covariance_pass: bool | None
    invariant_max_deviation: float
    invariant_tolerance: float
    invariant_pass: bool
    ks_pvalues: list | None
    ks_pass: bool | None
    sensitivity_conventions: dict
    thresholds: dict
    bias: dict | None = None
    ratio_probe: dict | None = None
    runs: list | None = None

    @property
    def passed(self) -> bool:
        flags = [self.mean_pass, self.mse_pass, self.invariant_pass, self.covariance_pass, self.ks_pass]
        return all(f for f in flags if f is not None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def runs_csv(self) -> str:
        if self.runs is None:
            raise ValueError("report was produced without keep_runs")
        n = len(self.runs[0]) if self.runs else 0
        lines = ["run," + ",".join(f"e{i}" for i in range(n))]
        for r, row in enumerate(self.runs):
            lines.append(f"{r}," + ",".join(format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"


def _thread_cap() -> int:
    raw = os.environ.get("SUBSPACE_DP_THREADS")
    return max(1, int(raw)) if raw else (os.cpu_count() or 1)


def _ks_directions(sys: InvariantSystem, count: int = 3) -> np.ndarray:
    """Normalised null-space projections of the first canonical axes."""
    dirs = []
    for i in range(sys.n):
        e = np.zeros(sys.n)
        e[i] = 1.0
        v = e - sys.q_row @ (sys.q_row.T @ e)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            dirs.append(v / norm)
        if len(dirs) == count:
            break
    return np.array(dirs).reshape(-1, sys.n)


def _chunk_stats(plan, truth, seed, stream, reps, want_cov, directions, keep):
    errs = (truth + plan.sample(NoiseSource(seed, stream), reps)) - truth
    out = {
        "sum": errs.sum(axis=0),
        "sumsq": (errs**2).sum(axis=0),
        "sqnorm": float((errs**2).sum()),
        "inv": float(np.max(np.abs(errs @ plan.sys.c_matrix.T))),
        "proj": errs @ directions.T,
    }
    if want_cov:
        out["outer"] = errs.T @ errs
    if keep:
        out["errs"] = errs
    return out


def sensitivity_conventions(query: LinearQuery) -> dict:
    """Bounded (row replacement) sensitivities next to the radius of K = A B_1."""
    return {
        "bounded_l1": l_p_sensitivity(query, 1),
        "bounded_l2": l_p_sensitivity(query, 2),
        "polytope_l2_radius": float(np.max(np.linalg.norm(query.a_matrix, axis=0))),
    }


def run_moment_audit(config: MechanismConfig, repetitions: int, seed: int,
                     thresholds: Thresholds | None = None, chunk: int = DEFAULT_CHUNK,
                     keep_runs: bool = False) -> AuditReport:
    """Monte-Carlo check of mean, MSE, covariance and invariants.

    Repetitions are drawn in chunks of ``chunk``; chunk ``i`` uses noise
    stream ``i`` of ``seed``, so the report is reproducible regardless of
    thread scheduling.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    th = thresholds or Thresholds()
    plan = config.plan()
    truth = evaluate(config.query, config.h)
    n = plan.n
    want_cov = n <= COVARIANCE_MAX_N
    gaussian = plan.distribution == "gaussian"
    directions = _ks_directions(config.sys) if gaussian else np.zeros((0, n))

    sizes = [min(chunk, repetitions - s) for s in range(0, repetitions, chunk)]
    with ThreadPoolExecutor(max_workers=min(len(sizes), _thread_cap())) as pool:
        parts = list(pool.map(
            lambda a: _chunk_stats(plan, truth, seed, a[0], a[1], want_cov, directions, keep_runs),
            enumerate(sizes),
        ))

    R = repetitions
    mean = np.sum([p["sum"] for p in parts], axis=0) / R
    meansq = np.sum([p["sumsq"] for p in parts], axis=0) / R
    var = np.maximum(meansq - mean**2, 0.0) * (R / max(R - 1, 1))
    se = np.sqrt(var / R)
    half = th.guard_sigmas * se
    # zero-variance coordinates must be exactly unbiased
    mean_pass = bool(np.all((np.abs(mean) < half) | ((se == 0) & (mean == 0))))
    emp_mse = float(np.sum([p["sqnorm"] for p in parts])) / R
    ana = float(plan.analytic_mse)
    if ana == 0.0:
        ratio = 1.0 if emp_mse == 0.0 else math.inf
    else:
        ratio = emp_mse / ana
    mse_pass = abs(ratio - 1.0) <= th.mse_rtol

    cov_dev = cov_tol = cov_pass = None
    if want_cov:
        emp_cov = np.sum([p["outer"] for p in parts], axis=0) / R
        target = plan.covariance()
        cov_dev = float(np.max(np.abs(emp_cov - target)))
        fourth = 2.0 if gaussian else 5.0
        cov_tol = float(th.guard_sigmas * np.max(np.diag(target)) * math.sqrt(fourth / R))
        cov_pass = cov_dev <= cov_tol

    inv_dev = max(p["inv"] for p in parts)
    inv_tol = invariant_tolerance(config.sys, truth, th.invariant_rtol)

    ks_p = ks_pass = None
    if gaussian and directions.shape[0] and ana > 0:
        proj = np.vstack([p["proj"] for p in parts])
        cov = plan.covariance() if want_cov else None
        ks_p = []
        for j, d in enumerate(directions):
            sd = math.sqrt(float(d @ cov @ d)) if cov is not None else float(np.std(proj[:, j]))
            ks_p.append(float(stats.kstest(proj[:, j] / sd, "norm").pvalue))
        ks_pass = min(ks_p) > th.ks_min_p

    runs = None
    if keep_runs:
        runs = np.vstack([p["errs"] for p in parts]).tolist()

    return AuditReport(
        mechanism_id=config.mechanism_id,
        repetitions=R,
        seed=int(seed),
        mean_error=mean.tolist(),
        mean_error_ci=np.column_stack([mean - half, mean + half]).tolist(),
        mean_pass=mean_pass,
        empirical_mse=emp_mse,
        analytic_mse=ana,
        mse_ratio=ratio,
        mse_pass=bool(mse_pass),
        covariance_max_deviation=cov_dev,
        covariance_tolerance=cov_tol,
        covariance_pass=None if cov_pass is None else bool(cov_pass),
        invariant_max_deviation=inv_dev,
        invariant_tolerance=inv_tol,
        invariant_pass=bool(inv_dev <= inv_tol),
        ks_pvalues=ks_p,
        ks_pass=None if ks_pass is None else bool(ks_pass),
        sensitivity_conventions=sensitivity_conventions(config.query),
        thresholds=asdict(th),
        runs=runs,
    )


@dataclass(frozen=True)
class BiasFit:
    slope: float
    intercept: float
    p_value: float
    stderr: float
    ci_low: float
    ci_high: float
    alpha: float
    n_units: int
    n_points: int

    @property
    def significant_negative(self) -> bool:
        return self.slope < 0 and self.p_value < self.alpha


def bias_regression(true_values, errors, alpha: float = 0.01) -> BiasFit:
    """OLS of error on log(true value), pooled over runs.

    ``errors`` is either one error per unit or a (runs, units) array.
    """
    t = np.asarray(true_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if e.ndim == 1:
        e = e[None, :]
    if e.shape[1] != t.size:
        raise ValueError("one error per unit required")
    if t.size < 5:
        raise ValueError("at least 5 units are required")
    if np.any(t <= 0):
        raise ValueError("true values must be positive to take logs")
    x = np.log(t)
    if np.ptp(x) == 0.0:
        raise DegenerateRegressor("all true values are equal")
    xs = np.tile(x, e.shape[0])
    ys = e.ravel()
    dof = ys.size - 2
    if np.all(ys == ys[0]):
        slope, intercept, p, se = 0.0, float(ys[0]), 1.0, 0.0
    else:
        fit = stats.linregress(xs, ys)
        slope, intercept, p, se = float(fit.slope), float(fit.intercept), float(fit.pvalue), float(fit.stderr)
        if not math.isfinite(p):
            p = 1.0 if slope == 0.0 else 0.0
    q = float(stats.t.ppf(1.0 - alpha / 2.0, dof)) if dof > 0 else math.inf
    return BiasFit(slope, intercept, p, se, slope - q * se, slope + q * se, alpha, int(t.size), int(ys.size))


@dataclass(frozen=True)
class BatchSummary:
    regressions: int
    negative_slopes: int
    significant_negative: int
    alpha: float
    nominal_rate: float
    binomial_p: float


def regression_batch(fits, alpha: float = 0.01) -> BatchSummary:
    """Compare the count of significant negative slopes with chance.

    Under no trend a two-sided test at ``alpha`` flags a negative slope with
    probability ``alpha / 2``; the binomial p-value is one-sided (excess).
    """
    fits = list(fits)
    k = sum(f.slope < 0 and f.p_value < alpha for f in fits)
    neg = sum(f.slope < 0 for f in fits)
    rate = alpha / 2.0
    p = float(stats.binomtest(k, len(fits), rate, alternative="greater").pvalue)
    return BatchSummary(len(fits), neg, k, alpha, rate, p)


@dataclass(frozen=True)
class RatioProbeResult:
    max_log_ratio: float
    epsilon: float
    worst_margin: float
    bins_used: int
    passed: bool
    edges: list
    counts: list

    def to_dict(self):
        return asdict(self)


def two_cell_probe_setup(total: float = 10.0):
    """The canonical probe: identity query on 2 cells with their sum fixed.

    Returns ``(query, sys, h, h_neighbour)`` with the neighbour obtained by
    moving one record from cell 1 to cell 0.
    """
    query = LinearQuery.identity(2)
    sys = build_invariant_system([[1.0, 1.0]])
    h = np.array([total / 2, total / 2])
    return query, sys, h, h + np.array([1.0, -1.0])


def ratio_probe(mechanism_id: str, budget: PrivacyBudget, repetitions: int, seed: int,
                query: LinearQuery | None = None, sys: InvariantSystem | None = None,
                h=None, h_neighbour=None, bins: int = 60, central_mass: float = 0.999,
                min_count: int = 500, slack_sigmas: float = 3.0) -> RatioProbeResult:
    """Binned empirical privacy-loss probe along a 1-D null space.

    Samples ``repetitions`` releases for each of two neighbouring histograms,
    projects them onto the null-space direction and compares bin counts.
    A bin passes if ``|log(k1/k2)| <= epsilon + log(1 + slack_sigmas * rel_sd)``
    where ``rel_sd`` is the binomial relative standard deviation of the ratio.
    Only bins with at least ``min_count`` hits on both sides are used.
    """
    if query is None:
        query, sys, h, h_neighbour = two_cell_probe_setup()
    if sys.null_dim != 1:
        raise ValueError("ratio probe needs a one-dimensional null space")
    plan = make_plan(mechanism_id, query, sys, budget)
    direction = np.asarray(sys.q_null)[:, 0]
    a = (evaluate(query, h) + plan.sample(NoiseSource(seed, 0), repetitions)) @ direction
    b = (evaluate(query, h_neighbour) + plan.sample(NoiseSource(seed, 1), repetitions)) @ direction

    lo_q, hi_q = (1.0 - central_mass) / 2.0, (1.0 + central_mass) / 2.0
    lo, hi = np.quantile(np.concatenate([a, b]), [lo_q, hi_q])
    edges = np.linspace(lo, hi, bins + 1)
    ka, _ = np.histogram(a, edges)
    kb, _ = np.histogram(b, edges)

    ok = (ka >= min_count) & (kb >= min_count)
    if not ok.any():
        raise InsufficientMass(f"no bin reached {min_count} hits on both sides")
    k1, k2 = ka[ok].astype(float), kb[ok].astype(float)
    R = float(repetitions)
    log_ratio = np.abs(np.log(k1 / k2))
    rel_sd = np.sqrt((1 - k1 / R) / k1 + (1 - k2 / R) / k2)
    bound = budget.epsilon + np.log1p(slack_sigmas * rel_sd)
    margin = bound - log_ratio
    return RatioProbeResult(
        max_log_ratio=float(log_ratio.max()),
        epsilon=budget.epsilon,
        worst_margin=float(margin.min()),
        bins_used=int(ok.sum()),
        passed=bool(np.all(margin >= 0)),
        edges=edges.tolist(),
        counts=[ka.tolist(), kb.tolist()],
    )
