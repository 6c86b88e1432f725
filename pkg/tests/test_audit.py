import json
import math

import numpy as np
import pytest

from subspace_dp import (
    DegenerateRegressor,
    InsufficientMass,
    LinearQuery,
    PrivacyBudget,
    build_invariant_system,
)
from subspace_dp.audit import (
    MechanismConfig,
    Thresholds,
    bias_regression,
    ratio_probe,
    regression_batch,
    run_moment_audit,
    two_cell_probe_setup,
)
from subspace_dp.mechanisms import make_plan
from subspace_dp.noise import NoiseSource
from subspace_dp.synthetic import synthetic_state

E3 = math.exp(-3)


def toy_config(mid="projected_gaussian", budget=PrivacyBudget(1, E3), sensitivity=None):
    sys = build_invariant_system(np.ones((1, 4)))
    return MechanismConfig(mid, LinearQuery.identity(4), np.array([1.0, 2, 3, 4]), sys, budget, sensitivity)


def test_toy_moment_audit_passes():
    rep = run_moment_audit(toy_config(sensitivity=1.0), 100_000, 1)
    assert 0.95 <= rep.mse_ratio <= 1.05
    assert rep.analytic_mse == pytest.approx(27.0)
    assert rep.passed
    assert rep.ks_pass and len(rep.ks_pvalues) == 3


def test_zero_noise_audit():
    rep = run_moment_audit(toy_config("projected_laplace", PrivacyBudget(1.0), sensitivity=0.0), 1000, 1)
    assert rep.empirical_mse == 0.0
    assert rep.covariance_max_deviation == 0.0
    assert rep.invariant_max_deviation == 0.0
    assert rep.passed


def test_audit_reproducible_bytes():
    a = run_moment_audit(toy_config(), 5000, 3, chunk=1000).to_json()
    b = run_moment_audit(toy_config(), 5000, 3, chunk=1000).to_json()
    assert a == b


def test_thresholds_recorded():
    th = Thresholds(guard_sigmas=6.0)
    rep = run_moment_audit(toy_config(), 2000, 3, thresholds=th)
    assert json.loads(rep.to_json())["thresholds"]["guard_sigmas"] == 6.0


def test_sensitivity_conventions_surface_both():
    rep = run_moment_audit(toy_config(), 1000, 3)
    conv = rep.sensitivity_conventions
    assert conv["bounded_l2"] == pytest.approx(math.sqrt(2))
    assert conv["polytope_l2_radius"] == pytest.approx(1.0)


def test_census_runs_recorded():
    pops = synthetic_state(102, 0)
    sys = build_invariant_system(np.ones((1, 102)))
    cfg = MechanismConfig("projected_laplace", LinearQuery.identity(102), pops, sys, PrivacyBudget(0.192))
    rep = run_moment_audit(cfg, 10, 7, keep_runs=True)
    assert np.asarray(rep.runs).shape == (10, 102)
    lines = rep.runs_csv().strip().splitlines()
    assert len(lines) == 11


def test_bias_regression_zero_errors():
    fit = bias_regression(np.arange(1.0, 11.0), np.zeros(10))
    assert fit.slope == 0.0 and fit.p_value == 1.0


def test_bias_regression_planted_signal():
    rng = np.random.default_rng(0)
    pops = synthetic_state(200, 1)
    errs = -0.1 * np.log(pops) + rng.normal(0, 0.05, (10, pops.size))
    fit = bias_regression(pops, errs)
    assert fit.slope == pytest.approx(-0.1, abs=0.01)
    assert fit.significant_negative


def test_bias_regression_guards():
    with pytest.raises(DegenerateRegressor):
        bias_regression(np.full(6, 7.0), np.ones(6))
    with pytest.raises(ValueError):
        bias_regression(np.arange(1.0, 5.0), np.ones(4))


def test_regression_batch_null_and_biased():
    fits = [bias_regression(synthetic_state(30, s), np.random.default_rng(s).normal(size=(3, 30)))
            for s in range(48)]
    assert regression_batch(fits).binomial_p > 0.01
    biased = [bias_regression(synthetic_state(30, s), -np.log(synthetic_state(30, s)) +
                              np.random.default_rng(s).normal(size=(3, 30))) for s in range(48)]
    summary = regression_batch(biased)
    assert summary.significant_negative == 48
    assert summary.binomial_p < 1e-10


def test_ratio_probe_laplace():
    res = ratio_probe("projected_laplace", PrivacyBudget(1.0), 200_000, 4)
    assert res.passed
    assert res.bins_used > 10


def test_ratio_probe_identical_databases():
    query, sys, h, _ = two_cell_probe_setup()
    res = ratio_probe("projected_laplace", PrivacyBudget(1.0), 100_000, 4, query, sys, h, h)
    assert res.max_log_ratio < 0.1


def test_ratio_probe_gaussian_central():
    res = ratio_probe("projected_gaussian", PrivacyBudget(1.0, E3), 200_000, 4, central_mass=0.99)
    assert res.passed


def test_ratio_probe_insufficient_mass():
    with pytest.raises(InsufficientMass):
        ratio_probe("projected_laplace", PrivacyBudget(1.0), 1000, 4, min_count=500)
