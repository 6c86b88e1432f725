import numpy as np
import pytest

from subspace_dp import (
    MissingAgent,
    NonAdditiveMechanism,
    PartitionInvalid,
    PrivacyBudget,
    build_invariant_system,
)
from subspace_dp.distributed import (
    Partition,
    aggregate,
    centralized_release,
    decode_report,
    reports_from_wire,
    run_distributed,
    verify_aggregate,
)

LAP = PrivacyBudget(1.0)
GAU = PrivacyBudget(1.0, 1e-5)


def test_partition_validation():
    with pytest.raises(PartitionInvalid):
        Partition(((0, 2), (3, 5)))
    with pytest.raises(PartitionInvalid):
        Partition(((0, 2), (2, 2)))
    with pytest.raises(PartitionInvalid):
        Partition.even(3, 4)
    p = Partition.even(10, 3)
    assert p.n == 10 and p.m == 3
    assert sum(b - a for a, b in p.bounds) == 10


def test_selector_matches_slicing():
    p = Partition.from_sizes([2, 3, 1])
    x = np.arange(6.0)
    assert np.array_equal(np.concatenate([p.selector(i) @ x for i in range(3)]), x)


def test_index_sets_normalised():
    p, perm = Partition.from_index_sets([[4, 0], [1, 3], [2, 5]], 6)
    assert perm.tolist() == [0, 4, 1, 3, 2, 5]
    assert p.bounds == ((0, 2), (2, 4), (4, 6))
    with pytest.raises(PartitionInvalid):
        Partition.from_index_sets([[0, 1], [1, 2]], 3)


def test_six_cells_three_agents():
    x = np.array([3.0, 1, 4, 1, 5, 9])
    sys = build_invariant_system(np.ones((1, 6)))
    run = run_distributed(x, sys, LAP, "projected_laplace", 42, Partition.even(6, 3))
    central = centralized_release(x, sys, LAP, "projected_laplace", 42)
    assert run.values.tobytes() == central.values.tobytes()
    assert run.digests_agree
    assert verify_aggregate(run.reports, sys, x).passed


@pytest.mark.parametrize("mid, budget", [
    ("projected_gaussian", GAU), ("extended_gaussian", GAU), ("projected_laplace", LAP),
    ("extended_laplace", LAP), ("correlated_gaussian", GAU),
])
@pytest.mark.parametrize("m", [1, 2, 7])
def test_bit_exact_all_mechanisms(mid, budget, m):
    rng = np.random.default_rng(m)
    x = rng.integers(0, 50, 7).astype(float)
    sys = build_invariant_system(rng.normal(size=(2, 7)))
    run = run_distributed(x, sys, budget, mid, 1234, Partition.even(7, m))
    central = centralized_release(x, sys, budget, mid, 1234)
    assert np.array_equal(run.values, central.values)
    assert run.values.tobytes() == central.values.tobytes()


def test_seed_fault_detected():
    x = np.arange(8.0)
    sys = build_invariant_system(np.ones((1, 8)))
    run = run_distributed(x, sys, LAP, "projected_laplace", 5, Partition.even(8, 4), seed_overrides={1: 6})
    audit = verify_aggregate(run.reports, sys, x)
    assert not audit.passed
    assert not audit.digests_agree
    assert audit.max_deviation > 1e-3
    assert not run.digests_agree


def test_zero_noise_passes_exactly():
    x = np.arange(5.0)
    sys = build_invariant_system(np.ones((1, 5)))
    run = run_distributed(x, sys, LAP, "projected_laplace", 1, Partition.even(5, 2), sensitivity=0.0)
    audit = verify_aggregate(run.reports, sys, x)
    assert audit.passed and audit.max_deviation == 0.0
    assert np.array_equal(run.values, x)


def test_wire_roundtrip():
    x = np.arange(6.0)
    sys = build_invariant_system(np.ones((1, 6)))
    part = Partition.even(6, 3)
    run = run_distributed(x, sys, LAP, "projected_laplace", 9, part)
    payloads = [r.to_bytes() for r in run.reports]
    assert len(payloads[0]) == 8 + 8 * 2 + 16
    agent_id, block, digest = decode_report(payloads[2])
    assert agent_id == 2 and digest == run.reports[2].seed_digest
    back = reports_from_wire(payloads, part)
    assert aggregate(back, part).tobytes() == run.values.tobytes()
    with pytest.raises(ValueError):
        decode_report(payloads[0][:-1])


def test_missing_agent():
    x = np.arange(6.0)
    sys = build_invariant_system(np.ones((1, 6)))
    part = Partition.even(6, 3)
    run = run_distributed(x, sys, LAP, "projected_laplace", 9, part)
    with pytest.raises(MissingAgent):
        aggregate(run.reports[:2], part)
    with pytest.raises(MissingAgent):
        verify_aggregate(run.reports[:2], sys, x, part)


def test_non_additive_rejected():
    sys = build_invariant_system(np.ones((1, 3)))
    with pytest.raises(NonAdditiveMechanism):
        run_distributed(np.ones(3), sys, LAP, "exponential", 1, Partition.even(3, 1))


def test_scheduling_independent(monkeypatch):
    x = np.arange(9.0)
    sys = build_invariant_system(np.ones((1, 9)))
    monkeypatch.setenv("SUBSPACE_DP_THREADS", "1")
    a = run_distributed(x, sys, LAP, "projected_laplace", 3, Partition.even(9, 9)).values
    monkeypatch.setenv("SUBSPACE_DP_THREADS", "8")
    b = run_distributed(x, sys, LAP, "projected_laplace", 3, Partition.even(9, 9)).values
    assert a.tobytes() == b.tobytes()
