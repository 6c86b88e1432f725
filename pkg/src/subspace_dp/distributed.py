"""Distributed privatization with a shared seed.

Each agent holds a contiguous slice of the confidential vector (identity
query). Because every mechanism here is additive with data-independent
noise, an agent can regenerate the full noise vector from the common seed,
keep its own slice and add it to its shard. The concatenated output equals
the centralised release bit for bit.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, MissingAgent, NonAdditiveMechanism, PartitionInvalid
from .invariants import InvariantSystem, invariant_tolerance
from .mechanisms import ADDITIVE_MECHANISMS, PrivacyBudget, make_plan, make_release
from .noise import NoiseSource, array_digest, seed_digest
from .query import LinearQuery


@dataclass(frozen=True)
class Partition:
    """Contiguous, disjoint, non-empty index blocks covering ``range(n)``."""

    bounds: tuple

    def __post_init__(self):
        bounds = tuple((int(a), int(b)) for a, b in self.bounds)
        if not bounds:
            raise PartitionInvalid("partition needs at least one block")
        expected = 0
        for start, stop in bounds:
            if start != expected or stop <= start:
                raise PartitionInvalid(f"block ({start}, {stop}) breaks contiguity or is empty")
            expected = stop
        object.__setattr__(self, "bounds", bounds)

    @property
    def n(self) -> int:
        return self.bounds[-1][1]

    @property
    def m(self) -> int:
        return len(self.bounds)

    @classmethod
    def even(cls, n: int, m: int) -> "Partition":
        if not 1 <= m <= n:
            raise PartitionInvalid(f"cannot split {n} cells among {m} agents")
        edges = np.linspace(0, n, m + 1).round().astype(int)
        return cls(tuple(zip(edges[:-1], edges[1:])))

    @classmethod
    def from_sizes(cls, sizes) -> "Partition":
        edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        return cls(tuple(zip(edges[:-1], edges[1:])))

    @classmethod
    def from_index_sets(cls, sets, n: int) -> tuple["Partition", np.ndarray]:
        """Normalise arbitrary index sets to contiguous blocks.

        Returns the partition and the permutation ``perm`` such that
        ``x[perm]`` lays the sets out in order; apply ``perm`` to the data,
        the invariant columns and invert it on the output.
        """
        perm = np.concatenate([np.sort(np.asarray(s, dtype=int)) for s in sets])
        if perm.size != n or not np.array_equal(np.sort(perm), np.arange(n)):
            raise PartitionInvalid("index sets must be disjoint and cover 0..n-1")
        return cls.from_sizes([len(s) for s in sets]), perm

    def selector(self, agent: int) -> np.ndarray:
        """The |K| x n matrix picking this agent's coordinates."""
        start, stop = self.bounds[agent]
        g = np.zeros((stop - start, self.n))
        g[np.arange(stop - start), np.arange(start, stop)] = 1.0
        return g


@dataclass(frozen=True, eq=False)
class AgentReport:
    agent_id: int
    start: int
    stop: int
    y_block: np.ndarray
    seed_digest: int
    noise_digest: str

    def to_bytes(self) -> bytes:
        """Wire format: u64 count, count float64, u64 agent id, u64 seed digest (little-endian)."""
        block = np.ascontiguousarray(self.y_block, dtype="<f8")
        return (
            struct.pack("<Q", block.size)
            + block.tobytes()
            + struct.pack("<QQ", self.agent_id, self.seed_digest)
        )


def decode_report(payload: bytes) -> tuple[int, np.ndarray, int]:
    """Parse one wire-format report into ``(agent_id, y_block, seed_digest)``."""
    if len(payload) < 24:
        raise ValueError("report payload too short")
    (count,) = struct.unpack_from("<Q", payload, 0)
    expected = 8 + 8 * count + 16
    if len(payload) != expected:
        raise ValueError(f"report length {len(payload)} does not match declared count {count}")
    block = np.frombuffer(payload, dtype="<f8", count=count, offset=8).astype(float)
    agent_id, digest = struct.unpack_from("<QQ", payload, 8 + 8 * count)
    return agent_id, block, digest


def reports_from_wire(payloads, partition: Partition) -> list[AgentReport]:
    out = []
    for raw in payloads:
        agent_id, block, digest = decode_report(raw)
        if agent_id >= partition.m:
            raise PartitionInvalid(f"unknown agent {agent_id}")
        start, stop = partition.bounds[agent_id]
        if block.size != stop - start:
            raise PartitionInvalid(f"agent {agent_id} sent {block.size} values for a block of {stop - start}")
        out.append(AgentReport(agent_id, start, stop, block, digest, ""))
    return out


def _thread_cap() -> int:
    raw = os.environ.get("SUBSPACE_DP_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def _agent(agent_id, x_block, bounds, plan, seed, stream_id):
    # The agent only sees its own shard; noise comes from public inputs + seed.
    noise = plan.sample(NoiseSource(seed, stream_id))
    start, stop = bounds
    y = x_block + noise[start:stop]
    return AgentReport(agent_id, start, stop, y, seed_digest(seed), array_digest(noise))


@dataclass(frozen=True, eq=False)
class DistributedRun:
    values: np.ndarray
    reports: list
    digests_agree: bool


def run_distributed(x, sys: InvariantSystem, budget: PrivacyBudget, mechanism_id: str, seed: int,
                    partition: Partition, stream_id: int = 0, sensitivity=None,
                    seed_overrides: dict | None = None, **options) -> DistributedRun:
    """Simulate every agent and concatenate their outputs.

    ``seed_overrides`` maps agent id to a different seed; it exists for fault
    injection only.
    """
    if mechanism_id not in ADDITIVE_MECHANISMS:
        raise NonAdditiveMechanism(f"{mechanism_id!r} is not an additive mechanism")
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise DimensionMismatch(f"data has shape {x.shape}, invariant expects ({sys.n},)")
    if partition.n != sys.n:
        raise PartitionInvalid(f"partition covers {partition.n} cells, data has {sys.n}")
    plan = make_plan(mechanism_id, LinearQuery.identity(sys.n), sys, budget, sensitivity, **options)
    overrides = seed_overrides or {}

    jobs = []
    with ThreadPoolExecutor(max_workers=min(partition.m, _thread_cap())) as pool:
        for agent_id, (start, stop) in enumerate(partition.bounds):
            agent_seed = overrides.get(agent_id, seed)
            jobs.append(pool.submit(_agent, agent_id, x[start:stop].copy(), (start, stop),
                                    plan, agent_seed, stream_id))
        reports = [j.result() for j in jobs]

    values = aggregate(reports, partition)
    agree = len({r.seed_digest for r in reports}) == 1 and len({r.noise_digest for r in reports}) == 1
    return DistributedRun(values, reports, agree)


def aggregate(reports, partition: Partition) -> np.ndarray:
    """Concatenate agent blocks in partition order; every index written once."""
    by_id = {r.agent_id: r for r in reports}
    missing = [i for i in range(partition.m) if i not in by_id]
    if missing:
        raise MissingAgent(f"no report from agents {missing}")
    out = np.empty(partition.n)
    written = np.zeros(partition.n, dtype=int)
    for agent_id, (start, stop) in enumerate(partition.bounds):
        r = by_id[agent_id]
        if (r.start, r.stop) != (start, stop):
            raise PartitionInvalid(f"agent {agent_id} reported block ({r.start}, {r.stop})")
        out[start:stop] = r.y_block
        written[start:stop] += 1
    if not np.all(written == 1):
        raise PartitionInvalid("some output index was not written exactly once")
    return out


def centralized_release(x, sys, budget, mechanism_id, seed, stream_id=0, sensitivity=None, **options):
    plan = make_plan(mechanism_id, LinearQuery.identity(sys.n), sys, budget, sensitivity, **options)
    x = np.asarray(x, dtype=float)
    values = x + plan.sample(NoiseSource(seed, stream_id))
    return make_release(
        values, x, sys, mechanism_id=mechanism_id, seed=seed, stream_id=stream_id,
        budget=budget, analytic_mse=plan.analytic_mse,
    )


@dataclass(frozen=True)
class AggregateAudit:
    passed: bool
    max_deviation: float
    tolerance: float
    digests_agree: bool


def verify_aggregate(reports, sys: InvariantSystem, x, partition: Partition | None = None) -> AggregateAudit:
    """Recompute ``C y`` against ``C x`` for the assembled release."""
    if partition is None:
        partition = Partition(tuple(sorted((r.start, r.stop) for r in reports)))
        if len(reports) != partition.m:
            raise MissingAgent("duplicate or missing reports")
    y = aggregate(reports, partition)
    x = np.asarray(x, dtype=float)
    dev = float(np.max(np.abs(sys.c_matrix @ y - sys.c_matrix @ x)))
    tol = invariant_tolerance(sys, x)
    agree = len({r.seed_digest for r in reports}) == 1
    return AggregateAudit(dev <= tol, dev, tol, agree)

