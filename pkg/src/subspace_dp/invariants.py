"""Linear-equality invariant systems and the null-space / row-space split.

An invariant ``C y = C A(x)`` fixes the component of a release lying in the
row space of ``C``; noise may only live in the null space. This module builds
the orthonormal bases and projectors for that decomposition.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    FullRankConstraint,
    NonFiniteInput,
    SingularGram,
    TrivialConstraint,
)

log = logging.getLogger(__name__)

DEFAULT_RANK_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class InvariantSystem:
    """A constraint matrix with its derived orthogonal decomposition.

    ``q_row`` (n x n_c) is always materialised. ``q_null``, ``proj_null`` and
    ``proj_row`` are computed on first access, since for large ``n`` they are
    dense n x n objects that many workflows never need.
    """

    c_matrix: np.ndarray
    rank: int
    reduced_c: np.ndarray
    q_row: np.ndarray
    singular_values: np.ndarray
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE
    notes: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.c_matrix.shape[1]

    @property
    def n_c(self) -> int:
        return self.rank

    @property
    def null_dim(self) -> int:
        return self.n - self.rank

    @cached_property
    def q_null(self) -> np.ndarray:
        # Right singular vectors for the zero singular values of C.
        _, _, vt = np.linalg.svd(self.c_matrix, full_matrices=True)
        q = vt[self.rank:].T.copy()
        q.setflags(write=False)
        return q

    @cached_property
    def proj_null(self) -> np.ndarray:
        q = self.q_null
        p = q @ q.T
        p.setflags(write=False)
        return p

    @cached_property
    def proj_row(self) -> np.ndarray:
        p = np.eye(self.n) - self.proj_null
        p.setflags(write=False)
        return p

    def null_diagonal(self) -> np.ndarray:
        """diag(Pi_N) without forming the projector."""
        return 1.0 - np.einsum("ij,ij->i", self.q_row, self.q_row)

    @cached_property
    def digest(self) -> str:
        c = np.ascontiguousarray(self.c_matrix, dtype="<f8")
        h = hashlib.sha256()
        h.update(np.asarray(c.shape, dtype="<i8").tobytes())
        h.update(c.tobytes())
        return h.hexdigest()

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "n_c": self.n_c,
                "c_rows": self.c_matrix.tolist(),
                "q_null": self.q_null.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str, rank_tolerance: float = DEFAULT_RANK_TOLERANCE):
        doc = json.loads(text)
        sys = build_invariant_system(np.asarray(doc["c_rows"], dtype=float), rank_tolerance)
        if sys.n != doc["n"] or sys.n_c != doc["n_c"]:
            raise DimensionMismatch("stored dimensions disagree with the constraint rows")
        return sys


def build_invariant_system(c_matrix, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> InvariantSystem:
    """Factor a raw constraint matrix into an :class:`InvariantSystem`.

    Redundant rows are accepted; the numerical rank is taken from the
    singular values above ``rank_tolerance`` times the largest one.
    """
    c = np.array(c_matrix, dtype=float, ndmin=2)
    if c.ndim != 2 or c.shape[1] < 1 or c.shape[0] < 1:
        raise DimensionMismatch(f"constraint matrix must be 2-D and non-empty, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NonFiniteInput("constraint matrix contains NaN or Inf")
    n = c.shape[1]

    _, s, vt = np.linalg.svd(c, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise TrivialConstraint("constraint matrix has rank 0")
    rank = int(np.count_nonzero(s > rank_tolerance * s[0]))
    if rank >= n:
        raise FullRankConstraint(f"constraint rank {rank} equals n={n}; no null space remains")

    q_row = vt[:rank].T.copy()

    # Independent subset of the original rows, chosen by pivoted QR on C^T.
    _, _, piv = scipy.linalg.qr(c.T, mode="economic", pivoting=True)
    keep = np.sort(piv[:rank])
    reduced = c[keep].copy()

    notes = ()
    if rank < c.shape[0]:
        msg = f"dropped {c.shape[0] - rank} redundant constraint rows (raw {c.shape[0]}, rank {rank})"
        log.info(msg)
        notes = (msg,)

    for arr in (c, q_row, reduced, s):
        arr.setflags(write=False)
    return InvariantSystem(
        c_matrix=c,
        rank=rank,
        reduced_c=reduced,
        q_row=q_row,
        singular_values=s,
        rank_tolerance=rank_tolerance,
        notes=notes,
    )


def project_to_null(sys: InvariantSystem, v) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the null space of ``C``.

    Accepts a vector of length n or a stack of vectors with trailing axis n.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != sys.n:
        raise DimensionMismatch(f"expected trailing dimension {sys.n}, got {v.shape[-1]}")
    q = sys.q_row
    return v - (v @ q) @ q.T


def project_to_row(sys: InvariantSystem, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != sys.n:
        raise DimensionMismatch(f"expected trailing dimension {sys.n}, got {v.shape[-1]}")
    q = sys.q_row
    return (v @ q) @ q.T


def gram_null_projector(sys: InvariantSystem) -> np.ndarray:
    """``I - C^T (C C^T)^{-1} C`` from the independent row subset."""
    c = sys.reduced_c
    gram = c @ c.T
    if np.linalg.cond(gram) > 1.0 / (np.finfo(float).eps * max(gram.shape[0], 1)):
        raise SingularGram("C C^T is numerically singular; check rank_tolerance")
    try:
        sol = scipy.linalg.solve(gram, c, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise SingularGram(str(exc)) from exc
    return np.eye(sys.n) - c.T @ sol


def verify_conditioning_identity(sys: InvariantSystem) -> float:
    """Max-entry gap between the SVD projector and the Gram-formula projector."""
    return float(np.max(np.abs(sys.proj_null - gram_null_projector(sys))))


def invariant_deviation(sys: InvariantSystem, values, target) -> float:
    """``max |C values - target|``."""
    return float(np.max(np.abs(sys.c_matrix @ np.asarray(values, dtype=float) - np.asarray(target))))


def invariant_tolerance(sys: InvariantSystem, truth, rtol: float = 1e-8) -> float:
    """Tolerance ``rtol * (1 + ||C||_max ||truth||_inf)`` for invariant checks."""
    truth = np.asarray(truth, dtype=float)
    scale = 1.0 + float(np.max(np.abs(sys.c_matrix))) * float(np.max(np.abs(truth), initial=0.0))
    return rtol * scale
