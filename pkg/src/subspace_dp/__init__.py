"""Differential privacy for linear queries under exact linear-equality invariants."""

from .errors import *  # noqa: F401,F403
from .invariants import (
    InvariantSystem,
    build_invariant_system,
    invariant_deviation,
    invariant_tolerance,
    project_to_null,
    project_to_row,
)
from .query import (
    Histogram,
    LinearQuery,
    MarginalSpec,
    TableShape,
    build_marginal_invariants,
    evaluate,
    l_p_sensitivity,
    projected_query,
)
from .noise import NoiseSource
from .mechanisms import (
    MECHANISMS,
    MechanismRelease,
    PrivacyBudget,
    compose,
    extended_gaussian,
    extended_laplace,
    gaussian_calibration,
    laplace_scale,
    make_plan,
    projected_gaussian,
    projected_laplace,
    release,
)
from .correlated import (
    base_decomposition,
    correlated_gaussian,
    mvee_symmetric,
    subspace_correlated_gaussian,
)
from .distributed import Partition, aggregate, run_distributed, verify_aggregate
from .kernels import BACKEND

__version__ = "0.1.0"
