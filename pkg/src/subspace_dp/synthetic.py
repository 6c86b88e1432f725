"""Synthetic stand-ins for the census and campus tables.

Real demonstration files are external; these generators produce data of the
same shape so the mechanisms can be exercised end to end.
"""

import numpy as np

CAMPUS_DIMS = (14, 24, 20)
CAMPUS_AXES = ("group", "hour", "building")


def county_populations(n_counties: int, rng, low: float = 1e3, high: float = 1e7) -> np.ndarray:
    """Integer populations, log-uniform on [low, high]."""
    return np.round(np.exp(rng.uniform(np.log(low), np.log(high), n_counties)))


def synthetic_state(n_counties: int = 102, seed: int = 0) -> np.ndarray:
    return county_populations(n_counties, np.random.default_rng(seed))


def synthetic_census(n_states: int = 48, seed: int = 0, min_counties: int = 6,
                     max_counties: int = 254) -> list:
    """County populations for ``n_states`` states, each with at least 6 counties."""
    rng = np.random.default_rng(seed)
    sizes = rng.integers(min_counties, max_counties + 1, n_states)
    return [county_populations(int(k), rng) for k in sizes]


def census_rows(states) -> list:
    """``(state, county, population)`` rows for CSV output."""
    rows = []
    for s, pops in enumerate(states):
        for c, p in enumerate(pops):
            rows.append((f"S{s:02d}", f"C{c:03d}", int(p)))
    return rows


def campus_counts(seed: int = 0) -> np.ndarray:
    """Person-hours by (group, hour, building), shape 14 x 24 x 20."""
    rng = np.random.default_rng(seed)
    hours = np.arange(24)
    daily = 0.2 + np.exp(-0.5 * ((hours - 13) / 4.0) ** 2)
    group_size = rng.gamma(2.0, 30.0, CAMPUS_DIMS[0])
    affinity = rng.dirichlet(np.full(CAMPUS_DIMS[2], 0.7), CAMPUS_DIMS[0])
    lam = group_size[:, None, None] * daily[None, :, None] * affinity[:, None, :]
    return rng.poisson(lam).astype(float)


def campus_rows(counts) -> list:
    rows = []
    for idx in np.ndindex(counts.shape):
        g, h, b = idx
        rows.append((f"g{g:02d}", f"h{h:02d}", f"b{b:02d}", int(counts[idx])))
    return rows
