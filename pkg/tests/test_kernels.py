import numpy as np
import pytest

from subspace_dp import kernels
from subspace_dp.correlated import _fresh_state

from conftest import brute_sensitivity

BACKENDS = sorted(kernels.available_backends())


def test_backend_reported():
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("p", [1, 2])
def test_pairwise_matches_brute(backend, p, rng):
    a = rng.normal(size=(5, 13))
    got = kernels.pairwise_max_distance(a.T, p, backend=backend)
    assert got == pytest.approx(brute_sensitivity(a, p), rel=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_pairwise_degenerate(backend):
    assert kernels.pairwise_max_distance(np.ones((1, 4)), 2, backend=backend) == 0.0
    assert kernels.pairwise_max_distance(np.ones((3, 4)), 1, backend=backend) == 0.0


def test_pairwise_read_only_input(rng):
    a = rng.normal(size=(6, 3))
    a.setflags(write=False)
    for b in BACKENDS:
        assert kernels.pairwise_max_distance(a, 2, backend=b) > 0


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
def test_sweep_parity(rng):
    pts = rng.normal(size=(6, 15))
    u0 = np.full(15, 1 / 15)
    out = {}
    for b in BACKENDS:
        u = u0.copy()
        xinv, m = _fresh_state(pts, u)
        steps, conv = kernels.khachiyan_sweep(pts, u, xinv, m, 1e-7, 200, backend=b)
        out[b] = (steps, conv, u)
    (s1, c1, u1), (s2, c2, u2) = out.values()
    assert s1 == s2 and c1 == c2
    np.testing.assert_allclose(u1, u2, rtol=1e-9, atol=1e-12)


def test_env_forces_python_backend():
    import os
    import subprocess
    import sys

    env = dict(os.environ, SUBSPACE_DP_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import subspace_dp; print(subspace_dp.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
