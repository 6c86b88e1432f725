"""Pure-Python (numpy) versions of the compiled kernels in ``_ckernels.pyx``.

The two modules share signatures and semantics; results agree up to
floating-point summation order.
"""

import numpy as np

_BLOCK_ELEMENTS = 1 << 22


def pairwise_max_distance(points, p):
    """Largest l_p distance between any two rows of ``points``."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    d, n = points.shape
    best = 0.0
    block = max(1, _BLOCK_ELEMENTS // max(1, d * n))
    for start in range(0, d, block):
        chunk = points[start:start + block]
        diff = chunk[:, None, :] - points[None, :, :]
        if p == 1:
            dist = np.abs(diff).sum(axis=2)
        else:
            dist = np.einsum("ijk,ijk->ij", diff, diff)
        if dist.size:
            best = max(best, float(dist.max()))
    return float(np.sqrt(best)) if p == 2 else best


def khachiyan_sweep(P, u, Xinv, M, tol, max_steps):
    """Run up to ``max_steps`` Todd-Yildirim steps in place.

    See ``_ckernels.khachiyan_sweep`` for the argument contract.
    """
    n = P.shape[0]
    for step in range(max_steps):
        jmax = int(np.argmax(M))
        support = np.flatnonzero(u > 0.0)
        kmin = int(support[np.argmin(M[support])])
        eplus = M[jmax] / n - 1.0
        eminus = 1.0 - M[kmin] / n
        if eplus <= tol and eminus <= tol:
            return step, True

        drop = False
        if eplus >= eminus:
            idx = jmax
            Mi = M[idx]
            tau = (Mi - n) / (n * (Mi - 1.0))
        else:
            idx = kmin
            Mi = M[idx]
            uk = u[idx]
            if uk >= 1.0:
                return step, False
            bound = -uk / (1.0 - uk)
            tau = bound if Mi <= 1.0 else (Mi - n) / (n * (Mi - 1.0))
            if tau <= bound:
                tau = bound
                drop = True

        g = Xinv @ P[:, idx]
        pg = g @ P
        coef = tau / ((1.0 - tau) + tau * Mi)
        scale = 1.0 / (1.0 - tau)
        Xinv -= coef * np.outer(g, g)
        Xinv *= scale
        M -= coef * pg * pg
        M *= scale
        u *= 1.0 - tau
        u[idx] += tau
        if drop:
            u[idx] = 0.0
    return max_steps, False
