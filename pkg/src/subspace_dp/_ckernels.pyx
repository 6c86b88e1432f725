# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror :mod:`subspace_dp._pykernels`."""

import numpy as np

from libc.math cimport fabs, sqrt


def pairwise_max_distance(const double[:, ::1] points, int p):
    """Largest l_p distance between any two rows of ``points``."""
    cdef Py_ssize_t d = points.shape[0], n = points.shape[1]
    cdef Py_ssize_t z, w, a
    cdef double best = 0.0, s, t
    if p != 1 and p != 2:
        raise ValueError("p must be 1 or 2")
    with nogil:
        for z in range(d):
            for w in range(z + 1, d):
                s = 0.0
                if p == 1:
                    for a in range(n):
                        s += fabs(points[z, a] - points[w, a])
                else:
                    for a in range(n):
                        t = points[z, a] - points[w, a]
                        s += t * t
                if s > best:
                    best = s
    if p == 2:
        return sqrt(best)
    return best


def khachiyan_sweep(const double[:, ::1] P, double[::1] u, double[:, ::1] Xinv,
                    double[::1] M, double tol, Py_ssize_t max_steps):
    """Run up to ``max_steps`` Todd-Yildirim steps in place.

    ``P`` is n x m (points as columns), ``u`` the weights, ``Xinv`` the
    inverse of ``P diag(u) P^T`` and ``M`` the quadratic forms
    ``p_j^T Xinv p_j``. Returns ``(steps_taken, converged)``.
    """
    cdef Py_ssize_t n = P.shape[0], m = P.shape[1]
    cdef Py_ssize_t step, i, a, b, jmax, kmin, idx
    cdef double nd = <double>n
    cdef double eplus, eminus, Mi, tau, bound, uk, denom, coef, scale, s, ga
    cdef bint drop
    cdef double[::1] g = np.empty(n)
    cdef double[::1] pg = np.empty(m)

    for step in range(max_steps):
        jmax = 0
        kmin = -1
        for i in range(m):
            if M[i] > M[jmax]:
                jmax = i
            if u[i] > 0.0 and (kmin < 0 or M[i] < M[kmin]):
                kmin = i
        eplus = M[jmax] / nd - 1.0
        eminus = 1.0 - M[kmin] / nd
        if eplus <= tol and eminus <= tol:
            return step, True

        drop = False
        if eplus >= eminus:
            idx = jmax
            Mi = M[idx]
            tau = (Mi - nd) / (nd * (Mi - 1.0))
        else:
            idx = kmin
            Mi = M[idx]
            uk = u[idx]
            if uk >= 1.0:
                return step, False
            bound = -uk / (1.0 - uk)
            if Mi <= 1.0:
                tau = bound
            else:
                tau = (Mi - nd) / (nd * (Mi - 1.0))
            if tau <= bound:
                tau = bound
                drop = True

        for a in range(n):
            s = 0.0
            for b in range(n):
                s += Xinv[a, b] * P[b, idx]
            g[a] = s
        for i in range(m):
            pg[i] = 0.0
        for a in range(n):
            ga = g[a]
            for i in range(m):
                pg[i] += P[a, i] * ga

        denom = (1.0 - tau) + tau * Mi
        coef = tau / denom
        scale = 1.0 / (1.0 - tau)
        for a in range(n):
            for b in range(n):
                Xinv[a, b] = (Xinv[a, b] - coef * g[a] * g[b]) * scale
        for i in range(m):
            M[i] = (M[i] - coef * pg[i] * pg[i]) * scale
            u[i] *= 1.0 - tau
        u[idx] += tau
        if drop:
            u[idx] = 0.0
    return max_steps, False
