# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled twin of ``fallback.euler_chunk``.

Every expression tree and accumulation order below mirrors fallback.py
exactly, and the extension is compiled with -ffp-contract=off, so both
backends produce bit-identical doubles. Any edit here must be mirrored there
(and vice versa); tests/test_kernels.py enforces the equivalence.
"""

import numpy as np

cimport numpy as cnp

BACKEND_NAME = "native"


cdef inline double csig(double u) noexcept:
    # hinge selection: 0 below the kink, 1 above, midpoint 0.5 exactly at it
    if u > 0.0:
        return 1.0
    elif u < 0.0:
        return 0.0
    return 0.5


def euler_chunk(double[:, ::1] I, double[:, ::1] S, double[:, ::1] z,
                double[:, ::1] v, double[:, ::1] prev_dS,
                double[:, ::1] b, double[:, ::1] c,
                double[::1] p_min, double[::1] p_max,
                double[::1] ramp_dn, double[::1] ramp_up,
                double[::1] cap_lo, double[::1] cap_hi,
                unsigned char[::1] smask,
                cnp.int64_t[::1] row_ptr, cnp.int64_t[::1] col_idx,
                double[::1] weights, double[:, ::1] load_vec,
                double alpha, double beta, double nu1, double nu2,
                double inv_eps, double dt, long n_steps, bint guard):
    """Advance the state n_steps forward-Euler steps in place; returns damped count."""
    cdef Py_ssize_t n = I.shape[0]
    cdef Py_ssize_t h = I.shape[1]
    cdef double[:, ::1] z1 = np.empty((n, h))
    cdef double[:, ::1] z2 = np.empty((n, h))
    cdef double[:, ::1] Lz1 = np.empty((n, h))
    cdef double[:, ::1] Lz = np.empty((n, h))
    cdef double[::1] prow = np.empty(h)
    cdef double[::1] grow = np.empty(h)
    cdef double[::1] base = np.empty(h)
    cdef double[::1] wdif = np.empty(h)
    cdef double[::1] wsuf = np.empty(h)
    cdef double[::1] s5row = np.empty(h)
    cdef double[::1] s6row = np.empty(max(h - 1, 1))
    cdef double[::1] s7row = np.empty(max(h - 1, 1))
    cdef double ab = alpha * beta
    cdef double neg_alpha = -alpha
    cdef long damped = 0
    cdef Py_ssize_t step, i, k, e
    cdef double p, urun, acc, d, s1, s2, s3, s4, xi_k
    cdef double dI, dS, dz, dv, dS_eff

    for step in range(n_steps):
        # canonical subgradient, row by row (matches subgradient_arrays)
        for i in range(n):
            urun = 0.0
            for k in range(h):
                p = I[i, k] + S[i, k]
                prow[k] = p
                grow[k] = b[i, k] + (2.0 * c[i, k]) * p
                s1 = csig(p_min[i] - p)
                s2 = csig(p - p_max[i])
                urun = urun + S[i, k]
                s3 = csig(cap_lo[i] - urun)
                s4 = csig(urun - cap_hi[i])
                s5row[k] = csig(-I[i, k])
                base[k] = s2 - s1
                wdif[k] = s4 - s3
            for k in range(h - 1):
                d = prow[k + 1] - prow[k]
                s6row[k] = csig(-ramp_dn[i] - d)
                s7row[k] = csig(d - ramp_up[i])
            for k in range(h - 1):
                base[k] = base[k] + (s6row[k] - s7row[k])
            for k in range(h - 1):
                base[k + 1] = base[k + 1] + (s7row[k] - s6row[k])
            acc = 0.0
            for k in range(h - 1, -1, -1):
                acc = acc + wdif[k]
                wsuf[k] = acc
            for k in range(h):
                z1[i, k] = grow[k] + inv_eps * (base[k] - s5row[k])
                if smask[i]:
                    z2[i, k] = grow[k] + inv_eps * (base[k] + wsuf[k])
                else:
                    z2[i, k] = 0.0

        # Laplacian rows, neighbors ascending (matches laplacian_rows)
        for i in range(n):
            for k in range(h):
                Lz1[i, k] = 0.0
                Lz[i, k] = 0.0
            for e in range(row_ptr[i], row_ptr[i + 1]):
                for k in range(h):
                    Lz1[i, k] = Lz1[i, k] + weights[e] * (z1[i, k] - z1[col_idx[e], k])
                    Lz[i, k] = Lz[i, k] + weights[e] * (z[i, k] - z[col_idx[e], k])

        # fused field evaluation + guarded Euler update
        for i in range(n):
            for k in range(h):
                dI = (-Lz1[i, k]) + nu1 * z[i, k]
                dS = -z2[i, k]
                dz = (((neg_alpha * z[i, k]) - beta * Lz[i, k]) - v[i, k]) \
                    + nu2 * (load_vec[i, k] - I[i, k])
                dv = ab * Lz[i, k]
                if guard and prev_dS[i, k] * dS < 0.0:
                    damped += 1
                    dS_eff = 0.5 * dS
                else:
                    dS_eff = dS
                I[i, k] = I[i, k] + dt * dI
                S[i, k] = S[i, k] + dt * dS_eff
                z[i, k] = z[i, k] + dt * dz
                v[i, k] = v[i, k] + dt * dv
                prev_dS[i, k] = dS
    return damped
