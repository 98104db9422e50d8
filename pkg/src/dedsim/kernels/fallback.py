"""Pure-numpy reference kernels for the penalized dispatch flow.

These are the arithmetic ground truth of the package: the compiled backend in
``_native.pyx`` reproduces every expression tree and accumulation order found
here so that both backends produce bit-identical doubles. Keep the two files
in sync down to the order of additions; the equivalence is enforced by tests
and is what makes agent-mode and monolithic-mode trajectories comparable at
1e-9 despite sliding-mode chattering.

Conventions shared by both backends:

* state arrays ``I, S, z, v`` are (n, h) C-contiguous float64,
* cost coefficients ``b, c`` are materialized (n, h) arrays,
* per-unit bounds are (n,) arrays, ``smask`` is (n,) uint8 (1 = unit has
  storage; rows with 0 get a hard zero in the storage subgradient),
* the adjacency is CSR-like (``row_ptr, col_idx, weights``) with neighbor
  indices ascending inside each row; Laplacian rows are accumulated strictly
  in that order,
* hinge selections at exact kinks use the midpoint value 0.5,
* kernels assume finite inputs; non-finite state is the caller's problem.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "fallback"


def hinge_sigma(u):
    """Selection weight for d/du max(u, 0): 0 below the kink, 1 above, 0.5 at it."""
    return (np.sign(u) + 1.0) * 0.5


def subgradient_arrays(I, S, b, c, p_min, p_max, ramp_dn, ramp_up,
                       cap_lo, cap_hi, smask, inv_eps):
    """Canonical penalized subgradient, both blocks.

    Returns ``(z1, z2)`` where ``z1`` is the injection block and ``z2`` the
    storage block. Both blocks share one hinge selection per constraint
    family, which keeps the pair inside the subdifferential at kinks.
    ``cap_lo``/``cap_hi`` are the capacity bounds already shifted by the
    initial stored energy.
    """
    p = I + S
    g = b + 2.0 * c * p
    s1 = hinge_sigma(p_min[:, None] - p)
    s2 = hinge_sigma(p - p_max[:, None])
    U = np.cumsum(S, axis=1)
    s3 = hinge_sigma(cap_lo[:, None] - U)
    s4 = hinge_sigma(U - cap_hi[:, None])
    s5 = hinge_sigma(-I)
    d = p[:, 1:] - p[:, :-1]
    s6 = hinge_sigma(-ramp_dn[:, None] - d)
    s7 = hinge_sigma(d - ramp_up[:, None])
    G = s2 - s1
    G[:, :-1] += s6 - s7
    G[:, 1:] += s7 - s6
    # suffix sums: a storage move at slot k shifts every later stored level
    W = np.cumsum((s4 - s3)[:, ::-1], axis=1)[:, ::-1]
    z1 = g + inv_eps * (G - s5)
    z2 = g + inv_eps * (G + W)
    z2 = np.where(smask[:, None].astype(bool), z2, 0.0)
    return z1, z2


def row_subgradient(I_row, S_row, b_row, c_row, p_min, p_max, ramp_dn, ramp_up,
                    cap_lo, cap_hi, has_storage, inv_eps):
    """Single-unit slice of :func:`subgradient_arrays`, same expression trees.

    Used by the agent-level simulator, where each agent only ever sees its own
    row. Bit-identical to the corresponding row of the array version.
    """
    p = I_row + S_row
    g = b_row + 2.0 * c_row * p
    s1 = hinge_sigma(p_min - p)
    s2 = hinge_sigma(p - p_max)
    U = np.cumsum(S_row)
    s3 = hinge_sigma(cap_lo - U)
    s4 = hinge_sigma(U - cap_hi)
    s5 = hinge_sigma(-I_row)
    d = p[1:] - p[:-1]
    s6 = hinge_sigma(-ramp_dn - d)
    s7 = hinge_sigma(d - ramp_up)
    G = s2 - s1
    G[:-1] += s6 - s7
    G[1:] += s7 - s6
    W = np.cumsum((s4 - s3)[::-1])[::-1]
    z1 = g + inv_eps * (G - s5)
    if has_storage:
        z2 = g + inv_eps * (G + W)
    else:
        z2 = np.zeros_like(z1)
    return z1, z2


def laplacian_rows(row_ptr, col_idx, weights, x):
    """Apply the out-degree Laplacian row by row: (Lx)_i = sum_j a_ij (x_i - x_j).

    Neighbors are visited in ascending index order and accumulated
    sequentially; do not replace with a vectorized reduction.
    """
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        acc = np.zeros(x.shape[1])
        xi = x[i]
        for e in range(row_ptr[i], row_ptr[i + 1]):
            acc = acc + weights[e] * (xi - x[col_idx[e]])
        out[i] = acc
    return out


def field_arrays(I, S, z, v, z1, z2, row_ptr, col_idx, weights, load_vec,
                 alpha, beta, nu1, nu2):
    """Right-hand side of the four-block flow, given precomputed subgradients."""
    Lz1 = laplacian_rows(row_ptr, col_idx, weights, z1)
    Lz = laplacian_rows(row_ptr, col_idx, weights, z)
    dI = -Lz1 + nu1 * z
    dS = -z2
    dz = -alpha * z - beta * Lz - v + nu2 * (load_vec - I)
    dv = (alpha * beta) * Lz
    return dI, dS, dz, dv


def euler_chunk(I, S, z, v, prev_dS,
                b, c, p_min, p_max, ramp_dn, ramp_up, cap_lo, cap_hi, smask,
                row_ptr, col_idx, weights, load_vec,
                alpha, beta, nu1, nu2, inv_eps, dt, n_steps, guard):
    """Advance the state ``n_steps`` forward-Euler steps in place.

    When ``guard`` is set, any storage-flow component whose derivative flips
    sign between consecutive steps gets that step halved (anti-chattering
    damping on the sliding surface); ``prev_dS`` carries the raw previous
    derivative across chunk boundaries. Returns the number of damped entries.
    """
    ab = alpha * beta
    damped = 0
    Ic, Sc, zc, vc, pdc = I, S, z, v, prev_dS
    for _ in range(n_steps):
        z1, z2 = subgradient_arrays(Ic, Sc, b, c, p_min, p_max, ramp_dn,
                                    ramp_up, cap_lo, cap_hi, smask, inv_eps)
        Lz1 = laplacian_rows(row_ptr, col_idx, weights, z1)
        Lz = laplacian_rows(row_ptr, col_idx, weights, zc)
        dI = -Lz1 + nu1 * zc
        dS = -z2
        dz = -alpha * zc - beta * Lz - vc + nu2 * (load_vec - Ic)
        dv = ab * Lz
        if guard:
            flip = pdc * dS < 0.0
            nflip = int(np.count_nonzero(flip))
            if nflip:
                damped += nflip
                dS_eff = np.where(flip, 0.5 * dS, dS)
            else:
                dS_eff = dS
        else:
            dS_eff = dS
        Ic = Ic + dt * dI
        Sc = Sc + dt * dS_eff
        zc = zc + dt * dz
        vc = vc + dt * dv
        pdc = dS
    I[...] = Ic
    S[...] = Sc
    z[...] = zc
    v[...] = vc
    prev_dS[...] = pdc
    return damped
