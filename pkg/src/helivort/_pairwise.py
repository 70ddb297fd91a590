"""Numba kernels for the O(N*M) pairwise sums.

The loops parallelize over evaluation points; each point reduces over all
sources in a fixed order, so results are bit-reproducible for any thread
count.  Coefficients that factorize per point (the sqrt(|X|) weights, the
flattening-map Jacobian) are applied outside the loops.
"""

import numpy as np
from numba import njit, prange

__all__ = ["log_and_moment_sums", "gaussian_kde_sum"]


@njit(cache=True, parallel=True)
def log_and_moment_sums(qx, qy, tx, ty, ws, delta2, out_log, out_m1, out_m2):
    """Accumulate, for each evaluation point i over sources j,

    out_log[i] = sum_j ws[j] * 0.5*log(|q_i - t_j|^2 + delta2)
    out_m[i]   = sum_j ws[j] * (q_i - t_j) / (|q_i - t_j|^2 + delta2)

    with q, t in the flattened plane and ws the weight * sqrt(|Y|) factors.
    """
    n = qx.shape[0]
    m = tx.shape[0]
    for i in prange(n):
        acc_log = 0.0
        acc1 = 0.0
        acc2 = 0.0
        xi = qx[i]
        yi = qy[i]
        for j in range(m):
            d1 = xi - tx[j]
            d2 = yi - ty[j]
            r2 = d1 * d1 + d2 * d2 + delta2
            w = ws[j]
            inv = w / r2
            acc1 += d1 * inv
            acc2 += d2 * inv
            acc_log += w * np.log(r2)
        out_log[i] = 0.5 * acc_log
        out_m1[i] = acc1
        out_m2[i] = acc2


@njit(cache=True, parallel=True)
def gaussian_kde_sum(qx, qy, tx, ty, w, inv_two_bw2, out):
    """out[i] = sum_j w[j] * exp(-|q_i - t_j|^2 * inv_two_bw2)."""
    n = qx.shape[0]
    m = tx.shape[0]
    for i in prange(n):
        acc = 0.0
        xi = qx[i]
        yi = qy[i]
        for j in range(m):
            d1 = xi - tx[j]
            d2 = yi - ty[j]
            acc += w[j] * np.exp(-(d1 * d1 + d2 * d2) * inv_two_bw2)
        out[i] = acc
