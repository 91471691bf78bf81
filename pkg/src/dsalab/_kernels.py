"""Compiled inner loop for linear drives.

Matrices here are tiny (m, d <= ~16), so explicit loops beat BLAS calls.
"""

from __future__ import annotations

import numpy as np
from numba import njit

DIVERGENCE_BOUND = 1e12


@njit(cache=True)
def advance_linear(x, w, a, b, alphas, d_a, d_b, has_da, has_db,
                   q, pi, expms, psi, chi, track_psi, track_chi):
    """Run ``len(alphas)`` iterations of ``x <- Wx + alpha (B - xA + M)`` in place.

    ``M = dB_k - x dA_k``. When tracking, ``psi`` (d,) and ``chi`` (m, d) are
    updated in place with the same ``M``. Returns -1 on success or the local
    index of the first step that produced a non-finite or oversized iterate
    (``x`` then holds the last good value).
    """
    m, d = x.shape
    steps = alphas.shape[0]
    noise = np.zeros((m, d))
    xn = np.zeros((m, d))
    tmp = np.zeros((m, d))
    psin = np.zeros(d)
    for k in range(steps):
        al = alphas[k]
        for i in range(m):
            for j in range(d):
                v = 0.0
                if has_db:
                    v = d_b[k, i, j]
                if has_da:
                    for l in range(d):
                        v -= x[i, l] * d_a[k, l, j]
                noise[i, j] = v
        bad = False
        for i in range(m):
            for j in range(d):
                mix = 0.0
                for l in range(m):
                    mix += w[i, l] * x[l, j]
                drift = b[i, j]
                for l in range(d):
                    drift -= x[i, l] * a[l, j]
                val = mix + al * (drift + noise[i, j])
                if not np.isfinite(val) or abs(val) > DIVERGENCE_BOUND:
                    bad = True
                xn[i, j] = val
        if bad:
            return k
        if track_psi:
            for j in range(d):
                v = 0.0
                for l in range(d):
                    v += psi[l] * expms[k, l, j]
                pm = 0.0
                for i in range(m):
                    pm += pi[i] * noise[i, j]
                psin[j] = v + al * pm
            for j in range(d):
                psi[j] = psin[j]
        if track_chi:
            for i in range(m):
                for j in range(d):
                    v = 0.0
                    for l in range(d):
                        v += chi[i, l] * expms[k, l, j]
                    tmp[i, j] = v
            for i in range(m):
                for j in range(d):
                    v = 0.0
                    qm = 0.0
                    for l in range(m):
                        v += w[i, l] * tmp[l, j]
                        qm += q[i, l] * noise[l, j]
                    chi[i, j] = v + al * qm
        for i in range(m):
            for j in range(d):
                x[i, j] = xn[i, j]
    return -1
