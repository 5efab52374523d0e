"""Pure-numpy reference versions of the simplex and enumeration kernels.

Signatures match the compiled module exactly; see ``_ckernels.pyx``.
"""

import numpy as np

BASIC, AT_LB, AT_UB, FREE, FIXED = 0, 1, 2, 3, 4


def ftran_etas(w, eta_rows, eta_mat, k):
    for t in range(k):
        r = eta_rows[t]
        wr = w[r]
        if wr != 0.0:
            w += eta_mat[t] * wr
            w[r] = eta_mat[t, r] * wr


def btran_etas(v, eta_rows, eta_mat, k):
    for t in range(k - 1, -1, -1):
        v[eta_rows[t]] = eta_mat[t] @ v


def price(d, state, tol, bland):
    """Entering variable and direction (+1 increase, -1 decrease), or (-1, 0)."""
    up = ((state == AT_LB) | (state == FREE)) & (d < -tol)
    down = ((state == AT_UB) | (state == FREE)) & (d > tol)
    cand = up | down
    if not cand.any():
        return -1, 0
    if bland:
        q = int(np.flatnonzero(cand)[0])
    else:
        score = np.where(cand, np.abs(d), -1.0)
        q = int(np.argmax(score))
    return q, (1 if up[q] else -1)


def primal_ratio(x, lo, hi, delta, tol, piv_tol, bland):
    """Harris two-pass ratio test for x + t*delta.

    Infeasible entries only block where they regain feasibility. Returns
    (row, step, hits_upper) with row -1 when nothing blocks.
    """
    inc = delta > piv_tol
    dec = delta < -piv_tol
    below = x < lo - tol
    above = x > hi + tol
    feas = ~(below | above)
    with np.errstate(divide="ignore", invalid="ignore"):
        relaxed = np.full(x.shape, np.inf)
        m = inc & feas
        relaxed[m] = (hi[m] + tol - x[m]) / delta[m]
        m = dec & feas
        relaxed[m] = (lo[m] - tol - x[m]) / delta[m]
        exact = np.full(x.shape, np.inf)
        upper = np.zeros(x.shape, dtype=bool)
        m = inc & feas
        exact[m] = (hi[m] - x[m]) / delta[m]
        upper[m] = True
        m = dec & feas
        exact[m] = (lo[m] - x[m]) / delta[m]
        m = inc & below
        exact[m] = (lo[m] - x[m]) / delta[m]
        relaxed[m] = exact[m]
        m = dec & above
        exact[m] = (hi[m] - x[m]) / delta[m]
        upper[m] = True
        relaxed[m] = exact[m]
    if bland:
        tmin = exact.min()
        if not np.isfinite(tmin):
            return -1, np.inf, False
        ties = np.flatnonzero(exact <= tmin + 1e-12)
        r = int(ties[0])
        return r, max(float(exact[r]), 0.0), bool(upper[r])
    tmax = relaxed.min()
    if not np.isfinite(tmax):
        return -1, np.inf, False
    cand = exact <= tmax
    score = np.where(cand, np.abs(delta), -1.0)
    r = int(np.argmax(score))
    return r, max(float(exact[r]), 0.0), bool(upper[r])


def dual_ratio(d, alpha, state, sign, tol, piv_tol):
    """Harris dual ratio test on the pivot row.

    ``sign`` is +1 when the leaving variable must increase, -1 when it must
    decrease. Returns the entering column or -1 (primal infeasible).
    """
    a = alpha * sign
    elig = (((state == AT_LB) & (a < -piv_tol)) | ((state == AT_UB) & (a > piv_tol))
            | ((state == FREE) & (np.abs(a) > piv_tol)))
    if not elig.any():
        return -1
    idx = np.flatnonzero(elig)
    absd = np.abs(d[idx])
    absa = np.abs(a[idx])
    tmax = ((absd + tol) / absa).min()
    cand = absd / absa <= tmax
    pick = idx[cand][np.argmax(absa[cand])]
    return int(pick)


def binary_screen(rows, rhs, sense, k):
    """All 0/1 assignments of k binaries satisfying the binary-only rows.

    ``rows`` is dense (n_rows, k); ``sense`` holds -1 (<=), 0 (==), 1 (>=).
    Returns an int64 array of bitmasks (bit j = value of binary j).
    """
    total = 1 << k
    masks = np.arange(total, dtype=np.int64)
    if rows.shape[0] == 0:
        return masks
    bits = ((masks[:, None] >> np.arange(k, dtype=np.int64)) & 1).astype(float)
    lhs = bits @ rows.T
    ok = np.ones(total, dtype=bool)
    eps = 1e-9
    for i in range(rows.shape[0]):
        if sense[i] < 0:
            ok &= lhs[:, i] <= rhs[i] + eps
        elif sense[i] > 0:
            ok &= lhs[:, i] >= rhs[i] - eps
        else:
            ok &= np.abs(lhs[:, i] - rhs[i]) <= eps
    return masks[ok]
