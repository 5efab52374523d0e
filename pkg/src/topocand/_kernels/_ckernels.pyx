# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simplex and enumeration kernels (same contracts as ``_py``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

cdef int BASIC = 0, AT_LB = 1, AT_UB = 2, FREE = 3, FIXED = 4


def ftran_etas(double[::1] w, long[::1] eta_rows, double[:, ::1] eta_mat, Py_ssize_t k):
    cdef Py_ssize_t t, i, m = w.shape[0]
    cdef long r
    cdef double wr
    for t in range(k):
        r = eta_rows[t]
        wr = w[r]
        if wr != 0.0:
            for i in range(m):
                w[i] += eta_mat[t, i] * wr
            w[r] = eta_mat[t, r] * wr


def btran_etas(double[::1] v, long[::1] eta_rows, double[:, ::1] eta_mat, Py_ssize_t k):
    cdef Py_ssize_t t, i, m = v.shape[0]
    cdef double s
    for t in range(k - 1, -1, -1):
        s = 0.0
        for i in range(m):
            s += eta_mat[t, i] * v[i]
        v[eta_rows[t]] = s


def price(double[::1] d, signed char[::1] state, double tol, bint bland):
    cdef Py_ssize_t j, n = d.shape[0], best = -1
    cdef int direction = 0, dj_dir
    cdef double score, best_score = -1.0, dj
    cdef signed char s
    for j in range(n):
        s = state[j]
        dj = d[j]
        dj_dir = 0
        if (s == AT_LB or s == FREE) and dj < -tol:
            dj_dir = 1
        elif (s == AT_UB or s == FREE) and dj > tol:
            dj_dir = -1
        if dj_dir == 0:
            continue
        if bland:
            return j, dj_dir
        score = fabs(dj)
        if score > best_score:
            best_score = score
            best = j
            direction = dj_dir
    return best, direction


def primal_ratio(double[::1] x, double[::1] lo, double[::1] hi, double[::1] delta,
                 double tol, double piv_tol, bint bland):
    cdef Py_ssize_t i, m = x.shape[0], r = -1
    cdef double tmax = INFINITY, lim, ex, di, best_abs = -1.0, tmin = INFINITY
    cdef bint below, above, up, r_up = False
    # pass 1: relaxed bound (or exact for infeasible entries)
    for i in range(m):
        di = delta[i]
        if fabs(di) <= piv_tol:
            continue
        below = x[i] < lo[i] - tol
        above = x[i] > hi[i] + tol
        lim = INFINITY
        if di > 0:
            if below:
                lim = (lo[i] - x[i]) / di
            elif not above:
                if bland:
                    lim = (hi[i] - x[i]) / di
                else:
                    lim = (hi[i] + tol - x[i]) / di
        else:
            if above:
                lim = (hi[i] - x[i]) / di
            elif not below:
                if bland:
                    lim = (lo[i] - x[i]) / di
                else:
                    lim = (lo[i] - tol - x[i]) / di
        if lim < tmax:
            tmax = lim
    if tmax == INFINITY:
        return -1, INFINITY, False
    # pass 2: largest |delta| among exact ratios within tmax
    for i in range(m):
        di = delta[i]
        if fabs(di) <= piv_tol:
            continue
        below = x[i] < lo[i] - tol
        above = x[i] > hi[i] + tol
        ex = INFINITY
        up = False
        if di > 0:
            if below:
                ex = (lo[i] - x[i]) / di
            elif not above:
                ex = (hi[i] - x[i]) / di
                up = True
        else:
            if above:
                ex = (hi[i] - x[i]) / di
                up = True
            elif not below:
                ex = (lo[i] - x[i]) / di
        if bland:
            if ex <= tmax + 1e-12:
                return i, (ex if ex > 0 else 0.0), up
            continue
        if ex <= tmax and fabs(di) > best_abs:
            best_abs = fabs(di)
            r = i
            tmin = ex
            r_up = up
    if r < 0:
        return -1, INFINITY, False
    return r, (tmin if tmin > 0 else 0.0), r_up


def dual_ratio(double[::1] d, double[::1] alpha, signed char[::1] state, int sign,
               double tol, double piv_tol):
    cdef Py_ssize_t j, n = d.shape[0], pick = -1
    cdef double a, ratio, tmax = INFINITY, best_abs = -1.0
    cdef signed char s
    for j in range(n):
        s = state[j]
        a = alpha[j] * sign
        if (s == AT_LB and a < -piv_tol) or (s == AT_UB and a > piv_tol) or (s == FREE and fabs(a) > piv_tol):
            ratio = (fabs(d[j]) + tol) / fabs(a)
            if ratio < tmax:
                tmax = ratio
    if tmax == INFINITY:
        return -1
    for j in range(n):
        s = state[j]
        a = alpha[j] * sign
        if (s == AT_LB and a < -piv_tol) or (s == AT_UB and a > piv_tol) or (s == FREE and fabs(a) > piv_tol):
            if fabs(d[j]) / fabs(a) <= tmax and fabs(a) > best_abs:
                best_abs = fabs(a)
                pick = j
    return pick


def binary_screen(double[:, ::1] rows, double[::1] rhs, signed char[::1] sense, int k):
    cdef long long total = 1LL << k, mask, changed
    cdef Py_ssize_t i, j, nrows = rows.shape[0], count = 0
    cdef double eps = 1e-9, v
    cdef bint ok
    out = np.empty(total, dtype=np.int64)
    cdef long long[::1] view = out
    lhs_arr = np.zeros(max(nrows, 1))
    cdef double[::1] lhs = lhs_arr
    for mask in range(total):
        if (mask & 255) == 0:
            # exact recompute bounds the drift of the running sums
            for i in range(nrows):
                v = 0.0
                for j in range(k):
                    if (mask >> j) & 1:
                        v += rows[i, j]
                lhs[i] = v
        else:
            # ascending order flips the trailing ones off and one bit on
            changed = mask ^ (mask - 1)
            for j in range(k):
                if not (changed >> j) & 1:
                    break
                if (mask >> j) & 1:
                    for i in range(nrows):
                        lhs[i] += rows[i, j]
                else:
                    for i in range(nrows):
                        lhs[i] -= rows[i, j]
        ok = True
        for i in range(nrows):
            if sense[i] < 0:
                ok = lhs[i] <= rhs[i] + eps
            elif sense[i] > 0:
                ok = lhs[i] >= rhs[i] - eps
            else:
                ok = fabs(lhs[i] - rhs[i]) <= eps
            if not ok:
                break
        if ok:
            view[count] = mask
            count += 1
    return out[:count]
