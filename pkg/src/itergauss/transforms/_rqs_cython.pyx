# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Rational-quadratic spline kernels, compiled backend.

Same contracts as _rqs_numpy (see that module for the formulas); scalar
loops instead of broadcast arrays.  Tests assert the two backends agree to
near machine precision.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, sqrt

cnp.import_array()


cdef inline Py_ssize_t _bin_of(const double[:, ::1] knots, Py_ssize_t j, double v, Py_ssize_t kbins) nogil:
    cdef Py_ssize_t lo = 0, hi = kbins + 1, mid
    # count of knots <= v, via upper bound binary search
    while lo < hi:
        mid = (lo + hi) // 2
        if knots[j, mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    lo -= 1
    if lo < 0:
        lo = 0
    if lo > kbins - 1:
        lo = kbins - 1
    return lo


cdef inline double _clip01(double v) nogil:
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


def forward(double[:, ::1] x, double[:, ::1] xk, double[:, ::1] yk,
            double[:, ::1] w, double[:, ::1] h, double[:, ::1] s,
            double[:, ::1] delta):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], kbins = w.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y_arr = np.empty((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] lf_arr = np.zeros((n, d))
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] lf = lf_arr
    cdef Py_ssize_t i, j, b
    cdef double v, xi, u, den, num, nmat, sb, d0, d1
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            if v <= xk[j, 0] or v >= xk[j, kbins]:
                y[i, j] = v
                continue
            b = _bin_of(xk, j, v, kbins)
            xi = _clip01((v - xk[j, b]) / w[j, b])
            u = xi * (1.0 - xi)
            sb = s[j, b]
            d0 = delta[j, b]
            d1 = delta[j, b + 1]
            den = sb + (d0 + d1 - 2.0 * sb) * u
            num = sb * xi * xi + d0 * u
            y[i, j] = yk[j, b] + h[j, b] * num / den
            nmat = d1 * xi * xi + 2.0 * sb * u + d0 * (1.0 - xi) * (1.0 - xi)
            lf[i, j] = 2.0 * log(sb) + log(nmat) - 2.0 * log(den)
    return y_arr, lf_arr


def inverse(double[:, ::1] yv, double[:, ::1] xk, double[:, ::1] yk,
            double[:, ::1] w, double[:, ::1] h, double[:, ::1] s,
            double[:, ::1] delta):
    cdef Py_ssize_t n = yv.shape[0], d = yv.shape[1], kbins = w.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x_arr = np.empty((n, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] lf_arr = np.zeros((n, d))
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] lf = lf_arr
    cdef Py_ssize_t i, j, b
    cdef double v, uy, coef, a, bq, c, disc, xi, u, den, nmat, sb, d0, d1, hb
    for i in range(n):
        for j in range(d):
            v = yv[i, j]
            if v <= yk[j, 0] or v >= yk[j, kbins]:
                x[i, j] = v
                continue
            b = _bin_of(yk, j, v, kbins)
            hb = h[j, b]
            uy = v - yk[j, b]
            if uy < 0.0:
                uy = 0.0
            elif uy > hb:
                uy = hb
            sb = s[j, b]
            d0 = delta[j, b]
            d1 = delta[j, b + 1]
            coef = d0 + d1 - 2.0 * sb
            a = hb * (sb - d0) + uy * coef
            bq = hb * d0 - uy * coef
            c = -sb * uy
            disc = bq * bq - 4.0 * a * c
            if disc < 0.0:
                disc = 0.0
            xi = 2.0 * c / (-bq - sqrt(disc))
            x[i, j] = xk[j, b] + xi * w[j, b]
            u = xi * (1.0 - xi)
            den = sb + coef * u
            nmat = d1 * xi * xi + 2.0 * sb * u + d0 * (1.0 - xi) * (1.0 - xi)
            lf[i, j] = 2.0 * log(sb) + log(nmat) - 2.0 * log(den)
    return x_arr, lf_arr


def dlogdet_dx(double[:, ::1] x, double[:, ::1] xk, double[:, ::1] yk,
               double[:, ::1] w, double[:, ::1] h, double[:, ::1] s,
               double[:, ::1] delta):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], kbins = w.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, b
    cdef double v, xi, u, coef, den, nmat, n_xi, d_xi, sb, d0, d1
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            if v <= xk[j, 0] or v >= xk[j, kbins]:
                continue
            b = _bin_of(xk, j, v, kbins)
            xi = _clip01((v - xk[j, b]) / w[j, b])
            u = xi * (1.0 - xi)
            sb = s[j, b]
            d0 = delta[j, b]
            d1 = delta[j, b + 1]
            coef = d0 + d1 - 2.0 * sb
            den = sb + coef * u
            nmat = d1 * xi * xi + 2.0 * sb * u + d0 * (1.0 - xi) * (1.0 - xi)
            n_xi = 2.0 * (d1 * xi + sb * (1.0 - 2.0 * xi) - d0 * (1.0 - xi))
            d_xi = coef * (1.0 - 2.0 * xi)
            out[i, j] = (n_xi / nmat - 2.0 * d_xi / den) / w[j, b]
    return out_arr


def param_grads(double[:, ::1] x, double[:, ::1] xk, double[:, ::1] yk,
                double[:, ::1] w, double[:, ::1] h, double[:, ::1] s,
                double[:, ::1] delta, double[:, ::1] sw, double[:, ::1] sh,
                double[:, ::1] dsig, double alpha):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], kbins = w.shape[1]
    cdef Py_ssize_t nparams = 3 * kbins - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] df_arr = np.zeros((n, d, nparams))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] dl_arr = np.zeros((n, d, nparams))
    cdef double[:, :, ::1] df = df_arr
    cdef double[:, :, ::1] dl = dl_arr

    # exclusive cumulative softmax weights for the knot-position chain rule
    cdef cnp.ndarray[cnp.float64_t, ndim=2] csw_arr = np.zeros((d, kbins))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] csh_arr = np.zeros((d, kbins))
    cdef double[:, ::1] csw = csw_arr
    cdef double[:, ::1] csh = csh_arr
    cdef Py_ssize_t i, j, b, m
    for j in range(d):
        for m in range(1, kbins):
            csw[j, m] = csw[j, m - 1] + sw[j, m - 1]
            csh[j, m] = csh[j, m - 1] + sh[j, m - 1]

    cdef double v, xi, u, coef, den, num, g, nmat, sb, d0, d1, hb, wb
    cdef double p_xi, d_xi, p_s, d_s, n_xi, n_s
    cdef double f_xi, f_s, f_d0, f_d1, ax, aw, ah
    cdef double l_xi, l_s, l_d0, l_d1, lx, lw, lh
    cdef double tot_f_w, tot_f_h, tot_l_w, tot_l_h, den2
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            if v <= xk[j, 0] or v >= xk[j, kbins]:
                continue
            b = _bin_of(xk, j, v, kbins)
            wb = w[j, b]
            hb = h[j, b]
            sb = s[j, b]
            d0 = delta[j, b]
            d1 = delta[j, b + 1]
            xi = _clip01((v - xk[j, b]) / wb)
            u = xi * (1.0 - xi)
            coef = d0 + d1 - 2.0 * sb
            den = sb + coef * u
            num = sb * xi * xi + d0 * u
            g = num / den
            nmat = d1 * xi * xi + 2.0 * sb * u + d0 * (1.0 - xi) * (1.0 - xi)
            den2 = den * den

            p_xi = 2.0 * sb * xi + d0 * (1.0 - 2.0 * xi)
            d_xi = coef * (1.0 - 2.0 * xi)
            p_s = xi * xi
            d_s = 1.0 - 2.0 * u
            n_xi = 2.0 * (d1 * xi + sb * (1.0 - 2.0 * xi) - d0 * (1.0 - xi))
            n_s = 2.0 * u

            f_xi = hb * (p_xi * den - num * d_xi) / den2
            f_s = hb * (p_s * den - num * d_s) / den2
            f_d0 = hb * (u * den - num * u) / den2
            f_d1 = -hb * num * u / den2
            ax = -f_xi / wb
            aw = f_xi * (-xi / wb) + f_s * (-sb / wb)
            ah = g + f_s / wb

            l_xi = n_xi / nmat - 2.0 * d_xi / den
            l_s = 2.0 / sb + n_s / nmat - 2.0 * d_s / den
            l_d0 = (1.0 - xi) * (1.0 - xi) / nmat - 2.0 * u / den
            l_d1 = xi * xi / nmat - 2.0 * u / den
            lx = -l_xi / wb
            lw = l_xi * (-xi / wb) + l_s * (-sb / wb)
            lh = l_s / wb

            tot_f_w = ax * csw[j, b] + aw * sw[j, b]
            tot_f_h = 1.0 * csh[j, b] + ah * sh[j, b]
            tot_l_w = lx * csw[j, b] + lw * sw[j, b]
            tot_l_h = lh * sh[j, b]
            for m in range(kbins):
                df[i, j, m] = alpha * sw[j, m] * (
                    (ax if m < b else 0.0) + (aw if m == b else 0.0) - tot_f_w)
                dl[i, j, m] = alpha * sw[j, m] * (
                    (lx if m < b else 0.0) + (lw if m == b else 0.0) - tot_l_w)
                df[i, j, kbins + m] = alpha * sh[j, m] * (
                    (1.0 if m < b else 0.0) + (ah if m == b else 0.0) - tot_f_h)
                dl[i, j, kbins + m] = alpha * sh[j, m] * (
                    (lh if m == b else 0.0) - tot_l_h)
            if b >= 1:
                df[i, j, 2 * kbins + b - 1] = dsig[j, b - 1] * f_d0
                dl[i, j, 2 * kbins + b - 1] = dsig[j, b - 1] * l_d0
            if b <= kbins - 2:
                df[i, j, 2 * kbins + b] = dsig[j, b] * f_d1
                dl[i, j, 2 * kbins + b] = dsig[j, b] * l_d1
    return df_arr, dl_arr
