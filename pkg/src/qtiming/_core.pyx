# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled estimation kernels; see ``_core_py`` for the reference semantics."""
from libc.math cimport exp, log, fabs, sqrt

import numpy as np

cdef double PENALTY = 1e300
cdef double INV_SQRT2 = 1.0 / sqrt(2.0)
cdef double INV_SQRT3 = 1.0 / sqrt(3.0)


cdef double _tail4(double x) nogil:
    cdef double term, total
    cdef int n
    if x < 1.0:
        term = exp(-x) * x * x * x * x / 24.0
        total = 0.0
        n = 4
        while term > 1e-18 * total and n < 60:
            total += term
            n += 1
            term *= x / n
        return total + term
    return 1.0 - exp(-x) * (1.0 + x + 0.5 * x * x + x * x * x / 6.0)


cdef struct Problem:
    int forward
    double* fparams   # row-major, 4 x 4 (exact) or 4 x 10 (polynomial)
    double eta
    int complete
    int loss
    double* data
    double* weights


cdef void _probs(const double* th, Problem* pr, double* out) nogil:
    cdef double t0 = th[0], tau = th[1], q = th[2]
    cdef double da, db, a0, a1, a2, a3, b0, b1, b2, b3, alpha, beta, pj, total = 0.0
    cdef double f[10]
    cdef const double* row
    cdef int j, k
    if pr.forward == 0:
        da = 0.5 * (t0 - 0.5 * tau)
        db = 0.5 * (t0 + 0.5 * tau)
        a0 = exp(-0.5 * da * da)
        a1 = a0 * da
        a2 = a1 * da * INV_SQRT2
        a3 = a2 * da * INV_SQRT3
        b0 = exp(-0.5 * db * db)
        b1 = b0 * db
        b2 = b1 * db * INV_SQRT2
        b3 = b2 * db * INV_SQRT3
        for j in range(4):
            row = pr.fparams + 4 * j
            alpha = row[0] * a0 + row[1] * a1 + row[2] * a2 + row[3] * a3
            beta = row[0] * b0 + row[1] * b1 + row[2] * b2 + row[3] * b3
            pj = pr.eta * (q * alpha * alpha + (1.0 - q) * beta * beta)
            out[j] = pj
            total += pj
        if pr.complete:
            out[4] = (1.0 - pr.eta) + pr.eta * (q * _tail4(da * da) + (1.0 - q) * _tail4(db * db))
        else:
            out[4] = 1.0 - total
    else:
        f[0] = 1.0; f[1] = t0; f[2] = tau; f[3] = q; f[4] = t0 * t0
        f[5] = t0 * tau; f[6] = t0 * q; f[7] = tau * tau; f[8] = tau * q; f[9] = t0 * tau * q
        for j in range(4):
            row = pr.fparams + 10 * j
            pj = 0.0
            for k in range(10):
                pj += row[k] * f[k]
            out[j] = pj
            total += pj
        out[4] = 1.0 - total


cdef double _objective(const double* th, Problem* pr) nogil:
    cdef double p[5]
    cdef double value = 0.0, n, m, n_tot, r
    cdef int k
    _probs(th, pr, p)
    if pr.loss == 0:
        n_tot = pr.data[0] + pr.data[1] + pr.data[2] + pr.data[3] + pr.data[4]
        for k in range(5):
            n = pr.data[k]
            if n > 0:
                if p[k] <= 0.0:
                    return PENALTY
                value += n * log(n / (n_tot * p[k]))
    elif pr.loss == 1:
        m = pr.data[4]
        for k in range(4):
            n = pr.data[k]
            if n > 0:
                if p[k] <= 0.0:
                    return PENALTY
                value += n * log(n / (m * p[k]))
            if m - n > 0:
                if p[k] >= 1.0:
                    return PENALTY
                value += (m - n) * log((m - n) / (m * (1.0 - p[k])))
    else:
        for k in range(5):
            r = pr.data[k] - p[k]
            value += pr.weights[k] * r * r
    return value


cdef inline void _clip3(double* x, const double* lo, const double* hi) nogil:
    cdef int i
    for i in range(3):
        if x[i] < lo[i]:
            x[i] = lo[i]
        elif x[i] > hi[i]:
            x[i] = hi[i]


cdef int _nelder_mead(Problem* pr, double* x0, const double* lo, const double* hi,
                      int max_iter, double xtol, double ftol,
                      double* xbest, double* fbest, int* converged) nogil:
    cdef double s[4][3]
    cdef double v[4]
    cdef double tmp[3]
    cdef double cen[3], xr[3], xe[3], xc[3]
    cdef double fr, fe, fc, ftmp, spread, diam, step
    cdef int i, k, a, it = 0, shrink
    _clip3(x0, lo, hi)
    for i in range(3):
        s[0][i] = x0[i]
    for k in range(3):
        step = 0.05 * (hi[k] - lo[k])
        if step == 0.0:
            step = 1e-3
        for i in range(3):
            s[k + 1][i] = x0[i]
        if s[k + 1][k] + step <= hi[k]:
            s[k + 1][k] = s[k + 1][k] + step
        else:
            s[k + 1][k] = s[k + 1][k] - step
        _clip3(s[k + 1], lo, hi)
    for k in range(4):
        v[k] = _objective(s[k], pr)
    converged[0] = 0
    while it < max_iter:
        # stable insertion sort, matching Python's sorted()
        for a in range(1, 4):
            k = a
            while k > 0 and v[k] < v[k - 1]:
                ftmp = v[k]; v[k] = v[k - 1]; v[k - 1] = ftmp
                for i in range(3):
                    tmp[i] = s[k][i]; s[k][i] = s[k - 1][i]; s[k - 1][i] = tmp[i]
                k -= 1
        spread = v[3] - v[0]
        diam = 0.0
        for k in range(1, 4):
            for i in range(3):
                if fabs(s[k][i] - s[0][i]) > diam:
                    diam = fabs(s[k][i] - s[0][i])
        if spread <= ftol * (1.0 + fabs(v[0])) and diam <= xtol:
            converged[0] = 1
            break
        it += 1
        for i in range(3):
            cen[i] = (s[0][i] + s[1][i] + s[2][i]) / 3
            xr[i] = 2.0 * cen[i] - s[3][i]
        _clip3(xr, lo, hi)
        fr = _objective(xr, pr)
        if fr < v[0]:
            for i in range(3):
                xe[i] = 3.0 * cen[i] - 2.0 * s[3][i]
            _clip3(xe, lo, hi)
            fe = _objective(xe, pr)
            if fe < fr:
                for i in range(3):
                    s[3][i] = xe[i]
                v[3] = fe
            else:
                for i in range(3):
                    s[3][i] = xr[i]
                v[3] = fr
            continue
        if fr < v[2]:
            for i in range(3):
                s[3][i] = xr[i]
            v[3] = fr
            continue
        shrink = 1
        if fr < v[3]:
            for i in range(3):
                xc[i] = cen[i] + 0.5 * (xr[i] - cen[i])
            _clip3(xc, lo, hi)
            fc = _objective(xc, pr)
            if fc <= fr:
                for i in range(3):
                    s[3][i] = xc[i]
                v[3] = fc
                shrink = 0
        else:
            for i in range(3):
                xc[i] = cen[i] + 0.5 * (s[3][i] - cen[i])
            _clip3(xc, lo, hi)
            fc = _objective(xc, pr)
            if fc < v[3]:
                for i in range(3):
                    s[3][i] = xc[i]
                v[3] = fc
                shrink = 0
        if shrink:
            for k in range(1, 4):
                for i in range(3):
                    s[k][i] = s[0][i] + 0.5 * (s[k][i] - s[0][i])
                v[k] = _objective(s[k], pr)
    k = 0
    for a in range(1, 4):
        if v[a] < v[k]:
            k = a
    for i in range(3):
        xbest[i] = s[k][i]
    fbest[0] = v[k]
    return it


cdef Problem _problem(int forward, double[:, ::1] fparams, double eta, bint complete,
                      int loss, double[::1] data, double[::1] weights):
    cdef Problem pr
    pr.forward = forward
    pr.fparams = &fparams[0, 0]
    pr.eta = eta
    pr.complete = complete
    pr.loss = loss
    pr.data = &data[0]
    pr.weights = &weights[0]
    return pr


def _arrays(fparams, data, weights):
    return (np.ascontiguousarray(fparams, dtype=np.float64),
            np.ascontiguousarray(data, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64))


def probabilities(theta, int forward, fparams, double eta, bint complete):
    cdef double[:, ::1] fp = np.ascontiguousarray(fparams, dtype=np.float64)
    cdef double[::1] dummy = np.zeros(5)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double out[5]
    cdef Problem pr = _problem(forward, fp, eta, complete, 0, dummy, dummy)
    _probs(&th[0], &pr, out)
    return [out[0], out[1], out[2], out[3], out[4]]


def objective(theta, int forward, fparams, double eta, bint complete, int loss, data, weights):
    fp_a, data_a, w_a = _arrays(fparams, data, weights)
    cdef double[:, ::1] fp = fp_a
    cdef double[::1] d = data_a
    cdef double[::1] w = w_a
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Problem pr = _problem(forward, fp, eta, complete, loss, d, w)
    return _objective(&th[0], &pr)


def evaluate_many(points, int forward, fparams, double eta, bint complete, int loss, data, weights):
    fp_a, data_a, w_a = _arrays(fparams, data, weights)
    cdef double[:, ::1] fp = fp_a
    cdef double[::1] d = data_a
    cdef double[::1] w = w_a
    cdef double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64)
    cdef Problem pr = _problem(forward, fp, eta, complete, loss, d, w)
    out = np.empty(pts.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t k
    with nogil:
        for k in range(pts.shape[0]):
            o[k] = _objective(&pts[k, 0], &pr)
    return out.tolist()


def minimize(starts, lo, hi, int forward, fparams, double eta, bint complete, int loss, data, weights,
             int n_local=3, int max_iter=500, double xtol=1e-10, double ftol=1e-12):
    fp_a, data_a, w_a = _arrays(fparams, data, weights)
    cdef double[:, ::1] fp = fp_a
    cdef double[::1] d = data_a
    cdef double[::1] w = w_a
    cdef double[:, ::1] st = np.ascontiguousarray(starts, dtype=np.float64)
    cdef double[::1] lo_v = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hi_v = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Problem pr = _problem(forward, fp, eta, complete, loss, d, w)
    cdef Py_ssize_t n_starts = st.shape[0], k
    values = np.empty(n_starts)
    cdef double[::1] vals = values
    with nogil:
        for k in range(n_starts):
            vals[k] = _objective(&st[k, 0], &pr)
    ranked = sorted(range(n_starts), key=lambda j: (values[j], j))[:n_local]

    cdef double x0[3]
    cdef double xb[3]
    cdef double fb
    cdef int conv, it, total_iter = 0
    best_x = None
    best_f = 0.0
    best_conv = 0
    for k in ranked:
        x0[0] = st[k, 0]; x0[1] = st[k, 1]; x0[2] = st[k, 2]
        with nogil:
            it = _nelder_mead(&pr, x0, &lo_v[0], &hi_v[0], max_iter, xtol, ftol, xb, &fb, &conv)
        total_iter += it
        if best_x is None or fb < best_f:
            best_x = [xb[0], xb[1], xb[2]]
            best_f = fb
            best_conv = conv
    return best_x, best_f, total_iter, bool(best_conv)
