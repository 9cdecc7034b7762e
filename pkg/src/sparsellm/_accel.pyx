# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-entry update kernels.

Scalar C loops over decoupled entries; mirrors the algorithms in
``sparsellm._kernels_py``.  Selected at import by ``sparsellm.kernels``
when available.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt

cnp.import_array()

BACKEND = "compiled"

cdef int COARSE = 129
cdef int SUBGRID = 33
cdef int CANDIDATES = 4
cdef int GOLDEN_ITERS = 48
cdef int NEWTON_ITERS = 3
cdef double INVPHI = 0.6180339887498949


cdef inline double _sigmoid(double s) nogil:
    if s >= 0.0:
        return 1.0 / (1.0 + exp(-s))
    cdef double e = exp(s)
    return e / (1.0 + e)


cdef inline double _loss(double s, double t, double z, double w,
                         double alpha, double beta) nogil:
    cdef double r = t - s * _sigmoid(s) * z
    cdef double d = s - w
    return beta * r * r + alpha * d * d


cdef inline double _golden_scalar(double lo, double hi, double t, double z,
                                  double w, double alpha, double beta,
                                  double *fout) nogil:
    cdef double x1 = hi - INVPHI * (hi - lo)
    cdef double x2 = lo + INVPHI * (hi - lo)
    cdef double f1 = _loss(x1, t, z, w, alpha, beta)
    cdef double f2 = _loss(x2, t, z, w, alpha, beta)
    cdef int i
    for i in range(GOLDEN_ITERS):
        if f1 < f2:
            hi = x2
            x2 = x1
            f2 = f1
            x1 = hi - INVPHI * (hi - lo)
            f1 = _loss(x1, t, z, w, alpha, beta)
        else:
            lo = x1
            x1 = x2
            f1 = f2
            x2 = lo + INVPHI * (hi - lo)
            f2 = _loss(x2, t, z, w, alpha, beta)
    cdef double mid = 0.5 * (lo + hi)
    fout[0] = _loss(mid, t, z, w, alpha, beta)
    return mid


cdef double _gate_entry(double t, double z, double w, double alpha,
                        double beta, double hw) nogil:
    cdef double lo = w - hw
    cdef double hi = w + hw
    cdef double width = hi - lo
    cdef double fs[129]
    cdef int cand_idx[4]
    cdef double cand_val[4]
    cdef int i, k, j, worst
    cdef double x, f, cell, c_lo, c_hi, scell, g_lo, g_hi
    cdef double best_s, best_f, s_k, f_k
    cdef double sig, silu, dsilu, d2silu, grad, hess, step, cnd, f_cnd
    cdef double sub_best_f, sub_best_x, sx, sf

    for i in range(COARSE):
        fs[i] = _loss(lo + width * i / (COARSE - 1), t, z, w, alpha, beta)

    # Collect the lowest-valued discrete local minima of the coarse scan.
    for k in range(CANDIDATES):
        cand_idx[k] = -1
        cand_val[k] = 1e308
    for i in range(COARSE):
        if i > 0 and fs[i] > fs[i - 1]:
            continue
        if i < COARSE - 1 and fs[i] > fs[i + 1]:
            continue
        worst = 0
        for k in range(1, CANDIDATES):
            if cand_val[k] > cand_val[worst]:
                worst = k
        if fs[i] < cand_val[worst]:
            cand_val[worst] = fs[i]
            cand_idx[worst] = i

    best_s = lo
    best_f = 1e308
    cell = width / (COARSE - 1)
    for k in range(CANDIDATES):
        if cand_idx[k] < 0:
            continue
        x = lo + width * cand_idx[k] / (COARSE - 1)
        c_lo = x - cell
        c_hi = x + cell
        if c_lo < lo:
            c_lo = lo
        if c_hi > hi:
            c_hi = hi
        sub_best_f = 1e308
        sub_best_x = c_lo
        for j in range(SUBGRID):
            sx = c_lo + (c_hi - c_lo) * j / (SUBGRID - 1)
            sf = _loss(sx, t, z, w, alpha, beta)
            if sf < sub_best_f:
                sub_best_f = sf
                sub_best_x = sx
        scell = (c_hi - c_lo) / (SUBGRID - 1)
        g_lo = sub_best_x - scell
        g_hi = sub_best_x + scell
        if g_lo < c_lo:
            g_lo = c_lo
        if g_hi > c_hi:
            g_hi = c_hi
        s_k = _golden_scalar(g_lo, g_hi, t, z, w, alpha, beta, &f_k)
        if f_k < best_f:
            best_f = f_k
            best_s = s_k

    # Guarded Newton polish on the smooth objective.
    for i in range(NEWTON_ITERS):
        sig = _sigmoid(best_s)
        silu = best_s * sig
        dsilu = sig * (1.0 + best_s * (1.0 - sig))
        d2silu = sig * (1.0 - sig) * (2.0 + best_s * (1.0 - 2.0 * sig))
        grad = 2.0 * alpha * (best_s - w) - 2.0 * beta * z * dsilu * (t - silu * z)
        hess = 2.0 * alpha + 2.0 * beta * (
            z * z * dsilu * dsilu - z * d2silu * (t - silu * z))
        if hess <= 1e-300:
            break
        step = grad / hess
        cnd = best_s - step
        f_cnd = _loss(cnd, t, z, w, alpha, beta)
        if f_cnd < best_f:
            best_f = f_cnd
            best_s = cnd
    return best_s


def gate_minimize(t, z, w, alpha, beta, halfwidth):
    """Per-entry global minimizer of the gate objective (see python backend)."""
    t_a, z_a, w_a, hw_a = np.broadcast_arrays(
        np.asarray(t, dtype=np.float64),
        np.asarray(z, dtype=np.float64),
        np.asarray(w, dtype=np.float64),
        np.asarray(halfwidth, dtype=np.float64),
    )
    shape = t_a.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tf = np.ascontiguousarray(t_a.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zf = np.ascontiguousarray(z_a.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] wf = np.ascontiguousarray(w_a.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hf = np.ascontiguousarray(hw_a.ravel())
    cdef Py_ssize_t n = tf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double a = alpha
    cdef double b = beta
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _gate_entry(tf[i], zf[i], wf[i], a, b, hf[i])
    return out.reshape(shape)


def relu_branch_update(c, t, alpha, beta, exact=True):
    """Per-entry minimizer of ``beta*(t - relu(z))**2 + alpha*(z - c)**2``."""
    c_a, t_a = np.broadcast_arrays(
        np.asarray(c, dtype=np.float64), np.asarray(t, dtype=np.float64))
    shape = c_a.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cf = np.ascontiguousarray(c_a.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tf = np.ascontiguousarray(t_a.ravel())
    cdef Py_ssize_t n = cf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double a = alpha
    cdef double b = beta
    cdef bint ex = exact
    cdef Py_ssize_t i
    cdef double cv, tv, z2, z1c, z2c, l1, l2
    with nogil:
        for i in range(n):
            cv = cf[i]
            tv = tf[i]
            z2 = (b * tv + a * cv) / (a + b)
            if not ex:
                out[i] = cv if cv < 0.0 else z2
                continue
            z1c = cv if cv < 0.0 else 0.0
            z2c = z2 if z2 > 0.0 else 0.0
            l1 = b * tv * tv + a * (z1c - cv) * (z1c - cv)
            l2 = b * (tv - z2c) * (tv - z2c) + a * (z2c - cv) * (z2c - cv)
            out[i] = z2c if l2 < l1 else z1c
    return out.reshape(shape)


def gated_output_update(c, g, t, alpha, beta):
    """Per-entry minimizer of ``beta*(t - g*z)**2 + alpha*(z - c)**2``."""
    c_a, g_a, t_a = np.broadcast_arrays(
        np.asarray(c, dtype=np.float64),
        np.asarray(g, dtype=np.float64),
        np.asarray(t, dtype=np.float64),
    )
    shape = c_a.shape
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cf = np.ascontiguousarray(c_a.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gf = np.ascontiguousarray(g_a.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tf = np.ascontiguousarray(t_a.ravel())
    cdef Py_ssize_t n = cf.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double a = alpha
    cdef double b = beta
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = (a * cf[i] + b * gf[i] * tf[i]) / (a + b * gf[i] * gf[i])
    return out.reshape(shape)
