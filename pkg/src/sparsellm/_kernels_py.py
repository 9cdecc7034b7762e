"""Pure-NumPy implementations of the per-entry update kernels.

These are the vectorized fallbacks for the compiled extension module
(``sparsellm._accel``).  Both backends implement the same algorithms; the
compiled one loops over entries in C, this one broadcasts over the whole
array.  Entries are fully decoupled, so any evaluation order gives the
same result.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

BACKEND = "python"

# Grid/refinement sizes for the bracketed scalar minimizer.  The coarse
# grid localizes every basin of the (possibly multimodal) objective, the
# sub-grid resolves twin minima near the SiLU knee, golden section plus a
# few guarded Newton steps polish to machine-level accuracy.
_COARSE = 129
_SUBGRID = 33
_CANDIDATES = 4
_GOLDEN_ITERS = 48
_NEWTON_ITERS = 3
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _silu(s):
    return s * expit(s)


def _gate_loss(s, t, z, w, alpha, beta):
    r = t - _silu(s) * z
    d = s - w
    return beta * r * r + alpha * d * d


def _gate_grad(s, t, z, w, alpha, beta):
    sig = expit(s)
    silu = s * sig
    dsilu = sig * (1.0 + s * (1.0 - sig))
    return 2.0 * alpha * (s - w) - 2.0 * beta * z * dsilu * (t - silu * z)


def _gate_hess(s, t, z, w, alpha, beta):
    sig = expit(s)
    silu = s * sig
    dsilu = sig * (1.0 + s * (1.0 - sig))
    d2silu = sig * (1.0 - sig) * (2.0 + s * (1.0 - 2.0 * sig))
    return 2.0 * alpha + 2.0 * beta * (
        z * z * dsilu * dsilu - z * d2silu * (t - silu * z)
    )


def relu_branch_update(c, t, alpha, beta, exact=True):
    """Per-entry minimizer of ``beta*(t - relu(z))**2 + alpha*(z - c)**2``.

    ``exact`` evaluates both clamped branch minimizers (negative branch,
    where relu vanishes, and non-negative branch) and keeps the lower
    loss; otherwise the branch is picked from the sign of ``c`` alone.
    """
    c = np.asarray(c, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    z2 = (beta * t + alpha * c) / (alpha + beta)
    if not exact:
        return np.where(c < 0.0, c, z2)
    z1c = np.minimum(c, 0.0)
    z2c = np.maximum(z2, 0.0)
    loss1 = beta * t * t + alpha * (z1c - c) ** 2
    loss2 = beta * (t - z2c) ** 2 + alpha * (z2c - c) ** 2
    return np.where(loss2 < loss1, z2c, z1c)


def gated_output_update(c, g, t, alpha, beta):
    """Per-entry minimizer of ``beta*(t - g*z)**2 + alpha*(z - c)**2``.

    The stationary point of the quadratic; the denominator is positive
    whenever ``alpha > 0``.
    """
    c = np.asarray(c, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return (alpha * c + beta * g * t) / (alpha + beta * g * g)


def _golden(lo, hi, t, z, w, alpha, beta, iters):
    """Vectorized golden-section search on per-entry intervals."""
    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1 = _gate_loss(x1, t, z, w, alpha, beta)
    f2 = _gate_loss(x2, t, z, w, alpha, beta)
    for _ in range(iters):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1n = np.where(left, hi - _INVPHI * (hi - lo), x2)
        x2n = np.where(left, x1, lo + _INVPHI * (hi - lo))
        xe = np.where(left, x1n, x2n)
        fe = _gate_loss(xe, t, z, w, alpha, beta)
        f1n = np.where(left, fe, f2)
        f2n = np.where(left, f1, fe)
        x1, x2, f1, f2 = x1n, x2n, f1n, f2n
    mid = 0.5 * (lo + hi)
    return mid, _gate_loss(mid, t, z, w, alpha, beta)


def gate_minimize(t, z, w, alpha, beta, halfwidth):
    """Per-entry global minimizer of the gate objective.

    Minimizes ``beta*(t - silu(s)*z)**2 + alpha*(s - w)**2`` for every
    entry over the bracket ``[w - halfwidth, w + halfwidth]``; guarded
    Newton polishing may step slightly outside the bracket, which can
    only improve the objective.  All inputs broadcast together.
    """
    t, z, w, hw = np.broadcast_arrays(
        np.asarray(t, dtype=np.float64),
        np.asarray(z, dtype=np.float64),
        np.asarray(w, dtype=np.float64),
        np.asarray(halfwidth, dtype=np.float64),
    )
    shape = t.shape
    t = t.ravel()
    z = z.ravel()
    w = w.ravel()
    hw = hw.ravel()
    n = t.size
    lo = w - hw
    hi = w + hw

    # Coarse scan: keep every discrete local minimum as a candidate basin.
    grid = np.linspace(0.0, 1.0, _COARSE)
    xs = lo[:, None] + (hi - lo)[:, None] * grid[None, :]
    fs = _gate_loss(xs, t[:, None], z[:, None], w[:, None], alpha, beta)
    is_min = np.empty_like(fs, dtype=bool)
    is_min[:, 0] = fs[:, 0] <= fs[:, 1]
    is_min[:, -1] = fs[:, -1] <= fs[:, -2]
    is_min[:, 1:-1] = (fs[:, 1:-1] <= fs[:, :-2]) & (fs[:, 1:-1] <= fs[:, 2:])
    masked = np.where(is_min, fs, np.inf)
    order = np.argsort(masked, axis=1, kind="stable")[:, :_CANDIDATES]

    best_s = xs[np.arange(n), order[:, 0]]
    best_f = np.full(n, np.inf)
    cell = (hi - lo) / (_COARSE - 1)
    sub = np.linspace(0.0, 1.0, _SUBGRID)
    for k in range(_CANDIDATES):
        idx = order[:, k]
        c_lo = np.maximum(lo, xs[np.arange(n), idx] - cell)
        c_hi = np.minimum(hi, xs[np.arange(n), idx] + cell)
        sxs = c_lo[:, None] + (c_hi - c_lo)[:, None] * sub[None, :]
        sfs = _gate_loss(sxs, t[:, None], z[:, None], w[:, None], alpha, beta)
        j = np.argmin(sfs, axis=1)
        scell = (c_hi - c_lo) / (_SUBGRID - 1)
        g_lo = np.maximum(c_lo, sxs[np.arange(n), j] - scell)
        g_hi = np.minimum(c_hi, sxs[np.arange(n), j] + scell)
        s_k, f_k = _golden(g_lo, g_hi, t, z, w, alpha, beta, _GOLDEN_ITERS)
        improve = f_k < best_f
        best_s = np.where(improve, s_k, best_s)
        best_f = np.where(improve, f_k, best_f)

    # Guarded Newton polish: accept a step only where it lowers the loss.
    for _ in range(_NEWTON_ITERS):
        grad = _gate_grad(best_s, t, z, w, alpha, beta)
        hess = _gate_hess(best_s, t, z, w, alpha, beta)
        safe = hess > 1e-300
        step = np.where(safe, grad / np.where(safe, hess, 1.0), 0.0)
        cand = best_s - step
        f_cand = _gate_loss(cand, t, z, w, alpha, beta)
        improve = f_cand < best_f
        best_s = np.where(improve, cand, best_s)
        best_f = np.where(improve, f_cand, best_f)

    return best_s.reshape(shape)
