"""Dense numerical kernels underlying every solver step.

All routines operate on 2-D float64 NumPy arrays (row-major), validate
finiteness, and are pure functions of their inputs.  Matrices narrower
than float64 are widened on entry; results are always float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from . import kernels
from .errors import InvalidInputError, ShapeError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 C-contiguous array."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.size == 0:
        raise ShapeError(f"{name} must be nonempty")
    if not np.isfinite(out).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return out


def check_finite(a: np.ndarray, name: str = "result") -> np.ndarray:
    if not np.isfinite(a).all():
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def relu(z):
    """Elementwise max(z, 0)."""
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def sigmoid(z):
    """Numerically stable logistic function."""
    return expit(np.asarray(z, dtype=np.float64))


def silu(z):
    """Elementwise z * sigmoid(z)."""
    z = np.asarray(z, dtype=np.float64)
    return z * expit(z)


def pinv(a, tol: float = 0.0, rtol: float = 0.0) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Parameters
    ----------
    a : array_like
        Nonempty 2-D matrix.
    tol : float
        Absolute cutoff below which singular values are zeroed.  ``0``
        selects the automatic cutoff ``eps * max(m, n) * sigma_max``.
    rtol : float
        Additional cutoff relative to the largest singular value; the
        effective cutoff is the maximum of the two.
    """
    a = as_matrix(a, "pinv input")
    if tol < 0 or rtol < 0:
        raise InvalidInputError(f"tol and rtol must be >= 0, got {tol}, {rtol}")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError(f"SVD failed: {exc}") from exc
    if s.size and s[0] > 0:
        cutoff = tol if tol > 0 else np.finfo(np.float64).eps * max(a.shape) * s[0]
        cutoff = max(cutoff, rtol * s[0])
    else:
        cutoff = np.inf
    keep = s >= cutoff
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return check_finite((vt.T * inv_s) @ u.T, "pinv result")


def spd_solve(w, alpha: float, beta: float, rhs) -> np.ndarray:
    """Solve ``(alpha * W.T @ W + beta * I) X = RHS`` by Cholesky.

    ``beta > 0`` keeps the system positive definite for any W.
    """
    w = as_matrix(w, "spd_solve W")
    rhs = as_matrix(rhs, "spd_solve RHS")
    if alpha < 0 or beta <= 0:
        raise InvalidInputError(f"need alpha >= 0 and beta > 0, got {alpha}, {beta}")
    h = w.shape[1]
    if rhs.shape[0] != h:
        raise ShapeError(
            f"RHS rows ({rhs.shape[0]}) must match W columns ({h})")
    gram = alpha * (w.T @ w) + beta * np.eye(h)
    c, low = scipy.linalg.cho_factor(gram, check_finite=False)
    x = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    return check_finite(x, "spd_solve result")


def masked_row_lstsq(w_row, x, support, damp: float = 0.0,
                     gram=None, rhs_full=None) -> np.ndarray:
    """Least-squares refit of one weight row restricted to a support set.

    Minimizes ``||w_row @ X - u @ X_S||^2`` over rows ``u`` supported on
    ``support``, with Tikhonov damping ``damp * mean(diag(X_S @ X_S.T))``
    added to the normal equations.  Returns the full-width row with
    zeros off the support.  ``gram`` (``X @ X.T``) and ``rhs_full``
    (``gram @ w_row``) may be supplied to reuse precomputed products.

    Empty support returns the all-zero row.  A singular undamped normal
    matrix falls back to the pseudo-inverse (minimum-norm) solution.
    """
    w_row = np.ascontiguousarray(w_row, dtype=np.float64).ravel()
    if damp < 0:
        raise InvalidInputError(f"damp must be >= 0, got {damp}")
    support = np.asarray(support, dtype=np.intp).ravel()
    out = np.zeros_like(w_row)
    if support.size == 0:
        return out
    if gram is None:
        x = as_matrix(x, "masked_row_lstsq X")
        if x.shape[0] != w_row.size:
            raise ShapeError(
                f"X rows ({x.shape[0]}) must match row width ({w_row.size})")
        gram = x @ x.T
    if rhs_full is None:
        rhs_full = gram @ w_row
    gs = gram[np.ix_(support, support)]
    rhs = rhs_full[support]
    lam = damp * float(np.mean(np.diag(gs))) if damp > 0 else 0.0
    sys = gs + lam * np.eye(support.size) if lam > 0 else gs
    try:
        c, low = scipy.linalg.cho_factor(sys, check_finite=False)
        u = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
        if not np.isfinite(u).all():
            raise np.linalg.LinAlgError("non-finite solve")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
        u = pinv(sys) @ rhs
    out[support] = u
    return check_finite(out, "masked_row_lstsq result")


@dataclass(frozen=True)
class ScalarObjective:
    """Coefficients of ``f(s) = beta*(a - silu(s)*z)**2 + alpha*(s - w)**2``."""

    a_entry: float
    z_entry: float
    w_entry: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidInputError(
                f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")
        vals = (self.a_entry, self.z_entry, self.w_entry, self.alpha, self.beta)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidInputError("objective coefficients must be finite")

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        r = self.a_entry - silu(s) * self.z_entry
        d = s - self.w_entry
        return self.beta * r * r + self.alpha * d * d


def scalar_minimize(obj: ScalarObjective, bracket_halfwidth: float,
                    tol: float = 1e-10) -> float:
    """Global minimum of a :class:`ScalarObjective` on its bracket.

    Searches ``[w - bracket_halfwidth, w + bracket_halfwidth]``; the
    final stationary-point polish may land just outside, which only
    lowers the objective.  ``tol`` is accepted for interface stability;
    the bracketed refinement already resolves far below any practical
    tolerance.
    """
    if bracket_halfwidth <= 0:
        raise InvalidInputError(
            f"bracket_halfwidth must be > 0, got {bracket_halfwidth}")
    if tol <= 0:
        raise InvalidInputError(f"tol must be > 0, got {tol}")
    s = kernels.gate_minimize(
        np.array([obj.a_entry]), np.array([obj.z_entry]),
        np.array([obj.w_entry]), obj.alpha, obj.beta,
        np.array([bracket_halfwidth]))
    return float(s[0])
