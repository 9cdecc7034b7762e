"""Layer-wise pruning: saliency scores, mask construction, weight refit.

A layer is pruned in three steps: score every weight (magnitude or
activation-weighted magnitude), build a binary mask from the scores
(global top-k within the matrix, or n:m groups along each row), then
re-solve the kept weights row by row against the calibration inputs
with the mask fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import ConfigError, InvalidInputError, ShapeError

CRITERIA = ("magnitude", "wanda")


@dataclass(frozen=True)
class Unstructured:
    """Keep the globally highest-scoring weights; ``fraction`` are zeroed."""

    fraction: float

    def __post_init__(self):
        if not (0.0 <= self.fraction <= 1.0):
            raise ConfigError(f"sparsity fraction must be in [0, 1], got {self.fraction}")

    def zero_count(self, numel: int) -> int:
        return int(math.floor(self.fraction * numel + 0.5))

    def describe(self) -> str:
        return f"unstructured({self.fraction})"


@dataclass(frozen=True)
class SemiStructured:
    """Keep exactly n of every m consecutive weights along each row."""

    n: int
    m: int

    def __post_init__(self):
        if not (0 < self.n <= self.m):
            raise ConfigError(f"need 0 < n <= m, got {self.n}:{self.m}")

    @property
    def fraction(self) -> float:
        return 1.0 - self.n / self.m

    def describe(self) -> str:
        return f"{self.n}:{self.m}"


Pattern = Unstructured | SemiStructured


@dataclass
class Mask:
    """Binary keep-mask with its declared sparsity pattern."""

    values: np.ndarray  # bool, True = kept
    pattern: Pattern

    @property
    def shape(self):
        return self.values.shape

    def zero_fraction(self) -> float:
        return 1.0 - float(np.count_nonzero(self.values)) / self.values.size

    def violations(self) -> int:
        """Number of declared-pattern violations (0 means valid)."""
        if isinstance(self.pattern, Unstructured):
            want = self.pattern.zero_count(self.values.size)
            have = self.values.size - int(np.count_nonzero(self.values))
            return abs(have - want)
        rows, cols = self.values.shape
        groups = self.values.reshape(rows, cols // self.pattern.m, self.pattern.m)
        per_group = groups.sum(axis=2)
        return int(np.count_nonzero(per_group != self.pattern.n))


def compute_scores(w, x=None, criterion: str = "magnitude") -> np.ndarray:
    """Saliency of each weight: |w|, or |w| times the input-feature norm."""
    w = numkit.as_matrix(w, "weights")
    if criterion == "magnitude":
        return np.abs(w)
    if criterion == "wanda":
        if x is None:
            raise InvalidInputError("wanda criterion requires calibration activations")
        x = numkit.as_matrix(x, "activations")
        if x.shape[0] != w.shape[1]:
            raise ShapeError(
                f"activation rows ({x.shape[0]}) must match weight columns ({w.shape[1]})")
        norms = np.linalg.norm(x, axis=1)
        return np.abs(w) * norms[None, :]
    raise ConfigError(f"unknown criterion {criterion!r}")


def build_mask(scores, pattern: Pattern) -> Mask:
    """Deterministic mask from scores; score ties keep the lower flat index."""
    scores = numkit.as_matrix(scores, "scores")
    rows, cols = scores.shape
    if isinstance(pattern, Unstructured):
        numel = scores.size
        keep = numel - pattern.zero_count(numel)
        order = np.argsort(-scores.ravel(), kind="stable")
        flat = np.zeros(numel, dtype=bool)
        flat[order[:keep]] = True
        return Mask(flat.reshape(rows, cols), pattern)
    if isinstance(pattern, SemiStructured):
        if cols % pattern.m != 0:
            raise ConfigError(
                f"columns ({cols}) not divisible by group size m={pattern.m}")
        grouped = scores.reshape(rows, cols // pattern.m, pattern.m)
        order = np.argsort(-grouped, axis=2, kind="stable")
        vals = np.zeros_like(grouped, dtype=bool)
        np.put_along_axis(vals, order[:, :, : pattern.n], True, axis=2)
        return Mask(vals.reshape(rows, cols), pattern)
    raise ConfigError(f"unsupported pattern {pattern!r}")


def reconstruct_weights(w, x, mask: Mask, damp: float = 0.01) -> np.ndarray:
    """Refit kept weights with the mask fixed.

    Each row is re-solved by damped least squares on its support; a row
    keeps its zero-filled original values whenever the refit does not
    strictly lower that row's data error, so the result is never worse
    than naive masking.
    """
    w = numkit.as_matrix(w, "weights")
    x = numkit.as_matrix(x, "activations")
    if mask.values.shape != w.shape:
        raise ShapeError(f"mask shape {mask.values.shape} != weights shape {w.shape}")
    if x.shape[0] != w.shape[1]:
        raise ShapeError(
            f"activation rows ({x.shape[0]}) must match weight columns ({w.shape[1]})")
    gram = x @ x.T
    rhs_all = gram @ w.T  # column r is gram @ w[r]
    out = np.zeros_like(w)
    for r in range(w.shape[0]):
        row = w[r]
        keep = np.flatnonzero(mask.values[r])
        if keep.size == 0:
            continue
        rhs_full = rhs_all[:, r]
        cand = numkit.masked_row_lstsq(row, x, keep, damp,
                                       gram=gram, rhs_full=rhs_full)
        # Row data error via quadratic forms: ||u X - w X||^2 with yy = w G w.
        yy = float(row @ rhs_full)
        u = cand[keep]
        err_fit = yy - 2.0 * float(u @ rhs_full[keep]) + float(u @ gram[np.ix_(keep, keep)] @ u)
        u0 = row[keep]
        err_zero = yy - 2.0 * float(u0 @ rhs_full[keep]) + float(u0 @ gram[np.ix_(keep, keep)] @ u0)
        if err_fit < err_zero:
            out[r] = cand
        else:
            out[r, keep] = row[keep]
    return out


def layer_error(w, w_hat, x) -> float:
    """Squared output discrepancy ``||W X - What X||^2``."""
    d = (w - w_hat) @ x
    return float(np.sum(d * d))


def prune_layer_local(w, x, pattern: Pattern, criterion: str = "magnitude",
                      damp: float = 0.01):
    """Score -> mask -> refit for one layer; returns (mask, weights, error)."""
    scores = compute_scores(w, x if criterion == "wanda" else None, criterion)
    mask = build_mask(scores, pattern)
    w_hat = reconstruct_weights(w, x, mask, damp)
    return mask, w_hat, layer_error(numkit.as_matrix(w), w_hat, numkit.as_matrix(x))
