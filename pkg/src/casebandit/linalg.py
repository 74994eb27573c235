"""Regularised design matrices kept as an incrementally updated inverse.

The design matrix ``A = lambda*I + sum z z^T`` is never stored; only its
inverse is, updated with the Sherman-Morrison identity at O(d^2) per step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, NumericalDegeneracyError

NEGATIVE_SLACK = 1e-12


def as_vec(x, dim=None, name="vector"):
    """Coerce to a contiguous finite float64 1-D array, optionally checking size."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise InvalidArgumentError(f"{name} has dim {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return v


@dataclass
class PDInverse:
    """Inverse of a symmetric positive-definite regularised design matrix."""

    dim: int
    inv: np.ndarray
    lam: float
    update_count: int = 0

    def copy(self) -> "PDInverse":
        return PDInverse(self.dim, self.inv.copy(), self.lam, self.update_count)


def design_init(d: int, lam: float) -> PDInverse:
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise InvalidArgumentError(f"dimension must be a positive integer, got {d!r}")
    if not (lam > 0) or not np.isfinite(lam):
        raise InvalidArgumentError(f"lambda must be positive, got {lam!r}")
    return PDInverse(int(d), np.eye(int(d)) / float(lam), float(lam), 0)


def rank_one_update(state: PDInverse, z) -> PDInverse:
    """Return the state for ``A + z z^T``; ``state`` itself is left untouched."""
    z = as_vec(z, state.dim, "z")
    inv = kernels.sherman_morrison(state.inv, z)
    return PDInverse(state.dim, inv, state.lam, state.update_count + 1)


def mahalanobis(state: PDInverse, z) -> float:
    """``sqrt(z^T A^{-1} z)``."""
    z = as_vec(z, state.dim, "z")
    return float(mahalanobis_rows(state, z[None, :])[0])


def mahalanobis_rows(state: PDInverse, Z) -> np.ndarray:
    """Vectorised :func:`mahalanobis` over the rows of ``Z``."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != state.dim:
        raise InvalidArgumentError(f"rows must have dim {state.dim}, got shape {Z.shape}")
    q = np.asarray(kernels.quad_forms(state.inv, Z))
    if np.any(q < -NEGATIVE_SLACK):
        raise NumericalDegeneracyError(
            f"negative quadratic form {q.min():.3e}; design inverse is no longer positive definite"
        )
    return np.sqrt(np.maximum(q, 0.0))


def dense_design_inverse(lam: float, Z) -> np.ndarray:
    """Oracle: invert ``lam*I + Z^T Z`` directly (used by tests and validate)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    d = Z.shape[1]
    return np.linalg.inv(lam * np.eye(d) + Z.T @ Z)
