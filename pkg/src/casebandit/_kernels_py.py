"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when the environment
variable ``CASEBANDIT_PURE_PYTHON`` is set. Signatures mirror ``_kernels.pyx``.
"""
import numpy as np


def sherman_morrison(inv, z):
    """Return (A + z z^T)^{-1} given inv = A^{-1}; inv must be symmetric."""
    u = inv @ z
    denom = 1.0 + float(z @ u)
    out = inv - np.outer(u, u) / denom
    return 0.5 * (out + out.T)


def quad_forms(inv, Z):
    """Row-wise z^T inv z for a 2-D array of row vectors."""
    return np.einsum("ij,jk,ik->i", Z, inv, Z)


def topk_inner(E, q, k):
    """Indices of the k rows of E with largest <row, q>, ties by lower index."""
    n = E.shape[0]
    if n == 0 or k <= 0:
        return np.empty(0, dtype=np.int64)
    scores = E @ q
    order = np.lexsort((np.arange(n), -scores))
    return order[:k].astype(np.int64)


def logistic_objective(theta, Z, r, lam):
    """Sum of cross-entropies plus (lam/2)|theta|^2, with its gradient."""
    logits = Z @ theta
    # log(1 + e^x) computed stably
    loss = float(np.sum(np.logaddexp(0.0, logits) - r * logits))
    loss += 0.5 * lam * float(theta @ theta)
    p = _sigmoid(logits)
    grad = Z.T @ (p - r) + lam * theta
    return loss, grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
