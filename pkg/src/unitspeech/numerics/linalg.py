"""Array-level linear algebra on float64 matrices."""

import numpy as np

from ..exceptions import ContractError, NonFiniteError, ShapeError
from .kernels import bmm_kernel, matmul_kernel


def as_matrix(x, name="matrix"):
    """Return ``x`` as a C-contiguous float64 2-D array with finite entries."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with deterministic left-to-right accumulation.

    Bitwise equal to the naive triple loop ``out[i,j] = sum_k a[i,k]*b[k,j]``.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return matmul_kernel(a, b)


def bmm(a, b):
    """Batched matmul over the leading axis, same summation order as :func:`matmul`."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: cannot multiply {a.shape} by {b.shape}")
    return bmm_kernel(a, b)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax_cross_entropy(logits, targets, weights=None):
    """Mean negative log-likelihood of ``targets`` under row-wise softmax.

    Returns ``(loss, grad)`` where ``grad`` is d loss / d logits. With
    ``weights`` (e.g. a 0/1 completion mask) the mean is taken over the
    weighted rows only; rows of weight zero receive exactly zero gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {logits.shape}")
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} does not match {n} logit rows")
    bad = np.flatnonzero((targets < 0) | (targets >= v))
    if bad.size:
        p = int(bad[0])
        raise ContractError(f"target {int(targets[p])} at position {p} outside [0, {v})")
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=np.float64)
    total = float(np.sum(weights))
    if total <= 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    rows = np.arange(n)
    nll = -logp[rows, targets]
    loss = float(np.sum(nll * weights) / total)
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad *= (weights / total)[:, None]
    return loss, grad
