"""Scalar and array kernels every other module leans on.

All arrays are float64.  Functions that have a hand-derived backward
companion keep it right next to the forward definition so the pair can be
reviewed (and grad-checked) together.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericalError

Array = np.ndarray

LOG_EPS = 1e-7          # clamp for probabilities before log
NORM_EPS = 1e-12        # below this a vector counts as zero for cosine
PROB_SLACK = 1e-9       # tolerated excursion outside [0, 1]


def require_finite(name: str, *arrays: Array) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in {name}")


def sigmoid(x: Array) -> Array:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: Array, axis: int = -1) -> Array:
    """Shift-invariant softmax along `axis`.

    Empty input is a contract violation: there is no distribution over
    nothing, and silently returning NaNs would poison every caller.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise ContractViolation("softmax over an empty axis")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(y: Array, dy: Array, axis: int = -1) -> Array:
    """VJP of softmax given its output `y` and upstream gradient `dy`."""
    inner = np.sum(dy * y, axis=axis, keepdims=True)
    return y * (dy - inner)


def cosine_sim(u: Array, v: Array) -> float:
    """Cosine similarity with the zero-vector convention pinned to 0."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ContractViolation(f"cosine_sim shape mismatch {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_EPS or nv < NORM_EPS:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def cosine_sim_backward(u: Array, v: Array, dc: float) -> tuple[Array, Array]:
    """Gradients of c = cos(u, v) w.r.t. both arguments.

    The near-zero-norm branch returns exact zeros: the forward value is the
    constant 0 there, so the function is locally flat by definition.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_EPS or nv < NORM_EPS:
        return np.zeros_like(u), np.zeros_like(v)
    c = float(np.dot(u, v) / (nu * nv))
    du = dc * (v / (nu * nv) - c * u / (nu * nu))
    dv = dc * (u / (nu * nv) - c * v / (nv * nv))
    return du, dv


def clamped_log(p: Array | float) -> Array | float:
    """log of a probability clamped to [1e-7, 1 - 1e-7].

    Inputs may stray outside [0, 1] by at most 1e-9 (accumulated float
    error); anything further out is a contract violation.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(arr < -PROB_SLACK) or np.any(arr > 1.0 + PROB_SLACK):
        raise ContractViolation("clamped_log input outside [0, 1]")
    out = np.log(np.clip(arr, LOG_EPS, 1.0 - LOG_EPS))
    if np.isscalar(p) or np.ndim(p) == 0:
        return float(out)
    return out


def clamped_log_grad(p: Array) -> Array:
    """d/dp of clamped_log: 1/p strictly inside the clamp, 0 on the rails."""
    arr = np.asarray(p, dtype=np.float64)
    inside = (arr > LOG_EPS) & (arr < 1.0 - LOG_EPS)
    out = np.zeros_like(arr)
    out[inside] = 1.0 / arr[inside]
    return out


def relu(x: Array) -> Array:
    return np.maximum(x, 0.0)


def l2_normalize(x: Array) -> Array:
    """x / ||x||, or zeros when the norm vanishes."""
    n = float(np.linalg.norm(x))
    if n < NORM_EPS:
        return np.zeros_like(x)
    return x / n
