"""Dense kernels shared by the model, loss and evaluator.

Feature grids are ``numpy`` arrays laid out ``(channels, height, width)``;
every kernel also accepts leading batch axes so a whole episode can be pushed
through at once. All arithmetic is float64.
"""

import numpy as np

EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes do not agree."""


def _as_f64(a):
    return np.asarray(a, dtype=np.float64)


def conv1x1(x, weight, bias):
    """Per-pixel linear map: ``out[k, i, j] = bias[k] + sum_c weight[k, c] * x[c, i, j]``."""
    x, weight, bias = _as_f64(x), _as_f64(weight), _as_f64(bias)
    if x.ndim < 3:
        raise ShapeError(f"input must be (..., C, H, W), got shape {x.shape}")
    if weight.ndim != 2 or weight.shape[1] != x.shape[-3]:
        raise ShapeError(
            f"weight shape {weight.shape} does not match input channels {x.shape[-3]} "
            f"(input shape {x.shape})"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match weight shape {weight.shape}")
    return np.einsum("kc,...chw->...khw", weight, x) + bias[:, None, None]


def spatial_softmax(x):
    """Softmax over the two trailing (spatial) axes, independently per channel."""
    x = _as_f64(x)
    m = x.max(axis=(-2, -1), keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=(-2, -1), keepdims=True)


def spatial_mean(x):
    x = _as_f64(x)
    if x.ndim < 2 or x.shape[-1] * x.shape[-2] == 0:
        raise ShapeError(f"cannot pool over empty spatial grid {x.shape}")
    return x.mean(axis=(-2, -1))


def sigmoid_vec(x):
    """Logistic function, evaluated on the branch that cannot overflow."""
    x = _as_f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def attribute_softmax(x):
    """Softmax over the last axis."""
    x = _as_f64(x)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cosine(a, b):
    a, b = _as_f64(a), _as_f64(b)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    na = max(np.linalg.norm(a), EPS)
    nb = max(np.linalg.norm(b), EPS)
    return float(a @ b / (na * nb))


def cosine_matrix(a, b):
    """Cosine between rows of ``a`` (..., N) and columns of ``b`` (..., N, K).

    Returns shape (..., K). Norms are guarded by ``EPS`` like :func:`cosine`.
    """
    a, b = _as_f64(a), _as_f64(b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.maximum(np.linalg.norm(a, axis=-1), EPS)
    nb = np.maximum(np.linalg.norm(b, axis=-2), EPS)
    dots = np.einsum("...n,...nk->...k", a, b)
    return dots / (na[..., None] * nb)


def logsumexp(x, axis=-1):
    x = _as_f64(x)
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)
