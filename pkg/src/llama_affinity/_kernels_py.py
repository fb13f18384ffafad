"""Pure numpy reference kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
semantics.  Inputs are 2-D, C-contiguous arrays (rows x features) of float32 or
float64; outputs keep the input dtype.
"""
import numpy as np


def softmax_forward(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(y, gy):
    dot = (gy * y).sum(axis=-1, keepdims=True)
    return y * (gy - dot)


def log_softmax_forward(x):
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def log_softmax_backward(y, gy):
    return gy - np.exp(y) * gy.sum(axis=-1, keepdims=True)


def rms_norm_forward(x, gain, eps):
    """Returns ``(y, inv_rms)`` with ``inv_rms`` of shape (rows,)."""
    ms = np.mean(x * x, axis=-1)
    inv = (1.0 / np.sqrt(ms + eps)).astype(x.dtype)
    return x * inv[:, None] * gain, inv


def rms_norm_backward(x, gain, inv, gy):
    """Returns ``(gx, ggain)``."""
    xhat = x * inv[:, None]
    ggain = (gy * xhat).sum(axis=0)
    gxhat = gy * gain
    proj = np.mean(gxhat * xhat, axis=-1, keepdims=True)
    return inv[:, None] * (gxhat - xhat * proj), ggain


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu_forward(x):
    return x * _sigmoid(x)


def silu_backward(x, gy):
    s = _sigmoid(x)
    return gy * (s * (1.0 + x * (1.0 - s)))


def rope_forward(x, cos, sin):
    """Half-split rotation.

    ``x`` is (rows, T, D); ``cos``/``sin`` are (T, D/2).  Passing ``-sin``
    applies the inverse rotation, which is also the backward pass.
    """
    half = x.shape[-1] // 2
    a = x[..., :half]
    b = x[..., half:]
    out = np.empty_like(x)
    out[..., :half] = a * cos - b * sin
    out[..., half:] = a * sin + b * cos
    return out
