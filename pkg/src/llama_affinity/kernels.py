"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise the numpy
implementations in ``_kernels_py`` are used.  ``LLAMA_AFFINITY_KERNELS=python``
forces the fallback.  Both backends accept 2-D (3-D for rope) C-contiguous
float32/float64 arrays.
"""
import os

from . import _kernels_py

_compiled = None
if os.environ.get("LLAMA_AFFINITY_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

_NAMES = (
    "softmax_forward",
    "softmax_backward",
    "log_softmax_forward",
    "log_softmax_backward",
    "rms_norm_forward",
    "rms_norm_backward",
    "silu_forward",
    "silu_backward",
    "rope_forward",
)


def compiled_available():
    return _compiled is not None


def get_backend(name=None):
    """Return a kernel namespace: ``"cython"``, ``"python"`` or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def set_backend(name):
    """Switch the module-level kernels in place (used by tests and benchmarks)."""
    global _impl, BACKEND
    _impl = get_backend(name)
    BACKEND = name
    g = globals()
    for n in _NAMES:
        g[n] = getattr(_impl, n)


softmax_forward = _impl.softmax_forward
softmax_backward = _impl.softmax_backward
log_softmax_forward = _impl.log_softmax_forward
log_softmax_backward = _impl.log_softmax_backward
rms_norm_forward = _impl.rms_norm_forward
rms_norm_backward = _impl.rms_norm_backward
silu_forward = _impl.silu_forward
silu_backward = _impl.silu_backward
rope_forward = _impl.rope_forward
