"""Kernel backend selection.

The compiled ``_kernels`` extension is preferred; the NumPy/SciPy fallback is
used when it is not built or when ``DAGAD_PURE_PYTHON`` is set to a truthy
value before import.
"""
import os

import numpy as np

from . import _fallback

_FORCE_PYTHON = os.environ.get("DAGAD_PURE_PYTHON", "").lower() in ("1", "true", "yes")

_compiled = None
if not _FORCE_PYTHON:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def backends():
    """Return the available backend modules keyed by name."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def spmm(indptr, indices, data, x, impl=None):
    impl = impl or _impl
    return impl.spmm(_idx(indptr), _idx(indices), _f64(data), _f64(x))


def gat_attention_forward(indptr, indices, s_self, s_nb, z, slope, impl=None):
    impl = impl or _impl
    return impl.gat_attention_forward(
        _idx(indptr), _idx(indices), _f64(s_self), _f64(s_nb), _f64(z), float(slope)
    )


def gat_attention_backward(indptr, indices, s_self, s_nb, z, alpha, grad_out, slope, impl=None):
    impl = impl or _impl
    return impl.gat_attention_backward(
        _idx(indptr), _idx(indices), _f64(s_self), _f64(s_nb), _f64(z), _f64(alpha),
        _f64(grad_out), float(slope),
    )
