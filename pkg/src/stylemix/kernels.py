"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``STYLEMIX_PURE_PYTHON=1`` before import to force the numpy path.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("STYLEMIX_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback


def _prep(x):
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x)


def im2col(x, k, stride, pad):
    return _impl.im2col(_prep(x), int(k), int(stride), int(pad))


def col2im(cols, shape, k, stride, pad):
    return _impl.col2im(_prep(cols), tuple(int(s) for s in shape), int(k), int(stride), int(pad))


def spatial_moments(x):
    return _impl.spatial_moments(_prep(x))
