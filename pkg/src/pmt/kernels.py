"""Hot convolution kernels, compiled when available.

The Cython build of :mod:`pmt._kernels` is used if it imports; otherwise the
numpy versions in :mod:`pmt._kernels_py` are used. Setting the environment
variable ``PMT_PURE_PYTHON=1`` forces the fallback. Both backends produce
bit-identical results (each output element is a copy or an ordered sum of the
same inputs).
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("PMT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "im2col", "col2im", "_kernels_py"]
