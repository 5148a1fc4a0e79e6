"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension ``_ckernels`` is used when it was built; otherwise, or
when ``SUPPLYSHARE_PURE_PYTHON=1`` is set, the numpy versions in
``_pykernels`` are used. ``BACKEND`` records which one is active.
"""
import os

from . import _pykernels

if os.environ.get("SUPPLYSHARE_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

bspline_basis = _impl.bspline_basis
sample_blocks = _impl.sample_blocks

__all__ = ["BACKEND", "bspline_basis", "sample_blocks"]
