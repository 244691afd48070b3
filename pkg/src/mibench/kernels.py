"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set ``MIBENCH_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("MIBENCH_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

signflip_count = _impl.signflip_count
signed_rank_counts = _impl.signed_rank_counts
smo_solve = _impl.smo_solve

__all__ = ["BACKEND", "signflip_count", "signed_rank_counts", "smo_solve"]
