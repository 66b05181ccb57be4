"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
``SADA_KERNELS=python`` forces the fallback.
"""
import os

from . import _kernels_py


def load(name=None):
    """Return the kernel module for ``name`` ('cython', 'python', or None for auto)."""
    name = name or os.environ.get("SADA_KERNELS", "auto")
    if name == "python":
        return _kernels_py
    try:
        from . import _ckernels
    except ImportError:
        if name == "cython":
            raise
        return _kernels_py
    return _ckernels


kernels = load()
BACKEND = kernels.NAME
