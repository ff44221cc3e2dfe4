"""Spline kernel backend selection.

The compiled Cython kernels are used when the extension built; otherwise the
numpy implementation is selected.  ITERGAUSS_SPLINE_BACKEND={cython,numpy}
forces a choice (forcing cython raises if the extension is missing).
"""

import os

from . import _rqs_numpy

_requested = os.environ.get("ITERGAUSS_SPLINE_BACKEND", "auto").lower()

if _requested == "numpy":
    kernels = _rqs_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _rqs_cython as kernels  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _rqs_numpy
        BACKEND = "numpy"


def active_backend():
    """Name of the kernel backend in use ('cython' or 'numpy')."""
    return BACKEND


def get_kernels(name=None):
    """Kernel module by name; used by tests and the backend benchmark."""
    if name in (None, BACKEND):
        return kernels
    if name == "numpy":
        return _rqs_numpy
    if name == "cython":
        from . import _rqs_cython

        return _rqs_cython
    raise ValueError(f"unknown backend {name!r}")
