"""Hex-float JSON helpers.

Raw parameters are persisted as IEEE-754 hex strings (``float.hex``) so a
chain round-trips bit-exactly through JSON regardless of locale or printer.
"""

import numpy as np


def encode_floats(arr):
    """ndarray -> nested lists of hex-float strings (shape-preserving)."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        return float(arr).hex()
    return [encode_floats(sub) for sub in arr]


def decode_floats(obj):
    """Inverse of :func:`encode_floats`; returns a float64 ndarray."""
    if isinstance(obj, str):
        return np.float64(float.fromhex(obj))
    return np.array([decode_floats(sub) for sub in obj], dtype=float)
