"""Coordinatewise affine map y = shift + exp(log_scale) * x.

Storing the log-scale keeps the map strictly increasing for any raw values.
Raw parameter matrix is (d, 2): column 0 the shift, column 1 the log-scale.
"""

from dataclasses import dataclass

import numpy as np


class AffineMap:
    def __init__(self, raw):
        raw = np.array(raw, dtype=float, order="C")
        if raw.ndim != 2 or raw.shape[1] != 2:
            raise ValueError("affine raw parameters must have shape (d, 2)")
        if not np.all(np.isfinite(raw)):
            raise ValueError("affine parameters must be finite")
        self.raw = raw
        self.dim = raw.shape[0]
        self.n_params_per_coord = 2
        self.shift = raw[:, 0]
        self.log_scale = raw[:, 1]
        self.scale = np.exp(self.log_scale)
        self.raw.flags.writeable = False

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros((dim, 2)))

    @classmethod
    def from_shift_scale(cls, shift, scale):
        raw = np.column_stack([np.asarray(shift, dtype=float),
                               np.log(np.asarray(scale, dtype=float))])
        return cls(raw)

    def with_raw(self, raw):
        return AffineMap(raw)

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[np.newaxis, :]
        if x.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to affine map")
        return x, single

    def forward_terms(self, x):
        x, _ = self._batch(x)
        y = self.shift + self.scale * x
        logfp = np.broadcast_to(self.log_scale, x.shape).copy()
        return y, logfp

    def forward(self, x):
        x2, single = self._batch(x)
        y = self.shift + self.scale * x2
        logdet = np.full(x2.shape[0], self.log_scale.sum())
        return (y[0], logdet[0]) if single else (y, logdet)

    def inverse(self, y):
        y2, single = self._batch(y)
        x = (y2 - self.shift) / self.scale
        logdet_inv = np.full(y2.shape[0], -self.log_scale.sum())
        return (x[0], logdet_inv[0]) if single else (x, logdet_inv)

    def dlogdet_dx(self, x):
        x2, single = self._batch(x)
        out = np.zeros_like(x2)
        return out[0] if single else out

    def param_grads(self, x):
        x2, single = self._batch(x)
        n, d = x2.shape
        df = np.empty((n, d, 2))
        df[:, :, 0] = 1.0
        df[:, :, 1] = self.scale * x2
        dl = np.zeros((n, d, 2))
        dl[:, :, 1] = 1.0
        return (df[0], dl[0]) if single else (df, dl)


@dataclass(frozen=True)
class AffineFamily:
    name = "affine"

    def identity(self, dim):
        return AffineMap.identity(dim)

    def from_raw(self, raw):
        return AffineMap(raw)
