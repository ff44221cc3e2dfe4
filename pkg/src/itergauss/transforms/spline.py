"""Coordinatewise rational-quadratic spline map.

Each coordinate carries K bins on [-B, B] (identity outside): K raw widths
and K raw heights go through a softmax with a minimum bin fraction, K-1 raw
derivatives through a softplus for the interior knots; boundary derivatives
are pinned to 1 so the tails are exactly identity with slope 1.  Zero raw
widths/heights and softplus^{-1}(1) raw derivatives give the identity map.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .backend import kernels

MIN_BIN_FRACTION = 1e-3
SOFTPLUS_INV_ONE = float(np.log(np.e - 1.0))
DEFAULT_KNOTS = 10
DEFAULT_BOUND = 8.0


class SplineKnots(NamedTuple):
    xk: np.ndarray      # (d, K+1) knot x-positions
    yk: np.ndarray      # (d, K+1) knot y-positions
    w: np.ndarray       # (d, K)   bin widths
    h: np.ndarray       # (d, K)   bin heights
    s: np.ndarray       # (d, K)   bin slopes h/w
    delta: np.ndarray   # (d, K+1) knot derivatives, boundaries pinned to 1
    sw: np.ndarray      # (d, K)   width softmax weights
    sh: np.ndarray      # (d, K)   height softmax weights
    dsig: np.ndarray    # (d, K-1) d(softplus)/d(raw) at the raw derivatives
    alpha: float        # softmax-to-width scale 2B(1 - K*min_fraction)


def _softmax(a):
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def compute_knots(raw, kbins, bound):
    d = raw.shape[0]
    rw = raw[:, :kbins]
    rh = raw[:, kbins:2 * kbins]
    rd = raw[:, 2 * kbins:]
    f = MIN_BIN_FRACTION
    alpha = 2.0 * bound * (1.0 - kbins * f)
    sw = _softmax(rw)
    sh = _softmax(rh)
    w = 2.0 * bound * f + alpha * sw
    h = 2.0 * bound * f + alpha * sh
    xk = np.concatenate([np.zeros((d, 1)), np.cumsum(w, axis=1)], axis=1) - bound
    yk = np.concatenate([np.zeros((d, 1)), np.cumsum(h, axis=1)], axis=1) - bound
    xk[:, -1] = bound  # pin the accumulated endpoint exactly
    yk[:, -1] = bound
    w = np.diff(xk, axis=1)
    h = np.diff(yk, axis=1)
    delta = np.ones((d, kbins + 1))
    delta[:, 1:-1] = np.logaddexp(0.0, rd)
    dsig = expit(rd)
    return SplineKnots(xk, yk, w, h, h / w, delta,
                       sw, sh, dsig, alpha)


class RQSplineMap:
    """Immutable coordinatewise spline; raw parameter matrix (d, 3K-1)."""

    def __init__(self, raw, bound=DEFAULT_BOUND):
        raw = np.array(raw, dtype=float, order="C")
        if raw.ndim != 2 or (raw.shape[1] + 1) % 3 != 0:
            raise ValueError("raw spline parameters must have shape (d, 3K-1)")
        if not np.all(np.isfinite(raw)):
            raise ValueError("spline parameters must be finite")
        self.raw = raw
        self.bound = float(bound)
        self.dim = raw.shape[0]
        self.kbins = (raw.shape[1] + 1) // 3
        self.n_params_per_coord = raw.shape[1]
        self.knots = compute_knots(raw, self.kbins, self.bound)
        self.raw.flags.writeable = False

    @classmethod
    def identity(cls, dim, knots=DEFAULT_KNOTS, bound=DEFAULT_BOUND):
        raw = np.zeros((dim, 3 * knots - 1))
        raw[:, 2 * knots:] = SOFTPLUS_INV_ONE
        return cls(raw, bound)

    def with_raw(self, raw):
        return RQSplineMap(raw, self.bound)

    def _batch(self, x):
        x = np.ascontiguousarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[np.newaxis, :]
        if x.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to spline map")
        return x, single

    def forward_terms(self, x):
        """(y, logfp) with per-coordinate log-derivatives, batch shapes."""
        x, _ = self._batch(x)
        k = self.knots
        return kernels.forward(x, k.xk, k.yk, k.w, k.h, k.s, k.delta)

    def forward(self, x):
        x2, single = self._batch(x)
        k = self.knots
        y, logfp = kernels.forward(x2, k.xk, k.yk, k.w, k.h, k.s, k.delta)
        logdet = logfp.sum(axis=1)
        return (y[0], logdet[0]) if single else (y, logdet)

    def inverse(self, y):
        y2, single = self._batch(y)
        k = self.knots
        x, logfp = kernels.inverse(y2, k.xk, k.yk, k.w, k.h, k.s, k.delta)
        logdet_inv = -logfp.sum(axis=1)
        return (x[0], logdet_inv[0]) if single else (x, logdet_inv)

    def dlogdet_dx(self, x):
        x2, single = self._batch(x)
        k = self.knots
        out = kernels.dlogdet_dx(x2, k.xk, k.yk, k.w, k.h, k.s, k.delta)
        return out[0] if single else out

    def param_grads(self, x):
        """(dF, dlogfp), each (n, d, 3K-1), w.r.t. the raw parameters."""
        x2, single = self._batch(x)
        k = self.knots
        df, dl = kernels.param_grads(x2, k.xk, k.yk, k.w, k.h, k.s, k.delta,
                                     k.sw, k.sh, k.dsig, k.alpha)
        return (df[0], dl[0]) if single else (df, dl)


@dataclass(frozen=True)
class SplineFamily:
    knots: int = DEFAULT_KNOTS
    bound: float = DEFAULT_BOUND
    name = "rq_spline"

    def identity(self, dim):
        return RQSplineMap.identity(dim, self.knots, self.bound)

    def from_raw(self, raw):
        return RQSplineMap(raw, self.bound)
