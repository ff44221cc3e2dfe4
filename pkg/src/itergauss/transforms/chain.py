"""Transport chains: ordered (rotation, coordinatewise map) layers.

A chain of layers (R_1, F_1), ..., (R_k, F_k) pushes a base point z through
x <- R_j' F_j(x) for j = k down to 1, which is the map sending the standard
Gaussian to the current approximation.  The same chain applied forward to a
point y (push_forward) evaluates the "undo" map of the transformed target,
so the pullback log-density of the transformed target and the density of
the approximation both come from the two traversal directions below.
Rotations contribute zero to the log-determinant.
"""

import json
from typing import NamedTuple

import numpy as np

from .. import serialize
from .affine import AffineMap
from .rotation import Rotation
from .spline import RQSplineMap

CHAIN_FORMAT_VERSION = 1


class TransportLayer(NamedTuple):
    rotation: Rotation
    cmap: object  # AffineMap or RQSplineMap


class TransportChain:
    def __init__(self, dim, layers=()):
        self.dim = int(dim)
        self.layers = tuple(layers)
        for layer in self.layers:
            if layer.rotation.dim != self.dim or layer.cmap.dim != self.dim:
                raise ValueError("layer dimension mismatch")

    def __len__(self):
        return len(self.layers)

    def append(self, layer):
        return TransportChain(self.dim, self.layers + (layer,))

    def prefix(self, k):
        return TransportChain(self.dim, self.layers[:k])

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[np.newaxis, :]
        if x.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        return x, single

    def push_forward(self, z, keep_stages=False):
        """Apply layers k..1 as x <- R' F(x); returns (x, logdet[, stages]).

        stages[i] is the input to layer i's coordinatewise map, needed for
        the pullback score.
        """
        x, single = self._batch(z)
        logdet = np.zeros(x.shape[0])
        stages = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            rotation, cmap = self.layers[i]
            if keep_stages:
                stages[i] = x
            y, logfp = cmap.forward_terms(x)
            logdet = logdet + logfp.sum(axis=1)
            x = rotation.apply(y, transpose=True)
        if single:
            x, logdet = x[0], logdet[0]
        if keep_stages:
            return x, logdet, stages
        return x, logdet

    def pull_back(self, x):
        """Inverse traversal: z <- F^{-1}(R z) for layers 1..k."""
        z, single = self._batch(x)
        logdet = np.zeros(z.shape[0])
        for rotation, cmap in self.layers:
            y = rotation.apply(z)
            z, ld_inv = cmap.inverse(y)
            logdet = logdet + ld_inv
        if single:
            return z[0], logdet[0]
        return z, logdet


class PullbackTarget:
    """The transformed target: base pushed through the chain's undo map.

    log p_k(y) = log p(G(y)) + logdet G(y) with G = push_forward; the score
    is accumulated in reverse through the stage Jacobians.  The additive
    constant equals the base target's.
    """

    def __init__(self, chain, base):
        if chain.dim != base.dim:
            raise ValueError("chain/base dimension mismatch")
        self.chain = chain
        self.base = base
        self.dim = base.dim

    def log_density(self, y):
        x, logdet = self.chain.push_forward(y)
        return self.base.log_density(x) + logdet

    def score(self, y):
        y2, single = self.chain._batch(y)
        x, _, stages = self.chain.push_forward(y2, keep_stages=True)
        g = self.base.score(x)
        for i, (rotation, cmap) in enumerate(self.chain.layers):
            v = stages[i]
            _, logfp = cmap.forward_terms(v)
            g = np.exp(logfp) * rotation.apply(g) + cmap.dlogdet_dx(v)
        return g[0] if single else g


class RotatedTarget:
    """The rotated target R # p with density p(R'y) and score R grad(R'y)."""

    def __init__(self, base, rotation):
        if rotation.dim != base.dim:
            raise ValueError("rotation/base dimension mismatch")
        self.base = base
        self.rotation = rotation
        self.dim = base.dim

    def log_density(self, y):
        return self.base.log_density(self.rotation.apply(y, transpose=True))

    def score(self, y):
        inner = self.base.score(self.rotation.apply(y, transpose=True))
        return self.rotation.apply(inner)


def map_to_dict(cmap):
    if isinstance(cmap, AffineMap):
        return {"type": "affine", "params": {
            "shift": serialize.encode_floats(cmap.shift),
            "log_scale": serialize.encode_floats(cmap.log_scale)}}
    if isinstance(cmap, RQSplineMap):
        k = cmap.kbins
        return {"type": "rq_spline", "params": {
            "bound": serialize.encode_floats(cmap.bound),
            "raw_widths": serialize.encode_floats(cmap.raw[:, :k]),
            "raw_heights": serialize.encode_floats(cmap.raw[:, k:2 * k]),
            "raw_derivs": serialize.encode_floats(cmap.raw[:, 2 * k:])}}
    raise TypeError(f"cannot serialize map of type {type(cmap).__name__}")


def map_from_dict(doc):
    params = doc["params"]
    if doc["type"] == "affine":
        raw = np.column_stack([serialize.decode_floats(params["shift"]),
                               serialize.decode_floats(params["log_scale"])])
        return AffineMap(raw)
    if doc["type"] == "rq_spline":
        raw = np.concatenate([serialize.decode_floats(params["raw_widths"]),
                              serialize.decode_floats(params["raw_heights"]),
                              serialize.decode_floats(params["raw_derivs"])], axis=1)
        return RQSplineMap(raw, float(serialize.decode_floats(params["bound"])))
    raise ValueError(f"unknown map type {doc['type']!r}")


def chain_to_dict(chain):
    return {
        "version": CHAIN_FORMAT_VERSION,
        "dim": chain.dim,
        "layers": [{"rotation": layer.rotation.to_dict(),
                    "map": map_to_dict(layer.cmap)} for layer in chain.layers],
    }


def chain_from_dict(doc):
    if doc.get("version") != CHAIN_FORMAT_VERSION:
        raise ValueError(f"unsupported chain format version {doc.get('version')!r}")
    layers = [TransportLayer(Rotation.from_dict(item["rotation"]),
                             map_from_dict(item["map"]))
              for item in doc["layers"]]
    return TransportChain(int(doc["dim"]), layers)


def chain_to_json(chain):
    return json.dumps(chain_to_dict(chain), indent=2, sort_keys=True)


def chain_from_json(text):
    return chain_from_dict(json.loads(text))
