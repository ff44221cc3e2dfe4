"""Orthogonal rotations, dense or as a product of Householder reflections.

A Householder rotation with vectors [w_1, ..., w_r] is the matrix product
H_r ... H_1 with H_j = I - 2 w_j w_j'; applying it forward runs the
reflections in list order, the transpose runs them reversed.  An empty list
is the identity.  Applying costs O(r d) per vector, the motivation for the
compressed form when only a few leading directions matter.
"""

import numpy as np

from .. import serialize

ORTHOGONALITY_TOL = 1e-10
UNIT_NORM_TOL = 1e-12


class Rotation:
    def __init__(self, kind, data, dim):
        self.kind = kind
        self.data = data
        self.dim = dim
        if data is not None:
            self.data.flags.writeable = False

    @classmethod
    def identity(cls, dim):
        return cls("householder", np.zeros((0, dim)), dim)

    @classmethod
    def from_matrix(cls, m):
        m = np.array(m, dtype=float)
        d = m.shape[0]
        if m.shape != (d, d):
            raise ValueError("rotation matrix must be square")
        err = np.abs(m @ m.T - np.eye(d)).max()
        if err > ORTHOGONALITY_TOL:
            raise ValueError(f"matrix is not orthogonal (defect {err:.2e})")
        return cls("dense", m, d)

    @classmethod
    def from_householder(cls, vectors, dim=None):
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        if vectors.size == 0:
            if dim is None:
                raise ValueError("identity Householder rotation needs an explicit dim")
            return cls.identity(dim)
        d = vectors.shape[1]
        norms = np.linalg.norm(vectors, axis=1)
        if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
            raise ValueError("Householder vectors must be unit norm")
        return cls("householder", np.array(vectors), d)

    @property
    def n_reflections(self):
        return self.data.shape[0] if self.kind == "householder" else None

    def apply(self, x, transpose=False):
        """R x (or R' x) applied to each row of x."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        v = x[np.newaxis, :] if single else x
        if v.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        if self.kind == "dense":
            out = v @ (self.data if transpose else self.data.T)
        else:
            out = v.copy()
            order = reversed(self.data) if transpose else self.data
            for w in order:
                out -= 2.0 * np.outer(out @ w, w)
        return out[0] if single else out

    def matrix(self):
        """Dense materialization (rows i are R e_i transposed)."""
        if self.kind == "dense":
            return self.data.copy()
        return self.apply(np.eye(self.dim)).T

    def to_dict(self):
        return {
            "type": self.kind,
            "dim": self.dim,
            "data": serialize.encode_floats(self.data),
        }

    @classmethod
    def from_dict(cls, doc):
        dim = int(doc["dim"])
        data = serialize.decode_floats(doc["data"]) if doc["data"] else np.zeros((0, dim))
        if doc["type"] == "dense":
            return cls.from_matrix(data)
        if doc["type"] == "householder":
            return cls.from_householder(data.reshape(-1, dim), dim=dim)
        raise ValueError(f"unknown rotation type {doc['type']!r}")


def householder_from_rows(rows, dim):
    """Householder rotation whose first r rows equal the given orthonormal rows.

    The remaining directions are whatever the r reflections imply (an
    implicit identity completion), so this represents a *different*
    completion than Gram-Schmidt, with O(r d) storage.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    vectors = []
    for i in range(rows.shape[0]):
        v = rows[i].copy()
        for w in vectors:
            v -= 2.0 * w * np.dot(w, v)
        e = np.zeros(dim)
        e[i] = 1.0
        u = v - e
        norm = np.linalg.norm(u)
        if norm > 1e-12:
            vectors.append(u / norm)
    if not vectors:
        return Rotation.identity(dim)
    return Rotation.from_householder(np.array(vectors), dim=dim)
