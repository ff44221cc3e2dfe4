"""Dense linear-algebra kernels kept dependency-light.

The Jacobi eigensolver is deliberately hand-rolled: rotation selection must
be bit-reproducible across platforms, so we control the sweep order, the
ordering of eigenpairs and the sign convention ourselves instead of relying
on whatever LAPACK build happens to be installed.
"""

import numpy as np

JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def jacobi_eigh(a, rel_tol=JACOBI_REL_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` with ``a @ vectors[:, i] == values[i] *
    vectors[:, i]``, unsorted.  Convergence is declared when the
    off-diagonal Frobenius norm drops below ``rel_tol * ||a||_F``.

    Raises RuntimeError if the sweep budget is exhausted (should not happen
    for symmetric input).
    """
    a = np.array(a, dtype=float)
    d = a.shape[0]
    if a.shape != (d, d):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(d)
    norm = np.linalg.norm(a)
    if norm == 0.0 or d == 1:
        return np.diag(a).copy(), v

    def offdiag_norm(m):
        off = m - np.diag(np.diag(m))
        return np.linalg.norm(off)

    for _ in range(max_sweeps):
        if offdiag_norm(a) <= rel_tol * norm:
            return np.diag(a).copy(), v
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # rows/cols p and q of a <- J^T a J
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    if offdiag_norm(a) <= rel_tol * norm:
        return np.diag(a).copy(), v
    raise RuntimeError("Jacobi eigensolver did not converge within %d sweeps" % max_sweeps)


def fix_eigvec_signs(vectors):
    """Per-column sign convention: largest-magnitude entry is positive.

    Ties resolve to the first entry attaining the maximum, which keeps
    rotations reproducible across platforms.
    """
    vectors = np.array(vectors, dtype=float)
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            vectors[:, j] = -col
    return vectors


def haar_orthogonal(d, rng):
    """Haar-distributed orthogonal matrix: QR with R-diagonal sign correction."""
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[np.newaxis, :]


def complete_basis(rows, dep_tol=1e-8):
    """Extend orthonormal rows (r, d) to a full (d, d) orthonormal basis.

    Candidates are the standard basis vectors in order; a candidate is
    skipped when its residual after Gram-Schmidt is below ``dep_tol``
    (near-dependence).  Two orthogonalization passes for stability.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    r, d = rows.shape
    basis = [rows[i] for i in range(r)]
    for j in range(d):
        if len(basis) == d:
            break
        cand = np.zeros(d)
        cand[j] = 1.0
        for _ in range(2):
            for b in basis:
                cand = cand - np.dot(b, cand) * b
        norm = np.linalg.norm(cand)
        if norm > dep_tol:
            basis.append(cand / norm)
    if len(basis) != d:
        raise RuntimeError("basis completion failed; input rows not orthonormal?")
    return np.array(basis)


def hadamard_matrix(d):
    """Sylvester-construction Hadamard matrix; d must be a power of two."""
    if d < 1 or d & (d - 1) != 0:
        raise ValueError("Hadamard construction needs a power-of-two size")
    h = np.array([[1.0]])
    while h.shape[0] < d:
        h = np.block([[h, h], [h, -h]])
    return h
