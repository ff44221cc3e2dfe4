"""Evaluation metrics and the exact Gaussian iteration study.

For Gaussian targets the mean-field update has a closed form (the optimal
product approximation of N(0, S) has precisions diag(S^{-1})), so the whole
iteration can be run in exact covariance arithmetic with no optimizer in
the loop.  That is what the iteration-count sweep uses.  Sample-based
metrics (MMD, KSD, ESS) are for the stochastic experiments.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from . import scorepca
from .gaussianize import RotationStrategy
from .targets import make_conditioned_gaussian
from .transforms import AffineMap, Rotation

MMD_BANDWIDTH_FLOOR = 1e-12
KSD_IMQ_C = 1.0
METRICS_COLUMNS = ("run_id", "k", "elbo", "mmd", "ksd", "ess", "kl_analytic")


# ---------------------------------------------------------------------------
# exact Gaussian mean-field arithmetic


def kl_gaussian_analytic(sigma_eigvals):
    """KL(gamma || N(0, Sigma)) from the covariance spectrum:
    (1/2) sum_i (log lam_i + 1/lam_i - 1)."""
    lam = np.asarray(sigma_eigvals, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("covariance eigenvalues must be positive")
    return float(0.5 * np.sum(np.log(lam) + 1.0 / lam - 1.0))


def kl_gamma_vs_gaussian(cov):
    """KL(gamma || N(0, cov)) for a dense SPD covariance."""
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    prec = np.linalg.inv(cov)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance must be positive definite")
    return float(0.5 * (np.trace(prec) - d + logdet))


def _rotation_matrix(rotation):
    return rotation.matrix() if isinstance(rotation, Rotation) else np.asarray(rotation, dtype=float)


def kl_gaussian_after_mf(cov, rotation, precision_diag_tol=1e-8):
    """Exact KL left after one MF step on the rotated Gaussian N(0, R cov R').

    Requires unit-diagonal precision (the standard Gaussian is already the
    MF optimum of the unrotated target); in that regime
    L1 = (1/2)[log det cov + sum_i log (R cov^{-1} R')_ii].
    """
    cov = np.asarray(cov, dtype=float)
    prec = np.linalg.inv(cov)
    if np.abs(np.diag(prec) - 1.0).max() > precision_diag_tol:
        raise ValueError("precision diagonal must be 1 (target already MF-stationary)")
    r = _rotation_matrix(rotation)
    q = np.einsum("ij,jk,ik->i", r, prec, r)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance must be positive definite")
    return float(0.5 * (logdet + np.sum(np.log(q))))


def gaussian_mf_update(cov, rotation):
    """One exact Gaussianization step on a Gaussian covariance.

    Rotates, replaces each coordinate by its MF-optimal scale (inverse of
    the rotated precision diagonal), and returns (new_cov, kl_after) with
    kl_after = KL(gamma || N(0, new_cov)).  The new precision has unit
    diagonal by construction.
    """
    r = _rotation_matrix(rotation)
    cov_rot = r @ np.asarray(cov, dtype=float) @ r.T
    prec_rot = np.linalg.inv(cov_rot)
    q = np.diag(prec_rot)           # MF precisions per coordinate
    root_q = np.sqrt(q)
    new_cov = cov_rot * root_q[:, None] * root_q[None, :]
    new_cov = 0.5 * (new_cov + new_cov.T)
    sign, logdet = np.linalg.slogdet(cov_rot)
    kl_after = float(0.5 * (logdet + np.sum(np.log(q))))
    return new_cov, kl_after


@dataclass(frozen=True)
class SweepCell:
    d: int
    kappa: float
    strategy: str
    mean_iters: float
    sd_iters: float
    replicates: int
    censored: int
    counts: tuple


def _recursion_rotation(cov, strategy, rot_rng):
    d = cov.shape[0]
    if strategy.kind == "identity":
        return Rotation.identity(d)
    if strategy.kind == "random":
        return scorepca.sample_haar_rotation(d, rot_rng)
    h_exact = np.eye(d) - np.linalg.inv(cov)
    eig = scorepca.eig_sym(h_exact)
    rot, _ = scorepca.select_rotation(eig, strategy.var_threshold)
    return rot


def iterations_to_threshold(d, kappa, strategy, threshold=0.01, replicates=30,
                            seed=0, max_iters=10_000):
    """Mean iterations for the exact Gaussian recursion to reach KL < threshold.

    Each replicate draws a fresh conditioned covariance, then repeats
    rotate -> exact MF update until the KL falls below the threshold.  The
    PCA strategy uses the exact H = I - cov^{-1}, so no Monte Carlo or
    optimizer noise enters.  Replicates hitting max_iters are counted as
    censored at that value.
    """
    if isinstance(strategy, str):
        strategy = RotationStrategy(strategy)
    counts = []
    censored = 0
    for rep in range(replicates):
        gen_rng = rngmod.derive(seed, 0, rep)
        rot_rng = rngmod.derive(seed, 1, rep)
        cov = np.array(make_conditioned_gaussian(d, kappa, gen_rng).covariance)
        kl = kl_gamma_vs_gaussian(cov)
        iters = 0
        while kl >= threshold and iters < max_iters:
            rot = _recursion_rotation(cov, strategy, rot_rng)
            cov, kl = gaussian_mf_update(cov, rot)
            iters += 1
        if kl >= threshold:
            censored += 1
        counts.append(iters)
    counts = np.asarray(counts)
    return SweepCell(d, float(kappa), strategy.kind, float(counts.mean()),
                     float(counts.std(ddof=1)) if replicates > 1 else 0.0,
                     replicates, censored, tuple(int(c) for c in counts))


def chain_gaussian_kl(chain, target):
    """Exact KL(q || p) for an all-affine chain on a Gaussian target.

    Propagates the standard normal's moments through the chain and applies
    the closed-form Gaussian KL; used as an oracle in tests and emitted as
    the kl_analytic metric when available.
    """
    d = chain.dim
    mean = np.zeros(d)
    cov = np.eye(d)
    for rotation, cmap in reversed(chain.layers):
        if not isinstance(cmap, AffineMap):
            raise ValueError("analytic KL needs an all-affine chain")
        mean = cmap.shift + cmap.scale * mean
        cov = cov * cmap.scale[:, None] * cmap.scale[None, :]
        r = rotation.matrix()
        mean = r.T @ mean
        cov = r.T @ cov @ r
    diff = target.mean - mean
    prec = target.precision
    sign, logdet_t = np.linalg.slogdet(target.covariance)
    sign_q, logdet_q = np.linalg.slogdet(cov)
    if sign <= 0 or sign_q <= 0:
        raise ValueError("degenerate covariance")
    return float(0.5 * (np.trace(prec @ cov) + diff @ prec @ diff
                        - d + logdet_t - logdet_q))


# ---------------------------------------------------------------------------
# sample-based metrics


def _sq_dists(x, y):
    xx = np.sum(x * x, axis=1)
    yy = np.sum(y * y, axis=1)
    d2 = xx[:, None] + yy[None, :] - 2.0 * (x @ y.T)
    return np.maximum(d2, 0.0)


def median_bandwidth(x, y):
    """Median pairwise distance over the pooled sample, floored at 1e-12."""
    dxx = _sq_dists(x, x)
    dyy = _sq_dists(y, y)
    dxy = _sq_dists(x, y)
    iu_x = np.triu_indices(len(x), k=1)
    iu_y = np.triu_indices(len(y), k=1)
    pooled = np.concatenate([dxx[iu_x], dyy[iu_y], dxy.ravel()])
    return max(float(np.sqrt(np.median(pooled))), MMD_BANDWIDTH_FLOOR)


def mmd_unbiased(x, y, bandwidth=None):
    """Unbiased U-statistic MMD^2 with a Gaussian RBF kernel.

    Bandwidth defaults to the median heuristic on the pooled sample.  The
    estimator is signed: slightly negative values are expected when the
    two samples come from the same distribution.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise ValueError("need at least two samples on each side")
    h = median_bandwidth(x, y) if bandwidth is None else max(bandwidth, MMD_BANDWIDTH_FLOOR)
    gamma = 0.5 / (h * h)
    kxx = np.exp(-gamma * _sq_dists(x, x))
    kyy = np.exp(-gamma * _sq_dists(y, y))
    kxy = np.exp(-gamma * _sq_dists(x, y))
    term_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


def stein_kernel_imq(x, scores, c=KSD_IMQ_C):
    """Stein kernel matrix for the IMQ base kernel (c^2 + ||x-y||^2)^{-1/2}."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    d = x.shape[1]
    d2 = _sq_dists(x, x)
    u = c * c + d2
    u32 = u ** (-1.5)
    ss = s @ s.T
    sx = np.sum(s * x, axis=1)
    a = sx[:, None] - s @ x.T        # s_i . (x_i - x_j)
    b = x @ s.T - sx[None, :]        # s_j . (x_i - x_j)
    return (ss * u ** (-0.5) + (a - b) * u32
            + d * u32 - 3.0 * d2 * u ** (-2.5))


def ksd(x, score, c=KSD_IMQ_C):
    """Kernelized Stein discrepancy: sqrt of the V-statistic of the IMQ
    Stein kernel built from the target score."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two samples")
    scores = score(x) if callable(score) else np.asarray(score, dtype=float)
    kmat = stein_kernel_imq(x, scores, c)
    return float(np.sqrt(max(kmat.mean(), 0.0)))


def ess(weights):
    """Effective sample size (sum w)^2 / sum w^2 of normalized weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if abs(total - 1.0) > 1e-8:
        raise ValueError("weights must be normalized")
    return float(total * total / np.sum(w * w))


def preconditioned_rwm(target, n_samples, rng, cov, init=None, n_chains=20,
                       burn=2000, thin=10, step_scale=None):
    """Random-walk Metropolis with a fixed preconditioner covariance.

    Reference-sample generator for desk-scale MMD evaluation: proposals are
    x + tau * L xi with L the Cholesky factor of the (typically Laplace)
    covariance and tau = 2.38/sqrt(d) unless overridden.  Runs n_chains
    synchronized vectorized chains, discards burn steps, keeps every
    thin-th state.
    """
    d = target.dim
    chol = np.linalg.cholesky(cov)
    tau = step_scale if step_scale is not None else 2.38 / np.sqrt(d)
    x = np.tile(np.zeros(d) if init is None else np.asarray(init, dtype=float),
                (n_chains, 1))
    logp = target.log_density(x)
    kept = []
    needed = int(np.ceil(n_samples / n_chains))
    for step in range(burn + needed * thin):
        prop = x + tau * (rng.standard_normal((n_chains, d)) @ chol.T)
        logp_prop = target.log_density(prop)
        accept = np.log(rng.random(n_chains)) < logp_prop - logp
        x = np.where(accept[:, None], prop, x)
        logp = np.where(accept, logp_prop, logp)
        if step >= burn and (step - burn) % thin == thin - 1:
            kept.append(x.copy())
    samples = np.concatenate(kept, axis=0)
    return samples[:n_samples]


# ---------------------------------------------------------------------------
# metric records


@dataclass(frozen=True)
class MetricsRecord:
    run_id: str
    k: int
    elbo: float
    mmd: Optional[float]
    ksd: Optional[float]
    ess_value: Optional[float]
    kl_analytic: Optional[float] = None


def _fmt(value):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return "" if value is None else repr(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def metrics_csv_lines(records, header_comment=None):
    """CSV lines in the frozen v1 column order, 17 significant digits."""
    lines = []
    if header_comment:
        lines.append("# " + header_comment)
    lines.append(",".join(METRICS_COLUMNS))
    for rec in records:
        row = (rec.run_id, rec.k, rec.elbo, rec.mmd, rec.ksd, rec.ess_value,
               rec.kl_analytic)
        lines.append(",".join(_fmt(v) for v in row))
    return lines
