"""Target distributions.

A target exposes three things: ``dim``, ``log_density`` (up to an additive
constant) and ``score`` (the gradient of ``log_density``).  Both accept a
single point of shape (d,) or a batch of shape (n, d).  All log-densities
here are unnormalized; every downstream quantity built from them (ELBO,
importance weights) is defined up to the same constant.

Targets are immutable after construction and safe to evaluate concurrently.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import linalg, serialize

logger = logging.getLogger(__name__)

GAUSSIAN_CONSISTENCY_TOL = 1e-10
LAPLACE_GRAD_TOL = 1e-6
LAPLACE_FD_STEP = 1e-4


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x, single


class FunctionTarget:
    """Target defined by user-supplied log-density and score callables."""

    def __init__(self, dim, log_density_fn, score_fn):
        self.dim = int(dim)
        self._logp = log_density_fn
        self._score = score_fn

    def log_density(self, x):
        x, single = _as_batch(x, self.dim)
        out = np.asarray(self._logp(x), dtype=float)
        return out[0] if single else out

    def score(self, x):
        x, single = _as_batch(x, self.dim)
        out = np.asarray(self._score(x), dtype=float)
        return out[0] if single else out


class GaussianTarget:
    """Multivariate normal N(mean, covariance), log-density without constants.

    Precision and Cholesky factor are cached at construction and validated:
    ``covariance @ precision`` must reproduce the identity to 1e-10 and the
    Cholesky factor must reconstruct the covariance to the same tolerance.
    """

    def __init__(self, mean, covariance):
        self.mean = np.array(mean, dtype=float)
        self.covariance = np.array(covariance, dtype=float)
        self.dim = self.mean.shape[0]
        if self.covariance.shape != (self.dim, self.dim):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        self.chol = np.linalg.cholesky(self.covariance)
        self.precision = np.linalg.inv(self.covariance)
        eye_err = np.abs(self.covariance @ self.precision - np.eye(self.dim)).max()
        rec_err = np.abs(self.chol @ self.chol.T - self.covariance).max()
        scale = max(1.0, np.abs(self.covariance).max())
        if eye_err > GAUSSIAN_CONSISTENCY_TOL * scale or rec_err > GAUSSIAN_CONSISTENCY_TOL * scale:
            raise ValueError("covariance is too ill-conditioned to cache a consistent inverse")
        for arr in (self.mean, self.covariance, self.chol, self.precision):
            arr.flags.writeable = False

    def log_density(self, x):
        x, single = _as_batch(x, self.dim)
        diff = x - self.mean
        out = -0.5 * np.einsum("ni,ij,nj->n", diff, self.precision, diff)
        return out[0] if single else out

    def score(self, x):
        x, single = _as_batch(x, self.dim)
        out = -(x - self.mean) @ self.precision
        return out[0] if single else out

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T


class LogisticRegressionTarget:
    """Bayesian logistic regression posterior (unnormalized).

    beta ~ N(0, prior_sigma^2 I); y_i | x_i, beta ~ Bernoulli(sigmoid(x_i'beta)).
    The likelihood uses log-sigmoid via logaddexp, so large positive logits
    are never exponentiated.
    """

    def __init__(self, design, labels, prior_sigma):
        self.design = np.array(design, dtype=float)
        self.labels = np.array(labels, dtype=float)
        if self.design.ndim != 2 or self.labels.shape != (self.design.shape[0],):
            raise ValueError("design must be (n, d) with matching label vector")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise ValueError("labels must be 0/1")
        if not prior_sigma > 0:
            raise ValueError("prior_sigma must be positive")
        self.prior_sigma = float(prior_sigma)
        self.dim = self.design.shape[1]
        self.design.flags.writeable = False
        self.labels.flags.writeable = False

    def log_density(self, beta):
        beta, single = _as_batch(beta, self.dim)
        logits = beta @ self.design.T  # (n_batch, n_obs)
        # y*log S(z) + (1-y)*log(1-S(z)) = -[y*softplus(-z) + (1-y)*softplus(z)]
        loglik = -(self.labels * np.logaddexp(0.0, -logits)
                   + (1.0 - self.labels) * np.logaddexp(0.0, logits)).sum(axis=1)
        logprior = -0.5 * np.sum(beta * beta, axis=1) / self.prior_sigma**2
        out = loglik + logprior
        return out[0] if single else out

    def score(self, beta):
        beta, single = _as_batch(beta, self.dim)
        logits = beta @ self.design.T
        resid = self.labels - 1.0 / (1.0 + np.exp(-logits))
        out = resid @ self.design - beta / self.prior_sigma**2
        return out[0] if single else out


def make_conditioned_gaussian(d, kappa, rng):
    """Centered Gaussian with prescribed condition number.

    Sigma = U diag(lam) U' with Haar-random U and eigenvalues equally
    log-spaced on [1/sqrt(kappa), sqrt(kappa)], so lam_max/lam_min == kappa
    and the spectrum is symmetric about 1 on the log scale.
    """
    if d < 2:
        raise ValueError("need d >= 2")
    if not kappa >= 1:
        raise ValueError("condition number must be >= 1")
    lam = np.exp(np.linspace(-0.5 * np.log(kappa), 0.5 * np.log(kappa), d))
    u = linalg.haar_orthogonal(d, rng)
    cov = (u * lam) @ u.T
    cov = 0.5 * (cov + cov.T)
    return GaussianTarget(np.zeros(d), cov)


def make_unit_precision_gaussian(d, rng, dof=None):
    """Centered Gaussian whose precision matrix has unit diagonal.

    Unit-diagonal precision means the standard Gaussian already satisfies
    the mean-field stationarity condition, which is the regime the rotated
    bounds are interesting in.  The precision is a normalized Wishart draw.
    """
    if dof is None:
        dof = d + 2
    a = rng.standard_normal((d, dof))
    w = a @ a.T
    scale = 1.0 / np.sqrt(np.diag(w))
    prec = w * scale[:, None] * scale[None, :]
    prec = 0.5 * (prec + prec.T)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return GaussianTarget(np.zeros(d), cov)


def make_mf_stationary_gaussian(d, kappa, rng):
    """Centered Gaussian with unit-diagonal precision AND condition number kappa.

    Eigenvectors come from a sign/permutation-randomized Hadamard frame
    (all entries +-1/sqrt(d)), so diag(precision) = mean(1/lam) exactly;
    eigenvalues are log-spaced ratios rescaled so that sum(1/lam) = d.
    Requires d to be a power of two.
    """
    if not kappa >= 1:
        raise ValueError("condition number must be >= 1")
    h = linalg.hadamard_matrix(d) / np.sqrt(d)
    signs = np.where(rng.random(d) < 0.5, -1.0, 1.0)
    perm = rng.permutation(d)
    u = (signs[:, None] * h)[:, perm]
    mu = np.exp(np.linspace(-0.5 * np.log(kappa), 0.5 * np.log(kappa), d))
    nu = (1.0 / mu) * d / np.sum(1.0 / mu)  # precision eigenvalues, sum = d
    lam = 1.0 / nu
    cov = (u * lam) @ u.T
    cov = 0.5 * (cov + cov.T)
    return GaussianTarget(np.zeros(d), cov)


def make_synthetic_logistic(rng, n=20, d=10, prior_sigma=2.0):
    """Synthetic logistic-regression target used in the experiments.

    Covariates are N(0, U D U') rows with Haar-random U and D log-spaced on
    [0.1, 10]; labels are fair coin flips.
    """
    dvals = np.exp(np.linspace(np.log(0.1), np.log(10.0), d))
    u = linalg.haar_orthogonal(d, rng)
    root = u * np.sqrt(dvals)
    design = rng.standard_normal((n, d)) @ root.T
    labels = (rng.random(n) < 0.5).astype(float)
    return LogisticRegressionTarget(design, labels, prior_sigma)


@dataclass(frozen=True)
class LaplaceOptions:
    learning_rate: float = 0.1
    max_steps: int = 500
    grad_tol: float = LAPLACE_GRAD_TOL
    fd_step: float = LAPLACE_FD_STEP
    newton_polish_steps: int = 25


class StandardizedTarget:
    """Target shifted to its mode and rescaled per-coordinate.

    Represents the law of (X - shift) / scale for X ~ base; log-density
    drops the constant Jacobian term, score applies the chain rule.
    """

    def __init__(self, base, shift, scale):
        self.base = base
        self.shift = np.array(shift, dtype=float)
        self.scale = np.array(scale, dtype=float)
        self.dim = base.dim
        self.shift.flags.writeable = False
        self.scale.flags.writeable = False

    def log_density(self, y):
        y, single = _as_batch(y, self.dim)
        out = self.base.log_density(self.shift + self.scale * y)
        return out[0] if single else out

    def score(self, y):
        y, single = _as_batch(y, self.dim)
        out = self.scale * self.base.score(self.shift + self.scale * y)
        return out[0] if single else out


def fd_hessian_of_potential(target, x, step=LAPLACE_FD_STEP):
    """Hessian of U = -log p at x by central differences of the score."""
    d = target.dim
    h = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        h[:, j] = -(target.score(x + e) - target.score(x - e)) / (2.0 * step)
    return 0.5 * (h + h.T)


def find_mode(target, opts=LaplaceOptions(), x0=None):
    """Locate the mode of the target by Adam ascent plus a Newton polish.

    Adam alone stalls at step-size amplitude near the optimum, so once the
    budget is spent (or early if converged) we polish with Newton steps on
    the finite-difference Hessian until the sup-norm of the score is below
    grad_tol.
    """
    from .mfvi import AdamState, adam_step  # local import; mfvi owns Adam

    x = np.zeros(target.dim) if x0 is None else np.array(x0, dtype=float)
    state = AdamState.zeros(x.shape)
    for _ in range(opts.max_steps):
        g = target.score(x)
        if np.abs(g).max() < opts.grad_tol:
            return x
        # descent on -log p == ascent on log p
        x, state = adam_step(state, x, -g, opts.learning_rate)
    for _ in range(opts.newton_polish_steps):
        g = target.score(x)
        if np.abs(g).max() < opts.grad_tol:
            break
        h = fd_hessian_of_potential(target, x, opts.fd_step)
        try:
            dx = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            logger.warning("Newton polish aborted: singular Hessian at candidate mode")
            break
        x = x + dx
    return x


def laplace_standardize(target, opts=LaplaceOptions()):
    """Shift by the mode and rescale by the mode's inverse-Hessian diagonal.

    Returns (standardized_target, shift, scale).  Coordinates where the
    inverse Hessian of U is not positive are reported and left at scale 1.
    """
    mode = find_mode(target, opts)
    h = fd_hessian_of_potential(target, mode, opts.fd_step)
    scale = np.ones(target.dim)
    try:
        cov = np.linalg.inv(h)
        diag = np.diag(cov)
        good = diag > 0
        if not np.all(good):
            logger.warning(
                "Laplace Hessian not positive-definite in %d coordinate(s); "
                "falling back to unit scale there", int(np.sum(~good)))
        scale[good] = np.sqrt(diag[good])
    except np.linalg.LinAlgError:
        logger.warning("Laplace Hessian singular; falling back to unit scales")
    return StandardizedTarget(target, mode, scale), mode, scale


def target_to_dict(target):
    """JSON-ready description of a built-in target (for run persistence)."""
    if isinstance(target, GaussianTarget):
        return {
            "type": "gaussian",
            "mean": serialize.encode_floats(target.mean),
            "covariance": serialize.encode_floats(target.covariance),
        }
    if isinstance(target, LogisticRegressionTarget):
        return {
            "type": "logistic",
            "design": serialize.encode_floats(target.design),
            "labels": [int(v) for v in target.labels],
            "prior_sigma": serialize.encode_floats(target.prior_sigma),
        }
    from .oracle import ExternalOracleTarget

    if isinstance(target, ExternalOracleTarget):
        return {"type": "oracle", "cmd": list(target.cmd), "dim": target.dim}
    raise TypeError(f"cannot serialize target of type {type(target).__name__}")


def target_from_dict(doc):
    kind = doc.get("type")
    if kind == "gaussian":
        return GaussianTarget(serialize.decode_floats(doc["mean"]),
                              serialize.decode_floats(doc["covariance"]))
    if kind == "logistic":
        return LogisticRegressionTarget(
            serialize.decode_floats(doc["design"]),
            np.array(doc["labels"], dtype=float),
            float(serialize.decode_floats(doc["prior_sigma"])),
        )
    if kind == "oracle":
        from .oracle import ExternalOracleTarget

        return ExternalOracleTarget(doc["cmd"], int(doc["dim"]))
    raise ValueError(f"unknown target type: {kind!r}")
