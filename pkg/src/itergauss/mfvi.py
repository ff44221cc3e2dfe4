"""Reverse-KL mean-field variational inference.

The objective for a coordinatewise map F against a target p is

    KL(F # gamma || p) = E_gamma[ log gamma(z) - sum_i log F_i'(z_i)
                                  - log p(F(z)) ],

estimated on a Monte Carlo batch.  Because the target is unnormalized the
value is the KL up to the target's log normalizer; its negation is the ELBO
up to the same constant.  Training follows a sample-average scheme: one
fixed batch is drawn up front and reused every Adam step, so the loss trace
is a deterministic descent path for a given seed.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtri

from .transforms import Rotation, TransportChain, TransportLayer, PullbackTarget

logger = logging.getLogger(__name__)

LOG_TWO_PI = float(np.log(2.0 * np.pi))
DIVERGENCE_FACTOR = 10.0
RESIDUAL_BINS = 20


class MfviError(RuntimeError):
    pass


class NonFiniteDensityError(MfviError):
    """Target log-density was non-finite on a batch sample."""

    def __init__(self, sample_index, sample):
        self.sample_index = int(sample_index)
        self.sample = np.asarray(sample)
        super().__init__(f"non-finite target log-density at batch sample {sample_index}")


class MfviDivergenceError(MfviError):
    """Optimization diverged; carries the loss trace seen so far."""

    def __init__(self, message, trace):
        self.trace = np.asarray(trace, dtype=float)
        super().__init__(message)


@dataclass(frozen=True)
class MfviOptions:
    mc_batch: int = 1000
    steps: int = 100
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.mc_batch < 2:
            raise ValueError("mc_batch must be >= 2")
        if self.steps < 1 or self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ValueError("steps, learning_rate and adam_eps must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adam_step(state, params, grad, learning_rate,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    new_params = params - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(m, v, step)


def _log_gamma_density(z):
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * z.shape[1] * LOG_TWO_PI


def reverse_kl_terms(cmap, target, z_batch):
    """Per-sample reverse-KL integrand values on a gamma batch."""
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    y, logfp = cmap.forward_terms(z)
    logp = target.log_density(y)
    bad = ~np.isfinite(logp)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonFiniteDensityError(i, y[i])
    return _log_gamma_density(z) - logfp.sum(axis=1) - logp


def reverse_kl_estimate(cmap, target, z_batch):
    """Batch-mean reverse KL, up to the target's log normalizer."""
    return float(np.mean(reverse_kl_terms(cmap, target, z_batch)))


def _objective_and_gradient(cmap, target, z):
    y, logfp = cmap.forward_terms(z)
    logp = target.log_density(y)
    bad = ~np.isfinite(logp)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonFiniteDensityError(i, y[i])
    value = float(np.mean(_log_gamma_density(z) - logfp.sum(axis=1) - logp))
    score = target.score(y)
    df, dl = cmap.param_grads(z)
    grad = -np.mean(score[:, :, None] * df + dl, axis=0)
    return value, grad


def reverse_kl_gradient(cmap, target, z_batch):
    """Gradient of the reverse-KL estimate w.r.t. the raw map parameters.

    Reparameterization form: the batch mean of
    -[score(F(z)) * dF/dtheta + d(log F')/dtheta].
    """
    z = np.atleast_2d(np.asarray(z_batch, dtype=float))
    _, grad = _objective_and_gradient(cmap, target, z)
    return grad


@dataclass(frozen=True)
class MfviResult:
    cmap: object
    trace: np.ndarray          # objective before each step plus the final value
    learning_rate_halved: bool


def train_mfvi(target, family, opts=MfviOptions(), rng=None):
    """Fit a coordinatewise map to the target by fixed-batch Adam.

    Starts at the identity map, draws one gamma batch of size mc_batch and
    optimizes the sample-average objective for opts.steps Adam steps.  If
    the loss blows up (increase beyond 10x the initial magnitude) the
    learning rate is halved once and training restarts from identity;
    a second blow-up or a non-finite loss aborts with the trace attached.
    """
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(opts.seed)))
    z = rng.standard_normal((opts.mc_batch, target.dim))

    last_trace = None
    for attempt, lr in enumerate((opts.learning_rate, 0.5 * opts.learning_rate)):
        raw = np.array(family.identity(target.dim).raw)
        state = AdamState.zeros(raw.shape)
        cmap = family.from_raw(raw)
        value, grad = _objective_and_gradient(cmap, target, z)
        trace = [value]
        diverged = False
        for _ in range(opts.steps):
            with np.errstate(over="ignore", invalid="ignore"):
                raw, state = adam_step(state, raw, grad, lr,
                                       opts.adam_beta1, opts.adam_beta2, opts.adam_eps)
            if not np.all(np.isfinite(raw)):
                raise MfviDivergenceError("non-finite parameters during MFVI", trace)
            cmap = family.from_raw(raw)
            value, grad = _objective_and_gradient(cmap, target, z)
            trace.append(value)
            if not np.isfinite(value):
                raise MfviDivergenceError("non-finite loss during MFVI", trace)
            if value - trace[0] > DIVERGENCE_FACTOR * max(1.0, abs(trace[0])):
                diverged = True
                break
        last_trace = trace
        if not diverged:
            return MfviResult(cmap, np.asarray(trace), learning_rate_halved=attempt == 1)
        logger.warning("MFVI loss blew up at lr=%g; restarting from identity at lr/2", lr)
    raise MfviDivergenceError("MFVI diverged even after halving the learning rate",
                              last_trace)


class ResidualEstimate(NamedTuple):
    value: float
    jackknife_se: float


def mf_optimality_residual(cmap, target, n_samples, rng, n_bins=RESIDUAL_BINS,
                           n_jackknife_groups=20):
    """Binned Monte Carlo estimate of the projected Fisher information.

    Transforms the target by the inverse map, then estimates
    sum_i E[(E_{-i}[h_i])^2] with h the relative score of the transformed
    target, by averaging h_i within equal-probability bins of x_i.  The
    estimate is consistent as n grows and positively biased at finite n;
    a delete-group jackknife provides its standard error.  Zero residual
    characterizes mean-field optimality of the map.
    """
    if n_samples < 1000:
        raise ValueError("residual estimate needs at least 1000 samples")
    d = target.dim
    chain = TransportChain(d, [TransportLayer(Rotation.identity(d), cmap)])
    transformed = PullbackTarget(chain, target)
    x = rng.standard_normal((n_samples, d))
    h = transformed.score(x) + x

    edges = ndtri(np.arange(1, n_bins) / n_bins)
    bins = np.searchsorted(edges, x)          # (n, d) in [0, n_bins)
    groups = np.arange(n_samples) % n_jackknife_groups

    sums = np.zeros((d, n_bins, n_jackknife_groups))
    counts = np.zeros((d, n_bins, n_jackknife_groups))
    for i in range(d):
        np.add.at(sums[i], (bins[:, i], groups), h[:, i])
        np.add.at(counts[i], (bins[:, i], groups), 1.0)

    def statistic(s, c, n_tot):
        tot = np.zeros_like(s)
        mask = c > 0
        tot[mask] = s[mask] ** 2 / c[mask]
        return float(tot.sum() / n_tot)

    s_all, c_all = sums.sum(axis=2), counts.sum(axis=2)
    value = statistic(s_all, c_all, n_samples)

    thetas = []
    for g in range(n_jackknife_groups):
        n_g = counts[:, :, g].sum() / d
        thetas.append(statistic(s_all - sums[:, :, g], c_all - counts[:, :, g],
                                n_samples - n_g))
    thetas = np.asarray(thetas)
    g = n_jackknife_groups
    se = float(np.sqrt((g - 1) / g * np.sum((thetas - thetas.mean()) ** 2)))
    return ResidualEstimate(value, se)
