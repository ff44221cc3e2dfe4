"""Iterative Gaussianization driver.

Each iteration picks a rotation (relative score PCA, Haar-random, or
identity), solves an MFVI problem against the rotated current target, and
appends the (rotation, map) pair to the transport chain.  The current
target is always represented implicitly by pulling the base target back
through the existing chain, so iterations compose without retraining.

Randomness is derived from (seed, namespace, iteration); extending a saved
run therefore reproduces exactly what a longer fresh run would have done.
"""

import json
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import rng as rngmod
from . import scorepca, targets
from .mfvi import LOG_TWO_PI, MfviOptions, train_mfvi
from .transforms import (
    AffineMap,
    PullbackTarget,
    Rotation,
    RotatedTarget,
    SplineFamily,
    TransportChain,
    TransportLayer,
    chain_from_dict,
    chain_to_dict,
    family_from_spec,
    family_to_spec,
)

RUN_FORMAT_VERSION = 1

# stream namespaces: (seed, ns, iteration)
_NS_H_ESTIMATE = 1
_NS_MFVI_BATCH = 2
_NS_ROTATION = 3


@dataclass(frozen=True)
class RotationStrategy:
    kind: str
    var_threshold: float = 0.95
    h_samples: int = 1000

    def __post_init__(self):
        if self.kind not in ("pca", "random", "identity"):
            raise ValueError(f"unknown rotation strategy {self.kind!r}")
        if not 0.0 < self.var_threshold <= 1.0:
            raise ValueError("var_threshold must lie in (0, 1]")
        if self.h_samples < 2:
            raise ValueError("h_samples must be >= 2")

    @classmethod
    def pca(cls, var_threshold=0.95, h_samples=1000):
        return cls("pca", var_threshold, h_samples)

    @classmethod
    def random(cls):
        return cls("random")

    @classmethod
    def identity(cls):
        return cls("identity")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass(frozen=True)
class IterationRecord:
    kind: str                       # "laplace" or "mfvi"
    rotation_rank: int
    eigenvalues: Optional[np.ndarray]
    loss_trace: Optional[np.ndarray]
    elbo: Optional[float]
    learning_rate_halved: bool = False


@dataclass(frozen=True)
class GaussianizationRun:
    base_target: object
    chain: TransportChain
    records: tuple
    seed: int
    strategy: RotationStrategy
    family: object
    options: MfviOptions

    @property
    def mfvi_iterations(self):
        return sum(1 for r in self.records if r.kind == "mfvi")

    def current_target(self):
        """The transformed target after all layers (the base when empty)."""
        if len(self.chain) == 0:
            return self.base_target
        return PullbackTarget(self.chain, self.base_target)


def _select_rotation(run, k):
    d = run.base_target.dim
    strategy = run.strategy
    if strategy.kind == "identity":
        return Rotation.identity(d), 0, None
    if strategy.kind == "random":
        rot = scorepca.sample_haar_rotation(d, rngmod.derive(run.seed, _NS_ROTATION, k))
        return rot, d, None
    hmat = scorepca.estimate_H(run.current_target(), strategy.h_samples,
                               rngmod.derive(run.seed, _NS_H_ESTIMATE, k))
    eig = scorepca.eig_sym(hmat)
    rot, rank = scorepca.select_rotation(eig, strategy.var_threshold)
    return rot, rank, eig.values


def run_iteration(run):
    """One Gaussianization step; returns the extended run.

    On MFVI failure the input run is untouched (nothing was appended) and
    the error propagates.
    """
    k = run.mfvi_iterations
    rot, rank, eigenvalues = _select_rotation(run, k)
    rotated = RotatedTarget(run.current_target(), rot)
    result = train_mfvi(rotated, run.family, run.options,
                        rng=rngmod.derive(run.seed, _NS_MFVI_BATCH, k))
    record = IterationRecord("mfvi", rank, eigenvalues, result.trace,
                             elbo=-float(result.trace[-1]),
                             learning_rate_halved=result.learning_rate_halved)
    return GaussianizationRun(
        base_target=run.base_target,
        chain=run.chain.append(TransportLayer(rot, result.cmap)),
        records=run.records + (record,),
        seed=run.seed,
        strategy=run.strategy,
        family=run.family,
        options=run.options,
    )


def start_run(base_target, strategy, family=None, options=None, seed=0,
              laplace=False):
    """Empty run, optionally prepended with a fixed Laplace affine layer."""
    family = family if family is not None else SplineFamily()
    options = options if options is not None else MfviOptions()
    chain = TransportChain(base_target.dim)
    records = ()
    if laplace:
        _, shift, scale = targets.laplace_standardize(base_target)
        layer = TransportLayer(Rotation.identity(base_target.dim),
                               AffineMap.from_shift_scale(shift, scale))
        chain = chain.append(layer)
        records = (IterationRecord("laplace", 0, None, None, None),)
    return GaussianizationRun(base_target, chain, records, int(seed),
                              strategy, family, options)


def run(base_target, iterations, strategy, family=None, options=None, seed=0,
        laplace=False):
    """Run `iterations` Gaussianization steps from scratch."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    state = start_run(base_target, strategy, family, options, seed, laplace)
    return extend(state, iterations)


def extend(run_state, extra_iterations):
    """Add iterations to an existing run without retraining earlier layers."""
    for _ in range(extra_iterations):
        run_state = run_iteration(run_state)
    return run_state


def sample_q(run_state, n, rng):
    """Draw n samples from the current approximation with their log q."""
    if n < 1:
        raise ValueError("need n >= 1")
    d = run_state.base_target.dim
    z = rng.standard_normal((n, d))
    log_gamma = -0.5 * np.sum(z * z, axis=1) - 0.5 * d * LOG_TWO_PI
    x, logdet = run_state.chain.push_forward(z)
    return x, log_gamma - logdet


def log_q(run_state, x):
    """Log-density of the approximation (exactly normalized)."""
    z, logdet = run_state.chain.pull_back(x)
    z2 = np.atleast_2d(z)
    log_gamma = -0.5 * np.sum(z2 * z2, axis=1) - 0.5 * z2.shape[1] * LOG_TWO_PI
    if np.ndim(z) == 1:
        return float(log_gamma[0] + logdet)
    return log_gamma + logdet


def importance_weights(run_state, samples):
    """Self-normalized importance weights of q-samples against the target.

    Invariant to the target's unknown additive constant; stabilized by
    subtracting the max log-ratio before exponentiation.
    """
    log_ratio = run_state.base_target.log_density(samples) - log_q(run_state, samples)
    log_ratio = np.atleast_1d(log_ratio)
    finite = np.isfinite(log_ratio)
    if not np.any(finite):
        raise ValueError("all importance weights are zero or undefined")
    shifted = np.where(finite, log_ratio - log_ratio[finite].max(), -np.inf)
    w = np.exp(shifted)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("all importance weights are zero or undefined")
    return w / total


def run_to_dict(run_state):
    records = []
    for rec in run_state.records:
        records.append({
            "kind": rec.kind,
            "rotation_rank": rec.rotation_rank,
            "eigenvalues": None if rec.eigenvalues is None else [float(v) for v in rec.eigenvalues],
            "loss_trace": None if rec.loss_trace is None else [float(v) for v in rec.loss_trace],
            "elbo": rec.elbo,
            "learning_rate_halved": rec.learning_rate_halved,
        })
    return {
        "version": RUN_FORMAT_VERSION,
        "seed": run_state.seed,
        "strategy": run_state.strategy.to_dict(),
        "family": family_to_spec(run_state.family),
        "options": asdict(run_state.options),
        "target": targets.target_to_dict(run_state.base_target),
        "chain": chain_to_dict(run_state.chain),
        "records": records,
    }


def run_from_dict(doc):
    if doc.get("version") != RUN_FORMAT_VERSION:
        raise ValueError(f"unsupported run format version {doc.get('version')!r}")
    records = []
    for rec in doc["records"]:
        records.append(IterationRecord(
            kind=rec["kind"],
            rotation_rank=int(rec["rotation_rank"]),
            eigenvalues=None if rec["eigenvalues"] is None else np.array(rec["eigenvalues"]),
            loss_trace=None if rec["loss_trace"] is None else np.array(rec["loss_trace"]),
            elbo=rec["elbo"],
            learning_rate_halved=bool(rec.get("learning_rate_halved", False)),
        ))
    return GaussianizationRun(
        base_target=targets.target_from_dict(doc["target"]),
        chain=chain_from_dict(doc["chain"]),
        records=tuple(records),
        seed=int(doc["seed"]),
        strategy=RotationStrategy.from_dict(doc["strategy"]),
        family=family_from_spec(doc["family"]),
        options=MfviOptions(**doc["options"]),
    )


def run_to_json(run_state):
    return json.dumps(run_to_dict(run_state), indent=2, sort_keys=True)


def run_from_json(text):
    return run_from_dict(json.loads(text))
