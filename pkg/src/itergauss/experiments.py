"""Experiment drivers and artifact persistence.

Implements the two reproducible studies (Gaussian iteration sweep, Bayesian
logistic regression) plus ad-hoc runs on user targets.  Every output file
embeds the config hash and seed; all floats are printed with 17 significant
digits and no timestamps are written, so identical configs produce
byte-identical artifacts.
"""

import hashlib
import importlib.resources
import json
import logging
from concurrent.futures import ThreadPoolExecutor

import jsonschema
import numpy as np

from . import __version__, diagnostics, gaussianize, rng as rngmod, targets
from .diagnostics import MetricsRecord, metrics_csv_lines
from .gaussianize import RotationStrategy
from .mfvi import MfviError, MfviOptions
from .oracle import ExternalOracleTarget
from .transforms import active_backend, family_from_spec

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


# stream namespaces per replicate: (seed, ns, replicate)
_NS_DATA = 100
_NS_REFERENCE = 101
_NS_EVAL = 102
_NS_VARIANT = 103
_NS_SWEEP_CELL = 7

_DEFAULTS_COMMON = {
    "seed": 0,
    "threads": 1,
    "var_threshold": 0.95,
    "h_samples": 1000,
    "eval_samples": 2000,
    "family": {"type": "spline", "knots": 10, "bound": 8.0},
    "mfvi": {"mc_batch": 1000, "steps": 100, "learning_rate": 0.01,
             "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8},
}

_DEFAULTS = {
    "gaussian_sweep": {
        "dims": [2, 4, 8, 16],
        "kappas": [4.0],
        "strategies": ["random", "pca"],
        "threshold": 0.01,
        "replicates": 30,
        "max_iters": 10_000,
    },
    "logistic": {
        "replicates": 20,
        "iterations": 7,
        "fixed_data": False,
        "reference": {"n_chains": 20, "burn": 3000, "thin": 10},
    },
    "custom": {
        "replicates": 1,
        "iterations": 3,
        "laplace": True,
        "strategy": {"kind": "pca"},
    },
}


def load_schema():
    text = importlib.resources.files("itergauss").joinpath("config.schema.json").read_text()
    return json.loads(text)


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(raw):
    """Apply defaults, validate against the published schema."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    experiment = raw.get("experiment")
    if experiment not in _DEFAULTS:
        raise ConfigError(f"unknown or missing experiment: {experiment!r}")
    config = _merge(_merge(_DEFAULTS_COMMON, _DEFAULTS[experiment]), raw)
    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    return config


def config_hash(config):
    """sha256 of the canonical config, ignoring keys that cannot affect results."""
    content = {k: v for k, v in config.items() if k not in ("out_dir", "threads")}
    canon = json.dumps(content, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _write_lines(path, lines):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _write_json(path, doc):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(config, extra=None):
    doc = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": config["seed"],
        "itergauss_version": __version__,
        "spline_backend": active_backend(),
    }
    if extra:
        doc.update(extra)
    return doc


def _fmt17(value):
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# gaussian sweep


def gaussian_sweep(config, out_dir):
    """Iteration counts of the exact Gaussian recursion over a (d, kappa,
    strategy) grid; writes sweep.csv plus a manifest."""
    seed = config["seed"]
    cells = [(d, kappa, strat)
             for d in config["dims"]
             for kappa in config["kappas"]
             for strat in config["strategies"]]

    def one_cell(idx):
        d, kappa, strat = cells[idx]
        strategy = RotationStrategy(strat, var_threshold=config["var_threshold"])
        return diagnostics.iterations_to_threshold(
            d, kappa, strategy, threshold=config["threshold"],
            replicates=config["replicates"],
            seed=rngmod.subseed(seed, _NS_SWEEP_CELL, idx),
            max_iters=config["max_iters"])

    results = _map_indexed(one_cell, len(cells), config["threads"])

    lines = [f"# itergauss gaussian-sweep v1 config_hash={config_hash(config)} seed={seed}",
             "d,kappa,strategy,mean_iters,sd_iters,replicates"]
    censored = []
    for cell in results:
        lines.append(",".join([str(cell.d), _fmt17(cell.kappa), cell.strategy,
                               _fmt17(cell.mean_iters), _fmt17(cell.sd_iters),
                               str(cell.replicates)]))
        if cell.censored:
            censored.append({"d": cell.d, "kappa": cell.kappa,
                             "strategy": cell.strategy, "censored": cell.censored})
    _write_lines(out_dir / "sweep.csv", lines)
    _write_json(out_dir / "manifest.json",
                _manifest(config, {"censored_cells": censored}))
    return out_dir / "sweep.csv"


def _map_indexed(fn, n, threads):
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------------------
# logistic regression experiment


def _laplace_preconditioner(target):
    mode = targets.find_mode(target)
    hess = targets.fd_hessian_of_potential(target, mode)
    try:
        cov = np.linalg.inv(hess)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        logger.warning("Laplace preconditioner not PD; using identity")
        cov = np.eye(target.dim)
    return mode, cov


def _evaluate_run(run_state, target, ref_samples, eval_rng, n_eval, run_id, k,
                  kl_analytic=None):
    x, logq = gaussianize.sample_q(run_state, n_eval, eval_rng)
    elbo = float(np.mean(target.log_density(x) - logq))
    mmd = diagnostics.mmd_unbiased(x, ref_samples) if ref_samples is not None else None
    ksd = diagnostics.ksd(x, target.score)
    weights = gaussianize.importance_weights(run_state, x)
    ess = diagnostics.ess(weights)
    return MetricsRecord(run_id, k, elbo, mmd, ksd, ess, kl_analytic)


def _failed_record(run_id, k):
    return MetricsRecord(run_id, k, float("nan"), float("nan"), float("nan"),
                         float("nan"), None)


def _logistic_replicate(config, r):
    seed = config["seed"]
    family = family_from_spec(config["family"])
    opts = MfviOptions(**config["mfvi"])
    n_eval = config["eval_samples"]
    k_max = config["iterations"]

    data_rep = 0 if config["fixed_data"] else r
    target = targets.make_synthetic_logistic(rngmod.derive(seed, _NS_DATA, data_rep))

    mode, cov = _laplace_preconditioner(target)
    ref_cfg = config["reference"]
    ref = diagnostics.preconditioned_rwm(
        target, n_eval, rngmod.derive(seed, _NS_REFERENCE, r), cov, init=mode,
        n_chains=ref_cfg["n_chains"], burn=ref_cfg["burn"], thin=ref_cfg["thin"])

    one_step = {
        "identity": RotationStrategy.identity(),
        "random": RotationStrategy.random(),
        "pca": RotationStrategy.pca(config["var_threshold"], config["h_samples"]),
    }
    rows, chains, failures = [], {}, []
    for vi, (name, strategy) in enumerate(one_step.items()):
        run_id = f"rep{r:02d}_{name}"
        try:
            state = gaussianize.run(target, 1, strategy, family, opts,
                                    seed=rngmod.subseed(seed, _NS_VARIANT, r, vi),
                                    laplace=True)
            rows.append(_evaluate_run(state, target, ref,
                                      rngmod.derive(seed, _NS_EVAL, r), n_eval,
                                      run_id, 1))
            chains[run_id] = gaussianize.run_to_dict(state)
        except MfviError as exc:
            logger.warning("replicate %d variant %s failed: %s", r, name, exc)
            failures.append({"replicate": r, "variant": name, "error": str(exc)})
            rows.append(_failed_record(run_id, 1))

    run_id = f"rep{r:02d}_rk"
    try:
        state = gaussianize.start_run(target, RotationStrategy.random(), family, opts,
                                      seed=rngmod.subseed(seed, _NS_VARIANT, r, 3),
                                      laplace=True)
        for k in range(1, k_max + 1):
            state = gaussianize.run_iteration(state)
            rows.append(_evaluate_run(state, target, ref,
                                      rngmod.derive(seed, _NS_EVAL, r), n_eval,
                                      run_id, k))
        chains[run_id] = gaussianize.run_to_dict(state)
    except MfviError as exc:
        logger.warning("replicate %d iterative variant failed: %s", r, exc)
        failures.append({"replicate": r, "variant": "rk", "error": str(exc)})
        rows.append(_failed_record(run_id, k_max))
    return rows, chains, failures


def logistic_experiment(config, out_dir):
    """The three one-step rotation variants plus iterative random rotations
    on the synthetic logistic posterior; emits metrics.csv, per-run chain
    JSON files, and a metadata sidecar."""
    seed = config["seed"]
    results = _map_indexed(lambda r: _logistic_replicate(config, r),
                           config["replicates"], config["threads"])

    chash = config_hash(config)
    rows, failures = [], []
    for r, (rep_rows, rep_chains, rep_failures) in enumerate(results):
        rows.extend(rep_rows)
        failures.extend(rep_failures)
        for run_id, doc in rep_chains.items():
            _write_json(out_dir / "chains" / f"{run_id}.json",
                        {"config_hash": chash, "config_seed": seed, **doc})

    header = f"itergauss metrics v1 config_hash={config_hash(config)} seed={seed}"
    _write_lines(out_dir / "metrics.csv", metrics_csv_lines(rows, header))
    _write_json(out_dir / "metadata.json", _manifest(config, {
        "metrics": {
            "mmd_kernel": "gaussian_rbf",
            "mmd_bandwidth": "median pairwise distance of the pooled sample",
            "ksd_kernel": "imq",
            "ksd_c": diagnostics.KSD_IMQ_C,
            "elbo": "unnormalized: target log-density carries an unknown additive constant",
        },
        "reference_sampler": {
            "kind": "preconditioned random-walk Metropolis",
            "preconditioner": "inverse Hessian of the potential at the mode",
            **config["reference"],
        },
        "stream_paths": {
            "data": [_NS_DATA, "replicate (0 when fixed_data)"],
            "reference": [_NS_REFERENCE, "replicate"],
            "eval": [_NS_EVAL, "replicate"],
            "variant": [_NS_VARIANT, "replicate", "variant index"],
        },
        "failures": failures,
    }))
    return out_dir / "metrics.csv"


# ---------------------------------------------------------------------------
# custom runs and evaluation


def target_from_config(spec):
    kind = spec["type"]
    if kind == "gaussian":
        return targets.make_conditioned_gaussian(
            spec.get("dim", 2), spec.get("kappa", 4.0),
            rngmod.derive(spec.get("data_seed", 0), _NS_DATA))
    if kind == "logistic":
        return targets.make_synthetic_logistic(
            rngmod.derive(spec.get("data_seed", 0), _NS_DATA),
            n=spec.get("n_obs", 20), d=spec.get("dim", 10),
            prior_sigma=spec.get("prior_sigma", 2.0))
    if kind == "oracle":
        if "cmd" not in spec or "dim" not in spec:
            raise ConfigError("oracle target needs 'cmd' and 'dim'")
        return ExternalOracleTarget(spec["cmd"], spec["dim"])
    raise ConfigError(f"unknown target type {kind!r}")


def _maybe_gaussian_kl(state):
    if not isinstance(state.base_target, targets.GaussianTarget):
        return None
    try:
        return diagnostics.chain_gaussian_kl(state.chain, state.base_target)
    except ValueError:
        return None


def run_custom(config, out_dir):
    """Run gaussianization on a configured target; persists the run JSON,
    per-layer loss traces, metrics.csv and a manifest."""
    seed = config["seed"]
    target = target_from_config(config["target"])
    try:
        strategy = RotationStrategy(
            config["strategy"]["kind"],
            var_threshold=config["strategy"].get("var_threshold", config["var_threshold"]),
            h_samples=config["strategy"].get("h_samples", config["h_samples"]))
        family = family_from_spec(config["family"])
        opts = MfviOptions(**config["mfvi"])
        state = gaussianize.run(target, config["iterations"], strategy, family,
                                opts, seed=seed, laplace=config["laplace"])
        record = _evaluate_run(state, target, None,
                               rngmod.derive(seed, _NS_EVAL, 0),
                               config["eval_samples"], "custom",
                               state.mfvi_iterations,
                               kl_analytic=_maybe_gaussian_kl(state))
    finally:
        if isinstance(target, ExternalOracleTarget):
            target.close()

    (out_dir / "chains").mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "chains" / "run.json",
                {"config_hash": config_hash(config), "config_seed": seed,
                 **gaussianize.run_to_dict(state)})
    header = f"itergauss metrics v1 config_hash={config_hash(config)} seed={seed}"
    _write_lines(out_dir / "metrics.csv", metrics_csv_lines([record], header))
    layer = 0
    for rec in state.records:
        if rec.kind != "mfvi":
            continue
        layer += 1
        lines = [f"# itergauss loss-trace v1 config_hash={config_hash(config)} seed={seed}",
                 "step,objective"]
        lines += [f"{i},{_fmt17(v)}" for i, v in enumerate(rec.loss_trace)]
        _write_lines(out_dir / f"trace_layer{layer:02d}.csv", lines)
    _write_json(out_dir / "manifest.json", _manifest(config))
    return out_dir / "metrics.csv"


def eval_run(run_path, out_dir, seed=0, eval_samples=2000):
    """Recompute metrics for a persisted run on fresh seeded samples."""
    state = gaussianize.run_from_json(run_path.read_text())
    target = state.base_target
    try:
        record = _evaluate_run(state, target, None,
                               rngmod.derive(seed, _NS_EVAL, 0), eval_samples,
                               "eval", state.mfvi_iterations,
                               kl_analytic=_maybe_gaussian_kl(state))
    finally:
        if isinstance(target, ExternalOracleTarget):
            target.close()
    config = {"experiment": "custom", "seed": seed, "eval_samples": eval_samples,
              "source_run": run_path.name}
    header = f"itergauss metrics v1 config_hash={config_hash(config)} seed={seed}"
    _write_lines(out_dir / "metrics.csv", metrics_csv_lines([record], header))
    _write_json(out_dir / "manifest.json", {
        "config": config, "config_hash": config_hash(config), "seed": seed,
        "itergauss_version": __version__, "spline_backend": active_backend(),
    })
    return out_dir / "metrics.csv"
