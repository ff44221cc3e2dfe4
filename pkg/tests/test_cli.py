import json
import stat
import sys

import numpy as np
import pytest

from itergauss import experiments, gaussianize
from itergauss.cli import EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, main
from itergauss.oracle import ExternalOracleTarget, OracleError

GAUSSIAN_ORACLE = """#!{python}
import json, sys
import numpy as np
prec = np.array([[1.0, 0.5], [0.5, 1.0]])
for line in sys.stdin:
    req = json.loads(line)
    x = np.atleast_2d(np.array(req["x"], dtype=float))
    logp = -0.5 * np.einsum("ni,ij,nj->n", x, prec, x)
    score = -x @ prec
    print(json.dumps({{"logp": logp.tolist(), "score": score.tolist()}}))
    sys.stdout.flush()
"""

BROKEN_ORACLE = """#!{python}
import sys
for line in sys.stdin:
    print("this is not json")
    sys.stdout.flush()
"""


def _write_oracle(tmp_path, source, name):
    path = tmp_path / name
    path.write_text(source.format(python=sys.executable))
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return path


class TestConfig:
    def test_resolve_is_idempotent(self):
        raw = {"experiment": "logistic", "replicates": 3, "seed": 4}
        once = experiments.resolve_config(raw)
        twice = experiments.resolve_config(once)
        assert once == twice

    def test_round_trip_through_json(self):
        cfg = experiments.resolve_config({"experiment": "gaussian_sweep"})
        assert experiments.resolve_config(json.loads(json.dumps(cfg))) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(experiments.ConfigError):
            experiments.resolve_config({"experiment": "logistic", "typo_key": 1})

    def test_bad_values_rejected(self):
        with pytest.raises(experiments.ConfigError):
            experiments.resolve_config({"experiment": "gaussian_sweep",
                                        "strategies": ["bogus"]})
        with pytest.raises(experiments.ConfigError):
            experiments.resolve_config({"experiment": "nope"})

    def test_documented_example_configs_validate(self):
        from pathlib import Path

        examples = Path(__file__).resolve().parent.parent / "docs" / "examples"
        paths = sorted(examples.glob("*.json"))
        assert len(paths) >= 3
        for path in paths:
            experiments.resolve_config(json.loads(path.read_text()))

    def test_hash_ignores_threads_and_out_dir(self):
        a = experiments.resolve_config({"experiment": "logistic", "threads": 1})
        b = experiments.resolve_config({"experiment": "logistic", "threads": 8})
        assert experiments.config_hash(a) == experiments.config_hash(b)
        c = experiments.resolve_config({"experiment": "logistic", "seed": 9})
        assert experiments.config_hash(a) != experiments.config_hash(c)


class TestOracleTarget:
    def test_gaussian_oracle_round_trip(self, tmp_path):
        script = _write_oracle(tmp_path, GAUSSIAN_ORACLE, "oracle.py")
        t = ExternalOracleTarget([sys.executable, str(script)], 2)
        try:
            x = np.array([[1.0, 1.0], [0.0, 0.0]])
            np.testing.assert_allclose(t.log_density(x), [-1.5, 0.0])
            np.testing.assert_allclose(t.score(np.array([1.0, 1.0])), [-1.5, -1.5])
        finally:
            t.close()

    def test_malformed_reply_raises(self, tmp_path):
        script = _write_oracle(tmp_path, BROKEN_ORACLE, "broken.py")
        t = ExternalOracleTarget([sys.executable, str(script)], 2)
        try:
            with pytest.raises(OracleError):
                t.log_density(np.zeros(2))
        finally:
            t.close()

    def test_dead_process_raises(self):
        t = ExternalOracleTarget([sys.executable, "-c", "pass"], 2)
        try:
            with pytest.raises(OracleError):
                t.log_density(np.zeros(2))
        finally:
            t.close()


class TestCliExitCodes:
    def test_success_and_artifacts(self, tmp_path):
        cfg = {"experiment": "gaussian_sweep", "dims": [2], "kappas": [1.0, 4.0],
               "strategies": ["pca"], "replicates": 2}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "out"
        assert main(["gaussian-sweep", "--config", str(cfg_path),
                     "--out", str(out)]) == EXIT_OK
        text = (out / "sweep.csv").read_text()
        assert text.startswith("# itergauss gaussian-sweep v1 config_hash=")
        assert (out / "manifest.json").exists()
        rows = {tuple(line.split(",")[:3]): line.split(",")
                for line in text.splitlines()[2:]}
        # kappa=1 is already standard: 0 iterations; PCA diagonalizes any
        # 2-d Gaussian exactly: 1 iteration
        assert float(rows[("2", "1", "pca")][3]) == 0.0
        assert float(rows[("2", "4", "pca")][3]) == 1.0

    def test_config_error_exit_2(self, tmp_path):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"experiment": "gaussian_sweep",
                                        "strategies": ["bogus"]}))
        assert main(["gaussian-sweep", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_unreadable_config_exit_2(self, tmp_path):
        assert main(["logistic", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_oracle_error_exit_3(self, tmp_path):
        script = _write_oracle(tmp_path, BROKEN_ORACLE, "broken.py")
        cfg = {"experiment": "custom",
               "target": {"type": "oracle", "cmd": [sys.executable, str(script)],
                          "dim": 2},
               "iterations": 1, "laplace": False,
               "mfvi": {"mc_batch": 50, "steps": 5}}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["run", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == EXIT_ORACLE


class TestWorkerPoolDeterminism:
    def test_threads_do_not_change_logistic_bytes(self, tmp_path):
        base = {"experiment": "logistic", "replicates": 3, "iterations": 2,
                "eval_samples": 200, "seed": 12,
                "mfvi": {"mc_batch": 200, "steps": 20},
                "reference": {"n_chains": 5, "burn": 200, "thin": 2}}
        outs = []
        for name, threads in (("t1", 1), ("t2", 3)):
            cfg = experiments.resolve_config({**base, "threads": threads})
            out = tmp_path / name
            experiments.logistic_experiment(cfg, out)
            outs.append(out)
        assert (outs[0] / "metrics.csv").read_bytes() == \
            (outs[1] / "metrics.csv").read_bytes()
        for path in sorted((outs[0] / "chains").iterdir()):
            assert path.read_bytes() == (outs[1] / "chains" / path.name).read_bytes()


class TestCustomRunCli:
    def _run(self, tmp_path, seed, out_name, oracle=False):
        if oracle:
            script = _write_oracle(tmp_path, GAUSSIAN_ORACLE, "oracle.py")
            target = {"type": "oracle", "cmd": [sys.executable, str(script)], "dim": 2}
        else:
            target = {"type": "gaussian", "dim": 2, "kappa": 4.0}
        cfg = {"experiment": "custom", "target": target,
               "iterations": 2, "laplace": False,
               "strategy": {"kind": "pca", "h_samples": 300},
               "family": {"type": "spline", "knots": 6, "bound": 8.0},
               "mfvi": {"mc_batch": 200, "steps": 25}, "seed": seed,
               "eval_samples": 400}
        cfg_path = tmp_path / f"{out_name}.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / out_name
        assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
        return out

    def test_artifacts_exist_and_reload(self, tmp_path):
        out = self._run(tmp_path, seed=3, out_name="a")
        state = gaussianize.run_from_json((out / "chains" / "run.json").read_text())
        assert state.mfvi_iterations == 2
        assert (out / "metrics.csv").exists()
        assert (out / "trace_layer01.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 3
        assert "config_hash" in manifest
        # every output embeds the config hash and seed
        chain_doc = json.loads((out / "chains" / "run.json").read_text())
        assert chain_doc["config_hash"] == manifest["config_hash"]
        assert chain_doc["config_seed"] == 3
        for name in ("metrics.csv", "trace_layer01.csv"):
            first = (out / name).read_text().splitlines()[0]
            assert manifest["config_hash"] in first and "seed=3" in first

    def test_same_seed_byte_identical(self, tmp_path):
        out1 = self._run(tmp_path, seed=3, out_name="b1")
        out2 = self._run(tmp_path, seed=3, out_name="b2")
        assert (out1 / "chains" / "run.json").read_bytes() == \
            (out2 / "chains" / "run.json").read_bytes()
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_eval_reproduces_metrics_within_mc_tolerance(self, tmp_path):
        out = self._run(tmp_path, seed=3, out_name="c")
        ev = tmp_path / "eval_out"
        assert main(["eval", "--run", str(out / "chains" / "run.json"),
                     "--out", str(ev), "--seed", "99",
                     "--eval-samples", "400"]) == EXIT_OK
        stored = (out / "metrics.csv").read_text().splitlines()[2].split(",")
        fresh = (ev / "metrics.csv").read_text().splitlines()[2].split(",")
        elbo_stored, elbo_fresh = float(stored[2]), float(fresh[2])
        assert elbo_fresh == pytest.approx(elbo_stored, abs=0.3)
        ess_stored, ess_fresh = float(stored[5]), float(fresh[5])
        assert ess_fresh == pytest.approx(ess_stored, rel=0.5)

    def test_oracle_target_end_to_end(self, tmp_path):
        out = self._run(tmp_path, seed=5, out_name="d", oracle=True)
        rows = (out / "metrics.csv").read_text().splitlines()
        assert rows[1] == "run_id,k,elbo,mmd,ksd,ess,kl_analytic"
        state = gaussianize.run_from_json((out / "chains" / "run.json").read_text())
        assert state.base_target.dim == 2
