"""External score-oracle targets.

Lets users plug in arbitrary targets without linking: the oracle is a child
process speaking line-delimited JSON on stdin/stdout.  Each request is one
line ``{"x": [[...], ...]}`` (a batch of points); the reply must be one
line ``{"logp": [...], "score": [[...], ...]}`` with matching lengths.
Any malformed reply, dimension mismatch, or child exit raises OracleError
(CLI exit code 3).
"""

import json
import subprocess

import numpy as np


class OracleError(RuntimeError):
    pass


class ExternalOracleTarget:
    def __init__(self, cmd, dim):
        if not cmd:
            raise OracleError("oracle command must be non-empty")
        self.cmd = list(cmd)
        self.dim = int(dim)
        self._proc = None

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        try:
            self._proc = subprocess.Popen(
                self.cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise OracleError(f"failed to start oracle {self.cmd!r}: {exc}") from exc

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def _query(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        self._ensure_started()
        request = json.dumps({"x": x.tolist()})
        try:
            self._proc.stdin.write(request + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise OracleError(f"oracle process died: {exc}") from exc
        if not line:
            raise OracleError("oracle closed its output stream")
        try:
            reply = json.loads(line)
            logp = np.asarray(reply["logp"], dtype=float)
            score = np.asarray(reply["score"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise OracleError(f"malformed oracle reply: {line[:200]!r}") from exc
        if logp.shape != (x.shape[0],) or score.shape != x.shape:
            raise OracleError(
                f"oracle reply shapes {logp.shape}/{score.shape} do not match "
                f"request batch {x.shape}")
        return logp, score

    def log_density(self, x):
        single = np.asarray(x).ndim == 1
        logp, _ = self._query(x)
        return logp[0] if single else logp

    def score(self, x):
        single = np.asarray(x).ndim == 1
        _, score = self._query(x)
        return score[0] if single else score
