import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def finite_diff_score(target, x, step=1e-5):
    """Directional-free central FD gradient of the log-density."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (target.log_density(x + e) - target.log_density(x - e)) / (2 * step)
    return g
