"""Benchmark the compiled vs pure-numpy spline kernels.

The spline kernels are the hot inner loop of MFVI training (called once per
Adam step per layer on the full Monte Carlo batch).  Run:

    python3 benchmarks/bench_spline_backends.py [batch] [dim] [knots]
"""

import sys
import time

import numpy as np

from itergauss.transforms import get_kernels
from itergauss.transforms.spline import compute_knots


def bench(fn, *args, repeats=50):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
    d = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    kbins = int(sys.argv[3]) if len(sys.argv) > 3 else 10

    rng = np.random.default_rng(0)
    raw = rng.normal(size=(d, 3 * kbins - 1)) * 0.5
    knots = compute_knots(raw, kbins, 8.0)
    x = np.ascontiguousarray(rng.normal(size=(n, d)) * 3.0)
    base = (knots.xk, knots.yk, knots.w, knots.h, knots.s, knots.delta)
    grads_extra = (knots.sw, knots.sh, knots.dsig, knots.alpha)

    backends = {}
    for name in ("numpy", "cython"):
        try:
            backends[name] = get_kernels(name)
        except (ImportError, ValueError):
            print(f"{name} backend unavailable; skipping")

    y = next(iter(backends.values())).forward(x, *base)[0]
    print(f"batch={n} dim={d} knots={kbins}")
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name in backends))
    rows = [
        ("forward", lambda k: k.forward(x, *base)),
        ("inverse", lambda k: k.inverse(y, *base)),
        ("dlogdet_dx", lambda k: k.dlogdet_dx(x, *base)),
        ("param_grads", lambda k: k.param_grads(x, *base, *grads_extra)),
    ]
    for label, runner in rows:
        times = {name: bench(lambda: runner(mod)) for name, mod in backends.items()}
        print(f"{label:<14}" + "".join(f"{times[name]*1e6:>10.1f}us" for name in backends))
    if len(backends) == 2:
        print("\nspeedup (numpy/cython) per kernel:")
        for label, runner in rows:
            tn = bench(lambda: runner(backends["numpy"]))
            tc = bench(lambda: runner(backends["cython"]))
            print(f"  {label:<14}{tn / tc:6.2f}x")


if __name__ == "__main__":
    main()
